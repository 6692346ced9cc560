#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bermo/tensor.hpp"

namespace bermo {

/// Raised when the checked function does not return the same value twice.
class NondeterministicFunction : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compares the reverse-mode gradient of the scalar `f` with respect to `x`
/// against central differences with step `h`.
///
/// Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|). `x` must be
/// a leaf with requires_grad; its accumulated gradient is cleared. `f` must
/// rebuild its graph from `x` on every call.
double finite_difference_check(const std::function<Tensor()>& f, Tensor x, double h = 1e-5);

/// Same check across several leaves at once; returns the worst error.
double finite_difference_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, double h = 1e-5);

}  // namespace bermo

namespace bermo {

/// Analytic gradient of `f` against central differences of `surrogate`, a
/// smooth function with the same forward value at `x` whose derivative is
/// what a straight-through backward rule claims.
double surrogate_gradient_check(const std::function<Tensor()>& f, const std::function<Tensor()>& surrogate, Tensor x,
                                double h = 1e-5);

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckResult {
  std::string module;
  std::string name;
  double max_relative_error = 0.0;

  bool passed() const { return max_relative_error < kGradcheckTolerance; }
};

/// Registered modules: tensor, combine, pruning, encoder, distill.
const std::vector<std::string>& gradcheck_modules();

/// Runs every check of `module`, or of all modules for "all". Throws
/// ConfigError for an unknown module name.
std::vector<GradcheckResult> run_gradchecks(const std::string& module);

}  // namespace bermo
