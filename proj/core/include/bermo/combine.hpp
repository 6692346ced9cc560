#pragma once

#include <span>
#include <vector>

#include "bermo/parameters.hpp"
#include "bermo/rng.hpp"
#include "bermo/tensor.hpp"

namespace bermo {

/// Scalar mix over every encoder depth:
///
///   combine = gamma * sum_j softmax(alpha)_j * normalize(h)_j
///
/// where `normalize` standardizes, for each (batch, position, feature)
/// coordinate, the vector of L+1 per-layer values to zero mean and unit
/// variance (epsilon inside the square root, no affine terms). Dropout is
/// applied to the normalized stack before weighting. The block owns exactly
/// L+2 trainable scalars: L+1 mixing logits and gamma.
class CombineBlock {
 public:
  CombineBlock() = default;
  /// `num_layers` is L; logits ~ U(-sqrt(6/(L+2)), +sqrt(6/(L+2))), gamma = 1.
  CombineBlock(std::size_t num_layers, Rng& rng, double dropout_p = 0.1, double norm_epsilon = 1e-5);

  std::size_t num_states() const { return alpha_logits_.numel(); }
  double dropout_p() const { return dropout_p_; }
  double norm_epsilon() const { return norm_epsilon_; }

  /// `states` holds L+1 tensors of identical shape (batch, seq, d).
  /// `rng` is only drawn from when training with dropout_p > 0.
  Tensor forward(std::span<const Tensor> states, bool training, Rng* rng = nullptr) const;

  /// The L+2 scalars in the skip-connection optimizer group.
  ParameterList parameters() const;

  /// softmax(alpha_logits), for logging.
  std::vector<double> layer_weights() const;
  double gamma_value() const { return gamma_.item(); }

  Tensor& alpha_logits() { return alpha_logits_; }
  Tensor& gamma() { return gamma_; }
  const Tensor& alpha_logits() const { return alpha_logits_; }
  const Tensor& gamma() const { return gamma_; }

 private:
  Tensor alpha_logits_;
  Tensor gamma_;
  double dropout_p_ = 0.1;
  double norm_epsilon_ = 1e-5;
};

/// Stacks the states on a trailing layer axis, (batch, seq, d, L+1), and
/// standardizes along it.
Tensor normalize_across_layers(std::span<const Tensor> states, double eps);

}  // namespace bermo
