#include "bermo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "bermo/error.hpp"

namespace bermo {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  return f().item();
}

}  // namespace

double finite_difference_check(const std::function<Tensor()>& f, Tensor x, double h) {
  return finite_difference_check(f, std::vector<Tensor>{std::move(x)}, h);
}

double finite_difference_check(const std::function<Tensor()>& f, const std::vector<Tensor>& leaves, double h) {
  if (!(h > 0)) throw std::invalid_argument("finite_difference_check: step must be positive");
  for (const Tensor& leaf : leaves) {
    if (!leaf.requires_grad() || !leaf.node()->is_leaf()) {
      throw std::invalid_argument("finite_difference_check: inputs must be leaves that require grad");
    }
  }
  const double first = evaluate(f);
  const double second = evaluate(f);
  if (first != second && !(std::isnan(first) && std::isnan(second))) {
    throw NondeterministicFunction("finite_difference_check: function returned " + std::to_string(first) + " then " +
                                   std::to_string(second));
  }

  for (Tensor leaf : leaves) leaf.zero_grad();
  Tensor loss = f();
  if (loss.numel() != 1) throw ShapeError("finite_difference_check: function must return a scalar");
  loss.backward();

  double worst = 0.0;
  for (Tensor leaf : leaves) {
    std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    auto values = leaf.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate(f);
      values[i] = saved - h;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      worst = std::max(worst, std::isnan(err) ? INFINITY : err);
    }
    leaf.zero_grad();
  }
  return worst;
}

}  // namespace bermo
