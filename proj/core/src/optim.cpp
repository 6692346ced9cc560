#include "bermo/optim.hpp"

#include <cmath>
#include <set>

#include "bermo/error.hpp"

namespace bermo {

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::kAdamW ? "adamw" : "sgd"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "adamw") return OptimizerKind::kAdamW;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected adamw or sgd)");
}

Optimizer::Optimizer(ParameterList params, OptimizerKind kind, AdamSettings adam)
    : params_(std::move(params)), kind_(kind), adam_(adam) {
  std::set<const void*> seen;
  for (const auto& p : params_) {
    if (!seen.insert(p.tensor.node().get()).second) throw ConfigError("parameter '" + p.name + "' registered twice");
  }
  if (kind_ == OptimizerKind::kAdamW) {
    for (const auto& p : params_) {
      first_moment_.emplace_back(p.tensor.numel(), 0.0);
      second_moment_.emplace_back(p.tensor.numel(), 0.0);
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Optimizer::step(const GroupRates& rates) {
  ++steps_;
  const double correction1 = 1.0 - std::pow(adam_.beta1, double(steps_));
  const double correction2 = 1.0 - std::pow(adam_.beta2, double(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& t = params_[i].tensor;
    if (!t.requires_grad() || !t.has_grad()) continue;
    const double lr = rates.of(params_[i].group);
    auto value = t.mutable_data();
    const auto grad = t.grad();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < value.size(); ++j) value[j] -= lr * grad[j];
      continue;
    }
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    const double decay = params_[i].group == ParameterGroup::kWeights ? adam_.weight_decay : 0.0;
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = adam_.beta1 * m[j] + (1.0 - adam_.beta1) * grad[j];
      v[j] = adam_.beta2 * v[j] + (1.0 - adam_.beta2) * grad[j] * grad[j];
      const double update = (m[j] / correction1) / (std::sqrt(v[j] / correction2) + adam_.epsilon);
      value[j] -= lr * (update + decay * value[j]);
    }
  }
}

bool Optimizer::parameters_finite() const {
  for (const auto& p : params_) {
    for (double x : p.tensor.data()) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

}  // namespace bermo
