#pragma once

#include <string_view>
#include <vector>

#include "bermo/parameters.hpp"

namespace bermo {

enum class OptimizerKind { kAdamW, kSgd };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

/// Learning rate per parameter group for one step.
struct GroupRates {
  double weights = 1e-3;
  double scores = 1e-2;
  double skip_connection = 1e-2;

  double of(ParameterGroup g) const {
    switch (g) {
      case ParameterGroup::kWeights: return weights;
      case ParameterGroup::kScores: return scores;
      case ParameterGroup::kSkipConnection: return skip_connection;
    }
    return weights;
  }
};

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled; applied to the weights group only
};

/// AdamW or plain SGD over named parameter groups. Tensors with no
/// accumulated gradient are left untouched by a step, moments included.
class Optimizer {
 public:
  Optimizer(ParameterList params, OptimizerKind kind, AdamSettings adam = {});

  void zero_grad();
  void step(const GroupRates& rates);

  /// False once any parameter holds a NaN or infinity.
  bool parameters_finite() const;

  const ParameterList& parameters() const { return params_; }
  std::size_t steps_taken() const { return steps_; }

 private:
  ParameterList params_;
  OptimizerKind kind_;
  AdamSettings adam_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::size_t steps_ = 0;
};

}  // namespace bermo
