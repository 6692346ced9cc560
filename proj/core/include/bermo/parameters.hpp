#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "bermo/tensor.hpp"

namespace bermo {

/// Optimizer group a trainable tensor belongs to. Each group has its own
/// learning rate: weights, pruning scores, and the combine-block scalars
/// (which train at the skip-connection rate).
enum class ParameterGroup { kWeights, kScores, kSkipConnection };

std::string_view to_string(ParameterGroup group);

struct NamedParameter {
  std::string name;
  Tensor tensor;
  ParameterGroup group = ParameterGroup::kWeights;
};

using ParameterList = std::vector<NamedParameter>;

/// Total number of scalars across `params`.
std::size_t count_scalars(const ParameterList& params);

}  // namespace bermo
