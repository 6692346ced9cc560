#include "bermo/combine.hpp"

#include <cmath>

#include "bermo/error.hpp"
#include "bermo/ops.hpp"

namespace bermo {

std::string_view to_string(ParameterGroup group) {
  switch (group) {
    case ParameterGroup::kWeights: return "weights";
    case ParameterGroup::kScores: return "scores";
    case ParameterGroup::kSkipConnection: return "skip_connection";
  }
  return "weights";
}

std::size_t count_scalars(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

CombineBlock::CombineBlock(std::size_t num_layers, Rng& rng, double dropout_p, double norm_epsilon)
    : dropout_p_(dropout_p), norm_epsilon_(norm_epsilon) {
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("combine dropout must lie in [0, 1)");
  if (!(norm_epsilon > 0.0)) throw ConfigError("combine norm epsilon must be positive");
  const std::size_t n = num_layers + 1;
  // Glorot-uniform bound with fan_in + fan_out taken as L+2 for a logit vector.
  const double bound = std::sqrt(6.0 / double(num_layers + 2));
  std::vector<double> logits(n);
  for (double& a : logits) a = rng.uniform(-bound, bound);
  alpha_logits_ = Tensor({n}, std::move(logits), true);
  gamma_ = Tensor::scalar(1.0, true);
}

Tensor normalize_across_layers(std::span<const Tensor> states, double eps) {
  Tensor stacked = stack(states);  // (L+1, ...)
  std::vector<std::size_t> axes(stacked.dim());
  for (std::size_t i = 0; i + 1 < axes.size(); ++i) axes[i] = i + 1;
  axes.back() = 0;
  return layer_norm(permute(stacked, axes), eps);
}

Tensor CombineBlock::forward(std::span<const Tensor> states, bool training, Rng* rng) const {
  if (states.size() != num_states()) {
    throw ShapeError("combine: got " + std::to_string(states.size()) + " hidden states, block mixes " +
                     std::to_string(num_states()));
  }
  const Shape out_shape = states[0].shape();
  Tensor mixed = normalize_across_layers(states, norm_epsilon_);
  if (training && dropout_p_ > 0.0) {
    if (!rng) throw std::invalid_argument("combine: dropout while training needs a random stream");
    mixed = dropout(mixed, dropout_p_, true, *rng);
  }
  const std::size_t layers = num_states();
  Tensor weights = reshape(softmax(alpha_logits_), {layers, 1});
  Tensor weighted = matmul(reshape(mixed, {mixed.numel() / layers, layers}), weights);
  return mul(reshape(weighted, out_shape), gamma_);
}

ParameterList CombineBlock::parameters() const {
  return {{"combine.alpha_logits", alpha_logits_, ParameterGroup::kSkipConnection},
          {"combine.gamma", gamma_, ParameterGroup::kSkipConnection}};
}

std::vector<double> CombineBlock::layer_weights() const {
  NoGradGuard no_grad;
  auto w = softmax(alpha_logits_);
  return {w.data().begin(), w.data().end()};
}

}  // namespace bermo
