#include "bermo/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bermo/error.hpp"
#include "bermo/ops.hpp"

namespace bermo {

std::string_view to_string(PruningMethod method) {
  switch (method) {
    case PruningMethod::kNone: return "none";
    case PruningMethod::kMagnitude: return "magnitude";
    case PruningMethod::kTopK: return "topK";
    case PruningMethod::kL0: return "l0";
    case PruningMethod::kSigmoidThreshold: return "sigmoied_threshold";
  }
  return "none";
}

PruningMethod parse_pruning_method(std::string_view name) {
  for (auto m : {PruningMethod::kNone, PruningMethod::kMagnitude, PruningMethod::kTopK, PruningMethod::kL0,
                 PruningMethod::kSigmoidThreshold}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError("unknown pruning method '" + std::string(name) +
                    "' (expected none, magnitude, topK, l0 or sigmoied_threshold)");
}

void HardConcreteParams::validate() const {
  if (!(beta > 0.0) || !(gamma < 0.0) || !(epsilon > 1.0)) {
    throw ConfigError("hard-concrete parameters need beta > 0 and gamma < 0 < 1 < epsilon, got beta=" +
                      std::to_string(beta) + " gamma=" + std::to_string(gamma) + " epsilon=" + std::to_string(epsilon));
  }
}

void SparsitySchedule::validate(PruningMethod method) const {
  if (method == PruningMethod::kSigmoidThreshold) {
    if (initial_threshold < 0.0 || initial_threshold >= 1.0 || final_threshold < 0.0 || final_threshold >= 1.0) {
      throw ConfigError("sigmoid thresholds must lie in [0, 1)");
    }
  } else if (!(final_threshold > 0.0 && final_threshold <= initial_threshold && initial_threshold <= 1.0)) {
    throw ConfigError("retention schedule needs 0 < final_threshold <= initial_threshold <= 1, got " +
                      std::to_string(initial_threshold) + " -> " + std::to_string(final_threshold));
  }
  if (initial_warmup < 0.0 || final_warmup < 0.0) throw ConfigError("warmup multipliers must be non-negative");
  const double ramp = double(total_steps) - (initial_warmup + final_warmup) * double(warmup_steps);
  if (!(ramp > 0.0)) {
    throw ConfigError("sparsity ramp is empty: total_steps=" + std::to_string(total_steps) +
                      " leaves no room after warmups of " + std::to_string(warmup_steps) + " steps");
  }
}

double SparsitySchedule::at(std::size_t step) const {
  const double t = double(std::min(step, total_steps));
  const double start = initial_warmup * double(warmup_steps);
  const double end_plateau = final_warmup * double(warmup_steps);
  const double total = double(total_steps);
  if (t < start) return initial_threshold;
  if (t > total - end_plateau) return final_threshold;
  const double remaining = 1.0 - (t - start) / (total - start - end_plateau);
  return final_threshold + (initial_threshold - final_threshold) * remaining * remaining * remaining;
}

double cubic_threshold(const SparsitySchedule& schedule, std::size_t step) { return schedule.at(step); }

std::size_t topv_count(std::size_t n, double v) {
  return std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(v * double(n))));
}

std::vector<double> topv_mask(std::span<const double> scores, double v) {
  if (!(v > 0.0 && v <= 1.0)) throw std::invalid_argument("Top_v retention must lie in (0, 1], got " + std::to_string(v));
  const std::size_t n = scores.size();
  const std::size_t k = topv_count(n, v);
  std::vector<double> mask(n, 0.0);
  if (k == n) {
    std::fill(mask.begin(), mask.end(), 1.0);
    return mask;
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  if (k > 0) {
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k - 1), order.end(), before);
    for (std::size_t i = 0; i < k; ++i) mask[order[i]] = 1.0;
  }
  return mask;
}

Tensor topv_mask(const Tensor& scores, double v) { return constant(scores.shape(), topv_mask(scores.data(), v)); }

Tensor magnitude_scores(const Tensor& weight) {
  std::vector<double> out(weight.numel());
  std::transform(weight.data().begin(), weight.data().end(), out.begin(), [](double w) { return std::abs(w); });
  return constant(weight.shape(), std::move(out));
}

std::vector<double> hard_concrete_noise(std::size_t n, Rng& rng) {
  std::vector<double> u(n);
  for (double& x : u) x = std::clamp(rng.uniform(), 1e-6, 1.0 - 1e-6);
  return u;
}

HardConcreteSample hard_concrete_sample(const Tensor& s_logit, std::span<const double> u, const HardConcreteParams& p) {
  p.validate();
  if (u.size() != s_logit.numel()) {
    throw ShapeError("hard_concrete_sample: " + std::to_string(u.size()) + " draws for logits " + to_string(s_logit.shape()));
  }
  std::vector<double> noise(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!(u[i] > 0.0 && u[i] < 1.0)) throw std::invalid_argument("hard_concrete_sample: draws must lie in (0, 1)");
    noise[i] = std::log(u[i]) - std::log(1.0 - u[i]);
  }
  HardConcreteSample out;
  out.stretched_probability = sigmoid(scale(add(s_logit, constant(s_logit.shape(), std::move(noise))), 1.0 / p.beta));
  out.stretched = add_scalar(scale(out.stretched_probability, p.epsilon - p.gamma), p.gamma);
  out.mask = clamp(out.stretched, 0.0, 1.0);
  return out;
}

Tensor l0_inference_mask(const Tensor& s_logit, const HardConcreteParams& p) {
  p.validate();
  return clamp(add_scalar(scale(sigmoid(s_logit), (p.epsilon - p.gamma) / p.beta), p.gamma), 0.0, 1.0);
}

Tensor l0_penalty(const Tensor& s_logit, const HardConcreteParams& p) {
  p.validate();
  return sum(sigmoid(add_scalar(s_logit, -p.beta * std::log(-p.gamma / p.epsilon))));
}

Tensor soft_movement_mask(const Tensor& scores, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw std::invalid_argument("sigmoid threshold must lie in [0, 1), got " + std::to_string(tau));
  std::vector<double> pattern(scores.numel());
  const auto s = scores.data();
  for (std::size_t i = 0; i < pattern.size(); ++i) pattern[i] = 1.0 / (1.0 + std::exp(-s[i])) > tau ? 1.0 : 0.0;
  return straight_through(scores, std::move(pattern));
}

Tensor l1_regularizer(const Tensor& scores) { return sum(sigmoid(scores)); }

MaskedLinear::MaskedLinear(std::size_t in_features, std::size_t out_features, PruningMethod method, double mask_scale,
                           double init_std, Rng& rng)
    : method_(method) {
  std::vector<double> w(in_features * out_features);
  for (double& x : w) x = rng.normal(0.0, init_std);
  weight_ = Tensor({out_features, in_features}, std::move(w), true);
  bias_ = Tensor::zeros({out_features}, true);
  scores_ = Tensor::full({out_features, in_features}, mask_scale, has_learned_scores(method));
}

std::vector<double> MaskedLinear::ranking_scores() const {
  if (method_ == PruningMethod::kMagnitude) {
    auto s = magnitude_scores(weight_);
    return {s.data().begin(), s.data().end()};
  }
  return {scores_.data().begin(), scores_.data().end()};
}

Tensor MaskedLinear::mask(const MaskContext& ctx) const {
  switch (method_) {
    case PruningMethod::kNone: return {};
    case PruningMethod::kMagnitude:
    case PruningMethod::kTopK: return mask_from_pattern(topv_mask(ranking_scores(), ctx.threshold));
    case PruningMethod::kL0:
      if (ctx.training) {
        if (!ctx.rng) throw std::invalid_argument("L0 masks need a random stream while training");
        return hard_concrete_sample(scores_, hard_concrete_noise(scores_.numel(), *ctx.rng), ctx.hard_concrete).mask;
      }
      return l0_inference_mask(scores_, ctx.hard_concrete);
    case PruningMethod::kSigmoidThreshold: return soft_movement_mask(scores_, ctx.threshold);
  }
  return {};
}

Tensor MaskedLinear::mask_from_pattern(std::vector<double> pattern) const {
  if (method_ == PruningMethod::kTopK) return straight_through(scores_, std::move(pattern));
  return constant(weight_.shape(), std::move(pattern));
}

Tensor MaskedLinear::forward(const Tensor& x, const Tensor& mask) const {
  if (!mask.defined()) return linear(x, weight_, bias_);
  return linear(x, mul(weight_, mask), bias_);
}

Tensor masked_forward(const MaskedLinear& layer, const Tensor& x, const MaskContext& ctx) {
  return layer.forward(x, layer.mask(ctx));
}

std::vector<double> movement_score_gradient(const MaskedLinear& layer, std::span<const double> grad_masked_weight) {
  if (layer.method() != PruningMethod::kTopK && layer.method() != PruningMethod::kSigmoidThreshold) {
    throw ConfigError("movement scores are defined for topK and sigmoied_threshold layers, not " +
                      std::string(to_string(layer.method())));
  }
  if (grad_masked_weight.size() != layer.weight().numel()) {
    throw ShapeError("movement_score_gradient: gradient size does not match weight " + to_string(layer.weight().shape()));
  }
  std::vector<double> out(grad_masked_weight.size());
  const auto w = layer.weight().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = grad_masked_weight[i] * w[i];
  return out;
}

}  // namespace bermo
