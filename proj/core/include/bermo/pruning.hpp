#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bermo/rng.hpp"
#include "bermo/tensor.hpp"

namespace bermo {

/// How a masked layer derives its mask M from its importance scores S.
enum class PruningMethod {
  kNone,              // dense layer, M = 1
  kMagnitude,         // S = |W|, M = Top_v(S)
  kTopK,              // movement pruning: learned S, M = Top_v(S), straight-through
  kL0,                // hard-concrete gates over learned logits
  kSigmoidThreshold,  // soft movement: M = 1[sigmoid(S) > tau], straight-through
};

/// Flag spellings: "none", "magnitude", "topK", "l0", "sigmoied_threshold".
std::string_view to_string(PruningMethod method);
PruningMethod parse_pruning_method(std::string_view name);

/// True for methods whose mask keeps an exact top fraction of scores.
constexpr bool uses_topv(PruningMethod m) { return m == PruningMethod::kMagnitude || m == PruningMethod::kTopK; }
/// True for methods whose scores are trained by the optimizer.
constexpr bool has_learned_scores(PruningMethod m) {
  return m == PruningMethod::kTopK || m == PruningMethod::kL0 || m == PruningMethod::kSigmoidThreshold;
}

/// Hard-concrete stretch/temperature parameters (defaults from the L0
/// relaxation literature: beta = 2/3, stretch interval (-0.1, 1.1)).
struct HardConcreteParams {
  double beta = 2.0 / 3.0;
  double gamma = -0.1;   // lower end of the stretch interval
  double epsilon = 1.1;  // upper end of the stretch interval

  /// Throws ConfigError unless gamma < 0 < 1 < epsilon and beta > 0.
  void validate() const;
};

/// Warmup plateau, cubic ramp, final plateau.
struct SparsitySchedule {
  double initial_threshold = 1.0;
  double final_threshold = 0.10;
  std::size_t warmup_steps = 0;
  double initial_warmup = 1.0;
  double final_warmup = 1.0;
  std::size_t total_steps = 1;

  /// Checks the ramp window is non-empty and, for retention-fraction
  /// schedules, that 0 < final <= initial <= 1. Sigmoid-threshold schedules
  /// only need both thresholds in [0, 1).
  void validate(PruningMethod method = PruningMethod::kTopK) const;

  /// Threshold at `step` (clamped to total_steps).
  double at(std::size_t step) const;
};

double cubic_threshold(const SparsitySchedule& schedule, std::size_t step);

/// Number of ones Top_v keeps out of `n` scores: round(v * n).
std::size_t topv_count(std::size_t n, double v);

/// Binary mask keeping the round(v*n) highest scores. Ties go to the lower
/// flat index. Throws std::invalid_argument unless 0 < v <= 1.
std::vector<double> topv_mask(std::span<const double> scores, double v);
Tensor topv_mask(const Tensor& scores, double v);

/// |W|, recomputed from the current weights; carries no gradient.
Tensor magnitude_scores(const Tensor& weight);

/// Uniform draws for the hard-concrete sampler, clamped to [1e-6, 1 - 1e-6].
std::vector<double> hard_concrete_noise(std::size_t n, Rng& rng);

struct HardConcreteSample {
  Tensor stretched_probability;  // sigmoid((log u - log(1-u) + s) / beta)
  Tensor stretched;              // Z = p (epsilon - gamma) + gamma
  Tensor mask;                   // clamp(Z, 0, 1)
};

/// Differentiable hard-concrete gate for logits `s_logit` and draws `u`.
HardConcreteSample hard_concrete_sample(const Tensor& s_logit, std::span<const double> u, const HardConcreteParams& p);

/// Deterministic inference gate clamp(((epsilon - gamma) / beta) sigmoid(s) + gamma, 0, 1).
Tensor l0_inference_mask(const Tensor& s_logit, const HardConcreteParams& p);

/// Expected number of open gates: sum sigmoid(s - beta log(-gamma / epsilon)).
Tensor l0_penalty(const Tensor& s_logit, const HardConcreteParams& p);

/// 1[sigmoid(S) > tau] with straight-through gradient to S.
Tensor soft_movement_mask(const Tensor& scores, double tau);

/// sum sigmoid(S); the soft-movement sparsity regularizer before lambda.
Tensor l1_regularizer(const Tensor& scores);

/// Evaluation-or-training context passed to mask computation.
struct MaskContext {
  bool training = false;
  double threshold = 1.0;  // retention fraction (Top_v) or sigmoid threshold
  Rng* rng = nullptr;      // required for L0 masks while training
  HardConcreteParams hard_concrete{};
};

/// Linear layer a = (W .* M) x + b with per-weight importance scores.
class MaskedLinear {
 public:
  MaskedLinear() = default;
  /// Weights ~ N(0, init_std), bias zero, scores constant `mask_scale`.
  MaskedLinear(std::size_t in_features, std::size_t out_features, PruningMethod method, double mask_scale,
               double init_std, Rng& rng);

  std::size_t in_features() const { return weight_.size(1); }
  std::size_t out_features() const { return weight_.size(0); }
  PruningMethod method() const { return method_; }

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }
  const Tensor& scores() const { return scores_; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  Tensor& scores() { return scores_; }

  /// Scores that feed Top_v: |W| for magnitude, S otherwise.
  std::vector<double> ranking_scores() const;

  /// Mask for this layer alone (per-layer Top_v when applicable).
  Tensor mask(const MaskContext& ctx) const;
  /// Mask from a precomputed binary pattern (used for global Top_v).
  Tensor mask_from_pattern(std::vector<double> pattern) const;

  Tensor forward(const Tensor& x, const Tensor& mask) const;

 private:
  PruningMethod method_ = PruningMethod::kNone;
  Tensor weight_;
  Tensor bias_;
  Tensor scores_;
};

/// Computes the layer's mask for `ctx` and applies it.
Tensor masked_forward(const MaskedLinear& layer, const Tensor& x, const MaskContext& ctx);

/// Score gradient implied by the straight-through estimator for movement
/// scores: dL/dS = dL/d(W .* M) .* W. A descent step on S therefore
/// accumulates -sum_t grad * W. Throws ConfigError for methods without
/// movement-style scores.
std::vector<double> movement_score_gradient(const MaskedLinear& layer, std::span<const double> grad_masked_weight);

}  // namespace bermo
