#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "bermo/combine.hpp"
#include "bermo/encoder.hpp"
#include "bermo/parameters.hpp"
#include "bermo/pruning.hpp"

namespace bermo {

/// Whether Top_v ranks each projection's scores separately or all prunable
/// scores together.
enum class MaskScope { kGlobal, kPerLayer };

std::string_view to_string(MaskScope scope);
MaskScope parse_mask_scope(std::string_view name);

/// Sparsity penalty added to the task loss.
enum class Regularization { kNone, kL0, kL1 };

std::string_view to_string(Regularization r);
Regularization parse_regularization(std::string_view name);

struct ModelConfig {
  EncoderConfig encoder;
  bool use_combine = true;
  std::size_t num_classes = 2;
  PruningMethod pruning = PruningMethod::kNone;
  double mask_scale = 0.0;
  MaskScope mask_scope = MaskScope::kGlobal;
  double combine_dropout = 0.1;
  double combine_epsilon = 1e-5;
  HardConcreteParams hard_concrete{};

  void validate() const;
};

struct SparsityReport {
  std::vector<double> retained_fraction_per_layer;  // one entry per encoder layer
  double global_retained_fraction = 1.0;            // over prunable weights
  double total_parameter_fraction = 1.0;            // over all weights (scores excluded)
  std::size_t retained_weights = 0;
  std::size_t prunable_weights = 0;
};

/// Encoder, optional combine block over all depths, first-token pooling and a
/// classification head. With the combine block off the head reads the last
/// hidden state only.
class BermoModel {
 public:
  struct Output {
    Tensor logits;
    HiddenStates states;
    Tensor features;  // what the pooling reads: combine output or last state
  };

  BermoModel() = default;
  BermoModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }

  Output forward(const TokenBatch& batch, const AttentionMask& mask, const MaskContext& ctx, bool training,
                 Rng* rng) const;
  Tensor logits(const TokenBatch& batch, const MaskContext& ctx) const;

  /// One mask per prunable projection (empty for dense models).
  std::vector<Tensor> compute_masks(const MaskContext& ctx) const;

  /// Mean over prunable projections of the per-weight penalty; scalar zero
  /// when `kind` is none or the model has no learned scores.
  Tensor regularization(Regularization kind) const;

  SparsityReport sparsity(const MaskContext& eval_ctx) const;

  ParameterList parameters() const;
  std::vector<const MaskedLinear*> prunable() const { return encoder_.prunable(); }

  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  const CombineBlock* combine() const { return cfg_.use_combine ? &combine_ : nullptr; }
  CombineBlock* combine() { return cfg_.use_combine ? &combine_ : nullptr; }
  const ClassificationHead& head() const { return head_; }

 private:
  ModelConfig cfg_;
  Encoder encoder_;
  CombineBlock combine_;
  ClassificationHead head_;
};

}  // namespace bermo
