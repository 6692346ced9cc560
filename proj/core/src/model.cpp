#include "bermo/model.hpp"

#include "bermo/error.hpp"
#include "bermo/ops.hpp"

namespace bermo {

std::string_view to_string(MaskScope scope) { return scope == MaskScope::kGlobal ? "global" : "per_layer"; }

MaskScope parse_mask_scope(std::string_view name) {
  if (name == "global") return MaskScope::kGlobal;
  if (name == "per_layer") return MaskScope::kPerLayer;
  throw ConfigError("unknown mask scope '" + std::string(name) + "' (expected global or per_layer)");
}

std::string_view to_string(Regularization r) {
  switch (r) {
    case Regularization::kNone: return "none";
    case Regularization::kL0: return "l0";
    case Regularization::kL1: return "l1";
  }
  return "none";
}

Regularization parse_regularization(std::string_view name) {
  if (name == "none") return Regularization::kNone;
  if (name == "l0") return Regularization::kL0;
  if (name == "l1") return Regularization::kL1;
  throw ConfigError("unknown regularization '" + std::string(name) + "' (expected none, l0 or l1)");
}

void ModelConfig::validate() const {
  encoder.validate();
  if (num_classes == 0) throw ConfigError("num_classes must be at least 1");
  if (pruning == PruningMethod::kL0) hard_concrete.validate();
}

BermoModel::BermoModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  const Rng root(seed);
  // Independent streams keep encoder weights identical with or without the
  // combine block.
  Rng encoder_rng = root.split("encoder");
  Rng combine_rng = root.split("combine");
  Rng head_rng = root.split("head");
  encoder_ = Encoder(cfg.encoder, cfg.pruning, cfg.mask_scale, encoder_rng);
  if (cfg.use_combine) combine_ = CombineBlock(cfg.encoder.num_layers, combine_rng, cfg.combine_dropout, cfg.combine_epsilon);
  head_ = ClassificationHead(cfg.encoder.hidden_dim, cfg.num_classes, cfg.encoder.initializer_range, head_rng);
}

std::vector<Tensor> BermoModel::compute_masks(const MaskContext& ctx_in) const {
  if (cfg_.pruning == PruningMethod::kNone) return {};
  MaskContext ctx = ctx_in;
  ctx.hard_concrete = cfg_.hard_concrete;
  const auto layers = prunable();
  std::vector<Tensor> masks;
  masks.reserve(layers.size());
  if (uses_topv(cfg_.pruning) && cfg_.mask_scope == MaskScope::kGlobal) {
    std::vector<double> all;
    for (const MaskedLinear* layer : layers) {
      auto s = layer->ranking_scores();
      all.insert(all.end(), s.begin(), s.end());
    }
    const std::vector<double> pattern = topv_mask(all, ctx.threshold);
    std::size_t offset = 0;
    for (const MaskedLinear* layer : layers) {
      const std::size_t n = layer->weight().numel();
      masks.push_back(layer->mask_from_pattern(std::vector<double>(pattern.begin() + std::ptrdiff_t(offset),
                                                                   pattern.begin() + std::ptrdiff_t(offset + n))));
      offset += n;
    }
  } else {
    for (const MaskedLinear* layer : layers) masks.push_back(layer->mask(ctx));
  }
  return masks;
}

BermoModel::Output BermoModel::forward(const TokenBatch& batch, const AttentionMask& mask, const MaskContext& ctx,
                                       bool training, Rng* rng) const {
  Output out;
  const std::vector<Tensor> masks = compute_masks(ctx);
  out.states = encoder_.forward(encoder_.embed(batch, training, rng), mask, masks, training, rng);
  out.features = cfg_.use_combine ? combine_.forward(out.states, training, rng) : out.states.back();
  out.logits = head_.forward(select(out.features, 1, 0));
  return out;
}

Tensor BermoModel::logits(const TokenBatch& batch, const MaskContext& ctx) const {
  return forward(batch, AttentionMask::full(batch.seq), ctx, false, nullptr).logits;
}

Tensor BermoModel::regularization(Regularization kind) const {
  if (kind == Regularization::kNone || !has_learned_scores(cfg_.pruning)) return Tensor::scalar(0.0);
  Tensor total;
  const auto layers = prunable();
  for (const MaskedLinear* layer : layers) {
    Tensor term = kind == Regularization::kL0 ? l0_penalty(layer->scores(), cfg_.hard_concrete)
                                              : l1_regularizer(layer->scores());
    term = scale(term, 1.0 / double(layer->scores().numel()));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / double(layers.size()));
}

SparsityReport BermoModel::sparsity(const MaskContext& eval_ctx) const {
  NoGradGuard no_grad;
  SparsityReport report;
  const auto layers = prunable();
  const auto masks = compute_masks(eval_ctx);
  std::size_t per_layer_kept = 0, per_layer_total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t n = layers[i]->weight().numel();
    std::size_t kept = n;
    if (!masks.empty()) {
      kept = 0;
      for (double m : masks[i].data()) kept += m > 0.0 ? 1 : 0;
    }
    report.retained_weights += kept;
    report.prunable_weights += n;
    per_layer_kept += kept;
    per_layer_total += n;
    if ((i + 1) % EncoderLayer::kNumProjections == 0) {
      report.retained_fraction_per_layer.push_back(double(per_layer_kept) / double(per_layer_total));
      per_layer_kept = per_layer_total = 0;
    }
  }
  if (report.prunable_weights > 0) {
    report.global_retained_fraction = double(report.retained_weights) / double(report.prunable_weights);
  }
  std::size_t all_weights = 0;
  for (const auto& p : parameters()) {
    if (p.group != ParameterGroup::kScores) all_weights += p.tensor.numel();
  }
  const std::size_t pruned = report.prunable_weights - report.retained_weights;
  report.total_parameter_fraction = double(all_weights - pruned) / double(all_weights);
  return report;
}

ParameterList BermoModel::parameters() const {
  ParameterList out;
  encoder_.collect(out);
  if (cfg_.use_combine) {
    for (auto& p : combine_.parameters()) out.push_back(std::move(p));
  }
  head_.collect(out);
  return out;
}

}  // namespace bermo
