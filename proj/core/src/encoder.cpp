#include "bermo/encoder.hpp"

#include <cmath>
#include <limits>

#include "bermo/error.hpp"
#include "bermo/ops.hpp"

namespace bermo {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

void EncoderConfig::validate() const {
  if (hidden_dim == 0 || num_heads == 0 || ffn_dim == 0 || vocab_size == 0 || max_seq_len == 0 || num_segments == 0) {
    throw ConfigError("encoder dimensions must all be at least 1");
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) throw ConfigError("dropout_p must lie in [0, 1)");
}

AttentionMask AttentionMask::full(std::size_t seq) {
  AttentionMask m;
  m.seq_ = seq;
  m.allowed_.assign(seq * seq, 1);
  return m;
}

AttentionMask AttentionMask::keys(std::span<const bool> keep) {
  AttentionMask m;
  m.seq_ = keep.size();
  m.allowed_.resize(m.seq_ * m.seq_);
  for (std::size_t q = 0; q < m.seq_; ++q) {
    for (std::size_t k = 0; k < m.seq_; ++k) m.allowed_[q * m.seq_ + k] = keep[k] ? 1 : 0;
  }
  return m;
}

AttentionMask AttentionMask::pairs(std::size_t seq, std::span<const bool> allowed) {
  if (allowed.size() != seq * seq) {
    throw ShapeError("pairwise attention mask needs " + std::to_string(seq * seq) + " entries, got " +
                     std::to_string(allowed.size()));
  }
  AttentionMask m;
  m.seq_ = seq;
  m.allowed_.assign(allowed.begin(), allowed.end());
  return m;
}

Embeddings::Embeddings(const EncoderConfig& cfg, Rng& rng) : dropout_p_(cfg.dropout_p), eps_(cfg.layer_norm_eps) {
  word = normal_tensor({cfg.vocab_size, cfg.hidden_dim}, cfg.initializer_range, rng);
  position = normal_tensor({cfg.max_seq_len, cfg.hidden_dim}, cfg.initializer_range, rng);
  segment = normal_tensor({cfg.num_segments, cfg.hidden_dim}, cfg.initializer_range, rng);
  norm_gain = Tensor::full({cfg.hidden_dim}, 1.0, true);
  norm_bias = Tensor::zeros({cfg.hidden_dim}, true);
}

Tensor Embeddings::forward(const TokenBatch& batch, bool training, Rng* rng) const {
  const std::size_t n = batch.batch * batch.seq;
  if (batch.tokens.size() != n || batch.segments.size() != n) {
    throw ShapeError("embed: expected " + std::to_string(n) + " token and segment ids for batch " +
                     std::to_string(batch.batch) + " x seq " + std::to_string(batch.seq));
  }
  if (batch.seq > position.size(0)) {
    throw std::out_of_range("embed: sequence length " + std::to_string(batch.seq) + " exceeds max_seq_len " +
                            std::to_string(position.size(0)));
  }
  std::vector<std::int64_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = std::int64_t(i % batch.seq);
  const Shape ids{batch.batch, batch.seq};
  Tensor summed = add(add(embedding(word, batch.tokens, ids), embedding(position, positions, ids)),
                      embedding(segment, batch.segments, ids));
  Tensor out = layer_norm(summed, eps_, norm_gain, norm_bias);
  if (training && dropout_p_ > 0.0) out = dropout(out, dropout_p_, true, *rng);
  return out;
}

void Embeddings::collect(ParameterList& out) const {
  out.push_back({"embeddings.word", word});
  out.push_back({"embeddings.position", position});
  out.push_back({"embeddings.segment", segment});
  out.push_back({"embeddings.norm.gain", norm_gain});
  out.push_back({"embeddings.norm.bias", norm_bias});
}

const char* EncoderLayer::projection_name(std::size_t p) {
  static const char* names[] = {"attention.query", "attention.key",    "attention.value",
                                "attention.output", "ffn.intermediate", "ffn.output"};
  return names[p];
}

EncoderLayer::EncoderLayer(const EncoderConfig& cfg, PruningMethod method, double mask_scale, Rng& rng)
    : num_heads_(cfg.num_heads), dropout_p_(cfg.dropout_p), eps_(cfg.layer_norm_eps) {
  const std::size_t d = cfg.hidden_dim;
  const double std = cfg.initializer_range;
  projections[kQuery] = MaskedLinear(d, d, method, mask_scale, std, rng);
  projections[kKey] = MaskedLinear(d, d, method, mask_scale, std, rng);
  projections[kValue] = MaskedLinear(d, d, method, mask_scale, std, rng);
  projections[kAttentionOutput] = MaskedLinear(d, d, method, mask_scale, std, rng);
  projections[kIntermediate] = MaskedLinear(d, cfg.ffn_dim, method, mask_scale, std, rng);
  projections[kOutput] = MaskedLinear(cfg.ffn_dim, d, method, mask_scale, std, rng);
  attention_norm_gain = Tensor::full({d}, 1.0, true);
  attention_norm_bias = Tensor::zeros({d}, true);
  output_norm_gain = Tensor::full({d}, 1.0, true);
  output_norm_bias = Tensor::zeros({d}, true);
}

Tensor EncoderLayer::forward(const Tensor& x, const Tensor& attention_bias, std::span<const Tensor> masks,
                             bool training, Rng* rng) const {
  const std::size_t batch = x.size(0), seq = x.size(1), d = x.size(2);
  const std::size_t heads = num_heads_, head_dim = d / heads;
  auto project = [&](std::size_t p, const Tensor& in) {
    return projections[p].forward(in, masks.empty() ? Tensor{} : masks[p]);
  };
  auto drop = [&](const Tensor& t) { return training && dropout_p_ > 0.0 ? dropout(t, dropout_p_, true, *rng) : t; };
  // (batch, seq, d) -> (batch * heads, seq, head_dim)
  auto split_heads = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {batch, seq, heads, head_dim}), {0, 2, 1, 3}), {batch * heads, seq, head_dim});
  };

  Tensor q = split_heads(project(kQuery, x));
  Tensor k_t = reshape(permute(reshape(project(kKey, x), {batch, seq, heads, head_dim}), {0, 2, 3, 1}),
                       {batch * heads, head_dim, seq});
  Tensor v = split_heads(project(kValue, x));
  Tensor scores = add(scale(matmul(q, k_t), 1.0 / std::sqrt(double(head_dim))), attention_bias);
  Tensor probs = drop(softmax(scores));
  Tensor context = reshape(permute(reshape(matmul(probs, v), {batch, heads, seq, head_dim}), {0, 2, 1, 3}),
                           {batch, seq, d});
  Tensor attended = layer_norm(add(x, drop(project(kAttentionOutput, context))), eps_, attention_norm_gain,
                               attention_norm_bias);
  Tensor hidden = gelu(project(kIntermediate, attended));
  return layer_norm(add(attended, drop(project(kOutput, hidden))), eps_, output_norm_gain, output_norm_bias);
}

void EncoderLayer::collect(ParameterList& out, const std::string& prefix) const {
  for (std::size_t p = 0; p < kNumProjections; ++p) {
    const std::string base = prefix + projection_name(p);
    const MaskedLinear& m = projections[p];
    out.push_back({base + ".weight", m.weight()});
    out.push_back({base + ".bias", m.bias()});
    if (has_learned_scores(m.method())) out.push_back({base + ".mask_scores", m.scores(), ParameterGroup::kScores});
  }
  out.push_back({prefix + "attention.norm.gain", attention_norm_gain});
  out.push_back({prefix + "attention.norm.bias", attention_norm_bias});
  out.push_back({prefix + "output.norm.gain", output_norm_gain});
  out.push_back({prefix + "output.norm.bias", output_norm_bias});
}

Encoder::Encoder(const EncoderConfig& cfg, PruningMethod method, double mask_scale, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  Rng embed_rng = rng.split("embeddings");
  embeddings_ = Embeddings(cfg, embed_rng);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    Rng layer_rng = rng.split(l);
    layers_.emplace_back(cfg, method, mask_scale, layer_rng);
  }
}

HiddenStates Encoder::forward(const Tensor& input, const AttentionMask& mask, std::span<const Tensor> masks,
                              bool training, Rng* rng) const {
  if (input.dim() != 3 || input.size(2) != cfg_.hidden_dim) {
    throw ShapeError("encoder: input " + to_string(input.shape()) + " is not (batch, seq, " +
                     std::to_string(cfg_.hidden_dim) + ")");
  }
  const std::size_t batch = input.size(0), seq = input.size(1);
  if (mask.seq() != seq) {
    throw ShapeError("encoder: attention mask covers " + std::to_string(mask.seq()) + " positions, input has " +
                     std::to_string(seq));
  }
  if (!masks.empty() && masks.size() != layers_.size() * EncoderLayer::kNumProjections) {
    throw ShapeError("encoder: expected " + std::to_string(layers_.size() * EncoderLayer::kNumProjections) +
                     " projection masks, got " + std::to_string(masks.size()));
  }
  if (training && cfg_.dropout_p > 0.0 && !rng) throw std::invalid_argument("encoder: dropout needs a random stream");

  const std::size_t groups = batch * cfg_.num_heads;
  std::vector<double> bias(groups * seq * seq);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t q = 0; q < seq; ++q) {
      for (std::size_t k = 0; k < seq; ++k) {
        bias[(g * seq + q) * seq + k] = mask.allows(q, k) ? 0.0 : -std::numeric_limits<double>::infinity();
      }
    }
  }
  const Tensor attention_bias = constant({groups, seq, seq}, std::move(bias));

  HiddenStates states{input};
  states.reserve(layers_.size() + 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    std::span<const Tensor> layer_masks;
    if (!masks.empty()) layer_masks = masks.subspan(l * EncoderLayer::kNumProjections, EncoderLayer::kNumProjections);
    states.push_back(layers_[l].forward(states.back(), attention_bias, layer_masks, training, rng));
  }
  return states;
}

std::vector<const MaskedLinear*> Encoder::prunable() const {
  std::vector<const MaskedLinear*> out;
  for (const auto& layer : layers_) {
    for (const auto& p : layer.projections) out.push_back(&p);
  }
  return out;
}

std::vector<MaskedLinear*> Encoder::prunable() {
  std::vector<MaskedLinear*> out;
  for (auto& layer : layers_) {
    for (auto& p : layer.projections) out.push_back(&p);
  }
  return out;
}

void Encoder::collect(ParameterList& out) const {
  embeddings_.collect(out);
  for (std::size_t l = 0; l < layers_.size(); ++l) layers_[l].collect(out, "encoder.layer." + std::to_string(l) + ".");
}

ClassificationHead::ClassificationHead(std::size_t hidden_dim, std::size_t num_classes, double init_std, Rng& rng) {
  if (num_classes == 0) throw ConfigError("classification head needs at least one output");
  weight = normal_tensor({num_classes, hidden_dim}, init_std, rng);
  bias = Tensor::zeros({num_classes}, true);
}

Tensor ClassificationHead::forward(const Tensor& features) const {
  if (features.dim() != 2) throw ShapeError("classification head expects (batch, d), got " + to_string(features.shape()));
  return linear(features, weight, bias);
}

void ClassificationHead::collect(ParameterList& out) const {
  out.push_back({"head.weight", weight});
  out.push_back({"head.bias", bias});
}

}  // namespace bermo
