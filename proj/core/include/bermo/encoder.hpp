#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bermo/parameters.hpp"
#include "bermo/pruning.hpp"
#include "bermo/rng.hpp"
#include "bermo/tensor.hpp"

namespace bermo {

struct EncoderConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 32;
  std::size_t max_seq_len = 32;
  std::size_t num_segments = 2;
  double dropout_p = 0.1;
  double layer_norm_eps = 1e-12;
  double initializer_range = 0.02;

  /// Throws ConfigError unless hidden_dim % num_heads == 0 and sizes are positive.
  void validate() const;
  std::size_t head_dim() const { return hidden_dim / num_heads; }
};

/// Token ids plus segment ids for a (batch, seq) block, row-major.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<std::int64_t> tokens;
  std::vector<std::int64_t> segments;
};

/// Which key positions each query may attend to. Disallowed pairs receive
/// -inf logits before the softmax.
class AttentionMask {
 public:
  /// Every position sees every position.
  static AttentionMask full(std::size_t seq);
  /// Key-padding mask: `keep[k]` false hides key k from all queries.
  static AttentionMask keys(std::span<const bool> keep);
  /// Pairwise mask, row-major (query, key).
  static AttentionMask pairs(std::size_t seq, std::span<const bool> allowed);

  std::size_t seq() const { return seq_; }
  bool allows(std::size_t query, std::size_t key) const { return allowed_[query * seq_ + key] != 0; }

 private:
  std::size_t seq_ = 0;
  std::vector<std::uint8_t> allowed_;
};

/// Output of every depth: index 0 is the embedding output, index j the
/// output of encoder layer j.
using HiddenStates = std::vector<Tensor>;

class Embeddings {
 public:
  Embeddings() = default;
  Embeddings(const EncoderConfig& cfg, Rng& rng);

  /// Sum of token, position and segment embeddings, layer-normalized, then
  /// dropout. Throws std::out_of_range naming the offending index.
  Tensor forward(const TokenBatch& batch, bool training, Rng* rng) const;

  void collect(ParameterList& out) const;

  Tensor word, position, segment, norm_gain, norm_bias;

 private:
  double dropout_p_ = 0.0;
  double eps_ = 1e-12;
};

/// Post-norm transformer layer with masked projections.
class EncoderLayer {
 public:
  /// Order of the six prunable projections inside a layer.
  enum Projection { kQuery, kKey, kValue, kAttentionOutput, kIntermediate, kOutput, kNumProjections };
  static const char* projection_name(std::size_t p);

  EncoderLayer() = default;
  EncoderLayer(const EncoderConfig& cfg, PruningMethod method, double mask_scale, Rng& rng);

  /// `masks` holds one (possibly undefined) mask per projection.
  Tensor forward(const Tensor& x, const Tensor& attention_bias, std::span<const Tensor> masks, bool training,
                 Rng* rng) const;

  void collect(ParameterList& out, const std::string& prefix) const;

  MaskedLinear projections[kNumProjections];
  Tensor attention_norm_gain, attention_norm_bias, output_norm_gain, output_norm_bias;

 private:
  std::size_t num_heads_ = 1;
  double dropout_p_ = 0.0;
  double eps_ = 1e-12;
};

/// Embeddings plus a stack of L encoder layers.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, PruningMethod method, double mask_scale, Rng& rng);

  const EncoderConfig& config() const { return cfg_; }

  Tensor embed(const TokenBatch& batch, bool training, Rng* rng) const { return embeddings_.forward(batch, training, rng); }

  /// Runs the stack over `input` (batch, seq, d) and returns all L+1 states.
  /// `masks` is empty (dense) or holds kNumProjections masks per layer.
  HiddenStates forward(const Tensor& input, const AttentionMask& mask, std::span<const Tensor> masks, bool training,
                       Rng* rng) const;

  std::vector<const MaskedLinear*> prunable() const;
  std::vector<MaskedLinear*> prunable();
  void collect(ParameterList& out) const;

  const Embeddings& embeddings() const { return embeddings_; }
  Embeddings& embeddings() { return embeddings_; }
  std::vector<EncoderLayer>& layers() { return layers_; }
  const std::vector<EncoderLayer>& layers() const { return layers_; }

 private:
  EncoderConfig cfg_;
  Embeddings embeddings_;
  std::vector<EncoderLayer> layers_;
};

/// Affine map from pooled features (batch, d) to logits (batch, classes).
class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(std::size_t hidden_dim, std::size_t num_classes, double init_std, Rng& rng);

  Tensor forward(const Tensor& features) const;
  void collect(ParameterList& out) const;

  Tensor weight, bias;
};

}  // namespace bermo
