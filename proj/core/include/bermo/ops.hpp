#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "bermo/rng.hpp"
#include "bermo/tensor.hpp"

namespace bermo {

// Differentiable primitives. Binary elementwise ops accept operands of equal
// shape, a scalar (single-element) operand, or an operand whose shape is a
// trailing suffix of the other's (bias-style broadcast).
//
// Subgradient convention for min/max/clamp/relu: the gradient passes only
// where the selected input is strictly interior; ties and boundaries get zero.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& x);

/// (m,k)@(k,n) or batched (b,m,k)@(b,k,n).
Tensor matmul(const Tensor& a, const Tensor& b);
/// x (..., in) times weight (out, in) transposed, plus optional bias (out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes);
/// Drops `axis` by taking position `index` along it.
Tensor select(const Tensor& x, std::size_t axis, std::size_t index);
/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

/// Softmax over the last axis. Rows that are entirely -inf produce zeros.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);

/// Normalizes each last-axis row to zero mean and unit variance, with
/// `eps` inside the square root; gain/bias are optional (last-axis sized).
Tensor layer_norm(const Tensor& x, double eps, const Tensor& gain = {}, const Tensor& bias = {});

/// Inverted dropout: kept entries are scaled by 1/(1-p). Identity when not
/// training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Row lookup: table (V, d), ids shaped `id_shape` -> (id_shape..., d).
Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, const Shape& id_shape);

/// Mean negative log-likelihood of integer labels under logits (B, C).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Forward value is `mask`; backward hands the incoming gradient to
/// `scores` unchanged (straight-through estimator).
Tensor straight_through(const Tensor& scores, std::vector<double> mask);

/// Constant (no-grad) tensor helper.
inline Tensor constant(Shape shape, std::vector<double> values) {
  return Tensor(std::move(shape), std::move(values), false);
}

}  // namespace bermo
