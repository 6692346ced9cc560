#include "bermo/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bermo/error.hpp"

namespace bermo {

namespace {

using detail::Node;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

using BackwardFn = std::function<void(Node&)>;

// dst (+)= lhs * rhs. Eigen's matrix-vector and small coefficient-wise
// kernels pick code paths by pointer alignment, so their rounding varies with
// where malloc placed the buffers. Only the packed GEMM kernel is
// alignment-independent; everything else runs as a fixed-order loop.
template <class Dst, class Lhs, class Rhs>
void multiply(Dst&& dst, const Lhs& lhs, const Rhs& rhs, bool accumulate) {
  const Eigen::Index rows = dst.rows(), cols = dst.cols(), inner = lhs.cols();
  if (rows > 1 && cols > 1 && inner + rows + cols >= 20) {
    if (accumulate) {
      dst.noalias() += lhs * rhs;
    } else {
      dst.noalias() = lhs * rhs;
    }
    return;
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (Eigen::Index k = 0; k < inner; ++k) acc += lhs(i, k) * rhs(k, j);
      dst(i, j) = accumulate ? dst(i, j) + acc : acc;
    }
  }
}

Tensor make_result(Shape shape, std::vector<double> value, const char* op, std::initializer_list<Tensor> inputs,
                   BackwardFn fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  if (grad_enabled()) {
    const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.defined() && t.requires_grad(); });
    if (any) {
      node->requires_grad = true;
      for (const Tensor& t : inputs) node->parents.push_back(t.defined() ? t.node() : std::make_shared<Node>());
      node->backward = std::move(fn);
    }
  }
  return Tensor(std::move(node));
}

// Gradient buffer of parent `i`, or null if it does not take gradients.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad_data() : nullptr;
}

const std::vector<double>& parent_value(const Node& self, std::size_t i) { return self.parents[i]->value; }

bool is_suffix(const Shape& big, const Shape& small) {
  if (numel(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (a.numel() >= b.numel() && is_suffix(a.shape(), b.shape())) return a.shape();
  if (b.numel() >= a.numel() && is_suffix(b.shape(), a.shape())) return b.shape();
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a.shape()) + " and " + to_string(b.shape()));
}

// Elementwise binary op with suffix broadcasting. `da`/`db` return the local
// partial derivative given (a, b).
template <class F, class DA, class DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, F f, DA da, DB db) {
  Shape shape = broadcast_shape(a, b, op);
  const std::size_t n = numel(shape), na = a.numel(), nb = b.numel();
  std::vector<double> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  if (na == n && nb == n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % na], bv[i % nb]);
  }
  return make_result(std::move(shape), std::move(out), op, {a, b}, [na, nb, da, db](Node& self) {
    const auto& x = parent_value(self, 0);
    const auto& y = parent_value(self, 1);
    const std::size_t n = self.value.size();
    const double* g = self.grad.data();
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i % na] += g[i] * da(x[i % na], y[i % nb]);
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * db(x[i % na], y[i % nb]);
    }
  });
}

template <class F, class DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return make_result(x.shape(), std::move(out), op, {x}, [df](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      const auto& xv = parent_value(self, 0);
      for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += self.grad[i] * df(xv[i], self.value[i]);
    }
  });
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "minimum", [](double x, double y) { return std::min(x, y); },
      [](double x, double y) { return x < y ? 1.0 : 0.0; }, [](double x, double y) { return y < x ? 1.0 : 0.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "maximum", [](double x, double y) { return std::max(x, y); },
      [](double x, double y) { return x > y ? 1.0 : 0.0; }, [](double x, double y) { return y > x ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      x, "add_scalar", [offset](double v) { return v + offset; }, [](double, double) { return 1.0; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  return unary(
      x, "clamp", [lo, hi](double v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  return unary(
      x, "gelu",
      [](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v))); },
      [](double v, double) {
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        return 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
      });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool batched = a.dim() == 3 && b.dim() == 3;
  if (!(batched || (a.dim() == 2 && b.dim() == 2)) || a.shape()[a.dim() - 1] != b.shape()[b.dim() - 2] ||
      (batched && a.size(0) != b.size(0))) {
    throw ShapeError("matmul: cannot contract " + to_string(a.shape()) + " with " + to_string(b.shape()));
  }
  const std::size_t batch = batched ? a.size(0) : 1;
  const auto m = static_cast<Eigen::Index>(a.shape()[a.dim() - 2]);
  const auto k = static_cast<Eigen::Index>(a.shape()[a.dim() - 1]);
  const auto n = static_cast<Eigen::Index>(b.shape()[b.dim() - 1]);
  Shape shape = batched ? Shape{batch, std::size_t(m), std::size_t(n)} : Shape{std::size_t(m), std::size_t(n)};
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    multiply(MatrixMap(out.data() + i * m * n, m, n), ConstMatrixMap(a.data().data() + i * m * k, m, k),
             ConstMatrixMap(b.data().data() + i * k * n, k, n), false);
  }
  return make_result(std::move(shape), std::move(out), "matmul", {a, b}, [batch, m, k, n](Node& self) {
    const double* av = parent_value(self, 0).data();
    const double* bv = parent_value(self, 1).data();
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMatrixMap g(self.grad.data() + i * m * n, m, n);
      if (ga) multiply(MatrixMap(ga + i * m * k, m, k), g, ConstMatrixMap(bv + i * k * n, k, n).transpose(), true);
      if (gb) multiply(MatrixMap(gb + i * k * n, k, n), ConstMatrixMap(av + i * m * k, m, k).transpose(), g, true);
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (weight.dim() != 2 || x.dim() == 0 || x.shape().back() != weight.size(1)) {
    throw ShapeError("linear: input " + to_string(x.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  if (bias.defined() && (bias.dim() != 1 || bias.size(0) != weight.size(0))) {
    throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match weight " + to_string(weight.shape()));
  }
  const auto in = static_cast<Eigen::Index>(weight.size(1));
  const auto out_dim = static_cast<Eigen::Index>(weight.size(0));
  const auto rows = static_cast<Eigen::Index>(x.numel() / in);
  Shape shape = x.shape();
  shape.back() = std::size_t(out_dim);
  std::vector<double> out(rows * out_dim);
  MatrixMap y(out.data(), rows, out_dim);
  multiply(y, ConstMatrixMap(x.data().data(), rows, in), ConstMatrixMap(weight.data().data(), out_dim, in).transpose(),
           false);
  if (bias.defined()) {
    const double* b = bias.data().data();
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < out_dim; ++c) y(r, c) += b[c];
    }
  }
  const bool has_bias = bias.defined();
  return make_result(std::move(shape), std::move(out), "linear", {x, weight, bias},
                     [rows, in, out_dim, has_bias](Node& self) {
                       ConstMatrixMap g(self.grad.data(), rows, out_dim);
                       if (double* gx = parent_grad(self, 0)) {
                         multiply(MatrixMap(gx, rows, in), g, ConstMatrixMap(parent_value(self, 1).data(), out_dim, in),
                                  true);
                       }
                       if (double* gw = parent_grad(self, 1)) {
                         multiply(MatrixMap(gw, out_dim, in), g.transpose(),
                                  ConstMatrixMap(parent_value(self, 0).data(), rows, in), true);
                       }
                       if (has_bias) {
                         if (double* gb = parent_grad(self, 2)) {
                           for (Eigen::Index r = 0; r < rows; ++r) {
                             for (Eigen::Index c = 0; c < out_dim; ++c) gb[c] += g(r, c);
                           }
                         }
                       }
                     });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), "reshape", {x}, [](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    }
  });
}

namespace {

// Maps each flat output index of a permutation to its flat input index.
std::vector<std::size_t> permutation_index(const Shape& in_shape, std::span<const std::size_t> axes, Shape& out_shape) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t d = rank; d-- > 1;) in_strides[d - 1] = in_strides[d] * in_shape[d];
  out_shape.resize(rank);
  std::vector<std::size_t> strides(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    out_shape[d] = in_shape[axes[d]];
    strides[d] = in_strides[axes[d]];
  }
  const std::size_t n = numel(in_shape);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < n; ++i) {
    index[i] = offset;
    for (std::size_t d = rank; d-- > 0;) {
      if (++counter[d] < out_shape[d]) {
        offset += strides[d];
        break;
      }
      offset -= strides[d] * (out_shape[d] - 1);
      counter[d] = 0;
    }
  }
  return index;
}

}  // namespace

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  std::vector<bool> seen(x.dim(), false);
  bool valid = axes.size() == x.dim();
  for (std::size_t a : axes) {
    if (!valid || a >= x.dim() || seen[a]) {
      valid = false;
      break;
    }
    seen[a] = true;
  }
  if (!valid) throw ShapeError("permute: invalid axes for shape " + to_string(x.shape()));
  Shape shape;
  auto index = permutation_index(x.shape(), axes, shape);
  std::vector<double> out(index.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = xv[index[i]];
  return make_result(std::move(shape), std::move(out), "permute", {x}, [index = std::move(index)](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += self.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor select(const Tensor& x, std::size_t axis, std::size_t index) {
  if (axis >= x.dim() || index >= x.size(axis)) {
    throw ShapeError("select: index " + std::to_string(index) + " on axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.size(d);
  for (std::size_t d = axis + 1; d < x.dim(); ++d) inner *= x.size(d);
  const std::size_t extent = x.size(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>((o * extent + index) * inner), inner, out.begin() + static_cast<std::ptrdiff_t>(o * inner));
  }
  return make_result(std::move(shape), std::move(out), "select", {x}, [outer, inner, extent, index](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gx[(o * extent + index) * inner + i] += self.grad[o * inner + i];
      }
    }
  });
}

Tensor stack(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("stack: no tensors given");
  const Shape& part_shape = parts[0].shape();
  for (const Tensor& t : parts) {
    if (t.shape() != part_shape) {
      throw ShapeError("stack: shape " + to_string(t.shape()) + " differs from " + to_string(part_shape));
    }
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), part_shape.begin(), part_shape.end());
  const std::size_t chunk = numel(part_shape);
  std::vector<double> out;
  out.reserve(parts.size() * chunk);
  for (const Tensor& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());

  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(out);
  node->op = "stack";
  if (grad_enabled() && std::any_of(parts.begin(), parts.end(), [](const Tensor& t) { return t.requires_grad(); })) {
    node->requires_grad = true;
    for (const Tensor& t : parts) node->parents.push_back(t.node());
    node->backward = [chunk](Node& self) {
      for (std::size_t p = 0; p < self.parents.size(); ++p) {
        if (double* g = parent_grad(self, p)) {
          for (std::size_t i = 0; i < chunk; ++i) g[i] += self.grad[p * chunk + i];
        }
      }
    };
  }
  return Tensor(std::move(node));
}

Tensor softmax(const Tensor& x) {
  if (x.dim() == 0) throw ShapeError("softmax: needs at least one axis");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double* y = out.data() + r * cols;
    const double hi = *std::max_element(in, in + cols);
    if (hi == -std::numeric_limits<double>::infinity()) {
      std::fill(y, y + cols, 0.0);
      continue;
    }
    double total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += (y[c] = std::exp(in[c] - hi));
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  return make_result(x.shape(), std::move(out), "softmax", {x}, [rows, cols](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* g = self.grad.data() + r * cols;
        double dot = 0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[c] * y[c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += y[c] * (g[c] - dot);
      }
    }
  });
}

Tensor log_softmax(const Tensor& x) {
  if (x.dim() == 0) throw ShapeError("log_softmax: needs at least one axis");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  const auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double hi = *std::max_element(in, in + cols);
    double total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - hi);
    const double lse = hi + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[c] - lse;
  }
  return make_result(x.shape(), std::move(out), "log_softmax", {x}, [rows, cols](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* y = self.value.data() + r * cols;
        const double* g = self.grad.data() + r * cols;
        double total = 0;
        for (std::size_t c = 0; c < cols; ++c) total += g[c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] - std::exp(y[c]) * total;
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, double eps, const Tensor& gain, const Tensor& bias) {
  if (x.dim() == 0) throw ShapeError("layer_norm: needs at least one axis");
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  for (const Tensor* p : {&gain, &bias}) {
    if (p->defined() && p->shape() != Shape{cols}) {
      throw ShapeError("layer_norm: affine parameter " + to_string(p->shape()) + " does not match input " +
                       to_string(x.shape()));
    }
  }
  const auto xv = x.data();
  std::vector<double> normalized(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += in[c];
    mu /= double(cols);
    double var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= double(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) normalized[r * cols + c] = (in[c] - mu) * inv_std[r];
  }
  std::vector<double> out = normalized;
  if (gain.defined() || bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        double& v = out[r * cols + c];
        if (gain.defined()) v *= gain[c];
        if (bias.defined()) v += bias[c];
      }
    }
  }
  const bool has_gain = gain.defined(), has_bias = bias.defined();
  return make_result(
      x.shape(), std::move(out), "layer_norm", {x, gain, bias},
      [rows, cols, has_gain, has_bias, normalized = std::move(normalized), inv_std = std::move(inv_std)](Node& self) {
        const double* g = self.grad.data();
        const double* w = has_gain ? self.parents[1]->value.data() : nullptr;
        if (double* gg = has_gain ? parent_grad(self, 1) : nullptr) {
          for (std::size_t i = 0; i < rows * cols; ++i) gg[i % cols] += g[i] * normalized[i];
        }
        if (double* gb = has_bias ? parent_grad(self, 2) : nullptr) {
          for (std::size_t i = 0; i < rows * cols; ++i) gb[i % cols] += g[i];
        }
        double* gx = parent_grad(self, 0);
        if (!gx) return;
        std::vector<double> gxhat(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          double sum_g = 0, sum_gx = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            gxhat[c] = g[r * cols + c] * (w ? w[c] : 1.0);
            sum_g += gxhat[c];
            sum_gx += gxhat[c] * normalized[r * cols + c];
          }
          const double n = double(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            gx[r * cols + c] += inv_std[r] / n * (n * gxhat[c] - sum_g - normalized[r * cols + c] * sum_gx);
          }
        }
      });
}

Tensor dropout(const Tensor& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: probability must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  for (double& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return make_result(x.shape(), std::move(out), "dropout", {x}, [mask = std::move(mask)](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < mask.size(); ++i) gx[i] += self.grad[i] * mask[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
  return make_result({}, {total}, "sum", {x}, [](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += self.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  const auto xv = x.data();
  const double n = double(xv.size());
  const double avg = std::accumulate(xv.begin(), xv.end(), 0.0) / n;
  return make_result({}, {avg}, "mean", {x}, [n](Node& self) {
    if (double* gx = parent_grad(self, 0)) {
      const std::size_t count = self.parents[0]->value.size();
      for (std::size_t i = 0; i < count; ++i) gx[i] += self.grad[0] / n;
    }
  });
}

Tensor embedding(const Tensor& table, std::span<const std::int64_t> ids, const Shape& id_shape) {
  if (table.dim() != 2) throw ShapeError("embedding: table must be 2-D, got " + to_string(table.shape()));
  if (numel(id_shape) != ids.size()) {
    throw ShapeError("embedding: id shape " + to_string(id_shape) + " does not match " + std::to_string(ids.size()) + " ids");
  }
  const std::size_t rows = table.size(0), width = table.size(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || std::size_t(ids[i]) >= rows) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " at index " + std::to_string(i) +
                              " outside table of " + std::to_string(rows) + " rows");
    }
  }
  Shape shape = id_shape;
  shape.push_back(width);
  std::vector<double> out(ids.size() * width);
  const auto tv = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width, out.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  std::vector<std::int64_t> id_copy(ids.begin(), ids.end());
  return make_result(std::move(shape), std::move(out), "embedding", {table}, [width, id_copy = std::move(id_copy)](Node& self) {
    if (double* gt = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < id_copy.size(); ++i) {
        for (std::size_t c = 0; c < width; ++c) gt[id_copy[i] * width + c] += self.grad[i * width + c];
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.dim() != 2 || logits.size(0) != labels.size()) {
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.size(0), classes = logits.size(1);
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || std::size_t(labels[b]) >= classes) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[b]) + " at index " + std::to_string(b) +
                              " outside " + std::to_string(classes) + " classes");
    }
  }
  const auto lv = logits.data();
  std::vector<double> probs(logits.numel());
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = lv.data() + b * classes;
    const double hi = *std::max_element(row, row + classes);
    double z = 0;
    for (std::size_t c = 0; c < classes; ++c) z += (probs[b * classes + c] = std::exp(row[c] - hi));
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= z;
    total += hi + std::log(z) - row[labels[b]];
  }
  std::vector<int> label_copy(labels.begin(), labels.end());
  return make_result({}, {total / double(batch)}, "cross_entropy", {logits},
                     [batch, classes, probs = std::move(probs), label_copy = std::move(label_copy)](Node& self) {
                       if (double* gl = parent_grad(self, 0)) {
                         const double g = self.grad[0] / double(batch);
                         for (std::size_t b = 0; b < batch; ++b) {
                           for (std::size_t c = 0; c < classes; ++c) {
                             const double target = int(c) == label_copy[b] ? 1.0 : 0.0;
                             gl[b * classes + c] += g * (probs[b * classes + c] - target);
                           }
                         }
                       }
                     });
}

Tensor straight_through(const Tensor& scores, std::vector<double> mask) {
  if (mask.size() != scores.numel()) {
    throw ShapeError("straight_through: mask of " + std::to_string(mask.size()) + " values for scores " +
                     to_string(scores.shape()));
  }
  return make_result(scores.shape(), std::move(mask), "straight_through", {scores}, [](Node& self) {
    if (double* gs = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) gs[i] += self.grad[i];
    }
  });
}

}  // namespace bermo
