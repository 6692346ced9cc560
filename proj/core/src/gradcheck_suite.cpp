#include <algorithm>
#include <cmath>

#include "bermo/combine.hpp"
#include "bermo/distill.hpp"
#include "bermo/encoder.hpp"
#include "bermo/error.hpp"
#include "bermo/gradcheck.hpp"
#include "bermo/ops.hpp"
#include "bermo/pruning.hpp"

namespace bermo {

namespace {

Tensor random_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor random_constant(Shape shape, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return constant(std::move(shape), std::move(v));
}

// Contracts a tensor to a scalar against fixed weights so every entry of the
// gradient is exercised.
Tensor probe(const Tensor& x, const Tensor& weights) { return sum(mul(x, weights)); }

std::vector<GradcheckResult> tensor_checks() {
  Rng rng(101);
  std::vector<GradcheckResult> out;
  {
    Tensor a = random_leaf({3, 4}, rng), b = random_leaf({4, 2}, rng);
    Tensor w = random_constant({3, 2}, rng);
    out.push_back({"tensor", "matmul", finite_difference_check([&] { return probe(matmul(a, b), w); }, {a, b})});
  }
  {
    Tensor a = random_leaf({2, 3, 4}, rng), b = random_leaf({2, 4, 3}, rng);
    Tensor w = random_constant({2, 3, 3}, rng);
    out.push_back({"tensor", "batched_matmul", finite_difference_check([&] { return probe(matmul(a, b), w); }, {a, b})});
  }
  {
    Tensor x = random_leaf({2, 5}, rng, -2.0, 2.0);
    Tensor w = random_constant({2, 5}, rng);
    out.push_back({"tensor", "softmax", finite_difference_check([&] { return probe(softmax(x), w); }, x)});
    out.push_back({"tensor", "log_softmax", finite_difference_check([&] { return probe(log_softmax(x), w); }, x)});
    out.push_back({"tensor", "gelu", finite_difference_check([&] { return probe(gelu(x), w); }, x)});
  }
  {
    Tensor x = random_leaf({3, 6}, rng, -2.0, 2.0), g = random_leaf({6}, rng), b = random_leaf({6}, rng);
    Tensor w = random_constant({3, 6}, rng);
    out.push_back(
        {"tensor", "layer_norm", finite_difference_check([&] { return probe(layer_norm(x, 1e-5, g, b), w); }, {x, g, b})});
  }
  {
    Tensor logits = random_leaf({4, 3}, rng, -2.0, 2.0);
    const std::vector<int> labels = {0, 2, 1, 2};
    out.push_back({"tensor", "cross_entropy", finite_difference_check([&] { return cross_entropy(logits, labels); }, logits)});
  }
  return out;
}

std::vector<GradcheckResult> combine_checks() {
  Rng rng(202);
  const std::size_t layers = 2;
  CombineBlock block(layers, rng, 0.0);
  std::vector<Tensor> states;
  for (std::size_t j = 0; j <= layers; ++j) states.push_back(random_leaf({2, 3, 4}, rng, -2.0, 2.0));
  Tensor w = random_constant({2, 3, 4}, rng);
  auto f = [&] { return probe(block.forward(states, false), w); };
  std::vector<GradcheckResult> out;
  out.push_back({"combine", "alpha", finite_difference_check(f, block.alpha_logits())});
  out.push_back({"combine", "gamma", finite_difference_check(f, block.gamma())});
  out.push_back({"combine", "inputs", finite_difference_check(f, states)});
  return out;
}

std::vector<GradcheckResult> pruning_checks() {
  Rng rng(303);
  std::vector<GradcheckResult> out;
  Tensor x = random_constant({3, 5}, rng);
  Tensor w_out = random_constant({3, 4}, rng);

  for (const PruningMethod method : {PruningMethod::kTopK, PruningMethod::kSigmoidThreshold}) {
    MaskedLinear layer(5, 4, method, 0.0, 0.5, rng);
    for (double& s : layer.scores().mutable_data()) s = rng.uniform(-2.0, 2.0);
    MaskContext ctx;
    ctx.training = true;
    ctx.threshold = method == PruningMethod::kTopK ? 0.5 : 0.4;
    const std::string tag = method == PruningMethod::kTopK ? "topK" : "sigmoied_threshold";

    // Weights: the mask is fixed with respect to W.
    out.push_back({"pruning", tag + "_weight",
                   finite_difference_check([&] { return probe(masked_forward(layer, x, ctx), w_out); }, layer.weight())});

    // Scores: the straight-through rule treats the mask as the identity of S
    // around the current point.
    const std::vector<double> s0(layer.scores().data().begin(), layer.scores().data().end());
    const Tensor m0 = layer.mask(ctx).detach();
    auto surrogate = [&] {
      const Tensor m = add(m0, sub(layer.scores(), constant(layer.scores().shape(), s0)));
      return probe(layer.forward(x, m), w_out);
    };
    out.push_back({"pruning", tag + "_scores_ste",
                   surrogate_gradient_check([&] { return probe(masked_forward(layer, x, ctx), w_out); }, surrogate,
                                            layer.scores())});
  }

  const HardConcreteParams hc;
  {
    Tensor s = random_leaf({3, 4}, rng, -3.0, 3.0);
    out.push_back({"pruning", "l0_penalty", finite_difference_check([&] { return l0_penalty(s, hc); }, s)});
  }
  {
    Tensor s = random_leaf({3, 4}, rng, -3.0, 3.0);
    const auto u = hard_concrete_noise(12, rng);
    Tensor w = random_constant({3, 4}, rng);
    out.push_back({"pruning", "hard_concrete_gate",
                   finite_difference_check([&] { return probe(hard_concrete_sample(s, u, hc).mask, w); }, s)});
    out.push_back({"pruning", "l0_inference_mask",
                   finite_difference_check([&] { return probe(l0_inference_mask(s, hc), w); }, s)});
  }
  {
    Tensor s = random_leaf({3, 4}, rng, -3.0, 3.0);
    out.push_back({"pruning", "l1_regularizer", finite_difference_check([&] { return l1_regularizer(s); }, s)});
  }
  return out;
}

std::vector<GradcheckResult> encoder_checks() {
  Rng rng(404);
  EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.hidden_dim = 8;
  cfg.num_heads = 2;
  cfg.ffn_dim = 16;
  cfg.vocab_size = 8;
  cfg.max_seq_len = 4;
  cfg.dropout_p = 0.0;
  cfg.initializer_range = 0.3;
  Encoder encoder(cfg, PruningMethod::kNone, 0.0, rng);
  Tensor input = random_leaf({2, 3, 8}, rng);
  Tensor w = random_constant({2, 3, 8}, rng);
  const bool keep[] = {true, true, false};
  const AttentionMask mask = AttentionMask::keys(keep);
  auto f = [&] { return probe(encoder.forward(input, mask, {}, false, nullptr).back(), w); };
  EncoderLayer& layer = encoder.layers()[0];
  std::vector<GradcheckResult> out;
  out.push_back({"encoder", "input", finite_difference_check(f, input)});
  for (std::size_t p = 0; p < EncoderLayer::kNumProjections; ++p) {
    out.push_back({"encoder", std::string(EncoderLayer::projection_name(p)) + ".weight",
                   finite_difference_check(f, {layer.projections[p].weight(), layer.projections[p].bias()})});
  }
  out.push_back({"encoder", "layer_norms",
                 finite_difference_check(f, {layer.attention_norm_gain, layer.attention_norm_bias, layer.output_norm_gain,
                                             layer.output_norm_bias})});
  return out;
}

std::vector<GradcheckResult> distill_checks() {
  Rng rng(505);
  std::vector<GradcheckResult> out;
  Tensor student = random_leaf({4, 3}, rng, -2.0, 2.0);
  const Tensor teacher = random_constant({4, 3}, rng);
  const std::vector<int> labels = {2, 0, 1, 1};
  for (const double t : {1.0, 2.0, 4.0}) {
    DistillConfig cfg;
    cfg.temperature = t;
    out.push_back({"distill", "kd_loss_T" + std::to_string(int(t)),
                   finite_difference_check([&] { return kd_loss(student, teacher, labels, cfg); }, student)});
  }
  return out;
}

}  // namespace

double surrogate_gradient_check(const std::function<Tensor()>& f, const std::function<Tensor()>& surrogate, Tensor x,
                                double h) {
  if (!x.requires_grad() || !x.node()->is_leaf()) {
    throw std::invalid_argument("surrogate_gradient_check: input must be a leaf that requires grad");
  }
  double f_value, s_value;
  {
    NoGradGuard no_grad;
    f_value = f().item();
    s_value = surrogate().item();
  }
  if (std::abs(f_value - s_value) > 1e-12 * std::max(1.0, std::abs(f_value))) {
    throw std::invalid_argument("surrogate_gradient_check: surrogate does not match f at the base point");
  }
  x.zero_grad();
  f().backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  x.zero_grad();
  double worst = 0.0;
  auto values = x.mutable_data();
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double up = surrogate().item();
    values[i] = saved - h;
    const double down = surrogate().item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, std::isnan(err) ? INFINITY : err);
  }
  return worst;
}

const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> modules = {"tensor", "combine", "pruning", "encoder", "distill"};
  return modules;
}

std::vector<GradcheckResult> run_gradchecks(const std::string& module) {
  if (module == "all") {
    std::vector<GradcheckResult> all;
    for (const auto& m : gradcheck_modules()) {
      auto part = run_gradchecks(m);
      all.insert(all.end(), part.begin(), part.end());
    }
    return all;
  }
  if (module == "tensor") return tensor_checks();
  if (module == "combine") return combine_checks();
  if (module == "pruning") return pruning_checks();
  if (module == "encoder") return encoder_checks();
  if (module == "distill") return distill_checks();
  throw ConfigError("unknown gradcheck module '" + module + "' (expected all, tensor, combine, pruning, encoder or distill)");
}

}  // namespace bermo
