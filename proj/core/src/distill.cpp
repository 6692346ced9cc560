#include "bermo/distill.hpp"

#include <cmath>

#include "bermo/checkpoint.hpp"
#include "bermo/error.hpp"
#include "bermo/ops.hpp"

namespace bermo {

void DistillConfig::validate() const {
  if (alpha_ce < 0.0 || alpha_distill < 0.0) throw ConfigError("distillation weights must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("distillation temperature must be positive");
}

Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
               const DistillConfig& cfg) {
  cfg.validate();
  if (student_logits.shape() != teacher_logits.shape() || student_logits.dim() != 2) {
    throw ShapeError("kd_loss: student logits " + to_string(student_logits.shape()) + " vs teacher logits " +
                     to_string(teacher_logits.shape()));
  }
  Tensor ce = cross_entropy(student_logits, labels);
  Tensor loss = cfg.alpha_ce == 1.0 ? ce : scale(ce, cfg.alpha_ce);
  if (cfg.alpha_distill == 0.0) return loss;

  const double t = cfg.temperature;
  const std::size_t batch = student_logits.size(0);
  Tensor teacher_probs;
  double teacher_entropy_term = 0.0;  // sum p log p
  {
    NoGradGuard no_grad;
    teacher_probs = softmax(scale(teacher_logits.detach(), 1.0 / t));
    for (double p : teacher_probs.data()) {
      if (p > 0.0) teacher_entropy_term += p * std::log(p);
    }
  }
  Tensor cross = sum(mul(teacher_probs, log_softmax(scale(student_logits, 1.0 / t))));
  Tensor kl = scale(add_scalar(scale(cross, -1.0), teacher_entropy_term), 1.0 / double(batch));
  return add(loss, scale(kl, cfg.alpha_distill * t * t));
}

TeacherSnapshot::TeacherSnapshot(const std::filesystem::path& checkpoint) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint);
  model_ = std::move(loaded.model);
  eval_threshold_ = loaded.eval_threshold;
  for (auto& p : model_.parameters()) p.tensor.set_requires_grad(false);
}

Tensor TeacherSnapshot::logits(const TokenBatch& batch) const {
  NoGradGuard no_grad;
  MaskContext ctx;
  ctx.threshold = eval_threshold_;
  return model_.logits(batch, ctx).detach();
}

}  // namespace bermo
