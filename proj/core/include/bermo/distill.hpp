#pragma once

#include <filesystem>
#include <span>

#include "bermo/encoder.hpp"
#include "bermo/model.hpp"
#include "bermo/tensor.hpp"

namespace bermo {

struct DistillConfig {
  double alpha_ce = 0.1;
  double alpha_distill = 0.9;
  double temperature = 2.0;

  void validate() const;
};

/// alpha_ce * CE(student, labels)
///   + alpha_distill * T^2 * KL(softmax(teacher / T) || softmax(student / T)),
/// averaged over the batch. `teacher_logits` are read as constants.
Tensor kd_loss(const Tensor& student_logits, const Tensor& teacher_logits, std::span<const int> labels,
               const DistillConfig& cfg);

/// Frozen evaluation-mode model loaded from a checkpoint.
class TeacherSnapshot {
 public:
  explicit TeacherSnapshot(const std::filesystem::path& checkpoint);

  /// Eval-mode logits with no graph history.
  Tensor logits(const TokenBatch& batch) const;

  const BermoModel& model() const { return model_; }

 private:
  BermoModel model_;
  double eval_threshold_ = 1.0;
};

}  // namespace bermo
