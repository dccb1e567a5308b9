#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distillwsd/clsnet.hpp"
#include "distillwsd/wsdnet.hpp"

namespace distillwsd {

struct DistillConfig {
  double lambda = 1.0;
  double nms_thresh = 0.4;
  std::size_t top_after_nms = 32;
  std::vector<std::string> distill_layers{"conv3"};

  double stage1_lr = 0.01;
  std::size_t stage1_max_epochs = 4;
  /// Stop when |L[e] - L[e - window]| < rel_tol * L[e - window].
  std::size_t stage1_window = 5;
  double stage1_rel_tol = 1e-4;
  /// An initial feature loss below this means the student already matches the teacher.
  double stage1_abs_tol = 1e-8;

  double stage2_lr = 0.01;
  std::size_t stage2_epochs = 20;
  std::size_t plateau_patience = 3;
  double plateau_delta = 1e-4;
  double lr_decay = 0.1;

  std::size_t batch_size = 16;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double temperature_floor = 0.05;

  /// Keep frozen-teacher outputs per example instead of recomputing them every batch.
  bool cache_teacher = true;
  /// Stage 2 refuses to start without stage-1 weights when set.
  bool require_stage1 = true;

  void validate() const;
};

/// Learnable temperatures: t^c (per class), t^d (per proposal rank), t (student, per class).
template <typename T>
struct TemperatureBank {
  Parameter<T> class_temps;
  Parameter<T> proposal_temps;
  Parameter<T> student_temps;

  TemperatureBank(std::size_t num_classes, std::size_t num_proposals);
  std::vector<Parameter<T>*> parameters() { return {&class_temps, &proposal_temps, &student_temps}; }
};

/// Boxes R' kept for feature transfer and their objectness weights s'.
struct DistillSelection {
  std::vector<Box> boxes;
  std::vector<double> weights;
};

/// NMS over (boxes, s'), truncated to top_after_nms and recycled when fewer survive.
DistillSelection select_distill_proposals(std::span<const Box> boxes, std::span<const double> objectness,
                                          const DistillConfig& cfg);

template <typename T>
DistillSelection select_distill_proposals(const ScoreBundle<T>& bundle, const ProposalSet& proposals,
                                          const DistillConfig& cfg);

/// 1/(2N) sum_n 1/|R'_n| ||F_T - F_S||^2 for features stacked as (N·|R'|)×C×h×w.
template <typename T>
Var<T> feature_distill_loss(const Var<T>& teacher, const Var<T>& student, std::size_t batch);

/// 1/(2N) sum_n ||p'_T - p'_S||^2. Inputs are N×K (or K, N = 1).
template <typename T>
Var<T> prediction_distill_loss(const Var<T>& teacher, const Var<T>& student);

/// Per-class BCE summed over classes, averaged over the batch. p is clamped to [1e-6, 1 - 1e-6].
template <typename T>
Var<T> hard_loss(const Var<T>& p, const Tensor<T>& labels);

/// hard + lambda * soft. With lambda = 0 the soft term is dropped from the graph.
template <typename T>
Var<T> combined_loss(const Var<T>& hard, const Var<T>& soft, double lambda);

struct StageReport {
  int stage = 0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double initial_feature_loss = 0;
  std::map<std::string, std::vector<double>> feature_loss;
  std::vector<double> hard_loss;
  std::vector<double> soft_loss;
  std::vector<double> val_hard_loss;
  std::vector<double> learning_rate;
  std::vector<double> class_temps;
  std::vector<double> proposal_temps;
  std::vector<double> student_temps;
  double wall_seconds = 0;

  /// Wall time sits under "metadata"; everything else is deterministic.
  std::string to_json() const;
};

/// Frozen teacher outputs for a dataset, computed lazily and optionally cached by index.
template <typename T>
class TeacherOracle {
 public:
  struct Batch {
    std::vector<Tensor<T>> features;  // one N×C×h×w tensor per distilled layer
    Tensor<T> cls_logits;             // N×R×K
    Tensor<T> det_logits;             // N×R×K
    std::vector<DistillSelection> selections;
  };

  TeacherOracle(TeacherModel<T>& teacher, const Dataset& data, const DistillConfig& cfg);

  Batch fetch(std::span<const std::size_t> indices);
  const std::vector<std::size_t>& layers() const noexcept { return layers_; }
  TeacherModel<T>& teacher() noexcept { return teacher_; }

 private:
  struct Entry {
    std::vector<Tensor<T>> features;
    Tensor<T> cls_logits;
    Tensor<T> det_logits;
    DistillSelection selection;
  };
  void compute(std::span<const std::size_t> indices);

  TeacherModel<T>& teacher_;
  const Dataset& data_;
  DistillConfig cfg_;
  std::vector<std::size_t> layers_;
  std::vector<std::optional<Entry>> cache_;
};

/// Feature-level transfer. Only the student's conv and Ψ parameters move.
/// Throws ContractError unless the teacher is frozen.
template <typename T>
StageReport run_stage1(TeacherModel<T>& teacher, StudentModel<T>& student, const Dataset& train,
                       const DistillConfig& cfg, std::uint64_t seed);

/// Prediction-level transfer: re-initializes the head, then minimizes L_p + lambda * L_p'
/// over all student parameters and temperatures. `teacher` may be null when lambda = 0.
template <typename T>
StageReport run_stage2(TeacherModel<T>* teacher, StudentModel<T>& student, const Dataset& train,
                       const Dataset& val, const DistillConfig& cfg, TemperatureBank<T>& temps,
                       std::uint64_t seed);

/// Mean hard loss of the student over a dataset.
template <typename T>
double evaluate_hard_loss(StudentModel<T>& student, const Dataset& data, std::size_t batch_size = 64);

}  // namespace distillwsd
