#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "distillwsd/dataset.hpp"
#include "distillwsd/nn.hpp"
#include "distillwsd/regions.hpp"

namespace distillwsd {

struct TeacherConfig {
  std::size_t num_classes = 10;
  std::size_t image_size = 64;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t fc_width = 128;
  std::size_t roi_out = 7;
  std::size_t top_n = 64;
  double nms_thresh = 0.4;
};

/// Per-image teacher outputs. Matrices are R×K, vectors are length K (p) or R (s').
template <typename T>
struct ScoreBundle {
  Tensor<T> cls_logits;   // M^c
  Tensor<T> det_logits;   // M^d
  Tensor<T> cls_scores;   // S^c, softmax over classes per proposal
  Tensor<T> det_scores;   // S^d, softmax over proposals per class
  Tensor<T> fused;        // S = S^c ⊗ S^d
  Tensor<T> image_scores; // p_k = sum_r S[r,k]
  Tensor<T> objectness;   // s'_r = sum_k S[r,k]
};

/// Graph handles of a batched teacher forward pass (N images, R proposals each).
template <typename T>
struct TeacherGraph {
  std::vector<Var<T>> features;  // every backbone block, N×C×h×w
  Var<T> cls_logits;             // N×R×K
  Var<T> det_logits;             // N×R×K
  Var<T> fused;                  // N×R×K
  Var<T> image_scores;           // N×K
  Var<T> objectness;             // N×R

  ScoreBundle<T> bundle(std::size_t image) const;
};

/// Weakly-supervised two-branch detector used as the distillation teacher.
template <typename T>
class TeacherModel {
 public:
  TeacherModel(TeacherConfig config, std::uint64_t seed);

  const TeacherConfig& config() const noexcept { return config_; }

  /// Forward pass over images with one proposal set each (boxes in each image's own pixel
  /// coordinates). Images are resampled to `input_size` (0 = config image_size).
  TeacherGraph<T> forward(Tape<T>& tape, std::span<const Image* const> images,
                          std::span<const ProposalSet* const> proposals,
                          std::size_t input_size = 0);

  std::vector<Parameter<T>*> parameters();
  const Backbone<T>& backbone() const noexcept { return backbone_; }

  /// Freezing marks every parameter frozen; frozen parameters never receive updates.
  void freeze();
  void unfreeze();
  bool frozen() const;

 private:
  TeacherConfig config_;
  Backbone<T> backbone_;
  Dense<T> roi_fc_;
  Dense<T> cls_head_;
  Dense<T> det_head_;
};

/// Fusion of two R×K logit matrices into a ScoreBundle.
template <typename T>
ScoreBundle<T> fuse_scores(const Tensor<T>& cls_logits, const Tensor<T>& det_logits);

/// Single-image teacher forward.
template <typename T>
ScoreBundle<T> teacher_forward(TeacherModel<T>& model, const Image& image,
                               const ProposalSet& proposals);

/// p'^T = sum over proposals of tempered_softmax(M^c, t^c, class) ⊗ tempered_softmax(M^d,
/// t^d, proposal). Logits are R×K (result K) or N×R×K (result N×K).
template <typename T>
Var<T> softened_teacher_prediction(const Var<T>& cls_logits, const Var<T>& det_logits,
                                   const Var<T>& class_temps, const Var<T>& proposal_temps);

/// Tape-free variant on a ScoreBundle.
template <typename T>
Tensor<T> teacher_softened_prediction(const ScoreBundle<T>& bundle, const Tensor<T>& class_temps,
                                      const Tensor<T>& proposal_temps);

/// Batch-mean BCE between clamped image scores p and multi-hot labels.
template <typename T>
Var<T> teacher_loss(Tape<T>& tape, TeacherModel<T>& model, const Dataset& data,
                    std::span<const std::size_t> indices, std::size_t input_size = 0);

struct TeacherTrainOptions {
  std::size_t epochs = 6;
  std::size_t batch_size = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  /// Square training input sizes, one picked per batch. Empty means {image_size}.
  std::vector<std::size_t> scales;
};

template <typename T>
struct TeacherTrainResult {
  TeacherModel<T> model;
  std::vector<double> epoch_losses;
  double wall_seconds = 0;
};

/// Trains on image-level labels only. The returned model is not frozen.
template <typename T>
TeacherTrainResult<T> train_teacher(const Dataset& data, const TeacherConfig& config,
                                    const TeacherTrainOptions& options, std::uint64_t seed);

struct Detection {
  Box box;
  double score = 0;
};

/// Per-class NMS over the columns of the fused score matrix.
template <typename T>
std::vector<std::vector<Detection>> detect(TeacherModel<T>& model, const Image& image,
                                           const ProposalSet& proposals);

/// Image-level scores p for every example, batched, without gradients.
template <typename T>
std::vector<std::vector<double>> teacher_image_scores(TeacherModel<T>& model, const Dataset& data,
                                                      std::size_t batch_size = 32);

extern template class TeacherModel<float>;
extern template class TeacherModel<double>;

}  // namespace distillwsd
