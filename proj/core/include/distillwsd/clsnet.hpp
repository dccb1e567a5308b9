#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distillwsd/dataset.hpp"
#include "distillwsd/nn.hpp"
#include "distillwsd/regions.hpp"

namespace distillwsd {

struct StudentConfig {
  std::size_t num_classes = 10;
  std::size_t image_size = 64;
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t fc_width = 128;
  /// Channel counts of the teacher blocks that features are matched against. Empty means
  /// "same as conv_channels", i.e. identity transforms everywhere.
  std::vector<std::size_t> teacher_channels;
};

/// Graph handles of a batched student forward pass.
template <typename T>
struct StudentGraph {
  std::vector<Var<T>> features;  // every backbone block, N×C×h×w
  Var<T> logits;                 // N×K
};

/// Plain multi-label CNN: conv stack, one hidden fc layer, K sigmoid outputs.
template <typename T>
class StudentModel {
 public:
  StudentModel(StudentConfig config, std::uint64_t seed);

  const StudentConfig& config() const noexcept { return config_; }

  /// `images` must already be N×3×S×S with S = image_size.
  StudentGraph<T> forward(Tape<T>& tape, const Var<T>& images);
  /// Throws ContractError when an image is not image_size × image_size.
  StudentGraph<T> forward(Tape<T>& tape, std::span<const Image* const> images);
  /// Backbone only; the returned graph has no logits.
  StudentGraph<T> forward_features(Tape<T>& tape, std::span<const Image* const> images);

  /// Ψ for block `block`: identity or a learned 1×1 conv onto the teacher's channel count.
  Var<T> psi(Tape<T>& tape, std::size_t block, const Var<T>& features);
  bool has_projection(std::size_t block) const { return psi_.at(block).has_value(); }
  std::size_t matched_channels(std::size_t block) const;

  std::vector<Parameter<T>*> parameters();
  /// Backbone plus Ψ parameters: the set updated by feature-level transfer.
  std::vector<Parameter<T>*> conv_parameters();
  std::vector<Parameter<T>*> head_parameters();
  /// Fresh Xavier weights and zero biases for the classifier head.
  void reinit_head(std::uint64_t seed);

  const Backbone<T>& backbone() const noexcept { return backbone_; }

 private:
  StudentConfig config_;
  Backbone<T> backbone_;
  std::vector<std::optional<Conv<T>>> psi_;
  Dense<T> hidden_;
  Dense<T> classifier_;
};

template <typename T>
struct StudentOutput {
  Tensor<T> m;       // logits
  Tensor<T> p;       // sigmoid(m)
  Tensor<T> p_soft;  // sigmoid(m / t)
};

/// Single-image inference. `temps` has length K; pass all ones for the plain case.
template <typename T>
StudentOutput<T> student_forward(StudentModel<T>& model, const Image& image, const Tensor<T>& temps);

/// s' ⊙ RoI-pooled Ψ(F^S) of block `block` for image `image_index` of a batch.
template <typename T>
Var<T> student_conv_features(StudentModel<T>& model, Tape<T>& tape, const StudentGraph<T>& graph,
                             std::size_t block, std::size_t image_index, std::span<const Box> boxes,
                             std::span<const double> weights, std::size_t roi_out,
                             std::size_t image_h, std::size_t image_w);

/// l_k = 1 iff p_k > tau.
std::vector<std::uint8_t> predict_labels(std::span<const double> p, double tau);

/// Sigmoid scores for every example. Touches only the student.
template <typename T>
std::vector<std::vector<double>> student_scores(StudentModel<T>& model, const Dataset& data,
                                                std::size_t batch_size = 64);

extern template class StudentModel<float>;
extern template class StudentModel<double>;

}  // namespace distillwsd
