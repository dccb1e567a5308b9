#include "distillwsd/clsnet.hpp"

#include <algorithm>
#include <cmath>

namespace distillwsd {

template <typename T>
StudentModel<T>::StudentModel(StudentConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.num_classes == 0) throw ConfigError("student: num_classes must be positive");
  if (config_.teacher_channels.empty()) config_.teacher_channels = config_.conv_channels;
  if (config_.teacher_channels.size() != config_.conv_channels.size()) {
    throw ConfigError("student: teacher_channels must list one count per conv block");
  }
  Rng rng(seed);
  backbone_ = Backbone<T>("backbone", 3, config_.conv_channels, rng);
  for (std::size_t b = 0; b < config_.conv_channels.size(); ++b) {
    if (config_.conv_channels[b] == config_.teacher_channels[b]) {
      psi_.emplace_back(std::nullopt);
    } else {
      psi_.emplace_back(Conv<T>("psi." + Backbone<T>::block_name(b), config_.conv_channels[b],
                                config_.teacher_channels[b], 1, 0, rng));
    }
  }
  const std::size_t side = Backbone<T>::output_size(config_.image_size, config_.conv_channels.size() - 1);
  if (side == 0) throw ConfigError("student: image_size too small for the conv stack");
  hidden_ = Dense<T>("head.hidden", config_.conv_channels.back() * side * side, config_.fc_width, rng);
  classifier_ = Dense<T>("head.classifier", config_.fc_width, config_.num_classes, rng);
}

template <typename T>
StudentGraph<T> StudentModel<T>::forward(Tape<T>& tape, const Var<T>& images) {
  const auto& shape = images.shape();
  if (shape.size() != 4 || shape[1] != 3 || shape[2] != config_.image_size ||
      shape[3] != config_.image_size) {
    throw ContractError("student: expected N×3×" + std::to_string(config_.image_size) + "×" +
                        std::to_string(config_.image_size) + " input, got " + shape_str(shape));
  }
  StudentGraph<T> g;
  g.features = backbone_.forward(tape, images);
  const auto& last = g.features.back();
  auto flat = reshape(last, {shape[0], last.value().size() / shape[0]});
  g.logits = classifier_(tape, relu(hidden_(tape, flat)));
  return g;
}

namespace {

template <typename T>
Tensor<T> checked_batch(std::span<const Image* const> images, std::size_t size) {
  for (const Image* img : images) {
    if (img->width != size || img->height != size) {
      throw ContractError("student: image is " + std::to_string(img->width) + "x" +
                          std::to_string(img->height) + ", expected " + std::to_string(size));
    }
  }
  return images_to_batch<T>(images);
}

}  // namespace

template <typename T>
StudentGraph<T> StudentModel<T>::forward(Tape<T>& tape, std::span<const Image* const> images) {
  return forward(tape, tape.constant(checked_batch<T>(images, config_.image_size)));
}

template <typename T>
StudentGraph<T> StudentModel<T>::forward_features(Tape<T>& tape, std::span<const Image* const> images) {
  StudentGraph<T> g;
  g.features = backbone_.forward(tape, tape.constant(checked_batch<T>(images, config_.image_size)));
  return g;
}

template <typename T>
Var<T> StudentModel<T>::psi(Tape<T>& tape, std::size_t block, const Var<T>& features) {
  auto& proj = psi_.at(block);
  return proj ? (*proj)(tape, features) : features;
}

template <typename T>
std::size_t StudentModel<T>::matched_channels(std::size_t block) const {
  return config_.teacher_channels.at(block);
}

template <typename T>
std::vector<Parameter<T>*> StudentModel<T>::conv_parameters() {
  auto params = backbone_.parameters();
  for (auto& proj : psi_) {
    if (proj) {
      params.push_back(&proj->weight);
      params.push_back(&proj->bias);
    }
  }
  return params;
}

template <typename T>
std::vector<Parameter<T>*> StudentModel<T>::head_parameters() {
  return {&hidden_.weight, &hidden_.bias, &classifier_.weight, &classifier_.bias};
}

template <typename T>
std::vector<Parameter<T>*> StudentModel<T>::parameters() {
  auto params = conv_parameters();
  for (auto* p : head_parameters()) params.push_back(p);
  return params;
}

template <typename T>
void StudentModel<T>::reinit_head(std::uint64_t seed) {
  Rng rng(seed);
  hidden_.reinitialize(rng);
  classifier_.reinitialize(rng);
}

template <typename T>
StudentOutput<T> student_forward(StudentModel<T>& model, const Image& image, const Tensor<T>& temps) {
  Tape<T> tape;
  const Image* img = &image;
  auto g = model.forward(tape, std::span<const Image* const>(&img, 1));
  const std::size_t k = model.config().num_classes;
  auto logits = reshape(g.logits, {k});
  StudentOutput<T> out;
  out.m = logits.value();
  out.p = sigmoid(logits).value();
  out.p_soft = tempered_sigmoid(logits, tape.constant(temps)).value();
  return out;
}

template <typename T>
Var<T> student_conv_features(StudentModel<T>& model, Tape<T>& tape, const StudentGraph<T>& graph,
                             std::size_t block, std::size_t image_index, std::span<const Box> boxes,
                             std::span<const double> weights, std::size_t roi_out,
                             std::size_t image_h, std::size_t image_w) {
  auto mapped = model.psi(tape, block, graph.features.at(block));
  if (mapped.shape()[1] != model.matched_channels(block)) {
    throw ContractError("student_conv_features: transformed channels do not match the teacher");
  }
  return weighted_roi_features(mapped, image_index, boxes, weights, roi_out, roi_out, image_h, image_w);
}

std::vector<std::uint8_t> predict_labels(std::span<const double> p, double tau) {
  std::vector<std::uint8_t> out(p.size());
  std::transform(p.begin(), p.end(), out.begin(), [tau](double v) { return v > tau ? 1 : 0; });
  return out;
}

template <typename T>
std::vector<std::vector<double>> student_scores(StudentModel<T>& model, const Dataset& data,
                                                std::size_t batch_size) {
  std::vector<std::vector<double>> scores;
  scores.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<const Image*> images;
    for (std::size_t i = begin; i < end; ++i) images.push_back(&data.examples[i].image);
    Tape<T> tape;
    auto p = sigmoid(model.forward(tape, images).logits).value();
    const std::size_t k = p.dim(1);
    for (std::size_t i = 0; i < end - begin; ++i) {
      scores.emplace_back(p.data() + i * k, p.data() + (i + 1) * k);
    }
  }
  return scores;
}

#define DISTILLWSD_INSTANTIATE_STUDENT(T)                                                       \
  template struct StudentGraph<T>;                                                              \
  template class StudentModel<T>;                                                               \
  template StudentOutput<T> student_forward(StudentModel<T>&, const Image&, const Tensor<T>&);  \
  template Var<T> student_conv_features(StudentModel<T>&, Tape<T>&, const StudentGraph<T>&,     \
                                        std::size_t, std::size_t, std::span<const Box>,         \
                                        std::span<const double>, std::size_t, std::size_t,      \
                                        std::size_t);                                           \
  template std::vector<std::vector<double>> student_scores(StudentModel<T>&, const Dataset&,    \
                                                           std::size_t);

DISTILLWSD_INSTANTIATE_STUDENT(float)
DISTILLWSD_INSTANTIATE_STUDENT(double)

#undef DISTILLWSD_INSTANTIATE_STUDENT

}  // namespace distillwsd
