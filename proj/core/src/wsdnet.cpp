#include "distillwsd/wsdnet.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>

#include "distillwsd/log.hpp"
#include "distillwsd/optim.hpp"

namespace distillwsd {
namespace {

constexpr double kProbClamp = 1e-6;

template <typename T>
Tensor<T> slice_first(const Tensor<T>& x, std::size_t index) {
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t block = shape_numel(shape);
  std::vector<T> data(x.data() + index * block, x.data() + (index + 1) * block);
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
Tensor<T> batch_images(std::span<const Image* const> images, std::size_t size) {
  std::vector<Image> resized;
  std::vector<const Image*> ptrs;
  resized.reserve(images.size());
  for (const Image* img : images) {
    if (img->width == size && img->height == size) {
      ptrs.push_back(img);
    } else {
      resized.push_back(resize_bilinear(*img, size, size));
      ptrs.push_back(&resized.back());
    }
  }
  return images_to_batch<T>(ptrs);
}

// Each column of the proposal softmax sums to one, so p_k <= 1 holds up to rounding.
template <typename T>
void clamp_unit(Tensor<T>& p) {
  for (auto& v : p.values()) v = std::min(v, T(1));
}

}  // namespace

template <typename T>
ScoreBundle<T> TeacherGraph<T>::bundle(std::size_t image) const {
  ScoreBundle<T> b;
  b.cls_logits = slice_first(cls_logits.value(), image);
  b.det_logits = slice_first(det_logits.value(), image);
  b.cls_scores = softmax_tensor(b.cls_logits, 1);
  b.det_scores = softmax_tensor(b.det_logits, 0);
  b.fused = slice_first(fused.value(), image);
  b.image_scores = slice_first(image_scores.value(), image);
  clamp_unit(b.image_scores);
  b.objectness = slice_first(objectness.value(), image);
  return b;
}

template <typename T>
TeacherModel<T>::TeacherModel(TeacherConfig config, std::uint64_t seed) : config_(std::move(config)) {
  if (config_.num_classes == 0 || config_.top_n == 0 || config_.roi_out == 0) {
    throw ConfigError("teacher: num_classes, top_n and roi_out must be positive");
  }
  Rng rng(seed);
  backbone_ = Backbone<T>("backbone", 3, config_.conv_channels, rng);
  const std::size_t roi_dim = config_.conv_channels.back() * config_.roi_out * config_.roi_out;
  roi_fc_ = Dense<T>("roi_fc", roi_dim, config_.fc_width, rng);
  cls_head_ = Dense<T>("cls_head", config_.fc_width, config_.num_classes, rng);
  det_head_ = Dense<T>("det_head", config_.fc_width, config_.num_classes, rng);
}

template <typename T>
TeacherGraph<T> TeacherModel<T>::forward(Tape<T>& tape, std::span<const Image* const> images,
                                         std::span<const ProposalSet* const> proposals,
                                         std::size_t input_size) {
  if (images.size() != proposals.size()) throw ContractError("teacher: one proposal set per image");
  if (images.empty()) throw InputError("teacher: empty batch");
  const std::size_t size = input_size == 0 ? config_.image_size : input_size;
  const std::size_t n = images.size(), r = config_.top_n, k = config_.num_classes;

  TeacherGraph<T> g;
  auto x = tape.constant(batch_images<T>(images, size));
  g.features = backbone_.forward(tape, x);
  const auto& fmap = g.features.back().value();
  const std::size_t fh = fmap.dim(2), fw = fmap.dim(3);

  std::vector<RoiWindow> windows;
  windows.reserve(n * r);
  for (std::size_t i = 0; i < n; ++i) {
    const ProposalSet& set = *proposals[i];
    if (set.size() != r) {
      throw ContractError("teacher: expected " + std::to_string(r) + " proposals, got " +
                          std::to_string(set.size()));
    }
    for (std::size_t j = 0; j < r; ++j) {
      windows.push_back(project_box(set.boxes[j], images[i]->height, images[i]->width, fh, fw, i,
                                    set.prior_scores[j]));
    }
  }
  auto pooled = roi_max_pool(g.features.back(), std::span<const RoiWindow>(windows), config_.roi_out,
                             config_.roi_out);
  auto flat = reshape(pooled, {n * r, pooled.value().size() / (n * r)});
  auto hidden = relu(roi_fc_(tape, flat));
  g.cls_logits = reshape(cls_head_(tape, hidden), {n, r, k});
  g.det_logits = reshape(det_head_(tape, hidden), {n, r, k});
  auto cls_scores = softmax(g.cls_logits, 2);
  auto det_scores = softmax(g.det_logits, 1);
  g.fused = mul(cls_scores, det_scores);
  g.image_scores = sum_axis(g.fused, 1);
  g.objectness = sum_axis(g.fused, 2);
  return g;
}

template <typename T>
std::vector<Parameter<T>*> TeacherModel<T>::parameters() {
  auto params = backbone_.parameters();
  for (Dense<T>* d : {&roi_fc_, &cls_head_, &det_head_}) {
    params.push_back(&d->weight);
    params.push_back(&d->bias);
  }
  return params;
}

template <typename T>
void TeacherModel<T>::freeze() {
  for (auto* p : parameters()) p->frozen = true;
}

template <typename T>
void TeacherModel<T>::unfreeze() {
  for (auto* p : parameters()) p->frozen = false;
}

template <typename T>
bool TeacherModel<T>::frozen() const {
  auto* self = const_cast<TeacherModel<T>*>(this);
  const auto params = self->parameters();
  return std::all_of(params.begin(), params.end(), [](const Parameter<T>* p) { return p->frozen; });
}

template <typename T>
ScoreBundle<T> fuse_scores(const Tensor<T>& cls_logits, const Tensor<T>& det_logits) {
  if (cls_logits.rank() != 2 || cls_logits.shape() != det_logits.shape()) {
    throw DimensionError("fuse_scores expects two R×K logit matrices");
  }
  const std::size_t r = cls_logits.dim(0), k = cls_logits.dim(1);
  ScoreBundle<T> b;
  b.cls_logits = cls_logits;
  b.det_logits = det_logits;
  b.cls_scores = softmax_tensor(cls_logits, 1);
  b.det_scores = softmax_tensor(det_logits, 0);
  b.fused = Tensor<T>({r, k});
  b.image_scores = Tensor<T>({k});
  b.objectness = Tensor<T>({r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      const T s = b.cls_scores[i * k + j] * b.det_scores[i * k + j];
      b.fused[i * k + j] = s;
      b.image_scores[j] += s;
      b.objectness[i] += s;
    }
  }
  clamp_unit(b.image_scores);
  return b;
}

template <typename T>
ScoreBundle<T> teacher_forward(TeacherModel<T>& model, const Image& image, const ProposalSet& proposals) {
  Tape<T> tape;
  const Image* img = &image;
  const ProposalSet* set = &proposals;
  auto g = model.forward(tape, std::span<const Image* const>(&img, 1),
                         std::span<const ProposalSet* const>(&set, 1));
  return g.bundle(0);
}

template <typename T>
Var<T> softened_teacher_prediction(const Var<T>& cls_logits, const Var<T>& det_logits,
                                   const Var<T>& class_temps, const Var<T>& proposal_temps) {
  if (cls_logits.shape() != det_logits.shape()) {
    throw DimensionError("softened_teacher_prediction: logit shapes differ");
  }
  auto sc = tempered_softmax(cls_logits, class_temps, SoftmaxAxis::Class);
  auto sd = tempered_softmax(det_logits, proposal_temps, SoftmaxAxis::Proposal);
  const std::size_t proposal_axis = cls_logits.value().rank() - 2;
  return sum_axis(mul(sc, sd), proposal_axis);
}

template <typename T>
Tensor<T> teacher_softened_prediction(const ScoreBundle<T>& bundle, const Tensor<T>& class_temps,
                                      const Tensor<T>& proposal_temps) {
  Tape<T> tape;
  auto out = softened_teacher_prediction(tape.constant(bundle.cls_logits),
                                         tape.constant(bundle.det_logits),
                                         tape.constant(class_temps), tape.constant(proposal_temps));
  return out.value();
}

template <typename T>
Var<T> teacher_loss(Tape<T>& tape, TeacherModel<T>& model, const Dataset& data,
                    std::span<const std::size_t> indices, std::size_t input_size) {
  std::vector<const Image*> images;
  std::vector<const ProposalSet*> sets;
  for (std::size_t i : indices) {
    images.push_back(&data.examples.at(i).image);
    sets.push_back(&data.proposals.at(i));
  }
  auto g = model.forward(tape, images, sets, input_size);
  return binary_cross_entropy(g.image_scores, label_batch<T>(data, indices), static_cast<T>(kProbClamp));
}

template <typename T>
TeacherTrainResult<T> train_teacher(const Dataset& data, const TeacherConfig& config,
                                    const TeacherTrainOptions& options, std::uint64_t seed) {
  if (data.empty()) throw InputError("train_teacher: empty dataset");
  if (data.proposals.size() != data.size()) throw ContractError("train_teacher: proposals not attached");
  if (options.batch_size == 0) throw ConfigError("train_teacher: batch_size must be positive");
  const auto start = std::chrono::steady_clock::now();

  TeacherTrainResult<T> result{TeacherModel<T>(config, seed), {}, 0.0};
  auto& model = result.model;
  Sgd<T> opt({options.lr, options.momentum, options.weight_decay});
  opt.add_group(model.parameters());

  std::vector<std::size_t> scales = options.scales;
  if (scales.empty()) scales.push_back(config.image_size);
  Rng rng(seed ^ 0x7e7e7e7eULL);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size) {
      const std::size_t end = std::min(order.size(), begin + options.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const std::size_t scale = scales[scales.size() == 1 ? 0 : rng() % scales.size()];
      Tape<T> tape;
      opt.zero_grad();
      auto loss = teacher_loss(tape, model, data, idx, scale);
      tape.backward(loss);
      opt.step();
      total += static_cast<double>(loss.value().item());
      ++batches;
    }
    result.epoch_losses.push_back(total / static_cast<double>(batches));
    spdlog::info("teacher epoch {}/{} loss {:.5f}", epoch + 1, options.epochs, result.epoch_losses.back());
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

template <typename T>
std::vector<std::vector<Detection>> detect(TeacherModel<T>& model, const Image& image,
                                           const ProposalSet& proposals) {
  const ScoreBundle<T> b = teacher_forward(model, image, proposals);
  const std::size_t r = proposals.size(), k = model.config().num_classes;
  std::vector<std::vector<Detection>> out(k);
  std::vector<double> column(r);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < r; ++i) column[i] = static_cast<double>(b.fused[i * k + c]);
    for (std::size_t keep : nms(proposals.boxes, column, model.config().nms_thresh)) {
      out[c].push_back(Detection{proposals.boxes[keep], column[keep]});
    }
  }
  return out;
}

template <typename T>
std::vector<std::vector<double>> teacher_image_scores(TeacherModel<T>& model, const Dataset& data,
                                                      std::size_t batch_size) {
  std::vector<std::vector<double>> scores;
  scores.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<const Image*> images;
    std::vector<const ProposalSet*> sets;
    for (std::size_t i = begin; i < end; ++i) {
      images.push_back(&data.examples[i].image);
      sets.push_back(&data.proposals.at(i));
    }
    Tape<T> tape;
    auto g = model.forward(tape, images, sets);
    const auto& p = g.image_scores.value();
    const std::size_t k = p.dim(1);
    for (std::size_t i = 0; i < end - begin; ++i) {
      scores.emplace_back(p.data() + i * k, p.data() + (i + 1) * k);
    }
  }
  return scores;
}

#define DISTILLWSD_INSTANTIATE_TEACHER(T)                                                        \
  template struct TeacherGraph<T>;                                                               \
  template class TeacherModel<T>;                                                                \
  template ScoreBundle<T> fuse_scores(const Tensor<T>&, const Tensor<T>&);                       \
  template ScoreBundle<T> teacher_forward(TeacherModel<T>&, const Image&, const ProposalSet&);   \
  template Var<T> softened_teacher_prediction(const Var<T>&, const Var<T>&, const Var<T>&,       \
                                              const Var<T>&);                                    \
  template Tensor<T> teacher_softened_prediction(const ScoreBundle<T>&, const Tensor<T>&,        \
                                                 const Tensor<T>&);                              \
  template Var<T> teacher_loss(Tape<T>&, TeacherModel<T>&, const Dataset&,                       \
                               std::span<const std::size_t>, std::size_t);                       \
  template TeacherTrainResult<T> train_teacher(const Dataset&, const TeacherConfig&,             \
                                               const TeacherTrainOptions&, std::uint64_t);       \
  template std::vector<std::vector<Detection>> detect(TeacherModel<T>&, const Image&,            \
                                                      const ProposalSet&);                       \
  template std::vector<std::vector<double>> teacher_image_scores(TeacherModel<T>&,               \
                                                                 const Dataset&, std::size_t);

DISTILLWSD_INSTANTIATE_TEACHER(float)
DISTILLWSD_INSTANTIATE_TEACHER(double)

#undef DISTILLWSD_INSTANTIATE_TEACHER

}  // namespace distillwsd
