#include "distillwsd/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "distillwsd/log.hpp"
#include "distillwsd/optim.hpp"

namespace distillwsd {
namespace {

constexpr double kProbClamp = 1e-6;

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.data(), t.data() + t.size());
}

template <typename T>
Tensor<T> slice_first(const Tensor<T>& x, std::size_t index) {
  Shape shape(x.shape().begin() + 1, x.shape().end());
  const std::size_t block = shape_numel(shape);
  return Tensor<T>(std::move(shape),
                   std::vector<T>(x.data() + index * block, x.data() + (index + 1) * block));
}

template <typename T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& parts) {
  Shape shape = parts.front()->shape();
  shape.insert(shape.begin(), parts.size());
  std::vector<T> data;
  data.reserve(shape_numel(shape));
  for (const auto* p : parts) data.insert(data.end(), p->data(), p->data() + p->size());
  return Tensor<T>(std::move(shape), std::move(data));
}

std::vector<const Image*> batch_images(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<const Image*> images;
  images.reserve(indices.size());
  for (std::size_t i : indices) images.push_back(&data.examples.at(i).image);
  return images;
}

template <typename T>
std::vector<RoiWindow> selection_windows(const Dataset& data, std::span<const std::size_t> indices,
                                         const std::vector<DistillSelection>& selections,
                                         const Shape& feature_shape) {
  std::vector<RoiWindow> windows;
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Image& img = data.examples[indices[n]].image;
    const auto& sel = selections[n];
    for (std::size_t j = 0; j < sel.boxes.size(); ++j) {
      windows.push_back(project_box(sel.boxes[j], img.height, img.width, feature_shape[2],
                                    feature_shape[3], n, sel.weights[j]));
    }
  }
  return windows;
}

bool converged(const std::vector<double>& losses, std::size_t window, double rel_tol) {
  if (window == 0 || losses.size() <= window) return false;
  const double then = losses[losses.size() - 1 - window];
  const double now = losses.back();
  return std::abs(now - then) < rel_tol * std::max(then, std::numeric_limits<double>::min());
}

}  // namespace

void DistillConfig::validate() const {
  if (!(lambda >= 0)) throw ConfigError("distill: lambda must be >= 0");
  if (!(nms_thresh > 0 && nms_thresh < 1)) throw ConfigError("distill: nms_thresh must lie in (0, 1)");
  if (top_after_nms == 0) throw ConfigError("distill: top_after_nms must be >= 1");
  if (batch_size == 0) throw ConfigError("distill: batch_size must be >= 1");
  if (!(temperature_floor > 0)) throw ConfigError("distill: temperature_floor must be > 0");
  if (!(stage1_lr > 0) || !(stage2_lr > 0)) throw ConfigError("distill: learning rates must be > 0");
}

template <typename T>
TemperatureBank<T>::TemperatureBank(std::size_t num_classes, std::size_t num_proposals)
    : class_temps("temps.class", Tensor<T>({num_classes}, T(1))),
      proposal_temps("temps.proposal", Tensor<T>({num_proposals}, T(1))),
      student_temps("temps.student", Tensor<T>({num_classes}, T(1))) {}

DistillSelection select_distill_proposals(std::span<const Box> boxes, std::span<const double> objectness,
                                          const DistillConfig& cfg) {
  DistillSelection sel;
  if (boxes.empty()) return sel;
  auto kept = nms(boxes, objectness, cfg.nms_thresh);
  if (kept.size() > cfg.top_after_nms) kept.resize(cfg.top_after_nms);
  for (std::size_t r : recycle_indices(kept.size(), cfg.top_after_nms)) {
    sel.boxes.push_back(boxes[kept[r]]);
    sel.weights.push_back(objectness[kept[r]]);
  }
  return sel;
}

template <typename T>
DistillSelection select_distill_proposals(const ScoreBundle<T>& bundle, const ProposalSet& proposals,
                                          const DistillConfig& cfg) {
  const auto s = to_doubles(bundle.objectness);
  return select_distill_proposals(proposals.boxes, s, cfg);
}

template <typename T>
Var<T> feature_distill_loss(const Var<T>& teacher, const Var<T>& student, std::size_t batch) {
  if (teacher.shape() != student.shape()) {
    throw ContractError("feature_distill_loss: shapes " + shape_str(teacher.shape()) + " and " +
                        shape_str(student.shape()) + " differ");
  }
  if (batch == 0 || teacher.shape().empty() || teacher.shape()[0] % batch != 0) {
    throw ContractError("feature_distill_loss: proposal axis not divisible by the batch size");
  }
  const double regions = static_cast<double>(teacher.shape()[0] / batch);
  const double factor = 1.0 / (2.0 * static_cast<double>(batch) * regions);
  return scale(squared_error_sum(teacher, student), static_cast<T>(factor));
}

template <typename T>
Var<T> prediction_distill_loss(const Var<T>& teacher, const Var<T>& student) {
  if (teacher.shape() != student.shape()) throw ContractError("prediction_distill_loss: shape mismatch");
  const std::size_t n = teacher.shape().size() >= 2 ? teacher.shape()[0] : 1;
  return scale(squared_error_sum(teacher, student), static_cast<T>(1.0 / (2.0 * static_cast<double>(n))));
}

template <typename T>
Var<T> hard_loss(const Var<T>& p, const Tensor<T>& labels) {
  if (p.shape() != labels.shape()) throw ContractError("hard_loss: prediction and label shapes differ");
  return binary_cross_entropy(p, labels, static_cast<T>(kProbClamp));
}

template <typename T>
Var<T> combined_loss(const Var<T>& hard, const Var<T>& soft, double lambda) {
  if (!(lambda >= 0)) throw ContractError("combined_loss: lambda must be >= 0");
  if (lambda == 0) return hard;
  return add(hard, scale(soft, static_cast<T>(lambda)));
}

std::string StageReport::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["seed"] = seed;
  j["epochs"] = epochs;
  if (stage == 1) {
    j["initial_feature_loss"] = initial_feature_loss;
    j["feature_loss"] = feature_loss;
  } else {
    j["hard_loss"] = hard_loss;
    j["soft_loss"] = soft_loss;
    j["val_hard_loss"] = val_hard_loss;
    j["learning_rate"] = learning_rate;
    j["temperatures"] = {{"class", class_temps}, {"proposal", proposal_temps}, {"student", student_temps}};
  }
  j["metadata"] = {{"wall_seconds", wall_seconds}};
  return j.dump(2);
}

template <typename T>
TeacherOracle<T>::TeacherOracle(TeacherModel<T>& teacher, const Dataset& data, const DistillConfig& cfg)
    : teacher_(teacher), data_(data), cfg_(cfg) {
  if (data.proposals.size() != data.size()) throw ContractError("teacher oracle: proposals not attached");
  for (const auto& name : cfg.distill_layers) layers_.push_back(teacher.backbone().block_index(name));
  cache_.resize(data.size());
}

template <typename T>
void TeacherOracle<T>::compute(std::span<const std::size_t> indices) {
  std::vector<const ProposalSet*> sets;
  for (std::size_t i : indices) sets.push_back(&data_.proposals.at(i));
  Tape<T> tape;
  auto g = teacher_.forward(tape, batch_images(data_, indices), sets);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    Entry e;
    for (std::size_t layer : layers_) e.features.push_back(slice_first(g.features[layer].value(), n));
    e.cls_logits = slice_first(g.cls_logits.value(), n);
    e.det_logits = slice_first(g.det_logits.value(), n);
    const auto s = to_doubles(slice_first(g.objectness.value(), n));
    e.selection = select_distill_proposals(sets[n]->boxes, s, cfg_);
    cache_[indices[n]] = std::move(e);
  }
}

template <typename T>
typename TeacherOracle<T>::Batch TeacherOracle<T>::fetch(std::span<const std::size_t> indices) {
  std::vector<std::size_t> missing;
  for (std::size_t i : indices) {
    if (!cache_.at(i)) missing.push_back(i);
  }
  if (!missing.empty()) compute(missing);

  Batch b;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    std::vector<const Tensor<T>*> parts;
    for (std::size_t i : indices) parts.push_back(&cache_[i]->features[l]);
    b.features.push_back(stack(parts));
  }
  std::vector<const Tensor<T>*> cls, det;
  for (std::size_t i : indices) {
    cls.push_back(&cache_[i]->cls_logits);
    det.push_back(&cache_[i]->det_logits);
    b.selections.push_back(cache_[i]->selection);
  }
  b.cls_logits = stack(cls);
  b.det_logits = stack(det);
  if (!cfg_.cache_teacher) {
    for (std::size_t i : missing) cache_[i].reset();
  }
  return b;
}

template <typename T>
double evaluate_hard_loss(StudentModel<T>& student, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) return 0.0;
  double total = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    Tape<T> tape;
    auto g = student.forward(tape, batch_images(data, idx));
    auto loss = hard_loss(sigmoid(g.logits), label_batch<T>(data, idx));
    total += static_cast<double>(loss.value().item()) * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(data.size());
}

namespace {

template <typename T>
Var<T> stage1_batch_loss(TeacherOracle<T>& oracle, StudentModel<T>& student, Tape<T>& tape,
                         const Dataset& data, std::span<const std::size_t> idx,
                         std::vector<double>& per_layer) {
  auto tb = oracle.fetch(idx);
  auto sg = student.forward_features(tape, batch_images(data, idx));
  const std::size_t roi = oracle.teacher().config().roi_out;
  Var<T> total;
  per_layer.assign(oracle.layers().size(), 0.0);
  for (std::size_t l = 0; l < oracle.layers().size(); ++l) {
    const std::size_t block = oracle.layers()[l];
    auto mapped = student.psi(tape, block, sg.features[block]);
    if (mapped.shape()[1] != tb.features[l].dim(1)) {
      throw ContractError("stage 1: student channels after the transform do not match the teacher at " +
                          Backbone<T>::block_name(block));
    }
    const auto tw = selection_windows<T>(data, idx, tb.selections, tb.features[l].shape());
    const auto sw = selection_windows<T>(data, idx, tb.selections, mapped.shape());
    auto ft = roi_max_pool(tape.constant(tb.features[l]), std::span<const RoiWindow>(tw), roi, roi);
    auto fs = roi_max_pool(mapped, std::span<const RoiWindow>(sw), roi, roi);
    auto lf = feature_distill_loss(ft, fs, idx.size());
    per_layer[l] = static_cast<double>(lf.value().item());
    total = total.valid() ? add(total, lf) : lf;
  }
  return total;
}

}  // namespace

template <typename T>
StageReport run_stage1(TeacherModel<T>& teacher, StudentModel<T>& student, const Dataset& train,
                       const DistillConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!teacher.frozen()) throw ContractError("stage 1 requires a frozen teacher");
  if (train.empty()) throw InputError("stage 1: empty training set");
  const auto start = std::chrono::steady_clock::now();

  TeacherOracle<T> oracle(teacher, train, cfg);
  StageReport report;
  report.stage = 1;
  report.seed = seed;
  for (const auto& name : cfg.distill_layers) report.feature_loss[name] = {};

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> per_layer;

  double initial = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
    std::span<const std::size_t> idx(order.data() + begin, end - begin);
    Tape<T> tape;
    initial += static_cast<double>(stage1_batch_loss(oracle, student, tape, train, idx, per_layer)
                                       .value()
                                       .item()) *
               static_cast<double>(idx.size());
  }
  report.initial_feature_loss = initial / static_cast<double>(train.size());
  spdlog::info("stage 1 initial feature loss {:.6g}", report.initial_feature_loss);

  if (report.initial_feature_loss >= cfg.stage1_abs_tol) {
    Sgd<T> opt({cfg.stage1_lr, cfg.momentum, cfg.weight_decay});
    opt.add_group(student.conv_parameters());
    Rng rng(seed ^ 0x5151515151ULL);
    std::vector<double> totals;
    for (std::size_t epoch = 0; epoch < cfg.stage1_max_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<double> sums(cfg.distill_layers.size(), 0.0);
      for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
        std::span<const std::size_t> idx(order.data() + begin, end - begin);
        Tape<T> tape;
        opt.zero_grad();
        auto loss = stage1_batch_loss(oracle, student, tape, train, idx, per_layer);
        tape.backward(loss);
        opt.step();
        for (std::size_t l = 0; l < sums.size(); ++l) sums[l] += per_layer[l] * static_cast<double>(idx.size());
      }
      double total = 0;
      for (std::size_t l = 0; l < sums.size(); ++l) {
        const double mean = sums[l] / static_cast<double>(train.size());
        report.feature_loss[cfg.distill_layers[l]].push_back(mean);
        total += mean;
      }
      totals.push_back(total);
      ++report.epochs;
      spdlog::info("stage 1 epoch {} feature loss {:.6g}", epoch + 1, total);
      if (converged(totals, cfg.stage1_window, cfg.stage1_rel_tol)) break;
    }
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

template <typename T>
StageReport run_stage2(TeacherModel<T>* teacher, StudentModel<T>& student, const Dataset& train,
                       const Dataset& val, const DistillConfig& cfg, TemperatureBank<T>& temps,
                       std::uint64_t seed) {
  cfg.validate();
  if (train.empty()) throw InputError("stage 2: empty training set");
  const bool soft = cfg.lambda > 0;
  if (soft && teacher == nullptr) throw ContractError("stage 2 with lambda > 0 needs a teacher");
  if (soft && !teacher->frozen()) throw ContractError("stage 2 requires a frozen teacher");
  const auto start = std::chrono::steady_clock::now();

  student.reinit_head(seed ^ 0x4ead4ead4eadULL);
  std::optional<TeacherOracle<T>> oracle;
  if (soft) {
    DistillConfig logits_only = cfg;
    logits_only.distill_layers.clear();
    oracle.emplace(*teacher, train, logits_only);
  }

  Sgd<T> opt({cfg.stage2_lr, cfg.momentum, cfg.weight_decay});
  opt.add_group(student.parameters());
  opt.add_group(temps.parameters(), false, static_cast<T>(cfg.temperature_floor));

  StageReport report;
  report.stage = 2;
  report.seed = seed;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed ^ 0x2222222222ULL);
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double hard_sum = 0, soft_sum = 0;
    report.learning_rate.push_back(opt.lr());
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::span<const std::size_t> idx(order.data() + begin, end - begin);
      Tape<T> tape;
      opt.zero_grad();
      auto g = student.forward(tape, batch_images(train, idx));
      auto lp = hard_loss(sigmoid(g.logits), label_batch<T>(train, idx));
      Var<T> loss = lp;
      if (soft) {
        auto tb = oracle->fetch(idx);
        auto pt = softened_teacher_prediction(tape.constant(std::move(tb.cls_logits)),
                                              tape.constant(std::move(tb.det_logits)),
                                              tape.parameter(temps.class_temps),
                                              tape.parameter(temps.proposal_temps));
        auto ps = tempered_sigmoid(g.logits, tape.parameter(temps.student_temps));
        auto lsoft = prediction_distill_loss(pt, ps);
        soft_sum += static_cast<double>(lsoft.value().item()) * static_cast<double>(idx.size());
        loss = combined_loss(lp, lsoft, cfg.lambda);
      }
      tape.backward(loss);
      opt.step();
      hard_sum += static_cast<double>(lp.value().item()) * static_cast<double>(idx.size());
    }
    const double n = static_cast<double>(train.size());
    report.hard_loss.push_back(hard_sum / n);
    report.soft_loss.push_back(soft_sum / n);
    const double v = val.empty() ? report.hard_loss.back() : evaluate_hard_loss(student, val);
    report.val_hard_loss.push_back(v);
    ++report.epochs;
    spdlog::info("stage 2 epoch {} hard {:.5f} soft {:.5f} val {:.5f} lr {:.3g}", epoch + 1,
                 report.hard_loss.back(), report.soft_loss.back(), v, opt.lr());
    if (v < best_val - cfg.plateau_delta) {
      best_val = v;
      stale = 0;
    } else if (++stale >= cfg.plateau_patience) {
      opt.set_lr(opt.lr() * cfg.lr_decay);
      stale = 0;
    }
  }
  report.class_temps = to_doubles(temps.class_temps.value);
  report.proposal_temps = to_doubles(temps.proposal_temps.value);
  report.student_temps = to_doubles(temps.student_temps.value);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

#define DISTILLWSD_INSTANTIATE_DISTILL(T)                                                        \
  template struct TemperatureBank<T>;                                                            \
  template class TeacherOracle<T>;                                                               \
  template DistillSelection select_distill_proposals(const ScoreBundle<T>&, const ProposalSet&, \
                                                     const DistillConfig&);                     \
  template Var<T> feature_distill_loss(const Var<T>&, const Var<T>&, std::size_t);               \
  template Var<T> prediction_distill_loss(const Var<T>&, const Var<T>&);                         \
  template Var<T> hard_loss(const Var<T>&, const Tensor<T>&);                                    \
  template Var<T> combined_loss(const Var<T>&, const Var<T>&, double);                           \
  template StageReport run_stage1(TeacherModel<T>&, StudentModel<T>&, const Dataset&,            \
                                  const DistillConfig&, std::uint64_t);                          \
  template StageReport run_stage2(TeacherModel<T>*, StudentModel<T>&, const Dataset&,            \
                                  const Dataset&, const DistillConfig&, TemperatureBank<T>&,     \
                                  std::uint64_t);                                                \
  template double evaluate_hard_loss(StudentModel<T>&, const Dataset&, std::size_t);

DISTILLWSD_INSTANTIATE_DISTILL(float)
DISTILLWSD_INSTANTIATE_DISTILL(double)

#undef DISTILLWSD_INSTANTIATE_DISTILL

}  // namespace distillwsd
