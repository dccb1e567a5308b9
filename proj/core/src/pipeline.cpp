#include "distillwsd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <numeric>
#include <optional>
#include <tuple>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>

#include "distillwsd/log.hpp"

namespace distillwsd {
namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

nlohmann::ordered_json report_json(const MetricsReport& r) { return nlohmann::ordered_json::parse(r.to_json()); }

double mean_of(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) return 0;
  double s = 0;
  for (const auto& r : reports) s += r.map;
  return s / static_cast<double>(reports.size());
}

MetricsReport score_student(StudentModel<float>& student, const SplitData& data, std::size_t top_k) {
  return evaluate_split(make_records(data.val, student_scores(student, data.val)),
                        make_records(data.test, student_scores(student, data.test)), top_k);
}

}  // namespace

SeedPlan SeedPlan::from(std::uint64_t seed) {
  return {seed * 1000003ULL + 11, seed * 1000003ULL + 101, seed * 1000003ULL + 211, seed * 1000003ULL + 307,
          seed * 1000003ULL + 401};
}

SplitData make_data(const DataConfig& config, std::uint64_t data_seed) {
  SceneSpec spec = config.scene;
  spec.seed = data_seed;
  SplitData d{generate_split(spec, config.counts, "train"), generate_split(spec, config.counts, "val"),
              generate_split(spec, config.counts, "test")};
  for (Dataset* ds : {&d.train, &d.val, &d.test}) attach_proposals(*ds, config.proposals);
  return d;
}

SplitData load_data(const std::filesystem::path& dir, const DataConfig& config) {
  const std::size_t k = config.scene.num_classes;
  SplitData d{load_dataset(dir / "train.jsonl", k), load_dataset(dir / "val.jsonl", k),
              load_dataset(dir / "test.jsonl", k)};
  for (Dataset* ds : {&d.train, &d.val, &d.test}) attach_proposals(*ds, config.proposals);
  return d;
}

std::vector<PredictionRecord> make_records(const Dataset& data, const std::vector<std::vector<double>>& scores) {
  if (scores.size() != data.size()) throw DimensionError("make_records: one score vector per example expected");
  std::vector<PredictionRecord> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out.push_back({data.examples[i].id, scores[i], data.examples[i].labels});
  return out;
}

MetricsReport evaluate_split(const std::vector<PredictionRecord>& val, const std::vector<PredictionRecord>& test,
                             std::size_t top_k) {
  const double tau = val.empty() ? 0.5 : tune_threshold(val);
  return evaluate(test, tau, top_k);
}

std::string format_predictions(const std::vector<PredictionRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["image"] = r.image_id;
    j["scores"] = r.scores;
    j["labels"] = r.labels;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PredictionRecord> parse_predictions(std::string_view text) {
  std::vector<PredictionRecord> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      PredictionRecord r;
      r.image_id = j.at("image").get<std::string>();
      r.scores = j.at("scores").get<std::vector<double>>();
      r.labels = j.at("labels").get<std::vector<std::uint8_t>>();
      if (r.scores.size() != r.labels.size()) throw ParseError(line_no, "scores and labels differ in length");
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

void save_teacher(TeacherModel<float>& model, const std::filesystem::path& path) {
  save_checkpoint(make_checkpoint("teacher", to_json(model.config()), model.parameters()), path);
}

TeacherModel<float> load_teacher(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.model_kind != "teacher") {
    throw StateError(path.string() + " holds a '" + ckpt.model_kind + "' checkpoint, not a teacher");
  }
  TeacherModel<float> model(teacher_config_from_json(ckpt.config_json), 0);
  restore_parameters(ckpt, model.parameters());
  return model;
}

void save_student(StudentModel<float>& model, const std::filesystem::path& path, TemperatureBank<float>* temps) {
  auto params = model.parameters();
  if (temps != nullptr) {
    for (auto* p : temps->parameters()) params.push_back(p);
  }
  save_checkpoint(make_checkpoint("student", to_json(model.config()), params), path);
}

StudentModel<float> load_student(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.model_kind != "student") {
    throw StateError(path.string() + " holds a '" + ckpt.model_kind + "' checkpoint, not a student");
  }
  StudentModel<float> model(student_config_from_json(ckpt.config_json), 0);
  restore_parameters(ckpt, model.parameters());
  return model;
}

double ArmResult::mean_map() const { return mean_of(reports); }

double AblationResult::teacher_mean_map() const { return mean_of(teacher); }

std::vector<double> AblationResult::per_class_gain() const {
  std::vector<double> gain;
  if (full.reports.empty()) return gain;
  const std::size_t k = full.reports.front().per_class_ap.size();
  gain.assign(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t s = 0; s < full.reports.size(); ++s) {
      const auto& a = full.reports[s].per_class_ap[c];
      const auto& b = baseline.reports[s].per_class_ap[c];
      if (a && b) {
        sum += *a - *b;
        ++n;
      }
    }
    gain[c] = n == 0 ? 0.0 : sum / static_cast<double>(n);
  }
  return gain;
}

std::string AblationResult::to_json(bool with_metadata) const {
  nlohmann::ordered_json j;
  j["seeds"] = seeds;
  auto arm_json = [](const std::string& name, const std::vector<MetricsReport>& reports) {
    nlohmann::ordered_json a;
    a["name"] = name;
    a["mean_map"] = mean_of(reports);
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    for (const auto& r : reports) per_seed.push_back(report_json(r));
    a["per_seed"] = per_seed;
    return a;
  };
  j["teacher"] = arm_json("teacher", teacher);
  j["arms"] = {arm_json(baseline.name, baseline.reports), arm_json(class_aware.name, class_aware.reports),
               arm_json(full.name, full.reports)};
  j["per_class_gain"] = per_class_gain();
  if (with_metadata) {
    j["metadata"] = {{"timestamp", utc_timestamp()},
                     {"wall_seconds", wall_seconds},
                     {"latency_ms", {{"baseline", latency_baseline_ms}, {"full", latency_full_ms}}}};
  }
  return j.dump(2);
}

std::string AblationResult::to_markdown() const {
  std::string out = "| model | mAP (mean) | per seed |\n|---|---|---|\n";
  auto row = [&out](const std::string& name, const std::vector<MetricsReport>& reports) {
    std::string seeds;
    for (const auto& r : reports) seeds += fmt::format("{}{:.2f}", seeds.empty() ? "" : ", ", 100 * r.map);
    out += fmt::format("| {} | {:.2f} | {} |\n", name, 100 * mean_of(reports), seeds);
  };
  row("teacher", teacher);
  row(baseline.name, baseline.reports);
  row(class_aware.name, class_aware.reports);
  row(full.name, full.reports);
  return out;
}

std::string AblationResult::per_class_gain_csv() const {
  std::string out = "class_name,ap_gain\n";
  const auto gain = per_class_gain();
  for (std::size_t c = 0; c < gain.size(); ++c) {
    out += fmt::format("{},{}\n", c < class_names.size() ? class_names[c] : std::to_string(c), gain[c]);
  }
  return out;
}

double student_latency_ms(StudentModel<float>& model, const Dataset& data, std::size_t count) {
  if (data.empty() || count == 0) return 0;
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < count; ++i) {
    Tape<float> tape;
    const Image* img = &data.examples[i % data.size()].image;
    auto g = model.forward(tape, std::span<const Image* const>(&img, 1));
    auto p = sigmoid(g.logits);
    (void)p;
  }
  const double total = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return total / static_cast<double>(count);
}

namespace {

// Alternates the two models over several rounds so drift in machine load hits both alike;
// the per-model median is reported.
std::pair<double, double> paired_latency_ms(StudentModel<float>& a, StudentModel<float>& b, const Dataset& data,
                                            std::size_t count, std::size_t rounds = 5) {
  std::vector<double> ta, tb;
  for (std::size_t r = 0; r < rounds; ++r) {
    ta.push_back(student_latency_ms(a, data, count));
    tb.push_back(student_latency_ms(b, data, count));
  }
  auto median = [](std::vector<double>& v) {
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  return {median(ta), median(tb)};
}

}  // namespace

AblationResult run_ablation(const AppConfig& config, const SplitData& data, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  AblationResult result;
  result.baseline.name = "baseline";
  result.class_aware.name = "class_aware";
  result.full.name = "feature_class_aware";
  for (std::size_t c = 0; c < config.data.scene.num_classes; ++c) result.class_names.push_back(class_name(c));
  const std::size_t top_k = config.eval.top_k;
  std::optional<StudentModel<float>> timed_baseline;

  for (std::size_t s = 0; s < config.eval.seeds; ++s) {
    const std::uint64_t run_seed = seed + s;
    const SeedPlan plan = SeedPlan::from(run_seed);
    result.seeds.push_back(run_seed);
    spdlog::info("ablation seed {}: training teacher", run_seed);

    auto trained = train_teacher<float>(data.train, config.teacher, config.teacher_train, plan.teacher);
    TeacherModel<float>& teacher = trained.model;
    teacher.freeze();
    result.teacher.push_back(evaluate_split(make_records(data.val, teacher_image_scores(teacher, data.val)),
                                            make_records(data.test, teacher_image_scores(teacher, data.test)),
                                            top_k));
    spdlog::info("teacher mAP {:.4f}", result.teacher.back().map);

    const std::size_t k = config.data.scene.num_classes;
    {
      DistillConfig cfg = config.distill;
      cfg.lambda = 0.0;
      StudentModel<float> student(config.student, plan.student);
      TemperatureBank<float> temps(k, config.teacher.top_n);
      result.baseline.stages.push_back(run_stage2<float>(nullptr, student, data.train, data.val, cfg, temps, plan.stage2));
      result.baseline.reports.push_back(score_student(student, data, top_k));
      spdlog::info("baseline mAP {:.4f}", result.baseline.reports.back().map);
      if (s == 0) timed_baseline.emplace(std::move(student));
    }
    {
      StudentModel<float> student(config.student, plan.student);
      TemperatureBank<float> temps(k, config.teacher.top_n);
      result.class_aware.stages.push_back(
          run_stage2<float>(&teacher, student, data.train, data.val, config.distill, temps, plan.stage2));
      result.class_aware.reports.push_back(score_student(student, data, top_k));
      spdlog::info("class-aware mAP {:.4f}", result.class_aware.reports.back().map);
    }
    {
      StudentModel<float> student(config.student, plan.student);
      TemperatureBank<float> temps(k, config.teacher.top_n);
      result.full.stages.push_back(run_stage1<float>(teacher, student, data.train, config.distill, plan.stage1));
      result.full.stages.push_back(
          run_stage2<float>(&teacher, student, data.train, data.val, config.distill, temps, plan.stage2));
      result.full.reports.push_back(score_student(student, data, top_k));
      spdlog::info("feature + class-aware mAP {:.4f}", result.full.reports.back().map);
      if (s == 0) {
        std::tie(result.latency_baseline_ms, result.latency_full_ms) =
            paired_latency_ms(*timed_baseline, student, data.test, config.eval.latency_images);
        timed_baseline.reset();
      }
    }
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace distillwsd
