#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distillwsd/checkpoint.hpp"
#include "distillwsd/config.hpp"
#include "distillwsd/metrics.hpp"

namespace distillwsd {

/// Every random stream derives from one seed by fixed offsets.
struct SeedPlan {
  std::uint64_t data;
  std::uint64_t teacher;
  std::uint64_t student;
  std::uint64_t stage1;
  std::uint64_t stage2;

  static SeedPlan from(std::uint64_t seed);
};

struct SplitData {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Renders the three splits in memory and attaches proposals.
SplitData make_data(const DataConfig& config, std::uint64_t data_seed);
/// Reads <dir>/{train,val,test}.jsonl and attaches proposals.
SplitData load_data(const std::filesystem::path& dir, const DataConfig& config);

std::vector<PredictionRecord> make_records(const Dataset& data, const std::vector<std::vector<double>>& scores);

/// Tunes tau on the validation records and evaluates the test records with it.
MetricsReport evaluate_split(const std::vector<PredictionRecord>& val, const std::vector<PredictionRecord>& test,
                             std::size_t top_k);

/// One JSON object per line: {"image": id, "scores": [...], "labels": [...]}.
std::string format_predictions(const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> parse_predictions(std::string_view text);

void save_teacher(TeacherModel<float>& model, const std::filesystem::path& path);
TeacherModel<float> load_teacher(const std::filesystem::path& path);
/// Temperatures are stored alongside when given.
void save_student(StudentModel<float>& model, const std::filesystem::path& path,
                  TemperatureBank<float>* temps = nullptr);
StudentModel<float> load_student(const std::filesystem::path& path);

struct ArmResult {
  std::string name;
  std::vector<MetricsReport> reports;  // one per seed
  std::vector<StageReport> stages;

  double mean_map() const;
};

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<MetricsReport> teacher;
  ArmResult baseline;
  ArmResult class_aware;
  ArmResult full;
  std::vector<std::string> class_names;
  /// Timing, only ever written under "metadata". Latencies are per-image medians for the first
  /// seed's baseline and full students, timed in alternating rounds.
  double wall_seconds = 0;
  double latency_baseline_ms = 0;
  double latency_full_ms = 0;

  double teacher_mean_map() const;
  /// Mean per-class AP gain of the full pipeline over the baseline.
  std::vector<double> per_class_gain() const;
  std::string to_json(bool with_metadata = true) const;
  std::string to_markdown() const;
  std::string per_class_gain_csv() const;
};

/// Trains the teacher and the three student arms for seeds seed, seed + 1, ...
AblationResult run_ablation(const AppConfig& config, const SplitData& data, std::uint64_t seed);

/// Mean per-image inference time of the student over `count` images (cycling the dataset).
double student_latency_ms(StudentModel<float>& model, const Dataset& data, std::size_t count);

}  // namespace distillwsd
