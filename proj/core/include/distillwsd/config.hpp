#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>

#include "distillwsd/datagen.hpp"
#include "distillwsd/distill.hpp"

namespace distillwsd {

struct DataConfig {
  SceneSpec scene;
  SplitCounts counts;
  ProposalConfig proposals;
};

struct EvalConfig {
  std::size_t top_k = 3;
  /// Number of consecutive seeds averaged by the ablation.
  std::size_t seeds = 3;
  std::size_t latency_images = 500;
};

/// Everything tunable. num_classes lives in [data] and top_n in [teacher]; both are copied
/// to the modules that need them by sync().
struct AppConfig {
  TeacherConfig teacher;
  TeacherTrainOptions teacher_train;
  StudentConfig student;
  DistillConfig distill;
  DataConfig data;
  EvalConfig eval;

  /// Propagates shared keys and validates cross-module consistency.
  void sync();
};

/// INI-style text: [section] headers, `key = value` lines, `#` or `;` comments. Lists are
/// comma-separated. Unknown sections or keys raise ConfigError naming the key and line.
AppConfig parse_config(std::string_view text);
AppConfig load_config(const std::filesystem::path& path);
/// Canonical text listing every key; parse_config(render_config(c)) reproduces c.
std::string render_config(const AppConfig& config);

std::string to_json(const TeacherConfig& config);
std::string to_json(const StudentConfig& config);
TeacherConfig teacher_config_from_json(std::string_view json);
StudentConfig student_config_from_json(std::string_view json);

}  // namespace distillwsd
