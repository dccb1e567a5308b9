#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "distillwsd/dataset.hpp"

namespace distillwsd {

/// Synthetic scene distribution. Class c is shape c % 5 drawn in colour c / 5.
struct SceneSpec {
  std::size_t num_classes = 10;
  std::size_t image_size = 64;
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  /// Relative frequency of each object count in [min_objects, max_objects]. Empty: {1, 2, 2, 1}
  /// truncated or padded with 1 to the range.
  std::vector<double> object_count_weights;
  /// K×K row-major co-occurrence affinity. Empty: 4 for ring neighbours, 1 elsewhere, 0 on the
  /// diagonal.
  std::vector<double> affinity;
  /// Weights of the first class drawn per image. Empty: affinity row sums.
  std::vector<double> class_marginals;
  /// Chance that an object is centred inside an earlier one, forcing overlap.
  double occlusion_prob = 0.3;
  double min_scale = 0.15;
  double max_scale = 0.5;
  double noise_std = 6.0;
  /// A class is labelled only if this fraction of its object stays visible.
  double min_visible = 0.1;
  std::uint64_t seed = 0;

  static constexpr std::size_t kMaxClasses = 20;

  /// Throws ConfigError on an unusable spec.
  void validate() const;
  std::vector<double> resolved_affinity() const;
  std::vector<double> resolved_marginals() const;
  std::vector<double> resolved_count_weights() const;
};

std::string class_name(std::size_t cls);

/// Image `index` of the stream defined by `spec`; identical for identical (spec, index).
Example render_example(const SceneSpec& spec, std::uint64_t index);

struct SplitCounts {
  std::size_t train = 3000;
  std::size_t val = 500;
  std::size_t test = 1000;
};

/// In-memory split. Global indices run train, val, test in that order.
Dataset generate_split(const SceneSpec& spec, const SplitCounts& counts, std::string_view split);

struct ManifestEntry {
  std::string image;  // path relative to the manifest directory
  std::vector<std::size_t> labels;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::string split;
  std::vector<ManifestEntry> entries;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

/// One JSON object per line: {"image": "...", "labels": [...]}.
std::string format_manifest(const Manifest& manifest);
/// Throws ParseError carrying the 1-based line number of the first bad line.
Manifest parse_manifest(std::string_view text, std::string split = {});
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
/// The split name is taken from the file stem (train.jsonl -> "train").
Manifest load_manifest(const std::filesystem::path& path);

/// Writes images/<split>_<index>.ppm and <split>.jsonl for every split under `out_dir`.
std::vector<Manifest> generate_dataset(const SceneSpec& spec, const SplitCounts& counts,
                                       const std::filesystem::path& out_dir);

/// Reads a manifest and its images. Label indices must be < num_classes.
Dataset load_dataset(const std::filesystem::path& manifest_path, std::size_t num_classes);

}  // namespace distillwsd
