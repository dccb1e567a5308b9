#include "distillwsd/datagen.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "distillwsd/error.hpp"

namespace distillwsd {
namespace {

enum class Shape5 { Square, Circle, Triangle, Cross, Ring };

constexpr std::array<const char*, 5> kShapeNames{"square", "circle", "triangle", "cross", "ring"};
constexpr std::array<const char*, 4> kColourNames{"red", "green", "blue", "yellow"};
constexpr std::array<std::array<int, 3>, 4> kColours{{{220, 50, 50}, {50, 200, 70}, {50, 80, 220}, {230, 210, 50}}};

bool inside(Shape5 shape, double dx, double dy, double h) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case Shape5::Square:
      return ax <= h && ay <= h;
    case Shape5::Circle:
      return dx * dx + dy * dy <= h * h;
    case Shape5::Triangle: {
      if (dy < -h || dy > h) return false;
      return ax <= h * (dy + h) / (2 * h);
    }
    case Shape5::Cross:
      return (ax <= h && ay <= h / 3) || (ay <= h && ax <= h / 3);
    case Shape5::Ring: {
      const double r2 = dx * dx + dy * dy;
      return r2 <= h * h && r2 >= 0.3 * h * h;
    }
  }
  return false;
}

std::size_t draw(std::mt19937_64& rng, const std::vector<double>& weights) {
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  return dist(rng);
}

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::uint64_t split_offset(const SplitCounts& counts, std::string_view split) {
  if (split == "train") return 0;
  if (split == "val") return counts.train;
  if (split == "test") return counts.train + counts.val;
  throw ConfigError("unknown split '" + std::string(split) + "'");
}

std::size_t split_count(const SplitCounts& counts, std::string_view split) {
  if (split == "train") return counts.train;
  if (split == "val") return counts.val;
  return counts.test;
}

std::string image_name(std::string_view split, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return "images/" + std::string(split) + "_" + buf + ".ppm";
}

}  // namespace

void SceneSpec::validate() const {
  if (num_classes == 0) throw ConfigError("data: num_classes must be positive");
  if (num_classes > kMaxClasses) {
    throw ConfigError("data: num_classes " + std::to_string(num_classes) + " exceeds the " +
                      std::to_string(kMaxClasses) + " shape x colour combinations");
  }
  if (image_size < 16) throw ConfigError("data: image_size must be at least 16");
  if (min_objects == 0 || min_objects > max_objects) {
    throw ConfigError("data: need 1 <= min_objects <= max_objects");
  }
  if (max_objects > num_classes) throw ConfigError("data: max_objects exceeds num_classes");
  if (!(min_scale > 0 && min_scale <= max_scale && max_scale <= 1)) {
    throw ConfigError("data: need 0 < min_scale <= max_scale <= 1");
  }
  if (!(occlusion_prob >= 0 && occlusion_prob <= 1)) throw ConfigError("data: occlusion_prob outside [0, 1]");
  if (!(min_visible >= 0 && min_visible <= 1)) throw ConfigError("data: min_visible outside [0, 1]");
  if (!affinity.empty() && affinity.size() != num_classes * num_classes) {
    throw ConfigError("data: affinity must have num_classes^2 entries");
  }
  if (!class_marginals.empty() && class_marginals.size() != num_classes) {
    throw ConfigError("data: class_marginals must have num_classes entries");
  }
  const auto a = resolved_affinity();
  for (std::size_t r = 0; r < num_classes; ++r) {
    double sum = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (a[r * num_classes + c] < 0) throw ConfigError("data: affinity entries must be non-negative");
      sum += a[r * num_classes + c];
    }
    if (sum <= 0 && num_classes > 1) throw ConfigError("data: affinity row " + std::to_string(r) + " is all zero");
  }
  const auto m = resolved_marginals();
  if (std::any_of(m.begin(), m.end(), [](double v) { return v < 0; }) ||
      std::all_of(m.begin(), m.end(), [](double v) { return v <= 0; })) {
    throw ConfigError("data: class_marginals must be non-negative and not all zero");
  }
}

std::vector<double> SceneSpec::resolved_affinity() const {
  if (!affinity.empty()) return affinity;
  const std::size_t k = num_classes;
  std::vector<double> a(k * k, 1.0);
  for (std::size_t r = 0; r < k; ++r) {
    a[r * k + r] = 0.0;
    if (k > 2) {
      a[r * k + (r + 1) % k] = 4.0;
      a[r * k + (r + k - 1) % k] = 4.0;
    }
  }
  return a;
}

std::vector<double> SceneSpec::resolved_marginals() const {
  if (!class_marginals.empty()) return class_marginals;
  const auto a = resolved_affinity();
  std::vector<double> m(num_classes, 0.0);
  for (std::size_t r = 0; r < num_classes; ++r) {
    for (std::size_t c = 0; c < num_classes; ++c) m[r] += a[r * num_classes + c];
  }
  if (num_classes == 1) m[0] = 1.0;
  return m;
}

std::vector<double> SceneSpec::resolved_count_weights() const {
  const std::size_t n = max_objects - min_objects + 1;
  if (!object_count_weights.empty()) {
    if (object_count_weights.size() != n) {
      throw ConfigError("data: object_count_weights must have one entry per object count");
    }
    return object_count_weights;
  }
  const std::vector<double> base{1, 2, 2, 1};
  std::vector<double> w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t count = min_objects + i;
    if (count >= 1 && count <= base.size()) w[i] = base[count - 1];
  }
  return w;
}

std::string class_name(std::size_t cls) {
  return std::string(kColourNames.at(cls / 5)) + "_" + kShapeNames[cls % 5];
}

Example render_example(const SceneSpec& spec, std::uint64_t index) {
  spec.validate();
  std::mt19937_64 rng(spec.seed + index);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t size = spec.image_size, k = spec.num_classes;
  const double side = static_cast<double>(size);

  // Background: a soft linear gradient.
  const double base = 70 + 60 * unit(rng);
  const double gx = (unit(rng) - 0.5) * 40, gy = (unit(rng) - 0.5) * 40;
  std::array<double, 3> tint{};
  for (auto& t : tint) t = (unit(rng) - 0.5) * 20;
  std::vector<std::array<double, 3>> canvas(size * size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double v = base + gx * (static_cast<double>(x) / side - 0.5) + gy * (static_cast<double>(y) / side - 0.5);
      for (int c = 0; c < 3; ++c) canvas[y * size + x][c] = v + tint[c];
    }
  }

  const auto counts = spec.resolved_count_weights();
  const std::size_t n_objects = std::min(spec.min_objects + draw(rng, counts), k);
  const auto affinity = spec.resolved_affinity();
  std::vector<std::size_t> classes{draw(rng, spec.resolved_marginals())};
  while (classes.size() < n_objects) {
    std::vector<double> w(k, 0.0);
    for (std::size_t c : classes) {
      for (std::size_t j = 0; j < k; ++j) w[j] += affinity[c * k + j];
    }
    for (std::size_t c : classes) w[c] = 0.0;
    if (std::all_of(w.begin(), w.end(), [](double v) { return v <= 0; })) {
      for (std::size_t j = 0; j < k; ++j) w[j] = 1.0;
      for (std::size_t c : classes) w[c] = 0.0;
    }
    classes.push_back(draw(rng, w));
  }

  struct Placed {
    double cx, cy, h;
  };
  std::vector<Placed> placed;
  std::vector<int> owner(size * size, -1);
  std::vector<std::size_t> area(classes.size(), 0);
  for (std::size_t o = 0; o < classes.size(); ++o) {
    const double h = 0.5 * side * (spec.min_scale + (spec.max_scale - spec.min_scale) * unit(rng));
    double cx, cy;
    if (!placed.empty() && unit(rng) < spec.occlusion_prob) {
      const Placed& under = placed[static_cast<std::size_t>(unit(rng) * static_cast<double>(placed.size()))];
      cx = under.cx + (unit(rng) * 2 - 1) * under.h;
      cy = under.cy + (unit(rng) * 2 - 1) * under.h;
    } else {
      cx = h + unit(rng) * std::max(0.0, side - 2 * h);
      cy = h + unit(rng) * std::max(0.0, side - 2 * h);
    }
    placed.push_back({cx, cy, h});
    const Shape5 shape = static_cast<Shape5>(classes[o] % 5);
    std::array<double, 3> colour{};
    for (int c = 0; c < 3; ++c) colour[c] = kColours[classes[o] / 5][c] + (unit(rng) - 0.5) * 30;
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        if (!inside(shape, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, h)) continue;
        ++area[o];
        owner[y * size + x] = static_cast<int>(o);
        canvas[y * size + x] = colour;
      }
    }
  }

  std::vector<std::size_t> visible(classes.size(), 0);
  for (int o : owner) {
    if (o >= 0) ++visible[static_cast<std::size_t>(o)];
  }
  Example ex;
  ex.id = std::to_string(index);
  ex.labels.assign(k, 0);
  for (std::size_t o = 0; o < classes.size(); ++o) {
    if (area[o] > 0 && static_cast<double>(visible[o]) >= spec.min_visible * static_cast<double>(area[o])) {
      ex.labels[classes[o]] = 1;
    }
  }

  std::normal_distribution<double> noise(0.0, spec.noise_std);
  ex.image = Image(size, size);
  for (std::size_t p = 0; p < size * size; ++p) {
    for (int c = 0; c < 3; ++c) {
      ex.image.rgb[p * 3 + c] = clamp_byte(canvas[p][c] + (spec.noise_std > 0 ? noise(rng) : 0.0));
    }
  }
  return ex;
}

Dataset generate_split(const SceneSpec& spec, const SplitCounts& counts, std::string_view split) {
  spec.validate();
  const std::uint64_t offset = split_offset(counts, split);
  Dataset data;
  data.num_classes = spec.num_classes;
  const std::size_t n = split_count(counts, split);
  data.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Example ex = render_example(spec, offset + i);
    ex.id = image_name(split, i);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

std::string format_manifest(const Manifest& manifest) {
  std::string out;
  for (const auto& e : manifest.entries) {
    nlohmann::ordered_json j;
    j["image"] = e.image;
    j["labels"] = e.labels;
    out += j.dump();
    out += '\n';
  }
  return out;
}

Manifest parse_manifest(std::string_view text, std::string split) {
  Manifest m;
  m.split = std::move(split);
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("image") || !j.contains("labels") || !j["image"].is_string() ||
          !j["labels"].is_array()) {
        throw ParseError(line_no, "expected {\"image\": string, \"labels\": [int, ...]}");
      }
      ManifestEntry e;
      e.image = j["image"].get<std::string>();
      for (const auto& v : j["labels"]) {
        if (!v.is_number_unsigned()) throw ParseError(line_no, "labels must be non-negative integers");
        e.labels.push_back(v.get<std::size_t>());
      }
      m.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(line_no, ex.what());
    }
  }
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write manifest " + path.string());
  out << format_manifest(manifest);
  if (!out) throw InputError("failed writing manifest " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.stem().string());
}

std::vector<Manifest> generate_dataset(const SceneSpec& spec, const SplitCounts& counts,
                                       const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "images");
  std::vector<Manifest> manifests;
  for (std::string_view split : {"train", "val", "test"}) {
    const Dataset data = generate_split(spec, counts, split);
    Manifest m;
    m.split = std::string(split);
    for (const auto& ex : data.examples) {
      write_ppm(ex.image, out_dir / ex.id);
      ManifestEntry e{ex.id, {}};
      for (std::size_t c = 0; c < ex.labels.size(); ++c) {
        if (ex.labels[c]) e.labels.push_back(c);
      }
      m.entries.push_back(std::move(e));
    }
    save_manifest(m, out_dir / (m.split + ".jsonl"));
    manifests.push_back(std::move(m));
  }
  return manifests;
}

Dataset load_dataset(const std::filesystem::path& manifest_path, std::size_t num_classes) {
  const Manifest m = load_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  Dataset data;
  data.num_classes = num_classes;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    Example ex;
    ex.id = e.image;
    ex.image = read_ppm(root / e.image);
    ex.labels.assign(num_classes, 0);
    for (std::size_t c : e.labels) {
      if (c >= num_classes) {
        throw ParseError(i + 1, "label " + std::to_string(c) + " >= num_classes " + std::to_string(num_classes));
      }
      ex.labels[c] = 1;
    }
    data.examples.push_back(std::move(ex));
  }
  return data;
}

}  // namespace distillwsd
