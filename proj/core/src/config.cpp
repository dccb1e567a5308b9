#include "distillwsd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/fmt/fmt.h>

#include "distillwsd/error.hpp"

namespace distillwsd {
namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t pos = 0;
  while (true) {
    const auto comma = s.find(',', pos);
    out.push_back(trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos)));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

template <typename N>
N parse_number(std::string_view text) {
  N value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  return value;
}

bool parse_bool(std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw std::invalid_argument("not a boolean: '" + std::string(text) + "'");
}

template <typename N>
std::vector<N> parse_list(std::string_view text) {
  std::vector<N> out;
  for (auto item : split_list(text)) out.push_back(parse_number<N>(item));
  return out;
}

std::string show(double v) { return fmt::format("{}", v); }
std::string show(std::size_t v) { return std::to_string(v); }
std::string show(bool v) { return v ? "true" : "false"; }

template <typename V>
std::string show_list(const std::vector<V>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ", ";
    if constexpr (std::is_same_v<V, std::string>) {
      out += values[i];
    } else {
      out += show(values[i]);
    }
  }
  return out;
}

struct Field {
  std::string section;
  std::string key;
  std::function<void(AppConfig&, std::string_view)> set;
  std::function<std::string(const AppConfig&)> get;
};

template <typename Member>
Field field(std::string section, std::string key, Member member) {
  using V = std::remove_cvref_t<decltype(member(std::declval<AppConfig&>()))>;
  Field f{std::move(section), std::move(key), {}, {}};
  f.set = [member](AppConfig& c, std::string_view text) {
    V& slot = member(c);
    if constexpr (std::is_same_v<V, bool>) {
      slot = parse_bool(text);
    } else if constexpr (std::is_same_v<V, std::vector<std::string>>) {
      slot.clear();
      for (auto item : split_list(text)) slot.emplace_back(item);
    } else if constexpr (std::is_same_v<V, std::vector<double>> || std::is_same_v<V, std::vector<std::size_t>>) {
      slot = parse_list<typename V::value_type>(text);
    } else {
      slot = parse_number<V>(text);
    }
  };
  f.get = [member](const AppConfig& c) {
    const V& slot = member(const_cast<AppConfig&>(c));
    if constexpr (std::is_same_v<V, std::vector<std::string>> || std::is_same_v<V, std::vector<double>> ||
                  std::is_same_v<V, std::vector<std::size_t>>) {
      return show_list(slot);
    } else {
      return show(slot);
    }
  };
  return f;
}

#define DWSD_FIELD(section, key, expr) field(section, key, [](AppConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      DWSD_FIELD("teacher", "image_size", c.teacher.image_size),
      DWSD_FIELD("teacher", "conv_channels", c.teacher.conv_channels),
      DWSD_FIELD("teacher", "fc_width", c.teacher.fc_width),
      DWSD_FIELD("teacher", "roi_out", c.teacher.roi_out),
      DWSD_FIELD("teacher", "top_n", c.teacher.top_n),
      DWSD_FIELD("teacher", "nms_thresh", c.teacher.nms_thresh),
      DWSD_FIELD("teacher", "epochs", c.teacher_train.epochs),
      DWSD_FIELD("teacher", "batch_size", c.teacher_train.batch_size),
      DWSD_FIELD("teacher", "lr", c.teacher_train.lr),
      DWSD_FIELD("teacher", "momentum", c.teacher_train.momentum),
      DWSD_FIELD("teacher", "weight_decay", c.teacher_train.weight_decay),
      DWSD_FIELD("teacher", "scales", c.teacher_train.scales),

      DWSD_FIELD("student", "image_size", c.student.image_size),
      DWSD_FIELD("student", "conv_channels", c.student.conv_channels),
      DWSD_FIELD("student", "fc_width", c.student.fc_width),
      DWSD_FIELD("student", "teacher_channels", c.student.teacher_channels),

      DWSD_FIELD("distill", "lambda", c.distill.lambda),
      DWSD_FIELD("distill", "nms_thresh", c.distill.nms_thresh),
      DWSD_FIELD("distill", "top_after_nms", c.distill.top_after_nms),
      DWSD_FIELD("distill", "distill_layers", c.distill.distill_layers),
      DWSD_FIELD("distill", "stage1_lr", c.distill.stage1_lr),
      DWSD_FIELD("distill", "stage1_max_epochs", c.distill.stage1_max_epochs),
      DWSD_FIELD("distill", "stage1_window", c.distill.stage1_window),
      DWSD_FIELD("distill", "stage1_rel_tol", c.distill.stage1_rel_tol),
      DWSD_FIELD("distill", "stage1_abs_tol", c.distill.stage1_abs_tol),
      DWSD_FIELD("distill", "stage2_lr", c.distill.stage2_lr),
      DWSD_FIELD("distill", "stage2_epochs", c.distill.stage2_epochs),
      DWSD_FIELD("distill", "plateau_patience", c.distill.plateau_patience),
      DWSD_FIELD("distill", "plateau_delta", c.distill.plateau_delta),
      DWSD_FIELD("distill", "lr_decay", c.distill.lr_decay),
      DWSD_FIELD("distill", "batch_size", c.distill.batch_size),
      DWSD_FIELD("distill", "momentum", c.distill.momentum),
      DWSD_FIELD("distill", "weight_decay", c.distill.weight_decay),
      DWSD_FIELD("distill", "temperature_floor", c.distill.temperature_floor),
      DWSD_FIELD("distill", "cache_teacher", c.distill.cache_teacher),
      DWSD_FIELD("distill", "require_stage1", c.distill.require_stage1),

      DWSD_FIELD("data", "num_classes", c.data.scene.num_classes),
      DWSD_FIELD("data", "image_size", c.data.scene.image_size),
      DWSD_FIELD("data", "train", c.data.counts.train),
      DWSD_FIELD("data", "val", c.data.counts.val),
      DWSD_FIELD("data", "test", c.data.counts.test),
      DWSD_FIELD("data", "min_objects", c.data.scene.min_objects),
      DWSD_FIELD("data", "max_objects", c.data.scene.max_objects),
      DWSD_FIELD("data", "object_count_weights", c.data.scene.object_count_weights),
      DWSD_FIELD("data", "affinity", c.data.scene.affinity),
      DWSD_FIELD("data", "class_marginals", c.data.scene.class_marginals),
      DWSD_FIELD("data", "occlusion_prob", c.data.scene.occlusion_prob),
      DWSD_FIELD("data", "min_scale", c.data.scene.min_scale),
      DWSD_FIELD("data", "max_scale", c.data.scene.max_scale),
      DWSD_FIELD("data", "noise_std", c.data.scene.noise_std),
      DWSD_FIELD("data", "min_visible", c.data.scene.min_visible),
      DWSD_FIELD("data", "proposal_scales", c.data.proposals.scales),
      DWSD_FIELD("data", "proposal_aspect_ratios", c.data.proposals.aspect_ratios),
      DWSD_FIELD("data", "proposal_stride", c.data.proposals.stride_fraction),
      DWSD_FIELD("data", "proposal_score_floor", c.data.proposals.score_floor),

      DWSD_FIELD("eval", "top_k", c.eval.top_k),
      DWSD_FIELD("eval", "seeds", c.eval.seeds),
      DWSD_FIELD("eval", "latency_images", c.eval.latency_images),
  };
  return table;
}

#undef DWSD_FIELD

}  // namespace

void AppConfig::sync() {
  teacher.num_classes = data.scene.num_classes;
  student.num_classes = data.scene.num_classes;
  data.proposals.top_n = teacher.top_n;
  data.scene.validate();
  distill.validate();
  if (teacher.image_size != data.scene.image_size || student.image_size != data.scene.image_size) {
    throw ConfigError("teacher.image_size, student.image_size and data.image_size must agree");
  }
  if (teacher.top_n == 0) throw ConfigError("teacher.top_n must be >= 1");
  if (!(teacher.nms_thresh > 0 && teacher.nms_thresh < 1)) throw ConfigError("teacher.nms_thresh must lie in (0, 1)");
  if (eval.seeds == 0) throw ConfigError("eval.seeds must be >= 1");
  if (eval.top_k == 0 || eval.top_k > data.scene.num_classes) throw ConfigError("eval.top_k must lie in [1, num_classes]");
  if (!student.teacher_channels.empty() && student.teacher_channels != teacher.conv_channels) {
    throw ConfigError("student.teacher_channels must equal teacher.conv_channels when set");
  }
  student.teacher_channels = teacher.conv_channels;
  if (student.conv_channels.size() != teacher.conv_channels.size()) {
    throw ConfigError("student and teacher need the same number of conv blocks");
  }
}

AppConfig parse_config(std::string_view text) {
  AppConfig config;
  std::string section;
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string_view::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      static const std::vector<std::string> known{"teacher", "student", "distill", "data", "eval"};
      if (std::find(known.begin(), known.end(), section) == known.end()) {
        throw ConfigError("line " + std::to_string(line_no) + ": unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' outside any section");
    }
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(),
                           [&](const Field& f) { return f.section == section && f.key == key; });
    if (it == table.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + section + "." + key + "'");
    }
    try {
      it->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + section + "." + key + "': " + e.what());
    }
  }
  config.sync();
  return config;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string render_config(const AppConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) out += '\n';
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(config) + "\n";
  }
  return out;
}

std::string to_json(const TeacherConfig& c) {
  nlohmann::ordered_json j{{"num_classes", c.num_classes}, {"image_size", c.image_size},
                           {"conv_channels", c.conv_channels}, {"fc_width", c.fc_width},
                           {"roi_out", c.roi_out}, {"top_n", c.top_n}, {"nms_thresh", c.nms_thresh}};
  return j.dump();
}

std::string to_json(const StudentConfig& c) {
  nlohmann::ordered_json j{{"num_classes", c.num_classes}, {"image_size", c.image_size},
                           {"conv_channels", c.conv_channels}, {"fc_width", c.fc_width},
                           {"teacher_channels", c.teacher_channels}};
  return j.dump();
}

TeacherConfig teacher_config_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    TeacherConfig c;
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
    c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    c.fc_width = j.at("fc_width").get<std::size_t>();
    c.roi_out = j.at("roi_out").get<std::size_t>();
    c.top_n = j.at("top_n").get<std::size_t>();
    c.nms_thresh = j.at("nms_thresh").get<double>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad teacher config: ") + e.what());
  }
}

StudentConfig student_config_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    StudentConfig c;
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
    c.conv_channels = j.at("conv_channels").get<std::vector<std::size_t>>();
    c.fc_width = j.at("fc_width").get<std::size_t>();
    c.teacher_channels = j.at("teacher_channels").get<std::vector<std::size_t>>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad student config: ") + e.what());
  }
}

}  // namespace distillwsd
