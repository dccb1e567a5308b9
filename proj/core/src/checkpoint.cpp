#include "distillwsd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "distillwsd/error.hpp"

namespace distillwsd {
namespace {

constexpr std::string_view kMagic = "DWSDCKPT";

// Values are stored little-endian; big-endian hosts reverse each element.
void to_little_endian(std::uint8_t* data, std::size_t count, std::size_t width) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < count; ++i) std::reverse(data + i * width, data + (i + 1) * width);
  } else {
    (void)data, (void)count, (void)width;
  }
}

std::string u64_le(std::uint64_t v) {
  std::string out(8, '\0');
  for (int i = 0; i < 8; ++i) out[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  return out;
}

std::uint64_t read_u64_le(std::string_view bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes[i])) << (8 * i);
  return v;
}

}  // namespace

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
TensorRecord make_record(const std::string& name, const Tensor<T>& tensor) {
  TensorRecord r{name, tensor.shape(), dtype_of<T>(), {}};
  r.bytes.resize(tensor.size() * sizeof(T));
  if (!r.bytes.empty()) std::memcpy(r.bytes.data(), tensor.data(), r.bytes.size());
  to_little_endian(r.bytes.data(), tensor.size(), sizeof(T));
  return r;
}

template <typename T>
Tensor<T> record_tensor(const TensorRecord& record) {
  const std::size_t n = shape_numel(record.shape);
  if (record.bytes.size() != n * dtype_size(record.dtype)) {
    throw ParseError(0, "tensor '" + record.name + "' has " + std::to_string(record.bytes.size()) +
                            " bytes, expected " + std::to_string(n * dtype_size(record.dtype)));
  }
  std::vector<std::uint8_t> raw = record.bytes;
  to_little_endian(raw.data(), n, dtype_size(record.dtype));
  std::vector<T> values(n);
  if (record.dtype == DType::Float32) {
    std::vector<float> tmp(n);
    if (n > 0) std::memcpy(tmp.data(), raw.data(), raw.size());
    std::transform(tmp.begin(), tmp.end(), values.begin(), [](float v) { return static_cast<T>(v); });
  } else {
    std::vector<double> tmp(n);
    if (n > 0) std::memcpy(tmp.data(), raw.data(), raw.size());
    std::transform(tmp.begin(), tmp.end(), values.begin(), [](double v) { return static_cast<T>(v); });
  }
  return Tensor<T>(record.shape, std::move(values));
}

template <typename T>
Checkpoint make_checkpoint(std::string model_kind, std::string config_json,
                           const std::vector<Parameter<T>*>& params) {
  Checkpoint ckpt{std::move(model_kind), std::move(config_json), {}};
  for (const auto* p : params) {
    if (ckpt.find(p->name) != nullptr) throw ContractError("duplicate parameter name " + p->name);
    ckpt.tensors.push_back(make_record(p->name, p->value));
  }
  return ckpt;
}

template <typename T>
void restore_parameters(const Checkpoint& ckpt, const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) {
    const TensorRecord* r = ckpt.find(p->name);
    if (r == nullptr) throw StateError("checkpoint has no tensor '" + p->name + "'");
    if (r->shape != p->value.shape()) {
      throw DimensionError("checkpoint tensor '" + p->name + "' has shape " + shape_str(r->shape) +
                           ", model expects " + shape_str(p->value.shape()));
    }
    p->value = record_tensor<T>(*r);
    p->zero_grad();
  }
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["format_version"] = Checkpoint::kFormatVersion;
  header["model_kind"] = ckpt.model_kind;
  header["config"] = nlohmann::ordered_json::parse(ckpt.config_json.empty() ? "{}" : ckpt.config_json);
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    table.push_back({{"name", t.name},
                     {"shape", t.shape},
                     {"dtype", std::string(dtype_name(t.dtype))},
                     {"byte_offset", offset}});
    offset += t.bytes.size();
  }
  header["tensors"] = table;
  const std::string text = header.dump();
  std::string out;
  out.reserve(kMagic.size() + 8 + text.size() + offset);
  out += kMagic;
  out += u64_le(text.size());
  out += text;
  for (const auto& t : ckpt.tensors) out.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw ParseError(0, "not a checkpoint (bad magic)");
  }
  const std::uint64_t header_len = read_u64_le(bytes.substr(kMagic.size(), 8));
  const std::size_t body_start = kMagic.size() + 8 + header_len;
  if (header_len > bytes.size() || body_start > bytes.size()) throw ParseError(0, "truncated checkpoint header");
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(kMagic.size() + 8, header_len));
    const int version = header.at("format_version").get<int>();
    if (version != Checkpoint::kFormatVersion) {
      throw ParseError(0, "unsupported checkpoint format_version " + std::to_string(version));
    }
    ckpt.model_kind = header.at("model_kind").get<std::string>();
    ckpt.config_json = header.at("config").dump();
    std::uint64_t expected = 0;
    for (const auto& entry : header.at("tensors")) {
      TensorRecord r;
      r.name = entry.at("name").get<std::string>();
      r.shape = entry.at("shape").get<Shape>();
      r.dtype = parse_dtype(entry.at("dtype").get<std::string>());
      const auto offset = entry.at("byte_offset").get<std::uint64_t>();
      if (offset != expected) throw ParseError(0, "tensor '" + r.name + "' offset is not contiguous");
      const std::uint64_t len = shape_numel(r.shape) * dtype_size(r.dtype);
      if (body_start + offset + len > bytes.size()) throw ParseError(0, "truncated tensor '" + r.name + "'");
      const auto* src = reinterpret_cast<const std::uint8_t*>(bytes.data() + body_start + offset);
      r.bytes.assign(src, src + len);
      expected += len;
      ckpt.tensors.push_back(std::move(r));
    }
    if (body_start + expected != bytes.size()) throw ParseError(0, "trailing bytes after the last tensor");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(0, std::string("bad checkpoint header: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write checkpoint " + path.string());
  const std::string bytes = encode_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw InputError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw StateError("checkpoint not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_checkpoint(buf.str());
}

template TensorRecord make_record(const std::string&, const Tensor<float>&);
template TensorRecord make_record(const std::string&, const Tensor<double>&);
template Tensor<float> record_tensor(const TensorRecord&);
template Tensor<double> record_tensor(const TensorRecord&);
template Checkpoint make_checkpoint(std::string, std::string, const std::vector<Parameter<float>*>&);
template Checkpoint make_checkpoint(std::string, std::string, const std::vector<Parameter<double>*>&);
template void restore_parameters(const Checkpoint&, const std::vector<Parameter<float>*>&);
template void restore_parameters(const Checkpoint&, const std::vector<Parameter<double>*>&);

}  // namespace distillwsd
