#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "distillwsd/autograd.hpp"

namespace distillwsd {

/// One stored tensor: raw little-endian bytes plus its table entry.
struct TensorRecord {
  std::string name;
  Shape shape;
  DType dtype = DType::Float32;
  std::vector<std::uint8_t> bytes;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

/// On disk: the 8-byte magic "DWSDCKPT", a u64 little-endian header length, a JSON header
/// {format_version, model_kind, config, tensors: [{name, shape, dtype, byte_offset}]}, then
/// the tensor bodies back to back in table order.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  std::string model_kind;
  std::string config_json = "{}";
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

template <typename T>
TensorRecord make_record(const std::string& name, const Tensor<T>& tensor);

/// Decodes a record into dtype T, converting between float32 and float64 when needed.
template <typename T>
Tensor<T> record_tensor(const TensorRecord& record);

template <typename T>
Checkpoint make_checkpoint(std::string model_kind, std::string config_json,
                           const std::vector<Parameter<T>*>& params);

/// Copies same-named tensors into `params`. Missing names or shape mismatches throw.
template <typename T>
void restore_parameters(const Checkpoint& ckpt, const std::vector<Parameter<T>*>& params);

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws ParseError (line 0) on malformed input.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws StateError when the file does not exist.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace distillwsd
