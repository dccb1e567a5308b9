#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "distillwsd/ops.hpp"

namespace distillwsd {

using Rng = std::mt19937_64;

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
void xavier_uniform(Tensor<T>& tensor, std::size_t fan_in, std::size_t fan_out, Rng& rng);

template <typename T>
struct Dense {
  Parameter<T> weight;  // out × in
  Parameter<T> bias;    // out

  Dense() = default;
  Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng);

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) {
    return linear(x, tape.parameter(weight), tape.parameter(bias));
  }
  void reinitialize(Rng& rng);
};

template <typename T>
struct Conv {
  Parameter<T> weight;  // out × in × k × k
  Parameter<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv() = default;
  Conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
       std::size_t pad_, Rng& rng);

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) {
    return conv2d(x, tape.parameter(weight), tape.parameter(bias), stride, pad);
  }
};

/// Stack of [3×3 conv, ReLU, 2×2 max-pool] blocks named conv1, conv2, ...
template <typename T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const std::string& prefix, std::size_t in_channels,
           const std::vector<std::size_t>& channels, Rng& rng);

  /// Output of every block, in order. The last entry is F_conv.
  std::vector<Var<T>> forward(Tape<T>& tape, const Var<T>& images);

  std::vector<Parameter<T>*> parameters();
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  std::size_t out_channels(std::size_t block) const { return channels_.at(block); }
  const std::vector<std::size_t>& channels() const noexcept { return channels_; }
  /// Spatial size of block `block`'s output for a square input of `input_size`.
  static std::size_t output_size(std::size_t input_size, std::size_t block);

  /// Block index for a layer name such as "conv3"; throws ConfigError otherwise.
  std::size_t block_index(const std::string& layer) const;
  static std::string block_name(std::size_t block) { return "conv" + std::to_string(block + 1); }

 private:
  std::vector<Conv<T>> blocks_;
  std::vector<std::size_t> channels_;
};

/// Copies every value of `src` into the same-named parameters of `dst`.
template <typename T>
void copy_parameters(const std::vector<Parameter<T>*>& src, const std::vector<Parameter<T>*>& dst);

}  // namespace distillwsd
