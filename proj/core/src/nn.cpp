#include "distillwsd/nn.hpp"

#include <cmath>
#include <map>

namespace distillwsd {

template <typename T>
void xavier_uniform(Tensor<T>& tensor, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : tensor.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
Dense<T>::Dense(const std::string& name, std::size_t in, std::size_t out, Rng& rng)
    : weight(name + ".weight", Tensor<T>({out, in})), bias(name + ".bias", Tensor<T>({out})) {
  reinitialize(rng);
}

template <typename T>
void Dense<T>::reinitialize(Rng& rng) {
  xavier_uniform(weight.value, weight.value.dim(1), weight.value.dim(0), rng);
  bias.value.fill(T(0));
  weight.zero_grad();
  bias.zero_grad();
}

template <typename T>
Conv<T>::Conv(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel,
              std::size_t pad_, Rng& rng)
    : weight(name + ".weight", Tensor<T>({out, in, kernel, kernel})),
      bias(name + ".bias", Tensor<T>({out})),
      pad(pad_) {
  xavier_uniform(weight.value, in * kernel * kernel, out * kernel * kernel, rng);
}

template <typename T>
Backbone<T>::Backbone(const std::string& prefix, std::size_t in_channels,
                      const std::vector<std::size_t>& channels, Rng& rng)
    : channels_(channels) {
  if (channels.empty()) throw ConfigError("backbone needs at least one conv block");
  std::size_t in = in_channels;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    blocks_.emplace_back(prefix + "." + block_name(i), in, channels[i], 3, 1, rng);
    in = channels[i];
  }
}

template <typename T>
std::vector<Var<T>> Backbone<T>::forward(Tape<T>& tape, const Var<T>& images) {
  std::vector<Var<T>> outs;
  Var<T> x = images;
  for (auto& block : blocks_) {
    x = max_pool2d(relu(block(tape, x)), 2, 2);
    outs.push_back(x);
  }
  return outs;
}

template <typename T>
std::vector<Parameter<T>*> Backbone<T>::parameters() {
  std::vector<Parameter<T>*> params;
  for (auto& block : blocks_) {
    params.push_back(&block.weight);
    params.push_back(&block.bias);
  }
  return params;
}

template <typename T>
std::size_t Backbone<T>::output_size(std::size_t input_size, std::size_t block) {
  std::size_t size = input_size;
  for (std::size_t i = 0; i <= block; ++i) size /= 2;
  return size;
}

template <typename T>
std::size_t Backbone<T>::block_index(const std::string& layer) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (block_name(i) == layer) return i;
  }
  throw ConfigError("unknown conv layer '" + layer + "'");
}

template <typename T>
void copy_parameters(const std::vector<Parameter<T>*>& src, const std::vector<Parameter<T>*>& dst) {
  std::map<std::string, const Parameter<T>*> by_name;
  for (const auto* p : src) by_name[p->name] = p;
  for (auto* p : dst) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ContractError("copy_parameters: no source for " + p->name);
    if (it->second->value.shape() != p->value.shape()) {
      throw DimensionError("copy_parameters: shape mismatch for " + p->name);
    }
    p->value = it->second->value;
  }
}

template void xavier_uniform(Tensor<float>&, std::size_t, std::size_t, Rng&);
template void xavier_uniform(Tensor<double>&, std::size_t, std::size_t, Rng&);
template struct Dense<float>;
template struct Dense<double>;
template struct Conv<float>;
template struct Conv<double>;
template class Backbone<float>;
template class Backbone<double>;
template void copy_parameters(const std::vector<Parameter<float>*>&, const std::vector<Parameter<float>*>&);
template void copy_parameters(const std::vector<Parameter<double>*>&, const std::vector<Parameter<double>*>&);

}  // namespace distillwsd
