#include "distillwsd/dataset.hpp"

namespace distillwsd {

void attach_proposals(Dataset& dataset, const ProposalConfig& cfg) {
  dataset.proposals.clear();
  dataset.proposals.reserve(dataset.examples.size());
  for (const auto& ex : dataset.examples) {
    dataset.proposals.push_back(generate_proposals(ex.image, cfg, ex.id));
  }
}

template <typename T>
Tensor<T> label_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  const std::size_t k = dataset.num_classes;
  Tensor<T> out({indices.size(), k});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& labels = dataset.examples.at(indices[i]).labels;
    if (labels.size() != k) throw ContractError("example label vector length differs from K");
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] = labels[c] ? T(1) : T(0);
  }
  return out;
}

template Tensor<float> label_batch<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> label_batch<double>(const Dataset&, std::span<const std::size_t>);

}  // namespace distillwsd
