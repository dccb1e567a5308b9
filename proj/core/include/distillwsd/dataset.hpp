#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "distillwsd/image.hpp"
#include "distillwsd/regions.hpp"

namespace distillwsd {

/// One image with its image-level multi-hot labels (length K). No boxes.
struct Example {
  std::string id;
  Image image;
  std::vector<std::uint8_t> labels;
};

/// Examples plus their (deterministic) proposal sets, aligned by index.
struct Dataset {
  std::size_t num_classes = 0;
  std::vector<Example> examples;
  std::vector<ProposalSet> proposals;

  std::size_t size() const noexcept { return examples.size(); }
  bool empty() const noexcept { return examples.empty(); }
};

/// Fills `dataset.proposals` for every example.
void attach_proposals(Dataset& dataset, const ProposalConfig& cfg);

/// Multi-hot label matrix N×K for a list of example indices.
template <typename T>
Tensor<T> label_batch(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace distillwsd
