#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "distillwsd/clsnet.hpp"
#include "distillwsd/datagen.hpp"
#include "distillwsd/wsdnet.hpp"

namespace fixture {

// Small rendered split with proposals attached.
inline distillwsd::Dataset tiny_dataset(std::size_t n, std::size_t classes, std::size_t image_size,
                                        std::size_t top_n, std::uint64_t seed = 1) {
  distillwsd::SceneSpec spec;
  spec.num_classes = classes;
  spec.image_size = image_size;
  spec.seed = seed;
  spec.max_objects = std::min(spec.max_objects, classes);
  spec.min_objects = std::min(spec.min_objects, spec.max_objects);
  distillwsd::Dataset data = distillwsd::generate_split(spec, {n, 0, 0}, "train");
  distillwsd::ProposalConfig cfg;
  cfg.top_n = top_n;
  distillwsd::attach_proposals(data, cfg);
  return data;
}

inline distillwsd::TeacherConfig micro_teacher(std::size_t classes = 3, std::size_t top_n = 3) {
  distillwsd::TeacherConfig c;
  c.num_classes = classes;
  c.image_size = 16;
  c.conv_channels = {2, 3};
  c.fc_width = 4;
  c.roi_out = 2;
  c.top_n = top_n;
  return c;
}

inline distillwsd::StudentConfig micro_student(std::size_t classes = 3) {
  distillwsd::StudentConfig c;
  c.num_classes = classes;
  c.image_size = 16;
  c.conv_channels = {2, 3};
  c.fc_width = 4;
  return c;
}

// Redraws every entry uniformly in [-scale, scale]. Zero biases leave preactivations
// exactly on the ReLU kink over flat backgrounds, which breaks finite differences.
inline void randomize(const std::vector<distillwsd::Parameter<double>*>& params, std::uint64_t seed,
                      double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto* p : params)
    for (auto& v : p->value.values()) v = u(rng);
}

}  // namespace fixture
