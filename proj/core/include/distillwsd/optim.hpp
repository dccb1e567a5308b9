#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "distillwsd/autograd.hpp"

namespace distillwsd {

struct SgdOptions {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
};

/// Momentum SGD in the Caffe form: v <- mu*v - lr*(g + wd*w); w <- w + v.
/// Parameters are registered in groups; a group can skip weight decay and carry a lower
/// bound applied after every step (used for temperatures).
template <typename T>
class Sgd {
 public:
  explicit Sgd(SgdOptions options) : options_(options) {}

  void add_group(std::vector<Parameter<T>*> params, bool decay = true,
                 std::optional<T> min_value = std::nullopt);

  void step();
  void zero_grad();

  double lr() const noexcept { return options_.lr; }
  void set_lr(double lr) noexcept { options_.lr = lr; }

 private:
  struct Slot {
    Parameter<T>* param;
    Tensor<T> velocity;
    bool decay;
    std::optional<T> min_value;
  };

  SgdOptions options_;
  std::vector<Slot> slots_;
};

extern template class Sgd<float>;
extern template class Sgd<double>;

}  // namespace distillwsd
