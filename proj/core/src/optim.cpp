#include "distillwsd/optim.hpp"

#include <algorithm>

namespace distillwsd {

template <typename T>
void Sgd<T>::add_group(std::vector<Parameter<T>*> params, bool decay, std::optional<T> min_value) {
  for (Parameter<T>* p : params) {
    slots_.push_back(Slot{p, Tensor<T>(p->value.shape()), decay, min_value});
  }
}

template <typename T>
void Sgd<T>::step() {
  const T lr = static_cast<T>(options_.lr);
  const T mu = static_cast<T>(options_.momentum);
  const T wd = static_cast<T>(options_.weight_decay);
  for (Slot& slot : slots_) {
    Parameter<T>& p = *slot.param;
    if (p.frozen) continue;
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
    const T decay = slot.decay ? wd : T(0);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T g = p.grad[i] + decay * p.value[i];
      slot.velocity[i] = mu * slot.velocity[i] - lr * g;
      p.value[i] += slot.velocity[i];
      if (slot.min_value) p.value[i] = std::max(p.value[i], *slot.min_value);
    }
  }
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (Slot& slot : slots_) slot.param->zero_grad();
}

template class Sgd<float>;
template class Sgd<double>;

}  // namespace distillwsd
