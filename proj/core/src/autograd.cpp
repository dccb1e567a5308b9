#include "distillwsd/autograd.hpp"

namespace distillwsd {

template <typename T>
void Tape<T>::check_owner(const Var<T>& v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("variable does not belong to this tape");
  }
}

template <typename T>
Var<T> Tape<T>::push(Node node) {
  if (consumed_) throw StateError("tape already swept by backward(); call reset() first");
  if (!node.value.all_finite()) {
    throw NumericError("non-finite value produced on tape (shape " +
                       shape_str(node.value.shape()) + ")");
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& param) {
  Node node;
  node.value = param.value;
  node.requires_grad = !param.frozen;
  node.param = param.frozen ? nullptr : &param;
  return push(std::move(node));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (const auto& in : inputs) {
    check_owner(in);
    if (nodes_[in.id_].requires_grad) node.requires_grad = true;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

template <typename T>
const Tensor<T>& Tape<T>::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  return node.grad.shape() == node.value.shape() && !node.grad.empty() ? node.grad : empty_grad_;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.size() != node.value.size() || node.grad.shape() != node.value.shape()) {
    node.grad = Tensor<T>(node.value.shape());
  }
  return node.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& loss) {
  check_owner(loss);
  if (consumed_) throw StateError("backward() called twice on the same tape without reset()");
  if (loss.value().size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!nodes_[loss.id_].requires_grad) return;

  grad_buffer(loss.id_)[0] = T(1);
  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, node.grad);
    if (node.param != nullptr) {
      auto& dst = node.param->grad;
      if (dst.shape() != node.value.shape()) dst = Tensor<T>(node.value.shape());
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += node.grad[j];
    }
  }
}

template <typename T>
void Tape<T>::reset() {
  nodes_.clear();
  consumed_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace distillwsd
