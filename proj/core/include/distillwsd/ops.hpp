#pragma once

#include <cstddef>
#include <span>

#include "distillwsd/autograd.hpp"

namespace distillwsd {

// Elementwise arithmetic. Operands must have identical shapes.
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

/// Sum of all entries, as a scalar.
template <typename T>
Var<T> sum(const Var<T>& x);
/// Sum over one axis; the axis is removed from the shape.
template <typename T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis);

/// NCHW convolution with an OIkk weight and length-O bias.
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad);

/// Max pooling over k×k windows of an NCHW tensor; gradient goes to the first argmax.
template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t k, std::size_t stride);

/// out[n,k] = sum_d input[n,d] * weight[k,d] + bias[k].
template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias);

/// x / t with t broadcast along `axis` (t has length x.dim(axis)). This is the scaling node
/// whose derivatives are dL/dx = g / t and dL/dt = sum g * (-x / t^2).
template <typename T>
Var<T> divide_by_temperature(const Var<T>& x, const Var<T>& temps, std::size_t axis);

/// Softmax along `axis` with max subtraction.
template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

/// Which axis of an (N×)R×K logit tensor a tempered softmax normalizes over.
enum class SoftmaxAxis {
  Class,     ///< over the K classes of each proposal; temps have length K
  Proposal,  ///< over the R proposals of each class; temps have length R
};

/// softmax(M / t) along the chosen axis. Accepts R×K or N×R×K logits.
template <typename T>
Var<T> tempered_softmax(const Var<T>& logits, const Var<T>& temps, SoftmaxAxis axis);

/// 1 / (1 + exp(-m / t)) with t broadcast along the last axis of m.
template <typename T>
Var<T> tempered_sigmoid(const Var<T>& logits, const Var<T>& temps);

/// sum((a - b)^2) as a scalar.
template <typename T>
Var<T> squared_error_sum(const Var<T>& a, const Var<T>& b);

/// -(1/N) sum_n sum_k [y log p + (1 - y) log(1 - p)] with p clamped to [eps, 1 - eps].
/// Clamped entries pass no gradient. `probs` is N×K (or K, treated as N = 1).
template <typename T>
Var<T> binary_cross_entropy(const Var<T>& probs, const Tensor<T>& targets, T eps);

/// One pooled region: a window of feature cells [y0, y1) × [x0, x1) on image `image` of an
/// NCHW map, with a multiplicative weight applied to every pooled value.
struct RoiWindow {
  std::size_t image = 0;
  std::size_t y0 = 0, y1 = 1;
  std::size_t x0 = 0, x1 = 1;
  double weight = 1.0;
};

/// Max-pools each window into out_h × out_w bins (floor starts, ceil ends) and scales the
/// result by the window weight. Output is R×C×out_h×out_w in window order.
template <typename T>
Var<T> roi_max_pool(const Var<T>& features, std::span<const RoiWindow> windows, std::size_t out_h,
                    std::size_t out_w);

/// Tape-free softmax along `axis`.
template <typename T>
Tensor<T> softmax_tensor(const Tensor<T>& x, std::size_t axis);

}  // namespace distillwsd
