#include "distillwsd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <vector>

namespace distillwsd {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                         shape_str(b));
  }
}

template <typename T>
void require_positive(const Tensor<T>& temps, const char* op) {
  for (T t : temps.values()) {
    if (!(t > T(0))) throw DomainError(std::string(op) + ": temperatures must be positive");
  }
}

template <typename T>
void accumulate(Tape<T>& tape, std::size_t id, const Tensor<T>& delta) {
  if (!tape.requires_grad(id)) return;
  auto& g = tape.grad_buffer(id);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Unfolds one CHW image into a (C*k*k) × (OH*OW) row-major matrix.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t height, std::size_t width,
            std::size_t k, std::size_t stride, std::size_t pad, std::size_t out_h,
            std::size_t out_w, T* cols) {
  const std::size_t ohw = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * height * width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = cols + ((c * k + ki) * k + kj) * ohw;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                          static_cast<std::ptrdiff_t>(pad);
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * width;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t height, std::size_t width,
                std::size_t k, std::size_t stride, std::size_t pad, std::size_t out_h,
                std::size_t out_w, T* img) {
  const std::size_t ohw = out_h * out_w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * height * width;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = cols + ((c * k + ki) * k + kj) * ohw;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ki) -
                          static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
          T* dst = plane + static_cast<std::size_t>(iy) * width;
          const T* src = row + oy * out_w;
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kj) -
                            static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(width)) continue;
            dst[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax_tensor(const Tensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.len * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, x[base + j * s.inner]);
      T total = 0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const T e = std::exp(x[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= total;
    }
  }
  return out;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& tape, const Tensor<T>& g) {
    accumulate(tape, ia, g);
    accumulate(tape, ib, g);
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& tape, const Tensor<T>& g) {
    accumulate(tape, ia, g);
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad_buffer(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& tape, const Tensor<T>& g) {
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad_buffer(ia);
      const auto& bv = tape.value(ib);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad_buffer(ib);
      const auto& av = tape.value(ia);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, factor](Tape<T>& tape, const Tensor<T>& g) {
    auto& ga = tape.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<T>& tape, const Tensor<T>& g) {
    const auto& xv = tape.value(ix);
    auto& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      if (xv[i] > T(0)) gx[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v = stable_sigmoid(v);
  const std::size_t ix = x.id();
  auto y = std::make_shared<Tensor<T>>(out);
  return x.tape().record(std::move(out), {x}, [ix, y](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * (*y)[i] * (T(1) - (*y)[i]);
  });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  const std::size_t ix = x.id();
  return x.tape().record(Tensor<T>::scalar(total), {x}, [ix](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad_buffer(ix);
    for (auto& v : gx.values()) v += g[0];
  });
}

template <typename T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(out_shape);
  const auto& xv = x.value();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.len; ++j) {
      const T* src = xv.data() + (o * s.len + j) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  }
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, s](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad_buffer(ix);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.len; ++j) {
        T* dst = gx.data() + (o * s.len + j) * s.inner;
        const T* src = g.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t pad) {
  const auto& x = input.value();
  const auto& w = weight.value();
  if (x.rank() != 4 || w.rank() != 4) throw DimensionError("conv2d expects NCHW input, OIkk weight");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c) {
    throw DimensionError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                         std::to_string(w.dim(1)));
  }
  if (w.dim(3) != k) throw DimensionError("conv2d: only square kernels are supported");
  if (bias.value().size() != o) throw DimensionError("conv2d: bias length must equal out channels");
  if (h + 2 * pad < k || wd + 2 * pad < k) throw DimensionError("conv2d: kernel larger than input");
  if (!x.all_finite()) throw NumericError("conv2d: non-finite input");

  const std::size_t oh = (h + 2 * pad - k) / stride + 1;
  const std::size_t ow = (wd + 2 * pad - k) / stride + 1;
  const std::size_t ckk = c * k * k, ohw = oh * ow;
  const bool keep_cols = weight.requires_grad();

  Tensor<T> out({n, o, oh, ow});
  auto cols = std::make_shared<std::vector<T>>(keep_cols ? n * ckk * ohw : ckk * ohw);
  ConstMatMap<T> wm(w.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk));
  const auto& bv = bias.value();
  for (std::size_t b = 0; b < n; ++b) {
    T* col = cols->data() + (keep_cols ? b * ckk * ohw : 0);
    im2col(x.data() + b * c * h * wd, c, h, wd, k, stride, pad, oh, ow, col);
    MatMap<T> ym(out.data() + b * o * ohw, static_cast<Eigen::Index>(o),
                 static_cast<Eigen::Index>(ohw));
    ConstMatMap<T> cm(col, static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(ohw));
    ym.noalias() = wm * cm;
    for (std::size_t oc = 0; oc < o; ++oc) ym.row(static_cast<Eigen::Index>(oc)).array() += bv[oc];
  }
  if (!keep_cols) cols.reset();

  const std::size_t ix = input.id(), iw = weight.id(), ib = bias.id();
  return input.tape().record(
      std::move(out), {input, weight, bias},
      [=](Tape<T>& tape, const Tensor<T>& g) {
        const auto& wv = tape.value(iw);
        ConstMatMap<T> wmat(wv.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk));
        if (tape.requires_grad(ib)) {
          auto& gb = tape.grad_buffer(ib);
          for (std::size_t b = 0; b < n; ++b) {
            ConstMatMap<T> gm(g.data() + b * o * ohw, static_cast<Eigen::Index>(o),
                              static_cast<Eigen::Index>(ohw));
            for (std::size_t oc = 0; oc < o; ++oc) gb[oc] += gm.row(static_cast<Eigen::Index>(oc)).sum();
          }
        }
        if (tape.requires_grad(iw)) {
          auto& gw = tape.grad_buffer(iw);
          MatMap<T> gwm(gw.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(ckk));
          for (std::size_t b = 0; b < n; ++b) {
            ConstMatMap<T> gm(g.data() + b * o * ohw, static_cast<Eigen::Index>(o),
                              static_cast<Eigen::Index>(ohw));
            ConstMatMap<T> cm(cols->data() + b * ckk * ohw, static_cast<Eigen::Index>(ckk),
                              static_cast<Eigen::Index>(ohw));
            gwm.noalias() += gm * cm.transpose();
          }
        }
        if (tape.requires_grad(ix)) {
          auto& gx = tape.grad_buffer(ix);
          RowMat<T> dcols(static_cast<Eigen::Index>(ckk), static_cast<Eigen::Index>(ohw));
          for (std::size_t b = 0; b < n; ++b) {
            ConstMatMap<T> gm(g.data() + b * o * ohw, static_cast<Eigen::Index>(o),
                              static_cast<Eigen::Index>(ohw));
            dcols.noalias() = wmat.transpose() * gm;
            col2im_add(dcols.data(), c, h, wd, k, stride, pad, oh, ow, gx.data() + b * c * h * wd);
          }
        }
      });
}

template <typename T>
Var<T> max_pool2d(const Var<T>& input, std::size_t k, std::size_t stride) {
  const auto& x = input.value();
  if (x.rank() != 4) throw DimensionError("max_pool2d expects NCHW input");
  if (k < 1 || stride < 1) throw ContractError("max_pool2d: k and stride must be >= 1");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k > h || k > w) throw DimensionError("max_pool2d: window exceeds input");
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;

  Tensor<T> out({n, c, oh, ow});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  std::size_t idx = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const T* src = x.data() + plane * h * w;
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox, ++idx) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t dy = 0; dy < k; ++dy) {
          for (std::size_t dx = 0; dx < k; ++dx) {
            const std::size_t cand = (oy * stride + dy) * w + ox * stride + dx;
            if (src[cand] > src[best]) best = cand;
          }
        }
        out[idx] = src[best];
        (*argmax)[idx] = static_cast<std::uint32_t>(base + best);
      }
    }
  }
  const std::size_t ix = input.id();
  return input.tape().record(std::move(out), {input}, [ix, argmax](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  });
}

template <typename T>
Var<T> linear(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  const auto& x = input.value();
  const auto& w = weight.value();
  if (x.rank() != 2 || w.rank() != 2) throw DimensionError("linear expects N×D input and K×D weight");
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  if (w.dim(1) != d) {
    throw DimensionError("linear: inner dimensions disagree (" + std::to_string(d) + " vs " +
                         std::to_string(w.dim(1)) + ")");
  }
  if (bias.value().size() != k) throw DimensionError("linear: bias length must equal K");

  Tensor<T> out({n, k});
  {
    ConstMatMap<T> xm(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    ConstMatMap<T> wm(w.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
    MatMap<T> ym(out.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    ym.noalias() = xm * wm.transpose();
    const auto& bv = bias.value();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] += bv[j];
    }
  }
  const std::size_t ix = input.id(), iw = weight.id(), ib = bias.id();
  return input.tape().record(std::move(out), {input, weight, bias}, [=](Tape<T>& tape, const Tensor<T>& g) {
    ConstMatMap<T> gm(g.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad_buffer(ib);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t j = 0; j < k; ++j) gb[j] += g[r * k + j];
      }
    }
    if (tape.requires_grad(iw)) {
      const auto& xv = tape.value(ix);
      ConstMatMap<T> xm(xv.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
      auto& gw = tape.grad_buffer(iw);
      MatMap<T> gwm(gw.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
      gwm.noalias() += gm.transpose() * xm;
    }
    if (tape.requires_grad(ix)) {
      const auto& wv = tape.value(iw);
      ConstMatMap<T> wm(wv.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
      auto& gx = tape.grad_buffer(ix);
      MatMap<T> gxm(gx.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
      gxm.noalias() += gm * wm;
    }
  });
}

template <typename T>
Var<T> divide_by_temperature(const Var<T>& x, const Var<T>& temps, std::size_t axis) {
  const auto& xv = x.value();
  const auto& tv = temps.value();
  const AxisSplit s = split_axis(xv.shape(), axis);
  if (tv.size() != s.len) {
    throw DimensionError("temperature length " + std::to_string(tv.size()) +
                         " does not match axis length " + std::to_string(s.len));
  }
  require_positive(tv, "divide_by_temperature");
  Tensor<T> out(xv.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t j = 0; j < s.len; ++j) {
      const std::size_t base = (o * s.len + j) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) out[base + i] = xv[base + i] / tv[j];
    }
  }
  const std::size_t ix = x.id(), it = temps.id();
  return x.tape().record(std::move(out), {x, temps}, [ix, it, s](Tape<T>& tape, const Tensor<T>& g) {
    const auto& xv = tape.value(ix);
    const auto& tv = tape.value(it);
    const bool gx_on = tape.requires_grad(ix), gt_on = tape.requires_grad(it);
    Tensor<T>* gx = gx_on ? &tape.grad_buffer(ix) : nullptr;
    Tensor<T>* gt = gt_on ? &tape.grad_buffer(it) : nullptr;
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t j = 0; j < s.len; ++j) {
        const std::size_t base = (o * s.len + j) * s.inner;
        const T t = tv[j];
        for (std::size_t i = 0; i < s.inner; ++i) {
          const T gi = g[base + i];
          if (gx) (*gx)[base + i] += gi / t;
          if (gt) (*gt)[j] += gi * (-xv[base + i] / (t * t));
        }
      }
    }
  });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Tensor<T> out = softmax_tensor(x.value(), axis);
  auto y = std::make_shared<Tensor<T>>(out);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, s, y](Tape<T>& tape, const Tensor<T>& g) {
    auto& gx = tape.grad_buffer(ix);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.len * s.inner + i;
        T dot = 0;
        for (std::size_t j = 0; j < s.len; ++j) dot += g[base + j * s.inner] * (*y)[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t at = base + j * s.inner;
          gx[at] += (*y)[at] * (g[at] - dot);
        }
      }
    }
  });
}

template <typename T>
Var<T> tempered_softmax(const Var<T>& logits, const Var<T>& temps, SoftmaxAxis axis) {
  const std::size_t rank = logits.value().rank();
  if (rank != 2 && rank != 3) throw DimensionError("tempered_softmax expects R×K or N×R×K logits");
  require_positive(temps.value(), "tempered_softmax");
  const std::size_t ax = axis == SoftmaxAxis::Class ? rank - 1 : rank - 2;
  return softmax(divide_by_temperature(logits, temps, ax), ax);
}

template <typename T>
Var<T> tempered_sigmoid(const Var<T>& logits, const Var<T>& temps) {
  const std::size_t rank = logits.value().rank();
  if (rank == 0) throw DimensionError("tempered_sigmoid expects at least one axis");
  require_positive(temps.value(), "tempered_sigmoid");
  return sigmoid(divide_by_temperature(logits, temps, rank - 1));
}

template <typename T>
Var<T> squared_error_sum(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "squared_error_sum");
  const auto& av = a.value();
  const auto& bv = b.value();
  T total = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    total += d * d;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Tensor<T>::scalar(total), {a, b}, [ia, ib](Tape<T>& tape, const Tensor<T>& g) {
    const auto& av = tape.value(ia);
    const auto& bv = tape.value(ib);
    const T scale2 = T(2) * g[0];
    if (tape.requires_grad(ia)) {
      auto& ga = tape.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += scale2 * (av[i] - bv[i]);
    }
    if (tape.requires_grad(ib)) {
      auto& gb = tape.grad_buffer(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= scale2 * (av[i] - bv[i]);
    }
  });
}

template <typename T>
Var<T> binary_cross_entropy(const Var<T>& probs, const Tensor<T>& targets, T eps) {
  const auto& p = probs.value();
  require_same_shape(p.shape(), targets.shape(), "binary_cross_entropy");
  const std::size_t n = p.rank() >= 2 ? p.dim(0) : 1;
  if (n == 0) throw ContractError("binary_cross_entropy: empty batch");
  T total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T pc = std::clamp(p[i], eps, T(1) - eps);
    const T y = targets[i];
    total -= y * std::log(pc) + (T(1) - y) * std::log(T(1) - pc);
  }
  total /= static_cast<T>(n);
  const std::size_t ip = probs.id();
  auto y = std::make_shared<Tensor<T>>(targets);
  return probs.tape().record(Tensor<T>::scalar(total), {probs}, [ip, y, n, eps](Tape<T>& tape, const Tensor<T>& g) {
    const auto& pv = tape.value(ip);
    auto& gp = tape.grad_buffer(ip);
    const T inv_n = g[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      const T pi = pv[i];
      if (pi < eps || pi > T(1) - eps) continue;
      const T yi = (*y)[i];
      gp[i] -= inv_n * (yi / pi - (T(1) - yi) / (T(1) - pi));
    }
  });
}

template <typename T>
Var<T> roi_max_pool(const Var<T>& features, std::span<const RoiWindow> windows, std::size_t out_h,
                    std::size_t out_w) {
  const auto& f = features.value();
  if (f.rank() != 4) throw DimensionError("roi_max_pool expects N×C×H×W features");
  if (out_h < 1 || out_w < 1) throw ContractError("roi_max_pool: output bins must be >= 1");
  const std::size_t n = f.dim(0), c = f.dim(1), h = f.dim(2), w = f.dim(3);
  const std::size_t r = windows.size();
  Tensor<T> out({r, c, out_h, out_w});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  auto weights = std::make_shared<std::vector<T>>(r);
  std::size_t idx = 0;
  for (std::size_t ri = 0; ri < r; ++ri) {
    const RoiWindow& win = windows[ri];
    if (win.image >= n || win.y0 >= win.y1 || win.x0 >= win.x1 || win.y1 > h || win.x1 > w) {
      throw ContractError("roi_max_pool: window outside feature map");
    }
    (*weights)[ri] = static_cast<T>(win.weight);
    const std::size_t rh = win.y1 - win.y0, rw = win.x1 - win.x0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t plane = (win.image * c + ch) * h * w;
      const T* src = f.data() + plane;
      for (std::size_t by = 0; by < out_h; ++by) {
        const std::size_t ys = win.y0 + (by * rh) / out_h;
        const std::size_t ye = win.y0 + ((by + 1) * rh + out_h - 1) / out_h;
        for (std::size_t bx = 0; bx < out_w; ++bx, ++idx) {
          const std::size_t xs = win.x0 + (bx * rw) / out_w;
          const std::size_t xe = win.x0 + ((bx + 1) * rw + out_w - 1) / out_w;
          std::size_t best = ys * w + xs;
          for (std::size_t yy = ys; yy < ye; ++yy) {
            for (std::size_t xx = xs; xx < xe; ++xx) {
              if (src[yy * w + xx] > src[best]) best = yy * w + xx;
            }
          }
          out[idx] = (*weights)[ri] * src[best];
          (*argmax)[idx] = static_cast<std::uint32_t>(plane + best);
        }
      }
    }
  }
  const std::size_t ifeat = features.id();
  const std::size_t per_roi = c * out_h * out_w;
  return features.tape().record(std::move(out), {features}, [ifeat, argmax, weights, per_roi](Tape<T>& tape, const Tensor<T>& g) {
    auto& gf = tape.grad_buffer(ifeat);
    for (std::size_t i = 0; i < g.size(); ++i) gf[(*argmax)[i]] += (*weights)[i / per_roi] * g[i];
  });
}

#define DISTILLWSD_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> softmax_tensor(const Tensor<T>&, std::size_t);                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                           \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                           \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> scale(const Var<T>&, T);                                                     \
  template Var<T> relu(const Var<T>&);                                                         \
  template Var<T> sigmoid(const Var<T>&);                                                      \
  template Var<T> reshape(const Var<T>&, Shape);                                               \
  template Var<T> sum(const Var<T>&);                                                          \
  template Var<T> sum_axis(const Var<T>&, std::size_t);                                        \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t); \
  template Var<T> max_pool2d(const Var<T>&, std::size_t, std::size_t);                         \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                         \
  template Var<T> divide_by_temperature(const Var<T>&, const Var<T>&, std::size_t);            \
  template Var<T> softmax(const Var<T>&, std::size_t);                                         \
  template Var<T> tempered_softmax(const Var<T>&, const Var<T>&, SoftmaxAxis);                 \
  template Var<T> tempered_sigmoid(const Var<T>&, const Var<T>&);                              \
  template Var<T> squared_error_sum(const Var<T>&, const Var<T>&);                             \
  template Var<T> binary_cross_entropy(const Var<T>&, const Tensor<T>&, T);                    \
  template Var<T> roi_max_pool(const Var<T>&, std::span<const RoiWindow>, std::size_t, std::size_t);

DISTILLWSD_INSTANTIATE_OPS(float)
DISTILLWSD_INSTANTIATE_OPS(double)

#undef DISTILLWSD_INSTANTIATE_OPS

}  // namespace distillwsd
