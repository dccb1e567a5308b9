#pragma once

// Independent reference implementations used as test oracles. Nothing here calls into
// the library's numerical code; every routine is a direct loop over the definition.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "distillwsd/autograd.hpp"
#include "distillwsd/regions.hpp"

namespace oracle {

using distillwsd::Box;
using distillwsd::Parameter;
using distillwsd::Tensor;

// y[n,o,i,j] = b[o] + sum_c sum_u sum_v x[n,c,i*s+u-p,j*s+v-p] * w[o,c,u,v]
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                             std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t o = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  Tensor<double> y({n, o, oh, ow});
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long yy = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                const long xx = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd)) continue;
                acc += x.at({in, ic, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)}) *
                       w.at({oc, ic, u, v});
              }
          y.at({in, oc, i, j}) = acc;
        }
  return y;
}

inline Tensor<double> linear(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b) {
  const std::size_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  Tensor<double> y({n, k});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double acc = b[j];
      for (std::size_t e = 0; e < d; ++e) acc += x[i * d + e] * w[j * d + e];
      y[i * k + j] = acc;
    }
  return y;
}

inline Tensor<double> max_pool(const Tensor<double>& x, std::size_t k, std::size_t stride) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h - k) / stride + 1, ow = (w - k) / stride + 1;
  Tensor<double> y({n, c, oh, ow});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double m = -std::numeric_limits<double>::infinity();
          for (std::size_t u = 0; u < k; ++u)
            for (std::size_t v = 0; v < k; ++v) m = std::max(m, x.at({a, ch, i * stride + u, j * stride + v}));
          y.at({a, ch, i, j}) = m;
        }
  return y;
}

inline double sigmoid(double m, double t = 1.0) { return 1.0 / (1.0 + std::exp(-m / t)); }

// Row-wise (class) or column-wise (proposal) softmax of an R×K matrix, with each logit
// divided by the temperature of its index along the normalized axis.
inline std::vector<double> tempered_softmax(const std::vector<double>& m, std::size_t r, std::size_t k,
                                            const std::vector<double>& t, bool class_axis) {
  std::vector<double> out(r * k);
  if (class_axis) {
    for (std::size_t i = 0; i < r; ++i) {
      double z = 0;
      for (std::size_t j = 0; j < k; ++j) z += std::exp(m[i * k + j] / t[j]);
      for (std::size_t j = 0; j < k; ++j) out[i * k + j] = std::exp(m[i * k + j] / t[j]) / z;
    }
  } else {
    for (std::size_t j = 0; j < k; ++j) {
      double z = 0;
      for (std::size_t i = 0; i < r; ++i) z += std::exp(m[i * k + j] / t[i]);
      for (std::size_t i = 0; i < r; ++i) out[i * k + j] = std::exp(m[i * k + j] / t[i]) / z;
    }
  }
  return out;
}

// p'_k = sum_r softmax_class(Mc / tc)[r,k] * softmax_proposal(Md / td)[r,k]
inline std::vector<double> softened_teacher(const std::vector<double>& mc, const std::vector<double>& md,
                                            std::size_t r, std::size_t k, const std::vector<double>& tc,
                                            const std::vector<double>& td) {
  const auto sc = tempered_softmax(mc, r, k, tc, true);
  const auto sd = tempered_softmax(md, r, k, td, false);
  std::vector<double> p(k, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < k; ++j) p[j] += sc[i * k + j] * sd[i * k + j];
  return p;
}

inline double iou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// Quadratic greedy NMS: scan for the best alive box each round.
inline std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores, double thresh) {
  std::vector<bool> alive(boxes.size(), true);
  std::vector<std::size_t> keep;
  while (true) {
    std::size_t best = boxes.size();
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && (best == boxes.size() || scores[i] > scores[best])) best = i;
    }
    if (best == boxes.size()) break;
    keep.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      if (alive[i] && oracle::iou(boxes[best], boxes[i]) > thresh) alive[i] = false;
    }
  }
  return keep;
}

// AP without sorting: each positive's rank and the positives at or above it are counted
// directly under the (descending score, ascending index) order.
inline double average_precision(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  auto ahead = [&](std::size_t j, std::size_t i) { return s[j] > s[i] || (s[j] == s[i] && j < i); };
  // Terms are summed in rank order so the result is bit-comparable with a sorted scan.
  std::vector<std::pair<std::size_t, double>> terms;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (j != i && ahead(j, i)) {
        ++rank;
        if (y[j]) ++hits;
      }
    }
    terms.emplace_back(rank, static_cast<double>(hits) / static_cast<double>(rank));
  }
  if (terms.empty()) return -1.0;
  std::sort(terms.begin(), terms.end());
  double total = 0;
  for (const auto& [rank, term] : terms) total += term;
  return total / static_cast<double>(terms.size());
}

struct Confusion {
  double tp = 0, fp = 0, fn = 0;
};

inline double f1(const Confusion& c) {
  const double p = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double r = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

struct GradStats {
  // max |a - n| / max(|a|, |n|) over entries whose gap exceeds the absolute floor
  double rel = 0;
  // max |a - n| / max(|a|, |n|, floor) over all entries
  double strict = 0;
  double max_gap = 0;

  void merge(const GradStats& o) {
    rel = std::max(rel, o.rel);
    strict = std::max(strict, o.strict);
    max_gap = std::max(max_gap, o.max_gap);
  }
};

// Central-difference check of every entry of every parameter. `loss` must rebuild the
// forward pass from the current parameter values. With h = 1e-6 and a loss of order one,
// roundoff alone puts about 1e-10 into n, so tiny gradients fail `strict` by construction.
inline GradStats gradient_check(const std::vector<Parameter<double>*>& params,
                                const std::function<double(bool backward)>& loss, double h = 1e-6,
                                double floor = 1e-8) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  GradStats out;
  for (auto* p : params) {
    const Tensor<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss(false);
      p->value[i] = keep - h;
      const double down = loss(false);
      p->value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double gap = std::abs(analytic[i] - numeric);
      const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
      if (gap > floor) out.rel = std::max(out.rel, gap / scale);
      out.strict = std::max(out.strict, gap / std::max(scale, floor));
      out.max_gap = std::max(out.max_gap, gap);
    }
  }
  return out;
}

inline Tensor<double> random_tensor(distillwsd::Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

}  // namespace oracle
