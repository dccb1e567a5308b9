#include "distillwsd/regions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace distillwsd {

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_thresh) {
  if (boxes.size() != scores.size()) throw ContractError("nms: boxes and scores differ in length");
  if (!(iou_thresh > 0.0 && iou_thresh < 1.0)) throw ContractError("nms: threshold must lie in (0, 1)");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> kept;
  for (std::size_t idx : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (iou(boxes[idx], boxes[k]) > iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<double> edge_magnitude(const Image& image) {
  const std::size_t w = image.width, h = image.height;
  std::vector<double> edges(w * h, 0.0);
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x, std::size_t c) {
    y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return image.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) / 255.0;
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto yy = static_cast<std::ptrdiff_t>(y), xx = static_cast<std::ptrdiff_t>(x);
      double best = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        const double gx = (px(yy - 1, xx + 1, c) + 2 * px(yy, xx + 1, c) + px(yy + 1, xx + 1, c)) -
                          (px(yy - 1, xx - 1, c) + 2 * px(yy, xx - 1, c) + px(yy + 1, xx - 1, c));
        const double gy = (px(yy + 1, xx - 1, c) + 2 * px(yy + 1, xx, c) + px(yy + 1, xx + 1, c)) -
                          (px(yy - 1, xx - 1, c) + 2 * px(yy - 1, xx, c) + px(yy - 1, xx + 1, c));
        best = std::max(best, std::sqrt(gx * gx + gy * gy));
      }
      edges[y * w + x] = best;
    }
  }
  return edges;
}

std::vector<double> integral_image(std::span<const double> values, std::size_t width,
                                   std::size_t height) {
  std::vector<double> table((width + 1) * (height + 1), 0.0);
  for (std::size_t y = 0; y < height; ++y) {
    double row = 0.0;
    for (std::size_t x = 0; x < width; ++x) {
      row += values[y * width + x];
      table[(y + 1) * (width + 1) + x + 1] = table[y * (width + 1) + x + 1] + row;
    }
  }
  return table;
}

namespace {

struct WindowDims {
  std::size_t w = 0, h = 0;
};

WindowDims window_dims(double scale, double ratio, std::size_t width, std::size_t height) {
  const double base = scale * static_cast<double>(std::min(width, height));
  const double sr = std::sqrt(ratio);
  WindowDims d;
  d.w = static_cast<std::size_t>(std::max(1.0, std::round(base * sr)));
  d.h = static_cast<std::size_t>(std::max(1.0, std::round(base / sr)));
  return d;
}

double rect_sum(std::span<const double> table, std::size_t width, std::ptrdiff_t x0,
                std::ptrdiff_t y0, std::ptrdiff_t x1, std::ptrdiff_t y1, std::size_t img_w,
                std::size_t img_h) {
  x0 = std::clamp<std::ptrdiff_t>(x0, 0, static_cast<std::ptrdiff_t>(img_w));
  x1 = std::clamp<std::ptrdiff_t>(x1, 0, static_cast<std::ptrdiff_t>(img_w));
  y0 = std::clamp<std::ptrdiff_t>(y0, 0, static_cast<std::ptrdiff_t>(img_h));
  y1 = std::clamp<std::ptrdiff_t>(y1, 0, static_cast<std::ptrdiff_t>(img_h));
  if (x1 <= x0 || y1 <= y0) return 0.0;
  const std::size_t stride = width + 1;
  auto at = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    return table[static_cast<std::size_t>(y) * stride + static_cast<std::size_t>(x)];
  };
  return at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
}

}  // namespace

std::vector<Box> candidate_windows(std::size_t width, std::size_t height, const ProposalConfig& cfg) {
  std::vector<Box> windows;
  for (double scale : cfg.scales) {
    for (double ratio : cfg.aspect_ratios) {
      const WindowDims d = window_dims(scale, ratio, width, height);
      if (d.w > width || d.h > height || d.w < cfg.min_window || d.h < cfg.min_window) continue;
      const auto sx = static_cast<std::size_t>(
          std::max(1.0, std::round(cfg.stride_fraction * static_cast<double>(d.w))));
      const auto sy = static_cast<std::size_t>(
          std::max(1.0, std::round(cfg.stride_fraction * static_cast<double>(d.h))));
      for (std::size_t y = 0; y + d.h <= height; y += sy) {
        for (std::size_t x = 0; x + d.w <= width; x += sx) {
          windows.push_back(Box{static_cast<double>(x), static_cast<double>(y),
                                static_cast<double>(x + d.w), static_cast<double>(y + d.h)});
        }
      }
    }
  }
  return windows;
}

double window_objectness(std::span<const double> integral, std::size_t width, std::size_t height,
                         const Box& window) {
  const auto x0 = static_cast<std::ptrdiff_t>(window.x1), y0 = static_cast<std::ptrdiff_t>(window.y1);
  const auto x1 = static_cast<std::ptrdiff_t>(window.x2), y1 = static_cast<std::ptrdiff_t>(window.y2);
  const std::ptrdiff_t side = std::min(x1 - x0, y1 - y0);
  const std::ptrdiff_t band = std::max<std::ptrdiff_t>(1, static_cast<std::ptrdiff_t>(std::lround(side / 16.0)));
  const double inner = rect_sum(integral, width, x0 + band, y0 + band, x1 - band, y1 - band, width, height);
  const double outer = rect_sum(integral, width, x0 - band, y0 - band, x1 + band, y1 + band, width, height);
  const double straddling = outer - inner;
  const double perimeter = 2.0 * static_cast<double>((x1 - x0) + (y1 - y0));
  return std::max(0.0, inner - straddling) / std::pow(perimeter, 1.5);
}

std::vector<std::size_t> recycle_indices(std::size_t available, std::size_t count) {
  std::vector<std::size_t> out;
  if (available == 0) return out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(i % available);
  return out;
}

ProposalSet generate_proposals(const Image& image, const ProposalConfig& cfg, std::string image_id) {
  if (image.empty()) throw InputError("generate_proposals: empty image");
  if (cfg.top_n < 1) throw ContractError("generate_proposals: top_n must be >= 1");
  std::size_t min_w = image.width + 1, min_h = image.height + 1;
  for (double scale : cfg.scales) {
    for (double ratio : cfg.aspect_ratios) {
      const WindowDims d = window_dims(scale, ratio, image.width, image.height);
      min_w = std::min(min_w, d.w);
      min_h = std::min(min_h, d.h);
    }
  }
  const std::vector<Box> windows = candidate_windows(image.width, image.height, cfg);
  if (windows.empty() || image.width < min_w || image.height < min_h) {
    throw InputError("generate_proposals: image smaller than the smallest window");
  }

  const std::vector<double> edges = edge_magnitude(image);
  const std::vector<double> table = integral_image(edges, image.width, image.height);
  std::vector<double> raw(windows.size());
  double best = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    raw[i] = window_objectness(table, image.width, image.height, windows[i]);
    best = std::max(best, raw[i]);
  }
  std::vector<double> score(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    score[i] = std::max(cfg.score_floor, best > 0 ? raw[i] / best : 0.0);
  }
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  order.resize(std::min(order.size(), cfg.top_n));

  ProposalSet set;
  set.image_id = std::move(image_id);
  for (std::size_t idx : recycle_indices(order.size(), cfg.top_n)) {
    set.boxes.push_back(windows[order[idx]]);
    set.prior_scores.push_back(score[order[idx]]);
  }
  return set;
}

RoiWindow project_box(const Box& box, std::size_t image_h, std::size_t image_w, std::size_t feat_h,
                      std::size_t feat_w, std::size_t image_index, double weight) {
  const double sy = static_cast<double>(feat_h) / static_cast<double>(image_h);
  const double sx = static_cast<double>(feat_w) / static_cast<double>(image_w);
  auto span_of = [](double lo, double hi, double scale, std::size_t cells) {
    const double flo = std::floor(std::max(0.0, lo * scale));
    const double fhi = std::ceil(std::max(0.0, hi * scale));
    std::size_t start = std::min(static_cast<std::size_t>(flo), cells - 1);
    std::size_t end = std::min(static_cast<std::size_t>(fhi), cells);
    if (end <= start) end = start + 1;
    return std::pair{start, end};
  };
  const auto [y0, y1] = span_of(box.y1, box.y2, sy, feat_h);
  const auto [x0, x1] = span_of(box.x1, box.x2, sx, feat_w);
  RoiWindow win;
  win.image = image_index;
  win.y0 = y0;
  win.y1 = y1;
  win.x0 = x0;
  win.x1 = x1;
  win.weight = weight;
  return win;
}

template <typename T>
Tensor<T> roi_pool(const Tensor<T>& features, const Box& box, std::size_t out_h, std::size_t out_w,
                   std::size_t image_h, std::size_t image_w) {
  if (features.rank() != 3) throw DimensionError("roi_pool expects a C×h×w map");
  if (!box.valid()) throw ContractError("roi_pool: invalid box");
  Tape<T> tape;
  const std::size_t c = features.dim(0), h = features.dim(1), w = features.dim(2);
  auto f = tape.constant(features.reshaped({1, c, h, w}));
  const RoiWindow win = project_box(box, image_h, image_w, h, w);
  auto pooled = roi_max_pool(f, std::span<const RoiWindow>(&win, 1), out_h, out_w);
  return pooled.value().reshaped({c, out_h, out_w});
}

template <typename T>
Var<T> weighted_roi_features(const Var<T>& features, std::size_t image_index,
                             std::span<const Box> boxes, std::span<const double> scores,
                             std::size_t out_h, std::size_t out_w, std::size_t image_h,
                             std::size_t image_w) {
  if (boxes.size() != scores.size()) {
    throw ContractError("weighted_roi_features: " + std::to_string(boxes.size()) + " boxes but " +
                        std::to_string(scores.size()) + " scores");
  }
  const auto& f = features.value();
  if (f.rank() != 4) throw DimensionError("weighted_roi_features expects N×C×h×w features");
  std::vector<RoiWindow> windows;
  windows.reserve(boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    windows.push_back(project_box(boxes[i], image_h, image_w, f.dim(2), f.dim(3), image_index, scores[i]));
  }
  return roi_max_pool(features, std::span<const RoiWindow>(windows), out_h, out_w);
}

template Tensor<float> roi_pool(const Tensor<float>&, const Box&, std::size_t, std::size_t, std::size_t, std::size_t);
template Tensor<double> roi_pool(const Tensor<double>&, const Box&, std::size_t, std::size_t, std::size_t, std::size_t);
template Var<float> weighted_roi_features(const Var<float>&, std::size_t, std::span<const Box>,
                                          std::span<const double>, std::size_t, std::size_t,
                                          std::size_t, std::size_t);
template Var<double> weighted_roi_features(const Var<double>&, std::size_t, std::span<const Box>,
                                           std::span<const double>, std::size_t, std::size_t,
                                           std::size_t, std::size_t);

}  // namespace distillwsd
