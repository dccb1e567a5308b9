#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "distillwsd/image.hpp"
#include "distillwsd/ops.hpp"

namespace distillwsd {

/// Axis-aligned box in continuous pixel coordinates, [x1, x2) × [y1, y2).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const noexcept { return x2 - x1; }
  double height() const noexcept { return y2 - y1; }
  double area() const noexcept { return valid() ? width() * height() : 0.0; }
  bool valid() const noexcept { return x1 < x2 && y1 < y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

/// Intersection over union with continuous-coordinate areas. 0 for disjoint boxes.
double iou(const Box& a, const Box& b);

/// Greedy non-maximum suppression. Visits boxes by descending score (lower index first on
/// ties), keeps a box unless it overlaps an already kept one with IoU > iou_thresh.
/// Returns kept indices in selection order.
std::vector<std::size_t> nms(std::span<const Box> boxes, std::span<const double> scores,
                             double iou_thresh);

struct ProposalConfig {
  std::size_t top_n = 64;
  /// Window base size as a fraction of the shorter image side.
  std::vector<double> scales{0.25, 0.5, 0.75};
  /// width / height.
  std::vector<double> aspect_ratios{1.0, 0.5, 2.0};
  /// Sliding stride as a fraction of the window extent.
  double stride_fraction = 0.25;
  /// Windows with a side below this many pixels are dropped.
  std::size_t min_window = 4;
  double score_floor = 1e-3;
};

/// Proposals of one image with their prior scores s_R in (0, 1].
struct ProposalSet {
  std::string image_id;
  std::vector<Box> boxes;
  std::vector<double> prior_scores;

  std::size_t size() const noexcept { return boxes.size(); }
  friend bool operator==(const ProposalSet&, const ProposalSet&) = default;
};

/// Per-pixel edge strength: the largest Sobel gradient magnitude over the three channels
/// (intensities scaled to [0, 1], replicated borders). Row-major H×W.
std::vector<double> edge_magnitude(const Image& image);

/// All sliding windows in deterministic grid order (scale, ratio, row, column).
std::vector<Box> candidate_windows(std::size_t width, std::size_t height, const ProposalConfig& cfg);

/// Edge-density objectness of a window: edges strictly inside an inner margin minus edges in
/// the band straddling the window border, divided by perimeter^1.5 and clipped at 0.
/// `integral` is the (H+1)×(W+1) summed-area table of the edge map.
double window_objectness(std::span<const double> integral, std::size_t width, std::size_t height,
                         const Box& window);

std::vector<double> integral_image(std::span<const double> values, std::size_t width,
                                   std::size_t height);

/// Deterministic EdgeBoxes stand-in: scores every candidate window, normalizes by the best
/// score, floors at cfg.score_floor, sorts descending (stable), keeps top_n, and recycles
/// from the top when fewer candidates exist.
ProposalSet generate_proposals(const Image& image, const ProposalConfig& cfg,
                               std::string image_id = {});

/// Recycles a ranked list cyclically from the front until it has `count` entries.
std::vector<std::size_t> recycle_indices(std::size_t available, std::size_t count);

/// Maps an image-space box onto the cells of a feature map of size feat_h × feat_w.
/// Starts are floored, ends ceiled; a window always covers at least one cell.
RoiWindow project_box(const Box& box, std::size_t image_h, std::size_t image_w,
                      std::size_t feat_h, std::size_t feat_w, std::size_t image_index = 0,
                      double weight = 1.0);

/// RoI max pooling of one C×h×w map for a single box.
template <typename T>
Tensor<T> roi_pool(const Tensor<T>& features, const Box& box, std::size_t out_h, std::size_t out_w,
                   std::size_t image_h, std::size_t image_w);

/// s_R ⊙ roi_pool(F; R) for every box, concatenated along a leading proposal axis.
/// `features` is N×C×h×w and the boxes belong to image `image_index`.
template <typename T>
Var<T> weighted_roi_features(const Var<T>& features, std::size_t image_index,
                             std::span<const Box> boxes, std::span<const double> scores,
                             std::size_t out_h, std::size_t out_w, std::size_t image_h,
                             std::size_t image_w);

}  // namespace distillwsd
