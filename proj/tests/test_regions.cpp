#include <doctest.h>

#include <algorithm>
#include <random>

#include "distillwsd/error.hpp"
#include "distillwsd/regions.hpp"
#include "support/oracles.hpp"

using namespace distillwsd;

namespace {

std::vector<Box> random_boxes(std::mt19937_64& rng, std::size_t n, double extent = 64) {
  std::uniform_real_distribution<double> pos(0, extent * 0.8), size(2, extent * 0.5);
  std::vector<Box> boxes;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = pos(rng), y = pos(rng);
    boxes.push_back({x, y, x + size(rng), y + size(rng)});
  }
  return boxes;
}

Image striped_image(std::size_t w, std::size_t h) {
  Image img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = (x > w / 3 && x < w / 2 && y > h / 4 && y < h / 2) ? 230 : 20;
  return img;
}

}  // namespace

TEST_CASE("iou examples and symmetry") {
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
  CHECK(iou({0, 0, 1, 1}, {2, 2, 3, 3}) == 0.0);
  CHECK(iou({0, 0, 2, 2}, {1, 0, 3, 2}) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  std::mt19937_64 rng(1);
  const auto boxes = random_boxes(rng, 40);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CHECK(iou(boxes[i], boxes[i]) == doctest::Approx(1.0));
    for (std::size_t j = 0; j < boxes.size(); ++j) {
      CHECK(iou(boxes[i], boxes[j]) == iou(boxes[j], boxes[i]));
      CHECK(std::abs(iou(boxes[i], boxes[j]) - oracle::iou(boxes[i], boxes[j])) < 1e-12);
    }
  }
}

TEST_CASE("nms examples") {
  CHECK(nms(std::vector<Box>{}, std::vector<double>{}, 0.4).empty());
  const std::vector<Box> one{{0, 0, 4, 4}};
  CHECK(nms(one, std::vector<double>{0.3}, 0.4) == std::vector<std::size_t>{0});
  const std::vector<Box> twins{{0, 0, 4, 4}, {0, 0, 4, 4}};
  CHECK(nms(twins, std::vector<double>{0.9, 0.8}, 0.4) == std::vector<std::size_t>{0});
  CHECK(nms(twins, std::vector<double>{0.5, 0.5}, 0.4) == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(nms(twins, std::vector<double>{0.5}, 0.4), ContractError);
}

TEST_CASE("nms properties: oracle match, ordering, overlap bound, monotone invariance") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<std::size_t> count(1, 30);
    const auto boxes = random_boxes(rng, count(rng));
    std::vector<double> scores(boxes.size());
    std::uniform_real_distribution<double> u(0, 1);
    for (auto& s : scores) s = u(rng);
    const auto kept = nms(boxes, scores, 0.4);
    CHECK(kept == oracle::nms(boxes, scores, 0.4));
    for (std::size_t i = 1; i < kept.size(); ++i) CHECK(scores[kept[i - 1]] >= scores[kept[i]]);
    for (std::size_t i = 0; i < kept.size(); ++i)
      for (std::size_t j = i + 1; j < kept.size(); ++j) CHECK(iou(boxes[kept[i]], boxes[kept[j]]) <= 0.4);
    std::vector<double> squashed(scores.size());
    std::transform(scores.begin(), scores.end(), squashed.begin(), [](double s) { return std::exp(3 * s) - 7; });
    CHECK(nms(boxes, squashed, 0.4) == kept);
  }
}

TEST_CASE("proposals: recycling, determinism and the blank-image floor") {
  CHECK(recycle_indices(3, 5) == std::vector<std::size_t>{0, 1, 2, 0, 1});
  CHECK(recycle_indices(4, 2) == std::vector<std::size_t>{0, 1});

  ProposalConfig cfg;
  Image blank(64, 64);
  std::fill(blank.rgb.begin(), blank.rgb.end(), std::uint8_t{128});
  const auto ps = generate_proposals(blank, cfg);
  REQUIRE(ps.size() == cfg.top_n);
  for (double s : ps.prior_scores) CHECK(s == cfg.score_floor);
  const auto grid = candidate_windows(64, 64, cfg);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps.boxes[i] == grid[i % grid.size()]);
  for (double e : edge_magnitude(blank)) CHECK(e == 0.0);

  const Image img = striped_image(64, 64);
  const auto a = generate_proposals(img, cfg, "x");
  const auto b = generate_proposals(img, cfg, "x");
  CHECK(a == b);
  CHECK(a.prior_scores.front() == 1.0);
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a.prior_scores[i - 1] >= a.prior_scores[i]);
  for (double s : a.prior_scores) CHECK((s >= cfg.score_floor && s <= 1.0));

  ProposalConfig few = cfg;
  few.scales = {0.75};
  few.aspect_ratios = {1.0};
  few.stride_fraction = 1.0;
  few.top_n = 5;
  const auto windows = candidate_windows(64, 64, few);
  REQUIRE(windows.size() < 5);
  const auto recycled = generate_proposals(img, few);
  CHECK(recycled.size() == 5);
  for (std::size_t i = windows.size(); i < 5; ++i) CHECK(recycled.boxes[i] == recycled.boxes[i - windows.size()]);

  CHECK_THROWS_AS(generate_proposals(Image(4, 4), cfg), InputError);
}

TEST_CASE("roi_pool examples") {
  Tensor<double> f({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) f[i] = static_cast<double>(i + 1);
  const Box full{0, 0, 4, 4};
  const auto q = roi_pool(f, full, 2, 2, 4, 4);
  CHECK(q.storage() == std::vector<double>{6, 8, 14, 16});
  CHECK(roi_pool(f, full, 1, 1, 4, 4).item() == 16);
  const auto cell = roi_pool(f, Box{1.2, 2.1, 1.6, 2.4}, 3, 3, 4, 4);
  for (double v : cell.values()) CHECK(v == f.at({0, 2, 1}));
}

TEST_CASE("roi_pool matches a scan oracle and respects its bounds") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = oracle::random_tensor({3, 8, 8}, rng);
    const auto box = random_boxes(rng, 1, 64).front();
    const std::size_t out = 1 + trial % 4;
    const auto pooled = roi_pool(f, box, out, out, 64, 64);
    const RoiWindow w = project_box(box, 64, 64, 8, 8);
    const std::size_t wh = w.y1 - w.y0, ww = w.x1 - w.x0;
    for (std::size_t c = 0; c < 3; ++c) {
      double global = -1e9;
      for (std::size_t i = 0; i < 64; ++i) global = std::max(global, f[c * 64 + i]);
      for (std::size_t by = 0; by < out; ++by)
        for (std::size_t bx = 0; bx < out; ++bx) {
          const std::size_t ys = w.y0 + by * wh / out, ye = w.y0 + (by * wh + wh + out - 1) / out;
          const std::size_t xs = w.x0 + bx * ww / out, xe = w.x0 + (bx * ww + ww + out - 1) / out;
          double m = -1e9;
          for (std::size_t y = ys; y < std::max(ye, ys + 1); ++y)
            for (std::size_t x = xs; x < std::max(xe, xs + 1); ++x) m = std::max(m, f.at({c, y, x}));
          CHECK(pooled.at({c, by, bx}) == m);
          CHECK(pooled.at({c, by, bx}) <= global);
        }
    }
  }
}

TEST_CASE("weighted_roi_features scale and annihilate") {
  std::mt19937_64 rng(19);
  Tape<double> tape;
  auto f = tape.constant(oracle::random_tensor({1, 2, 8, 8}, rng));
  const std::vector<Box> boxes{{0, 0, 32, 32}, {10, 20, 60, 50}};
  const std::vector<double> ones{1, 1}, mixed{0, 0.5};
  auto plain = weighted_roi_features(f, 0, boxes, ones, 3, 3, 64, 64);
  auto weighted = weighted_roi_features(f, 0, boxes, mixed, 3, 3, 64, 64);
  REQUIRE(plain.shape() == Shape{2, 2, 3, 3});
  for (std::size_t i = 0; i < 18; ++i) CHECK(weighted.value()[i] == 0.0);
  for (std::size_t i = 18; i < 36; ++i) CHECK(weighted.value()[i] == doctest::Approx(0.5 * plain.value()[i]));
  const Tensor<double> single = f.value().reshaped({2, 8, 8});
  const auto direct = roi_pool(single, boxes[1], 3, 3, 64, 64);
  for (std::size_t i = 0; i < 18; ++i) CHECK(plain.value()[18 + i] == direct[i]);
  CHECK_THROWS_AS(weighted_roi_features(f, 0, boxes, std::vector<double>{1}, 3, 3, 64, 64), ContractError);
}
