#include <doctest.h>

#include <cmath>
#include <random>

#include "distillwsd/error.hpp"
#include "distillwsd/wsdnet.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace distillwsd;

namespace {

std::vector<double> flat(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("fusion of fixed 2x2 logits by hand") {
  const auto b = fuse_scores(Tensor<double>({2, 2}, {1, 0, 0, 1}), Tensor<double>({2, 2}));
  const double hi = std::exp(1.0) / (std::exp(1.0) + 1), lo = 1 / (std::exp(1.0) + 1);
  const std::vector<double> sc{hi, lo, lo, hi};
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(b.cls_scores[i] - sc[i]) < 1e-12);
    CHECK(std::abs(b.det_scores[i] - 0.5) < 1e-12);
    CHECK(std::abs(b.fused[i] - 0.5 * sc[i]) < 1e-12);
  }
  CHECK(std::abs(b.image_scores[0] - 0.5 * (hi + lo)) < 1e-12);
  CHECK(std::abs(b.image_scores[1] - 0.5 * (lo + hi)) < 1e-12);
  CHECK(std::abs(b.objectness[0] - 0.5) < 1e-12);
}

TEST_CASE("a single proposal makes p the class-softmax row") {
  const auto b = fuse_scores(Tensor<double>({1, 3}, {0.2, -1, 3}), Tensor<double>({1, 3}, {5, -5, 0}));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(b.det_scores[k] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(b.image_scores[k] - b.cls_scores[k]) < 1e-15);
  }
}

TEST_CASE("fusion bounds and conservation on random bundles") {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t r = dim(rng), k = dim(rng);
    const auto b = fuse_scores(oracle::random_tensor({r, k}, rng, -8, 8).cast<float>(),
                               oracle::random_tensor({r, k}, rng, -8, 8).cast<float>());
    double sum_p = 0, sum_s = 0;
    for (std::size_t j = 0; j < k; ++j) {
      CHECK((b.image_scores[j] >= 0.0f && b.image_scores[j] <= 1.0f));
      sum_p += b.image_scores[j];
    }
    for (std::size_t i = 0; i < r; ++i) sum_s += b.objectness[i];
    CHECK(std::abs(sum_p - sum_s) < 1e-5);
    for (std::size_t i = 0; i < r * k; ++i) CHECK(b.fused[i] <= std::min(b.cls_scores[i], b.det_scores[i]));
  }
}

TEST_CASE("softened teacher prediction: reductions and scalar oracle") {
  std::mt19937_64 rng(43);
  const auto mc = oracle::random_tensor({3, 4}, rng, -3, 3);
  const auto md = oracle::random_tensor({3, 4}, rng, -3, 3);
  const auto b = fuse_scores(mc, md);
  const auto unit = teacher_softened_prediction(b, Tensor<double>({4}, 1.0), Tensor<double>({3}, 1.0));
  CHECK(max_abs_diff(unit, b.image_scores) < 1e-12);

  const auto flat_limit = teacher_softened_prediction(b, Tensor<double>({4}, 1e6), Tensor<double>({3}, 1e6));
  for (double v : flat_limit.values()) CHECK(std::abs(v - 0.25) < 1e-3);

  const std::vector<double> tc{1, 2, 1, 3}, td{1, 1, 2};
  const auto got = teacher_softened_prediction(b, Tensor<double>({4}, tc), Tensor<double>({3}, td));
  const auto want = oracle::softened_teacher(flat(mc), flat(md), 3, 4, tc, td);
  for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(got[k] - want[k]) < 1e-12);
  for (double v : got.values()) CHECK((v >= 0 && v <= 1));

  CHECK_THROWS_AS(teacher_softened_prediction(b, Tensor<double>({4}, 0.0), Tensor<double>({3}, 1.0)), DomainError);

  const auto fb = fuse_scores(mc.cast<float>(), md.cast<float>());
  const auto fu = teacher_softened_prediction(fb, Tensor<float>({4}, 1.0f), Tensor<float>({3}, 1.0f));
  CHECK(max_abs_diff(fu, fb.image_scores) < 1e-6f);
}

TEST_CASE("teacher forward checks the proposal count and matches fuse_scores") {
  auto data = fixture::tiny_dataset(2, 3, 16, 3);
  TeacherModel<double> model(fixture::micro_teacher(), 5);
  const auto b = teacher_forward(model, data.examples[0].image, data.proposals[0]);
  const auto again = fuse_scores(b.cls_logits, b.det_logits);
  CHECK(max_abs_diff(b.image_scores, again.image_scores) < 1e-12);
  CHECK(max_abs_diff(b.objectness, again.objectness) < 1e-12);

  ProposalSet short_set = data.proposals[0];
  short_set.boxes.pop_back();
  short_set.prior_scores.pop_back();
  CHECK_THROWS_AS(teacher_forward(model, data.examples[0].image, short_set), ContractError);
}

TEST_CASE("teacher loss gradients match finite differences") {
  auto data = fixture::tiny_dataset(2, 3, 16, 3, 9);
  TeacherModel<double> model(fixture::micro_teacher(), 7);
  fixture::randomize(model.parameters(), 8);
  const std::vector<std::size_t> idx{0, 1};
  auto loss = [&](bool backward) {
    Tape<double> tape;
    auto l = teacher_loss(tape, model, data, idx);
    if (backward) tape.backward(l);
    return l.value().item();
  };
  CHECK(oracle::gradient_check(model.parameters(), loss).rel < 1e-5);
}

TEST_CASE("teacher overfits a singleton") {
  auto data = fixture::tiny_dataset(1, 3, 16, 3, 4);
  TeacherTrainOptions opt;
  opt.epochs = 10;
  opt.batch_size = 1;
  opt.lr = 0.01;
  const auto result = train_teacher<double>(data, fixture::micro_teacher(), opt, 3);
  REQUIRE(result.epoch_losses.size() == 10);
  for (std::size_t e = 1; e < 10; ++e) CHECK(result.epoch_losses[e] < result.epoch_losses[e - 1]);
  CHECK_FALSE(result.model.frozen());
  CHECK_THROWS_AS(train_teacher<double>(Dataset{}, fixture::micro_teacher(), opt, 3), InputError);
}

TEST_CASE("detect runs per-class NMS over the fused columns") {
  auto data = fixture::tiny_dataset(1, 3, 16, 20, 6);
  const Image& img = data.examples[0].image;

  TeacherModel<double> single(fixture::micro_teacher(3, 1), 2);
  ProposalSet one{"x", {Box{2, 2, 12, 12}}, {0.8}};
  const auto b1 = teacher_forward(single, img, one);
  const auto d1 = detect(single, img, one);
  for (std::size_t k = 0; k < 3; ++k) {
    REQUIRE(d1[k].size() == 1);
    CHECK(d1[k][0].box == one.boxes[0]);
    CHECK(d1[k][0].score == b1.fused[k]);
  }

  TeacherModel<double> pair(fixture::micro_teacher(3, 2), 2);
  ProposalSet twins{"x", {Box{2, 2, 12, 12}, Box{2, 2, 12, 12}}, {0.8, 0.8}};
  for (const auto& per_class : detect(pair, img, twins)) CHECK(per_class.size() == 1);

  TeacherModel<double> many(fixture::micro_teacher(3, 20), 2);
  const ProposalSet& set = data.proposals[0];
  const auto b = teacher_forward(many, img, set);
  const auto dets = detect(many, img, set);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> column(20);
    for (std::size_t r = 0; r < 20; ++r) column[r] = b.fused[r * 3 + k];
    const auto keep = oracle::nms(set.boxes, column, 0.4);
    REQUIRE(dets[k].size() == keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) {
      CHECK(dets[k][i].box == set.boxes[keep[i]]);
      CHECK(dets[k][i].score == column[keep[i]]);
    }
  }
}

TEST_CASE("freezing marks every teacher parameter") {
  TeacherModel<float> model(fixture::micro_teacher(), 1);
  CHECK_FALSE(model.frozen());
  model.freeze();
  CHECK(model.frozen());
  for (auto* p : model.parameters()) CHECK(p->frozen);
  model.unfreeze();
  CHECK_FALSE(model.frozen());
}
