#include <doctest.h>

#include <cmath>
#include <random>

#include "distillwsd/distill.hpp"
#include "distillwsd/error.hpp"
#include "support/fixtures.hpp"
#include "support/gradient_suite.hpp"
#include "support/oracles.hpp"

using namespace distillwsd;

namespace {

DistillConfig micro_distill() {
  DistillConfig c;
  c.distill_layers = {"conv2"};
  c.top_after_nms = 4;
  c.batch_size = 2;
  c.stage1_max_epochs = 3;
  c.stage2_epochs = 2;
  return c;
}

std::vector<Tensor<double>> snapshot(const std::vector<Parameter<double>*>& params) {
  std::vector<Tensor<double>> out;
  for (const auto* p : params) out.push_back(p->value);
  return out;
}

bool same(const std::vector<Parameter<double>*>& params, const std::vector<Tensor<double>>& before) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.storage() != before[i].storage()) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("proposal selection: identical boxes collapse and recycle") {
  DistillConfig cfg;
  cfg.top_after_nms = 6;
  const std::vector<Box> boxes(5, Box{1, 1, 9, 9});
  const std::vector<double> s{0.1, 0.4, 0.2, 0.4, 0.3};
  const auto sel = select_distill_proposals(boxes, s, cfg);
  REQUIRE(sel.boxes.size() == 6);
  for (double w : sel.weights) CHECK(w == 0.4);

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 40), d(3, 20), score(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box> bx(30);
    std::vector<double> sc(30);
    for (std::size_t i = 0; i < 30; ++i) {
      const double x = u(rng), y = u(rng);
      bx[i] = {x, y, x + d(rng), y + d(rng)};
      sc[i] = score(rng);
    }
    const auto keep = oracle::nms(bx, sc, 0.4);
    const auto got = select_distill_proposals(bx, sc, cfg);
    for (std::size_t i = 0; i < got.boxes.size(); ++i) {
      const std::size_t src = keep[i % std::min(keep.size(), cfg.top_after_nms)];
      CHECK(got.boxes[i] == bx[src]);
      CHECK(got.weights[i] == sc[src]);
    }
  }
}

TEST_CASE("loss arithmetic examples") {
  Tape<double> tape;
  auto a = tape.constant(Tensor<double>({1, 2, 2, 2}, 1.5));
  CHECK(feature_distill_loss(a, a, 1).value().item() == 0.0);
  auto b = tape.constant(Tensor<double>({1, 2, 2, 2}, 0.5));
  CHECK(feature_distill_loss(a, b, 1).value().item() == 4.0);
  CHECK_THROWS_AS(feature_distill_loss(a, tape.constant(Tensor<double>({1, 8})), 1), ContractError);
  CHECK_THROWS_AS(feature_distill_loss(tape.constant(Tensor<double>({3, 2})), tape.constant(Tensor<double>({3, 2})), 2),
                  ContractError);

  auto p = tape.constant(Tensor<double>({1, 2}, {0.7, 0.2}));
  auto q = tape.constant(Tensor<double>({1, 2}, {0.2, 0.7}));
  CHECK(prediction_distill_loss(p, p).value().item() == 0.0);
  CHECK(prediction_distill_loss(p, q).value().item() == doctest::Approx(0.25).epsilon(1e-15));

  const std::size_t k = 5;
  Tensor<double> y({2, k}, {1, 0, 1, 1, 0, 0, 0, 1, 0, 1});
  CHECK(hard_loss(tape.constant(y), y).value().item() <= k * -std::log(1 - 1e-6) + 1e-12);
  CHECK(std::abs(hard_loss(tape.constant(Tensor<double>({2, k}, 0.5)), y).value().item() - k * std::log(2.0)) < 1e-12);
  CHECK_THROWS_AS(hard_loss(tape.constant(Tensor<double>({2, 4})), y), ContractError);

  auto h = tape.constant(Tensor<double>::scalar(0.3));
  auto s = tape.constant(Tensor<double>::scalar(0.2));
  CHECK(combined_loss(h, s, 0.0).value().item() == 0.3);
  CHECK(combined_loss(h, s, 1.0).value().item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(combined_loss(h, s, -1.0), ContractError);
}

TEST_CASE("loss gradients on micro networks") {
  for (std::uint64_t seed : {1u, 2u}) {
    const auto r = gradsuite::run_micro_net(seed);
    CHECK(r.num_params <= 5000);
    CHECK(r.feature.rel < 1e-5);
    CHECK(r.prediction.rel < 1e-5);
    CHECK(r.hard.rel < 1e-5);
    CHECK(r.combined.rel < 1e-5);
    CHECK(r.scaling_node < 1e-10);
  }
}

TEST_CASE("stage 1: contracts, fixed point and gradient routing") {
  const Dataset data = fixture::tiny_dataset(4, 3, 16, 5, 3);
  const DistillConfig cfg = micro_distill();
  TeacherModel<double> teacher(fixture::micro_teacher(3, 5), 1);
  StudentModel<double> student(fixture::micro_student(), 2);
  CHECK_THROWS_AS(run_stage1(teacher, student, data, cfg, 1), ContractError);
  teacher.freeze();

  const auto teacher_before = snapshot(teacher.parameters());
  const auto head_before = snapshot(student.head_parameters());
  const auto conv_before = snapshot(student.conv_parameters());
  const auto report = run_stage1(teacher, student, data, cfg, 1);
  CHECK(report.epochs == 3);
  CHECK(report.initial_feature_loss > 0);
  CHECK(same(teacher.parameters(), teacher_before));
  CHECK(same(student.head_parameters(), head_before));
  CHECK_FALSE(same(student.conv_parameters(), conv_before));
  for (double v : report.feature_loss.at("conv2")) CHECK(v >= 0);

  StudentModel<double> copy(fixture::micro_student(), 3);
  copy_parameters(teacher.parameters(), copy.conv_parameters());
  const auto copied = snapshot(copy.conv_parameters());
  const auto fixed = run_stage1(teacher, copy, data, cfg, 1);
  CHECK(fixed.initial_feature_loss < 1e-8);
  CHECK(fixed.epochs == 0);
  CHECK(same(copy.conv_parameters(), copied));

  StudentModel<double> again(fixture::micro_student(), 2);
  CHECK(run_stage1(teacher, again, data, cfg, 1).feature_loss == report.feature_loss);
}

TEST_CASE("stage 2: temperatures learn, the teacher stays put, runs repeat") {
  const Dataset train = fixture::tiny_dataset(6, 3, 16, 5, 4);
  const Dataset val = fixture::tiny_dataset(2, 3, 16, 5, 5);
  const DistillConfig cfg = micro_distill();
  TeacherModel<double> teacher(fixture::micro_teacher(3, 5), 1);
  StudentModel<double> student(fixture::micro_student(), 2);
  TemperatureBank<double> temps(3, 5);
  CHECK_THROWS_AS(run_stage2(&teacher, student, train, val, cfg, temps, 1), ContractError);
  teacher.freeze();
  for (auto* p : temps.parameters())
    for (double v : p->value.values()) CHECK(v == 1.0);

  const auto teacher_before = snapshot(teacher.parameters());
  const auto conv_before = snapshot(student.conv_parameters());
  const auto report = run_stage2(&teacher, student, train, val, cfg, temps, 1);
  CHECK(same(teacher.parameters(), teacher_before));
  CHECK_FALSE(same(student.conv_parameters(), conv_before));
  for (auto* p : temps.parameters()) {
    bool moved = false;
    for (double v : p->value.values()) {
      moved = moved || v != 1.0;
      CHECK(v >= cfg.temperature_floor);
    }
    CHECK(moved);
  }
  for (double v : report.soft_loss) CHECK(v >= 0);
  for (double v : report.hard_loss) CHECK(v >= 0);

  StudentModel<double> twin(fixture::micro_student(), 2);
  TemperatureBank<double> twin_temps(3, 5);
  const auto repeat = run_stage2(&teacher, twin, train, val, cfg, twin_temps, 1);
  CHECK(repeat.hard_loss == report.hard_loss);
  CHECK(repeat.soft_loss == report.soft_loss);
  CHECK(repeat.class_temps == report.class_temps);

  DistillConfig plain = cfg;
  plain.lambda = 0;
  StudentModel<double> base(fixture::micro_student(), 2);
  TemperatureBank<double> unused(3, 5);
  const auto baseline = run_stage2<double>(nullptr, base, train, val, plain, unused, 1);
  for (double v : baseline.soft_loss) CHECK(v == 0.0);
  for (auto* p : unused.parameters())
    for (double v : p->value.values()) CHECK(v == 1.0);
}

TEST_CASE("stage 2 decays the learning rate on a validation plateau") {
  const Dataset train = fixture::tiny_dataset(2, 3, 16, 5, 8);
  DistillConfig cfg = micro_distill();
  cfg.lambda = 0;
  cfg.stage2_epochs = 6;
  cfg.stage2_lr = 1e-9;
  cfg.plateau_patience = 2;
  StudentModel<double> student(fixture::micro_student(), 2);
  TemperatureBank<double> temps(3, 5);
  const auto report = run_stage2<double>(nullptr, student, train, train, cfg, temps, 1);
  // Epoch 0 sets the best; epochs 1 and 2 cannot beat it by 1e-4, so epoch 3 runs at a tenth.
  REQUIRE(report.learning_rate.size() == 6);
  CHECK(report.learning_rate[2] == doctest::Approx(1e-9));
  CHECK(report.learning_rate[3] == doctest::Approx(1e-10));
  CHECK(report.learning_rate[5] == doctest::Approx(1e-11));
}

TEST_CASE("distill config validation") {
  DistillConfig c;
  CHECK_NOTHROW(c.validate());
  c.nms_thresh = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.lambda = -0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.top_after_nms = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
