#include <benchmark/benchmark.h>

#include <random>

#include "distillwsd/clsnet.hpp"
#include "distillwsd/datagen.hpp"
#include "distillwsd/ops.hpp"
#include "distillwsd/regions.hpp"
#include "distillwsd/wsdnet.hpp"

using namespace distillwsd;

namespace {

Tensor<float> random_tensor(Shape shape, std::uint64_t seed) {
  Tensor<float> t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Example sample_example() {
  SceneSpec spec;
  spec.seed = 1;
  return render_example(spec, 0);
}

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = random_tensor({1, c, 32, 32}, 1);
  const auto w = random_tensor({2 * c, c, 3, 3}, 2);
  const auto b = random_tensor({2 * c}, 3);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = conv2d(tape.constant(x), tape.constant(w), tape.constant(b), 1, 1);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_Conv2d)->Arg(8)->Arg(16)->Arg(32);

void BM_RoiPool(benchmark::State& state) {
  const auto f = random_tensor({64, 8, 8}, 4);
  const Box box{5, 9, 41, 50};
  for (auto _ : state) benchmark::DoNotOptimize(roi_pool(f, box, 7, 7, 64, 64));
}
BENCHMARK(BM_RoiPool);

void BM_Nms(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 48), d(4, 30), s(0, 1);
  std::vector<Box> boxes(n);
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = u(rng), y = u(rng);
    boxes[i] = {x, y, x + d(rng), y + d(rng)};
    scores[i] = s(rng);
  }
  for (auto _ : state) benchmark::DoNotOptimize(nms(boxes, scores, 0.4));
}
BENCHMARK(BM_Nms)->Arg(64)->Arg(512);

void BM_Proposals(benchmark::State& state) {
  const auto ex = sample_example();
  const ProposalConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(generate_proposals(ex.image, cfg));
}
BENCHMARK(BM_Proposals);

void BM_TeacherForward(benchmark::State& state) {
  const auto ex = sample_example();
  TeacherModel<float> teacher(TeacherConfig{}, 7);
  ProposalConfig cfg;
  cfg.top_n = teacher.config().top_n;
  const auto proposals = generate_proposals(ex.image, cfg);
  for (auto _ : state) benchmark::DoNotOptimize(teacher_forward(teacher, ex.image, proposals));
}
BENCHMARK(BM_TeacherForward)->Unit(benchmark::kMillisecond);

void BM_StudentForward(benchmark::State& state) {
  const auto ex = sample_example();
  StudentModel<float> student(StudentConfig{}, 8);
  const Tensor<float> ones({student.config().num_classes}, 1.0f);
  for (auto _ : state) benchmark::DoNotOptimize(student_forward(student, ex.image, ones));
}
BENCHMARK(BM_StudentForward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
