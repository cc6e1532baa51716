#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "affes/attack.hpp"
#include "affes/es.hpp"
#include "affes/model.hpp"
#include "affes/warp.hpp"

using namespace affes;

namespace {

Image noise_image(std::uint64_t seed) {
  Rng rng(seed);
  Image img(28, 28);
  for (auto& p : img.pixels) p = static_cast<float>(rng.uniform01());
  return img;
}

std::shared_ptr<Cnn<float>> small_model() {
  auto model = std::make_shared<Cnn<float>>(Architecture::small());
  model->initialize(1);
  return model;
}

TransformParams sample_transform() {
  TransformParams t;
  t.delta_u = 1.5;
  t.delta_v = -2.0;
  t.theta = 0.3;
  t.phi = 0.1;
  t.s_u = 1.1;
  t.s_v = 0.9;
  return t;
}

void BM_Warp(benchmark::State& state) {
  const Image img = noise_image(1);
  const auto mode = state.range(0) == 0 ? WarpMode::single_pass : WarpMode::sequential;
  const TransformParams t = sample_transform();
  for (auto _ : state) benchmark::DoNotOptimize(warp_image(img, t, mode));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Warp)->Arg(0)->Arg(1);

void BM_Forward(benchmark::State& state) {
  const auto model = small_model();
  std::vector<Image> batch;
  for (int i = 0; i < state.range(0); ++i) batch.push_back(noise_image(static_cast<std::uint64_t>(i)));
  for (auto _ : state) benchmark::DoNotOptimize(model->forward(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(64);

void BM_TrainStep(benchmark::State& state) {
  auto model = small_model();
  std::vector<Image> batch;
  std::vector<int> labels;
  for (int i = 0; i < 64; ++i) {
    batch.push_back(noise_image(static_cast<std::uint64_t>(i)));
    labels.push_back(i % 10);
  }
  std::vector<float> grad(model->parameters().size());
  for (auto _ : state) benchmark::DoNotOptimize(model->loss_and_gradient(batch, labels, grad));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_TrainStep);

void BM_GridAttack(benchmark::State& state) {
  const CnnClassifier clf(small_model());
  const Image img = noise_image(2);
  const auto space = ConstraintSpace::translations_rotation();
  const std::vector<int> counts{5, 5, 31};
  for (auto _ : state) benchmark::DoNotOptimize(grid_search(img, 3, clf, space, counts));
  state.SetItemsProcessed(state.iterations() * 775);
}
BENCHMARK(BM_GridAttack)->Unit(benchmark::kMillisecond);

void BM_CmaUpdate(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  const BatchObjective sphere = [](std::span<const NormalizedPoint> pts) {
    std::vector<CandidateScore> out;
    for (const auto& p : pts) {
      double s = 0.0;
      for (double v : p) s += v * v;
      out.push_back({false, -s});
    }
    return out;
  };
  const EsState start = EsState::fresh(NormalizedPoint(d, 0.3), 0.4);
  CmaOptions opt;
  Rng rng(3);
  for (auto _ : state) {
    EsState es = start;
    benchmark::DoNotOptimize(run_cma(sphere, es, opt, rng, hypercube_oracle()));
  }
}
BENCHMARK(BM_CmaUpdate)->Arg(3)->Arg(6);

}  // namespace

BENCHMARK_MAIN();
