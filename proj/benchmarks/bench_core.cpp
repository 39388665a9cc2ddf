#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "imuot/adapt.hpp"
#include "imuot/ot.hpp"
#include "imuot/sim.hpp"
#include "imuot/tracker.hpp"

namespace {

using namespace imuot;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

WindowBatch random_batch(const TrackerConfig& cfg, int batch, int steps) {
  WindowBatch b;
  b.batch = batch;
  b.steps = steps;
  b.window = cfg.window;
  b.channels = cfg.channels;
  b.inputs = random_matrix(static_cast<Eigen::Index>(batch) * steps * cfg.window, cfg.channels, 1);
  b.labels = 0.3 * random_matrix(static_cast<Eigen::Index>(batch) * steps, 2, 2);
  b.domain_tags.assign(batch, 0);
  return b;
}

void BM_Sinkhorn(benchmark::State& state) {
  const auto n = state.range(0);
  const ot::CostMatrix c = ot::feature_cost(random_matrix(n, 32, 3), random_matrix(n, 32, 4), 1.0);
  const ot::Vector w = ot::Vector::Constant(n, 1.0 / static_cast<double>(n));
  int iters = 0;
  for (auto _ : state) {
    const auto g = ot::sinkhorn(c, w, w, {});
    iters = g.iterations;
    benchmark::DoNotOptimize(g.transport_cost);
  }
  state.counters["sinkhorn_iters"] = iters;
}
BENCHMARK(BM_Sinkhorn)->Arg(32)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_Wasserstein1d(benchmark::State& state) {
  const auto n = state.range(0);
  const Matrix a = random_matrix(n, 1, 5), b = random_matrix(n, 1, 6);
  const std::vector<double> va(a.data(), a.data() + n), vb(b.data(), b.data() + n);
  for (auto _ : state) benchmark::DoNotOptimize(ot::wasserstein_1d(va, vb));
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Wasserstein1d)->Arg(16)->Arg(1400)->Arg(112000);

void BM_TrackerForward(benchmark::State& state) {
  const TrackerConfig cfg;
  const auto params = TrackerParams::initialize(cfg, 7);
  const auto batch = random_batch(cfg, static_cast<int>(state.range(0)), 40);
  for (auto _ : state) benchmark::DoNotOptimize(forward(params, batch).estimate.data());
  state.SetItemsProcessed(state.iterations() * batch.rows());
}
BENCHMARK(BM_TrackerForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_TrackerBackward(benchmark::State& state) {
  const TrackerConfig cfg;
  const auto params = TrackerParams::initialize(cfg, 8);
  const auto batch = random_batch(cfg, static_cast<int>(state.range(0)), 40);
  const auto pass = forward(params, batch);
  const Matrix d = loss_mse_grad(batch.labels, pass.estimates());
  for (auto _ : state) benchmark::DoNotOptimize(backward(params, pass, d, Matrix()).reg2_b.data());
  state.SetItemsProcessed(state.iterations() * batch.rows());
}
BENCHMARK(BM_TrackerBackward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_DeepJdotTerms(benchmark::State& state) {
  const TrackerConfig cfg;
  const auto params = TrackerParams::initialize(cfg, 9);
  const auto src = random_batch(cfg, 8, 40);
  auto tgt = random_batch(cfg, 8, 40);
  tgt.inputs.array() += 0.5;
  std::vector<int> rows(128);
  for (int i = 0; i < 128; ++i) rows[i] = i * 2;
  const TrainConfig tc;
  for (auto _ : state) benchmark::DoNotOptimize(deepjdot_terms(params, src, tgt, rows, rows, tc).total);
}
BENCHMARK(BM_DeepJdotTerms)->Unit(benchmark::kMillisecond);

void BM_SimulateSequence(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto path = generate_trajectory(20.0, Arena{}, ++seed);
    benchmark::DoNotOptimize(imu_from_trajectory(path, {0.066, 0.0}, NoiseModel::noiseless()).data());
  }
}
BENCHMARK(BM_SimulateSequence)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
