// Serial reference kernels against their OpenMP counterparts.
//   bench_kernels --benchmark_filter=VecEnv
// Thread count follows OMP_NUM_THREADS.
#include <benchmark/benchmark.h>

#include <memory>

#include "palo/rl.hpp"
#include "palo/vec_env.hpp"

using namespace palo;

namespace {

rollout::VecEnv make_envs(int n) {
  rollout::VecEnvConfig cfg;
  cfg.num_envs = n;
  cfg.history = 5;
  cfg.kinds = {terrain::Kind::kRoughFlat, terrain::Kind::kWavy, terrain::Kind::kStairsUp};
  cfg.seed = 1;
  auto bank = std::make_shared<const terrain::TerrainBank>(terrain::TerrainSpec{0.1, 16.0}, 1, cfg.kinds, 1);
  return rollout::VecEnv(dynamics::RobotModel::a1_like(), cfg, bank);
}

void vec_env_step(benchmark::State& state, bool parallel) {
  const int n = static_cast<int>(state.range(0));
  rollout::VecEnv envs = make_envs(n);
  envs.reset_all();
  Rng rng(2);
  Eigen::MatrixXd actions(env::kActionDim, n);
  for (Eigen::Index i = 0; i < actions.size(); ++i) actions.data()[i] = 0.3 * rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(envs.step(actions, parallel));
  state.SetItemsProcessed(state.iterations() * n);
}

void BM_VecEnvSerial(benchmark::State& s) { vec_env_step(s, false); }
void BM_VecEnvParallel(benchmark::State& s) { vec_env_step(s, true); }
BENCHMARK(BM_VecEnvSerial)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_VecEnvParallel)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

struct GaeInputs {
  Eigen::MatrixXd rewards, values, dones;
  Eigen::VectorXd last;
};

GaeInputs gae_inputs(int n) {
  constexpr int kSteps = 24;
  Rng rng(3);
  GaeInputs in{Eigen::MatrixXd(kSteps, n), Eigen::MatrixXd(kSteps, n), Eigen::MatrixXd(kSteps, n),
               Eigen::VectorXd(n)};
  for (Eigen::Index i = 0; i < in.rewards.size(); ++i) {
    in.rewards.data()[i] = rng.normal();
    in.values.data()[i] = rng.normal();
    in.dones.data()[i] = rng.uniform() < 0.02 ? 1.0 : 0.0;
  }
  for (Eigen::Index i = 0; i < n; ++i) in.last[i] = rng.normal();
  return in;
}

void BM_GaeSerial(benchmark::State& state) {
  const GaeInputs in = gae_inputs(static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(rl::gae(in.rewards, in.values, in.dones, in.last, 0.99, 0.95));
}
void BM_GaeParallel(benchmark::State& state) {
  const GaeInputs in = gae_inputs(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(rl::gae_parallel(in.rewards, in.values, in.dones, in.last, 0.99, 0.95));
  }
}
BENCHMARK(BM_GaeSerial)->Arg(64)->Arg(4096);
BENCHMARK(BM_GaeParallel)->Arg(64)->Arg(4096);

}  // namespace

BENCHMARK_MAIN();
