/*
 Copyright 2026 The mmfg Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
// Serial reference vs OpenMP kernels. The second argument selects the path:
// 0 serial, 1 parallel. Results are bit-identical either way; only time differs.
#include <benchmark/benchmark.h>
#include <omp.h>

#include <memory>
#include <vector>

#include "mmfg/cases.hpp"
#include "mmfg/deepbsde.hpp"
#include "mmfg/nplayer.hpp"
#include "mmfg/paths.hpp"
#include "mmfg/riccati.hpp"

using namespace mmfg;

namespace {

Exec exec_of(const benchmark::State& state) { return state.range(1) ? Exec::parallel : Exec::serial; }

void label(benchmark::State& state) {
  state.SetLabel(state.range(1) ? "parallel x" + std::to_string(omp_get_max_threads()) : "serial");
}

void BM_BrownianIncrements(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    PathBatch b = brownian_increments(n, 100, 2, 7, 1.0, 0, exec_of(state));
    benchmark::DoNotOptimize(b.dW.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * 200);
  label(state);
}
BENCHMARK(BM_BrownianIncrements)->ArgsProduct({{2000, 10000}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_RolloutLoss(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const ScenarioConfig c = case_config(CaseSpec{"1a", true});
  const RolloutProblem problem{c.market, c.reward, c.survival};
  Networks nets(c.market.H);
  nets.initialize(3);
  TrainingConfig tc;
  tc.n_paths = n;
  std::vector<double> xi0;
  const PathBatch batch = training_batch(problem, tc, 0, n, xi0);
  for (auto _ : state) {
    LossBreakdown lb = rollout_loss(nets, problem, batch, xi0, 10.0, exec_of(state));
    benchmark::DoNotOptimize(lb.loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
  label(state);
}
BENCHMARK(BM_RolloutLoss)->ArgsProduct({{2000}, {0, 1}})->Unit(benchmark::kMillisecond);

void BM_MeanFieldGap(benchmark::State& state) {
  const ScenarioConfig c = parse_config(baseline_scenario());
  const auto& q = std::get<QuadraticReward>(c.reward);
  const RiccatiFeedback feedback(c.market, q, solve_unconstrained(c.market, q).downsample(100));
  const std::vector<std::size_t> sizes{static_cast<std::size_t>(state.range(0))};
  for (auto _ : state) {
    GapStatistics g = mean_field_gap(c.market, feedback, sizes, 100, 11, exec_of(state));
    benchmark::DoNotOptimize(g.rows.data());
  }
  label(state);
}
BENCHMARK(BM_MeanFieldGap)->ArgsProduct({{40, 160}, {0, 1}})->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
