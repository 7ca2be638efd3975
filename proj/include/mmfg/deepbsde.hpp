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
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mmfg/io.hpp"
#include "mmfg/mlp.hpp"
#include "mmfg/model.hpp"
#include "mmfg/paths.hpp"
#include "mmfg/riccati.hpp"

namespace mmfg {

struct TrainingConfig {
  std::size_t n_paths = 10000;
  std::size_t n_steps = 100;
  std::size_t iterations = 1000;
  AdamSettings adam;
  double penalty = 1.0;
  std::uint64_t seed = 0;
  std::size_t hidden = 32;
  bool frozen_batch = false;        // reuse the iteration-0 increments every step
  bool ignore_wellposedness = false;
  std::size_t block = 256;          // paths per work unit; fixes the reduction order
  Exec exec = Exec::parallel;
  std::vector<std::size_t> snapshots;  // iterations at which curves are recorded
  std::size_t eval_paths = 0;          // 0: same as n_paths
  // Initial v-bar (output bias of its nets). Unset: the midpoint of a bounded
  // admissible interval, otherwise 0. Inside I matters: on the boundary the
  // projection passes no gradient once a step leaves it.
  std::optional<double> vbar_start;

  void validate() const;
};

// Three nets per class: vbar(t), eta(t, x, z, p) and p0(x0). All weights sit in
// one flat vector so the optimizer and the checkpoint see a single block.
class Networks {
 public:
  Networks(std::size_t H, std::size_t hidden = 32);

  std::size_t classes() const noexcept { return H_; }
  const Mlp& vbar_arch() const noexcept { return vbar_; }
  const Mlp& eta_arch() const noexcept { return eta_; }
  const Mlp& p0_arch() const noexcept { return p0_; }

  std::span<double> params() noexcept { return w_; }
  std::span<const double> params() const noexcept { return w_; }

  std::size_t vbar_offset(std::size_t h) const noexcept { return h * vbar_.size(); }
  std::size_t eta_offset(std::size_t h) const noexcept { return H_ * vbar_.size() + h * eta_.size(); }
  std::size_t p0_offset(std::size_t h) const noexcept {
    return H_ * (vbar_.size() + eta_.size()) + h * p0_.size();
  }
  std::span<const double> vbar(std::size_t h) const { return {w_.data() + vbar_offset(h), vbar_.size()}; }
  std::span<const double> eta(std::size_t h) const { return {w_.data() + eta_offset(h), eta_.size()}; }
  std::span<const double> p0(std::size_t h) const { return {w_.data() + p0_offset(h), p0_.size()}; }

  void initialize(std::uint64_t seed);

 private:
  std::size_t H_;
  Mlp vbar_, eta_, p0_;
  std::vector<double> w_;
};

// Everything the rollout needs besides the weights.
struct RolloutProblem {
  MarketParams market;
  RewardSpec reward;
  std::optional<SurvivalSpec> survival;
};

struct LossBreakdown {
  double loss = 0.0;
  double terminal = 0.0;        // sum over classes of E[residual^2]
  double terminal_se = 0.0;     // Monte-Carlo standard error of `terminal`
  double meanfield = 0.0;       // (1/M) sum (w E[v] - vbar)^2
  std::vector<double> grad;     // dL/dw, same layout as Networks::params()
  std::vector<double> t;                // t_0..t_M
  std::vector<Eigen::VectorXd> vbar;    // projected, steps 0..M-1
  std::vector<Eigen::VectorXd> mean_v;  // batch mean of v, steps 0..M-1
  std::vector<Eigen::VectorXd> z;       // mean-field argument, steps 0..M
  double v_min = 0.0, v_max = 0.0;      // range of every emitted v
};

// Penalized terminal-condition loss of the unrolled Euler scheme, with
// reverse-mode gradients through the whole simulation.
LossBreakdown rollout_loss(const Networks& nets, const RolloutProblem& problem,
                           const PathBatch& batch, std::span<const double> xi0, double penalty,
                           Exec exec = Exec::parallel, std::size_t block = 256,
                           bool want_grad = true);

struct CurveSnapshot {
  std::size_t iteration = 0;
  std::vector<Eigen::VectorXd> vbar, z;
};

struct TrainedSolver {
  explicit TrainedSolver(Networks n) : nets(std::move(n)) {}

  Networks nets;
  TrainingConfig config;
  std::vector<double> loss_history;
  double terminal_error = 0.0, terminal_error_se = 0.0, meanfield_error = 0.0;
  std::optional<double> relative_error;
  std::vector<double> t;                     // t_0..t_M
  std::vector<Eigen::VectorXd> vbar, z;      // t_0..t_M
  std::vector<Eigen::VectorXd> mean_v;       // evaluation batch, t_0..t_{M-1}
  std::vector<CurveSnapshot> snapshots;
  double wall_seconds = 0.0;
  double v_min = 0.0, v_max = 0.0;
};

// Projected vbar and the deterministic mean-field argument on t_0..t_M.
struct FieldCurves {
  std::vector<Eigen::VectorXd> raw, vbar, z;
};
FieldCurves field_curves(const Networks& nets, const RolloutProblem& problem, std::size_t n_steps);

// Stream tags for the increments: iteration k uses stream k, evaluation sits
// above every training stream.
inline constexpr std::uint32_t kEvalStream = 0x80000000u;

// Fresh increments and initial wealth for one stream.
PathBatch training_batch(const RolloutProblem& problem, const TrainingConfig& cfg,
                         std::uint32_t stream, std::size_t n_paths,
                         std::vector<double>& xi0);

TrainedSolver train(const RolloutProblem& problem, const TrainingConfig& cfg,
                    const std::function<void(std::size_t, double)>& progress = {});

// Diagnostics of the given weights on a fresh batch (stream chosen by caller).
LossBreakdown evaluate(const Networks& nets, const RolloutProblem& problem, const TrainingConfig& cfg,
                       std::uint32_t stream);

// Percent error of the learned curves against the exact solution on the same
// grid; throws GridMismatch when the grids differ.
double relative_error(std::span<const Eigen::VectorXd> vbar_nn, std::span<const Eigen::VectorXd> z_nn,
                      const MeanFieldSolution& oracle);
double relative_error(const TrainedSolver& solver, const MeanFieldSolution& oracle);

// t, then per class vbar, z on t_0..t_M (vbar at t_M is the net evaluated at T).
CsvTable curves_table(const TrainedSolver& solver);
CsvTable loss_table(const TrainedSolver& solver);

void write_checkpoint(const std::filesystem::path& path, const Networks& nets, std::uint64_t config_hash);
// Returns the networks; throws IoFailure on a hash or shape mismatch.
Networks read_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash,
                         std::size_t H, std::size_t hidden = 32);

}  // namespace mmfg
