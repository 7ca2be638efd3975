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
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mmfg/deepbsde.hpp"
#include "mmfg/io.hpp"
#include "mmfg/model.hpp"
#include "mmfg/paths.hpp"
#include "mmfg/riccati.hpp"

namespace mmfg {

// Finite membership: N[h] members per class, members numbered class-major.
struct Population {
  std::vector<std::size_t> N;
  std::optional<SurvivalSpec> exits;  // exit indicators gate every contribution

  std::size_t total() const noexcept;
  std::size_t offset(std::size_t h) const noexcept;
};

// N^h proportional to omega^h / sum(omega), scaled so the mean class size is n.
Population scaled_population(const MarketParams& params, std::size_t n);

struct OmegaCheck {
  bool consistent = true;
  double max_rel_gap = 0.0;  // |N^h / sum pi N - omega^h| / omega^h
};
OmegaCheck check_omega(const Population& pop, const MarketParams& params, double tol = 0.01);

// What a strategy sees when it acts for one class: the grid node, each member's
// own wealth, and the published class averages of the surviving members.
struct ActionContext {
  std::size_t step = 0;
  double t = 0.0;
  std::span<const double> class_mean_y;  // per class
};

// Decision rule evaluated for all members of one class at once. Auxiliary
// per-member state (e.g. an adjoint estimate) is owned by the simulator.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::size_t aux_size() const { return 0; }
  virtual void init_aux(std::size_t /*h*/, std::span<const double> /*y0*/,
                        std::span<double> /*aux*/) const {}
  virtual void action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                      std::span<const double> aux, std::span<double> v) const = 0;
  // Advance aux from step ctx.step to ctx.step + 1 given the member increments.
  virtual void advance_aux(std::size_t /*h*/, const ActionContext& /*ctx*/,
                           std::span<const double> /*y*/, std::span<const double> /*dW*/,
                           double /*dt*/, std::span<double> /*aux*/) const {}
};

// Equilibrium feedback v = C (Gamma (y - z) + pbar) + D vbar + e from the
// exact solution. With `empirical` the published class mean replaces z.
class RiccatiFeedback final : public Strategy {
 public:
  RiccatiFeedback(const MarketParams& params, const QuadraticReward& reward, MeanFieldSolution sol,
                  bool empirical = false);
  void action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
              std::span<const double> aux, std::span<double> v) const override;
  const MeanFieldSolution& solution() const noexcept { return sol_; }

 private:
  MeanFieldSolution sol_;
  std::vector<Coefficients> coef_;
  bool empirical_;
};

// Learned rule: each member carries its own adjoint estimate p, started at the
// p0 net and pushed forward with the eta net, exactly as in training.
class NetworkFeedback final : public Strategy {
 public:
  NetworkFeedback(const Networks& nets, const RolloutProblem& problem, std::size_t n_steps);
  std::size_t aux_size() const override { return 1; }
  void init_aux(std::size_t h, std::span<const double> y0, std::span<double> aux) const override;
  void action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
              std::span<const double> aux, std::span<double> v) const override;
  void advance_aux(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                   std::span<const double> dW, double dt, std::span<double> aux) const override;

 private:
  Eigen::MatrixXd eta_out(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                          std::span<const double> p) const;

  Networks nets_;
  RolloutProblem problem_;
  FieldCurves field_;
  std::size_t n_steps_;
};

class ConstantStrategy final : public Strategy {
 public:
  explicit ConstantStrategy(std::vector<double> per_class) : value_(std::move(per_class)) {}
  void action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
              std::span<const double> aux, std::span<double> v) const override;

 private:
  std::vector<double> value_;
};

// Base rule shifted by a constant, projected back onto the admissible interval.
class ShiftedStrategy final : public Strategy {
 public:
  ShiftedStrategy(std::shared_ptr<const Strategy> base, double shift, Interval admissible);
  std::size_t aux_size() const override { return base_->aux_size(); }
  void init_aux(std::size_t h, std::span<const double> y0, std::span<double> aux) const override;
  void action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
              std::span<const double> aux, std::span<double> v) const override;
  void advance_aux(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                   std::span<const double> dW, double dt, std::span<double> aux) const override;

 private:
  std::shared_ptr<const Strategy> base_;
  double shift_;
  Interval admissible_;
};

// Everyone follows `base` except member i0 of class h0, who follows `alternative`.
// Both rules must agree on the auxiliary layout.
class DeviantMember final : public Strategy {
 public:
  DeviantMember(std::shared_ptr<const Strategy> base, std::size_t h0, std::size_t i0,
                std::shared_ptr<const Strategy> alternative);
  std::size_t aux_size() const override { return base_->aux_size(); }
  void init_aux(std::size_t h, std::span<const double> y0, std::span<double> aux) const override;
  void action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
              std::span<const double> aux, std::span<double> v) const override;
  void advance_aux(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                   std::span<const double> dW, double dt, std::span<double> aux) const override;

 private:
  std::shared_ptr<const Strategy> base_, alt_;
  std::size_t h0_, i0_;
};

struct SimulationOptions {
  std::size_t n_steps = 100;
  std::uint64_t seed = 0;
  std::uint32_t replication = 0;  // selects an independent set of draws
  // When set, the empirical class averages of v are replaced by these curves
  // (steps 0..n_steps-1) and the shared-claims noise is dropped: every member
  // then follows the limiting single-member dynamics.
  const std::vector<Eigen::VectorXd>* mean_field = nullptr;
};

struct PopulationRun {
  std::size_t members = 0, n_steps = 0;
  std::vector<double> t;        // t_0..t_M
  std::vector<double> y;        // [member][step 0..M]
  std::vector<double> v;        // [member][step 0..M]; v at t_M closes the quadrature
  std::vector<double> U;        // surplus, steps 0..M, U_0 = 0
  std::vector<double> exit_time;  // +inf for members who never leave
  std::vector<Eigen::VectorXd> class_mean_y;  // surviving members, steps 0..M
  double accounting_gap = 0.0;  // max over steps |sum of shares received - dU|
};

// Euler simulation of the finite-population game; throws NonFiniteState.
PopulationRun simulate_population(const Population& pop, const MarketParams& params,
                                  const Strategy& strategy, const SimulationOptions& opts);

struct GapRow {
  std::size_t N = 0;       // mean class size
  double gap = 0.0;        // E[sup_t |xhat - yhat|^2], averaged over members
  double stderr_ = 0.0;
};
struct LogLogFit {
  double slope = 0.0, intercept = 0.0, r2 = 0.0;
};
struct GapStatistics {
  std::vector<GapRow> rows;
  std::optional<LogLogFit> fit;  // absent for fewer than two sizes
};

LogLogFit fit_log_log(std::span<const double> x, std::span<const double> y);

// Paired systems per replication: the limiting dynamics xhat under the feedback
// rule, and the finite game yhat driven by the same member controls and the
// same increments. Replications run in parallel under Exec::parallel.
GapStatistics mean_field_gap(const MarketParams& params, const RiccatiFeedback& strategy,
                             std::span<const std::size_t> schedule, std::size_t n_mc,
                             std::uint64_t seed, Exec exec = Exec::parallel);

struct ObjectiveEstimate {
  double mean = 0.0, stderr_ = 0.0;
  bool degenerate = false;  // class of size one: leave-one-out mean set to 0
  std::vector<double> samples;  // one per replication, in replication order
};

// Monte-Carlo value of member (h, i) with leave-one-out class means in the
// reward and a trapezoidal rule in time.
ObjectiveEstimate objective_estimate(std::size_t h, std::size_t i, const Strategy& strategy,
                                     const Population& pop, const MarketParams& params,
                                     const RewardSpec& reward, std::size_t n_mc,
                                     std::uint64_t seed, std::size_t n_steps = 100,
                                     Exec exec = Exec::parallel);

struct NashRow {
  std::size_t N = 0;
  std::optional<double> max_gain;  // absent for an empty menu
  double stderr_ = 0.0;
  std::size_t best = 0;            // menu index of the maximizer
  std::vector<double> gains, gain_stderr;
};
struct NashProbe {
  std::vector<NashRow> rows;
  // Least-squares fit gain ~ a + b / sqrt(N); absent with fewer than two rows.
  std::optional<std::pair<double, double>> decay;
};

// Gain of member (0, 0) switching to each menu entry while everyone else keeps
// `base`, under common random numbers.
NashProbe epsilon_nash_probe(const MarketParams& params, const RewardSpec& reward,
                             std::shared_ptr<const Strategy> base,
                             std::span<const std::shared_ptr<const Strategy>> deviations,
                             std::span<const std::size_t> schedule, std::size_t n_mc,
                             std::uint64_t seed, std::size_t n_steps = 100,
                             Exec exec = Exec::parallel);

// N, gap, stderr.
CsvTable gap_table(const GapStatistics& stats);
nlohmann::json gap_summary(const GapStatistics& stats);
// N, max_gain, stderr.
CsvTable nash_table(const NashProbe& probe);

}  // namespace mmfg
