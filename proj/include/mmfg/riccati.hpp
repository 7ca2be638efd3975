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
#include <vector>

#include "mmfg/io.hpp"
#include "mmfg/model.hpp"
#include "mmfg/paths.hpp"

namespace mmfg {

inline constexpr std::size_t kDefaultOdeGrid = 1000;

// Curves are integrated on a grid twice as fine as the n requested intervals,
// so every RK4 consumer on the n-grid finds exact half-step samples.
struct GammaCurves {
  std::size_t n = 0;
  double T = 1.0;
  std::vector<Eigen::VectorXd> fine;  // 2n + 1 nodes
};

GammaCurves solve_gamma(const MarketParams& params, const QuadraticReward& reward,
                        std::size_t n_grid = kDefaultOdeGrid);

// Diagonal feedback coefficients, stored as their diagonals.
struct Coefficients {
  Eigen::VectorXd A, b, C, D, e;
};

Coefficients coefficient_matrices(double t, const Eigen::VectorXd& gamma, const MarketParams& params,
                                  const QuadraticReward& reward);

struct XiZetaOverrides {
  bool zero_gain = false;  // A == 0: drops the sharing feedback
  bool zero_xi = false;    // Xi == 0: zeta decouples
};

struct BackwardCurves {
  std::size_t n = 0;
  double T = 1.0;
  XiZetaOverrides overrides;
  std::vector<Eigen::VectorXd> gamma, zeta;  // 2n + 1 fine nodes
  std::vector<Eigen::MatrixXd> xi;
};

BackwardCurves solve_xi_zeta(const MarketParams& params, const QuadraticReward& reward,
                             const GammaCurves& gamma, XiZetaOverrides overrides = {});

// Equilibrium curves on t_0..t_n.
struct MeanFieldSolution {
  std::vector<double> t;
  std::vector<Eigen::VectorXd> gamma, zeta, pbar, z, vbar;
  std::vector<Eigen::MatrixXd> xi;

  std::size_t intervals() const noexcept { return t.empty() ? 0 : t.size() - 1; }
  std::size_t classes() const noexcept { return z.empty() ? 0 : static_cast<std::size_t>(z[0].size()); }
  // Exact node matching; throws GridMismatch unless m divides the grid.
  MeanFieldSolution downsample(std::size_t m) const;
};

MeanFieldSolution mean_field_solution(const MarketParams& params, const QuadraticReward& reward,
                                      const BackwardCurves& curves);

// Convenience: Gamma, then (Xi, zeta), then the forward mean.
MeanFieldSolution solve_unconstrained(const MarketParams& params, const QuadraticReward& reward,
                                      std::size_t n_grid = kDefaultOdeGrid);

struct OdeResiduals {
  double gamma = 0.0, xi = 0.0, zeta = 0.0;
};

// Max centered-difference residual over interior nodes.
OdeResiduals ode_residuals(const MarketParams& params, const QuadraticReward& reward,
                           const MeanFieldSolution& sol);

// pbar from integrating its own backward equation along the solved z.
std::vector<Eigen::VectorXd> pbar_direct(const MarketParams& params, const QuadraticReward& reward,
                                         const MeanFieldSolution& sol);

struct PicardResult {
  std::vector<Eigen::VectorXd> vbar;  // on t_0..t_n
  std::vector<double> increments;     // sup-norm change per sweep
  std::size_t iterations = 0;
  bool converged = false;
};

// Fixed point of vbar -> E[best response to exogenous vbar], solved class by
// class without the joint ansatz.
PicardResult picard_fixed_point(const MarketParams& params, const QuadraticReward& reward,
                                std::size_t n_grid = kDefaultOdeGrid, double tol = 1e-11,
                                std::size_t max_iter = 200);

struct UniquenessPredicates {
  double lambda_min_I_minus_S = 0.0;     // inf over t
  double lambda_min_sharing_gain = 0.0;  // inf over t of lambda_min((K - Pi) A_t)
};

UniquenessPredicates uniqueness_predicates(const MarketParams& params, const QuadraticReward& reward,
                                           const MeanFieldSolution& sol);

// t, then per class z, vbar, Gamma, pbar.
CsvTable oracle_table(const MeanFieldSolution& sol);

struct OptimalPaths {
  std::size_t n_paths = 0, n_steps = 0, H = 0;
  std::vector<double> x, p;  // [path][step 0..M][class]
  std::vector<double> v;     // [path][step 0..M-1][class]
  std::vector<Eigen::VectorXd> mean_x, se_x;  // per step 0..M
  std::vector<Eigen::VectorXd> mean_v, se_v;  // per step 0..M-1
};

OptimalPaths simulate_optimal_wealth(const MarketParams& params, const QuadraticReward& reward,
                                     const MeanFieldSolution& sol, const PathBatch& batch,
                                     Exec exec = Exec::parallel);

}  // namespace mmfg
