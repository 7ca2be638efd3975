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
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "mmfg/curve.hpp"

namespace mmfg {

// Admissible range of the insurance proportion. Infinite ends mean no constraint.
struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();

  static Interval unbounded() { return {}; }
  static Interval closed(double a, double b);

  bool bounded() const noexcept { return std::isfinite(lo) || std::isfinite(hi); }
  double project(double u) const noexcept { return u < lo ? lo : (u > hi ? hi : u); }
  // Derivative of project(): 1 on the closed interval, 0 outside.
  double project_slope(double u) const noexcept { return (u >= lo && u <= hi) ? 1.0 : 0.0; }
};

// Raw, per-class parameter record as read from a config file.
struct MarketRecord {
  double r = 0.0;
  double T = 1.0;
  std::vector<double> kappa, sigma, d, e, net_income, omega, xi_mean;
  std::optional<std::vector<double>> d_e, pi, xi_var;
  Interval constraint;
  bool sharing_disabled = false;  // forces the sharing matrix to zero
};

struct MarketParams {
  std::size_t H = 0;
  double r = 0.0;
  double T = 1.0;
  std::vector<double> kappa, sigma, d, e, d_e, net_income, pi, omega, l;
  Interval constraint;
  std::vector<double> xi_mean, xi_var;
  bool sharing_disabled = false;
};

MarketParams build_market(const MarketRecord& record);
MarketRecord to_record(const MarketParams& params);

struct SharingMatrices {
  Eigen::MatrixXd K, Sigma, Pi, M;
  Eigen::MatrixXd pi_minus_k_inv;  // rank-one update formula
  double dense_inverse_gap = 0.0;  // max-abs gap to an LU inverse
};

SharingMatrices sharing_matrices(const MarketParams& params);
// Pi alone, pi (omega (kappa - d))^T; needs no inverse, so kappa = d = 0 is fine.
Eigen::MatrixXd sharing_weights(const MarketParams& params);

// Minimum/maximum eigenvalue of the symmetric part (A + A^T)/2.
double lambda_min_sym(const Eigen::MatrixXd& a);
double lambda_max_sym(const Eigen::MatrixXd& a);

// Closed form of lambda_min(I - M) for the rank-one sharing structure.
struct ClosedFormLambda {
  double value = 0.0;
  double denominator = 0.0;  // 2 - 2 s, positive whenever kappa > d
};
ClosedFormLambda lambda_min_closed_form(const MarketParams& params);

struct QuadraticReward {
  std::vector<Curve> Q, P, R, S;
  std::vector<double> gamma;  // linear terminal weight
};

struct HaraReward {
  std::vector<double> gamma;  // relative risk aversion, != 1
  std::vector<double> a, b, Q, P, R, B;
};

using RewardSpec = std::variant<QuadraticReward, HaraReward>;

void validate_reward(const RewardSpec& reward, const MarketParams& params);
bool is_quadratic(const RewardSpec& reward) noexcept;

// A derivative value together with its partials in (x, z).
struct Sensitivity {
  double value = 0.0;
  double d_x = 0.0;
  double d_z = 0.0;
};

Sensitivity running_fx(const RewardSpec& reward, std::size_t h, double t, double x, double z);
Sensitivity terminal_gx(const RewardSpec& reward, std::size_t h, double horizon, double x, double z);

struct ResponseCoefficients {
  double P = 1.0;
  double R = 0.0;
};
ResponseCoefficients response_coefficients(const RewardSpec& reward, std::size_t h, double t);

// Solves f_v(v) = u for v, with f_v = -P (v - R vbar).
inline double inverse_response(double u, ResponseCoefficients c, double vbar) {
  return -u / c.P + c.R * vbar;
}

double running_reward(const RewardSpec& reward, std::size_t h, double t, double x, double z,
                      double v, double vbar);
double terminal_reward(const RewardSpec& reward, std::size_t h, double horizon, double x,
                       double z);

struct ConditionEntry {
  std::string name;
  bool holds = false;
  double margin = 0.0;
  bool required = true;  // advisory entries never fail a check
};

struct WellposednessReport {
  std::vector<ConditionEntry> entries;
  bool all_required_hold() const;
  bool all_hold() const;
  const ConditionEntry* find(const std::string& name) const;
};

WellposednessReport check_wellposedness(const MarketParams& params, const RewardSpec& reward);

// Per-class survival probability s^h(t).
struct SurvivalSpec {
  std::vector<Curve> s;
  static SurvivalSpec constant_hazard(const std::vector<double>& hazard);
  std::optional<std::vector<double>> hazard;  // set when built from hazards
};

struct EffectiveCoefficients {
  std::vector<double> l_tilde, weight, running_scale, terminal_scale;
};

EffectiveCoefficients survival_transform(const MarketParams& params, const SurvivalSpec& survival,
                                         double t);

}  // namespace mmfg
