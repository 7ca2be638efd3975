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
#include "mmfg/model.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "mmfg/error.hpp"

namespace mmfg {
namespace {

constexpr double kWeightTol = 1e-9;

void require_size(const std::vector<double>& v, std::size_t H, const char* name) {
  if (v.size() != H) {
    std::ostringstream os;
    os << name << " has " << v.size() << " entries, expected " << H;
    throw Error(Errc::invalid_config, os.str());
  }
  for (double x : v)
    if (!std::isfinite(x)) throw Error(Errc::invalid_config, std::string(name) + " is not finite");
}

double sym_eigen(const Eigen::MatrixXd& a, bool want_min) {
  const Eigen::MatrixXd s = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  return want_min ? ev.minCoeff() : ev.maxCoeff();
}

std::size_t reward_classes(const RewardSpec& reward) {
  return std::visit([](const auto& r) { return r.Q.size(); }, reward);
}

// Marginal utility of the HARA part; linear continuation below zero.
double hara_marginal(const HaraReward& w, std::size_t h, double x) {
  if (x < 0.0) return w.a[h] * std::pow(w.b[h], -w.gamma[h]);
  return w.a[h] * std::pow(w.a[h] * x / w.gamma[h] + w.b[h], -w.gamma[h]);
}

double hara_curvature(const HaraReward& w, std::size_t h, double x) {
  if (x < 0.0) return 0.0;
  return -w.a[h] * w.a[h] * std::pow(w.a[h] * x / w.gamma[h] + w.b[h], -w.gamma[h] - 1.0);
}

double hara_level(const HaraReward& w, std::size_t h, double x) {
  const double g = w.gamma[h];
  if (x < 0.0) return w.a[h] * std::pow(w.b[h], -g) * x;
  return g / (1.0 - g) * std::pow(w.a[h] * x / g + w.b[h], 1.0 - g) -
         g * std::pow(w.b[h], 1.0 - g) / (1.0 - g);
}

}  // namespace

Interval Interval::closed(double a, double b) {
  if (!(a < b)) throw Error(Errc::invalid_config, "constraint interval needs a < b");
  return {a, b};
}

MarketParams build_market(const MarketRecord& rec) {
  const std::size_t H = rec.kappa.size();
  if (H == 0) throw Error(Errc::invalid_config, "at least one class is required");
  if (!std::isfinite(rec.r) || !std::isfinite(rec.T) || rec.T <= 0.0)
    throw Error(Errc::invalid_config, "r and T must be finite with T > 0");
  require_size(rec.kappa, H, "kappa");
  require_size(rec.sigma, H, "sigma");
  require_size(rec.d, H, "d");
  require_size(rec.e, H, "e");
  require_size(rec.net_income, H, "net_income");
  require_size(rec.omega, H, "omega");
  require_size(rec.xi_mean, H, "xi_mean");

  MarketParams p;
  p.H = H;
  p.r = rec.r;
  p.T = rec.T;
  p.kappa = rec.kappa;
  p.sigma = rec.sigma;
  p.d = rec.d;
  p.e = rec.e;
  p.net_income = rec.net_income;
  p.omega = rec.omega;
  p.xi_mean = rec.xi_mean;
  p.constraint = rec.constraint;
  p.sharing_disabled = rec.sharing_disabled;

  if (rec.d_e) {
    require_size(*rec.d_e, H, "d_e");
    p.d_e = *rec.d_e;
  } else {
    p.d_e.resize(H);
    for (std::size_t h = 0; h < H; ++h) p.d_e[h] = 0.1 * rec.e[h];
  }
  if (rec.xi_var) {
    require_size(*rec.xi_var, H, "xi_var");
    p.xi_var = *rec.xi_var;
  } else {
    p.xi_var.assign(H, 0.0);
  }
  for (std::size_t h = 0; h < H; ++h) {
    if (p.sigma[h] < 0.0 || p.d[h] < 0.0 || p.e[h] < 0.0 || p.d_e[h] < 0.0 || p.xi_var[h] < 0.0)
      throw Error(Errc::invalid_config, "sigma, d, e, d_e and xi_var must be non-negative");
    if (p.omega[h] <= 0.0) throw Error(Errc::invalid_config, "omega must be positive");
    if (p.kappa[h] <= 0.0) throw Error(Errc::invalid_config, "kappa must be positive");
  }

  if (rec.pi) {
    require_size(*rec.pi, H, "pi");
    p.pi = *rec.pi;
  } else {
    double denom = 0.0;
    for (std::size_t h = 0; h < H; ++h) denom += p.e[h] * p.omega[h];
    if (!(denom > 0.0))
      throw Error(Errc::invalid_config, "pi omitted and fee-weighted class mass is zero");
    p.pi.resize(H);
    for (std::size_t h = 0; h < H; ++h) p.pi[h] = p.e[h] / denom;
  }
  for (std::size_t h = 0; h < H; ++h)
    if (!(p.pi[h] > 0.0)) throw Error(Errc::non_positive_share, "pi must be positive");

  double weight = 0.0;
  for (std::size_t h = 0; h < H; ++h) weight += p.pi[h] * p.omega[h];
  if (std::abs(weight - 1.0) > kWeightTol) {
    std::ostringstream os;
    os << "sum pi*omega = " << weight;
    throw Error(Errc::weight_mismatch, os.str());
  }
  for (std::size_t h = 0; h < H; ++h)
    if (!(p.kappa[h] - p.d[h] > 0.0)) {
      std::ostringstream os;
      os << "class " << h << ": kappa " << p.kappa[h] << " <= d " << p.d[h];
      throw Error(Errc::kappa_below_fee, os.str());
    }

  double fee_pool = 0.0;
  for (std::size_t k = 0; k < H; ++k) fee_pool += p.omega[k] * (p.e[k] - p.d_e[k]);
  p.l.resize(H);
  for (std::size_t h = 0; h < H; ++h) p.l[h] = p.net_income[h] - p.e[h] + p.pi[h] * fee_pool;
  return p;
}

MarketRecord to_record(const MarketParams& p) {
  MarketRecord rec;
  rec.r = p.r;
  rec.T = p.T;
  rec.kappa = p.kappa;
  rec.sigma = p.sigma;
  rec.d = p.d;
  rec.e = p.e;
  rec.net_income = p.net_income;
  rec.omega = p.omega;
  rec.xi_mean = p.xi_mean;
  rec.d_e = p.d_e;
  rec.pi = p.pi;
  rec.xi_var = p.xi_var;
  rec.constraint = p.constraint;
  rec.sharing_disabled = p.sharing_disabled;
  return rec;
}

Eigen::MatrixXd sharing_weights(const MarketParams& p) {
  const auto H = static_cast<Eigen::Index>(p.H);
  Eigen::VectorXd upsilon(H);
  for (Eigen::Index k = 0; k < H; ++k)
    upsilon[k] = p.sharing_disabled ? 0.0 : p.omega[k] * (p.kappa[k] - p.d[k]);
  return Eigen::Map<const Eigen::VectorXd>(p.pi.data(), H) * upsilon.transpose();
}

SharingMatrices sharing_matrices(const MarketParams& p) {
  const auto H = static_cast<Eigen::Index>(p.H);
  SharingMatrices s;
  Eigen::VectorXd kappa = Eigen::Map<const Eigen::VectorXd>(p.kappa.data(), H);
  Eigen::VectorXd pi = Eigen::Map<const Eigen::VectorXd>(p.pi.data(), H);
  Eigen::VectorXd upsilon(H);
  for (Eigen::Index k = 0; k < H; ++k)
    upsilon[k] = p.sharing_disabled ? 0.0 : p.omega[k] * (p.kappa[k] - p.d[k]);

  s.K = kappa.asDiagonal();
  s.Sigma = Eigen::Map<const Eigen::VectorXd>(p.sigma.data(), H).asDiagonal();
  s.Pi = pi * upsilon.transpose();

  // (Pi - K)^{-1} = -K^{-1} - K^{-1} pi u^T K^{-1} / (1 - u^T K^{-1} pi)
  const Eigen::VectorXd kinv = kappa.cwiseInverse();
  const Eigen::VectorXd kinv_pi = kinv.cwiseProduct(pi);
  const Eigen::VectorXd kinv_u = kinv.cwiseProduct(upsilon);
  const double denom = 1.0 - upsilon.dot(kinv_pi);
  if (!(denom > 0.0)) throw Error(Errc::singular_matrix, "Pi - K is singular (d = 0 in every class?)");
  s.pi_minus_k_inv = Eigen::MatrixXd((-kinv).asDiagonal()) - kinv_pi * kinv_u.transpose() / denom;
  s.M = s.Pi * s.pi_minus_k_inv;

  const Eigen::MatrixXd dense = (s.Pi - s.K).partialPivLu().inverse();
  s.dense_inverse_gap = (dense - s.pi_minus_k_inv).cwiseAbs().maxCoeff();
  return s;
}

double lambda_min_sym(const Eigen::MatrixXd& a) { return sym_eigen(a, true); }
double lambda_max_sym(const Eigen::MatrixXd& a) { return sym_eigen(a, false); }

ClosedFormLambda lambda_min_closed_form(const MarketParams& p) {
  double s = 0.0, pi2 = 0.0, u2 = 0.0;
  for (std::size_t h = 0; h < p.H; ++h) {
    const double u = p.sharing_disabled ? 0.0 : p.omega[h] * (p.kappa[h] - p.d[h]) / p.kappa[h];
    s += p.pi[h] * u;
    pi2 += p.pi[h] * p.pi[h];
    u2 += u * u;
  }
  ClosedFormLambda out;
  out.denominator = 2.0 - 2.0 * s;
  // I - M = I + pi u^T / (1 - s). Its symmetric part has eigenvalues
  // 1 + (s +- |pi||u|) / (2 - 2s) on span{pi, u} and 1 elsewhere; with one
  // class the span is the whole space and the only eigenvalue is 1 / (1 - s).
  out.value = p.H == 1 ? 1.0 / (1.0 - s) : (2.0 - s - std::sqrt(pi2 * u2)) / out.denominator;
  return out;
}

bool is_quadratic(const RewardSpec& reward) noexcept {
  return std::holds_alternative<QuadraticReward>(reward);
}

void validate_reward(const RewardSpec& reward, const MarketParams& p) {
  if (reward_classes(reward) != p.H)
    throw Error(Errc::invalid_config, "reward class count differs from market");
  if (const auto* q = std::get_if<QuadraticReward>(&reward)) {
    if (q->P.size() != p.H || q->R.size() != p.H || q->S.size() != p.H || q->gamma.size() != p.H)
      throw Error(Errc::invalid_config, "quadratic reward vectors must have one entry per class");
    for (std::size_t h = 0; h < p.H; ++h) {
      if (!(q->Q[h].range(p.T).first > 0.0)) throw Error(Errc::invalid_config, "inf Q must be positive");
      if (!(q->P[h].range(p.T).first > 0.0)) throw Error(Errc::invalid_config, "inf P must be positive");
    }
  } else {
    const auto& w = std::get<HaraReward>(reward);
    for (const auto* v : {&w.gamma, &w.a, &w.b, &w.P, &w.R, &w.B})
      if (v->size() != p.H)
        throw Error(Errc::invalid_config, "HARA reward vectors must have one entry per class");
    for (std::size_t h = 0; h < p.H; ++h) {
      if (!(w.b[h] > 0.0) || !(w.a[h] > 0.0) || !(w.gamma[h] > 0.0) || w.gamma[h] == 1.0)
        throw Error(Errc::invalid_config, "HARA needs a > 0, b > 0, gamma > 0 and gamma != 1");
      if (!(w.P[h] > 0.0) || !(w.Q[h] > 0.0))
        throw Error(Errc::invalid_config, "HARA needs P > 0 and Q > 0");
    }
  }
}

Sensitivity running_fx(const RewardSpec& reward, std::size_t h, double t, double x, double z) {
  if (const auto* q = std::get_if<QuadraticReward>(&reward)) {
    const double Q = q->Q[h](t), S = q->S[h](t);
    return {-Q * (x - S * z), -Q, Q * S};
  }
  const auto& w = std::get<HaraReward>(reward);
  return {hara_marginal(w, h, x) - w.Q[h] * (x - w.B[h]), hara_curvature(w, h, x) - w.Q[h], 0.0};
}

Sensitivity terminal_gx(const RewardSpec& reward, std::size_t h, double horizon, double x,
                        double z) {
  if (const auto* q = std::get_if<QuadraticReward>(&reward)) {
    const double Q = q->Q[h](horizon), S = q->S[h](horizon);
    return {q->gamma[h] - Q * (x - S * z), -Q, Q * S};
  }
  return running_fx(reward, h, horizon, x, z);
}

ResponseCoefficients response_coefficients(const RewardSpec& reward, std::size_t h, double t) {
  if (const auto* q = std::get_if<QuadraticReward>(&reward)) return {q->P[h](t), q->R[h](t)};
  const auto& w = std::get<HaraReward>(reward);
  return {w.P[h], w.R[h]};
}

double running_reward(const RewardSpec& reward, std::size_t h, double t, double x, double z,
                      double v, double vbar) {
  if (const auto* q = std::get_if<QuadraticReward>(&reward)) {
    const double dx = x - q->S[h](t) * z, dv = v - q->R[h](t) * vbar;
    return -0.5 * q->Q[h](t) * dx * dx - 0.5 * q->P[h](t) * dv * dv;
  }
  const auto& w = std::get<HaraReward>(reward);
  const double dx = x - w.B[h], dv = v - w.R[h] * vbar;
  return hara_level(w, h, x) - 0.5 * w.Q[h] * dx * dx - 0.5 * w.P[h] * dv * dv;
}

double terminal_reward(const RewardSpec& reward, std::size_t h, double horizon, double x,
                       double z) {
  if (const auto* q = std::get_if<QuadraticReward>(&reward)) {
    const double dx = x - q->S[h](horizon) * z;
    return q->gamma[h] * x - 0.5 * q->Q[h](horizon) * dx * dx;
  }
  const auto& w = std::get<HaraReward>(reward);
  const double dx = x - w.B[h];
  return hara_level(w, h, x) - 0.5 * w.Q[h] * dx * dx;
}

bool WellposednessReport::all_required_hold() const {
  return std::all_of(entries.begin(), entries.end(),
                     [](const ConditionEntry& c) { return !c.required || c.holds; });
}

bool WellposednessReport::all_hold() const {
  return std::all_of(entries.begin(), entries.end(), [](const ConditionEntry& c) { return c.holds; });
}

const ConditionEntry* WellposednessReport::find(const std::string& name) const {
  for (const auto& c : entries)
    if (c.name == name) return &c;
  return nullptr;
}

WellposednessReport check_wellposedness(const MarketParams& p, const RewardSpec& reward) {
  WellposednessReport rep;
  auto add = [&](std::string name, double margin, bool required = true) {
    rep.entries.push_back({std::move(name), margin > 0.0, margin, required});
  };

  const SharingMatrices sm = sharing_matrices(p);
  const auto H = static_cast<Eigen::Index>(p.H);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(H, H);
  const Eigen::MatrixXd kinv = sm.K.diagonal().cwiseInverse().asDiagonal();

  const double lam_imm = lambda_min_sym(I - sm.M);
  add("sharing_coercivity", lam_imm);
  add("premium_spectrum", 1.0 - lambda_max_sym(sm.Pi * kinv));

  double s = 0.0, pi2 = 0.0, u2 = 0.0;
  double ratio_sup = -INFINITY, ratio_inf = INFINITY;
  for (std::size_t h = 0; h < p.H; ++h) {
    const double keep = p.sharing_disabled ? 0.0 : (p.kappa[h] - p.d[h]) / p.kappa[h];
    const double u = p.omega[h] * keep;
    s += p.pi[h] * u;
    pi2 += p.pi[h] * p.pi[h];
    u2 += u * u;
    const double ratio = p.pi[h] / p.omega[h];
    ratio_sup = std::max(ratio_sup, ratio);
    ratio_inf = std::min(ratio_inf, keep > 0.0 ? ratio / keep : INFINITY);
  }
  add("scalar_sharing_bound", 2.0 - (s + std::sqrt(pi2 * u2)));
  // Sufficient only: a failure here is not a defect of the market.
  add("class_ratio_bound", std::isinf(ratio_inf) ? INFINITY : ratio_inf - ratio_sup, false);

  const ClosedFormLambda cf = lambda_min_closed_form(p);
  add("closed_form_denominator", cf.denominator);
  rep.entries.push_back({"closed_form_agreement",
                         std::abs(cf.value - lam_imm) <= 1e-8 * std::max(1.0, std::abs(lam_imm)),
                         cf.value, true});

  if (const auto* q = std::get_if<QuadraticReward>(&reward)) {
    double sup_s = 0.0, sup_r = 0.0;
    for (std::size_t h = 0; h < p.H; ++h) {
      const auto [slo, shi] = q->S[h].range(p.T);
      const auto [rlo, rhi] = q->R[h].range(p.T);
      sup_s = std::max({sup_s, std::abs(slo), std::abs(shi)});
      sup_r = std::max({sup_r, std::abs(rlo), std::abs(rhi)});
    }
    add("peer_wealth_weight", 1.0 - sup_s);
    add("peer_strategy_weight", 1.0 - sup_r);
    add("running_coercivity", [&] {
      constexpr std::size_t n = 1000;
      double lo = INFINITY;
      for (std::size_t i = 0; i <= n; ++i) {
        const double t = p.T * static_cast<double>(i) / n;
        Eigen::VectorXd qd(H), sd(H);
        for (Eigen::Index h = 0; h < H; ++h) {
          qd[h] = q->Q[h](t);
          sd[h] = q->S[h](t);
        }
        const Eigen::MatrixXd a =
            (I - sm.M.transpose()) * qd.asDiagonal() * (I - Eigen::MatrixXd(sd.asDiagonal()));
        lo = std::min(lo, lambda_min_sym(a));
      }
      return lo;
    }());
  } else {
    const auto& w = std::get<HaraReward>(reward);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(sm.M);
    const double mnorm = svd.singularValues()(0);
    double worst = INFINITY;
    for (std::size_t h = 0; h < p.H; ++h) {
      const double lip = w.Q[h] + w.a[h] * w.a[h] / std::pow(w.b[h], 1.0 + w.gamma[h]);
      worst = std::min(worst, w.Q[h] - mnorm * lip);
    }
    add("hara_mixture_bound", worst);
  }
  return rep;
}

SurvivalSpec SurvivalSpec::constant_hazard(const std::vector<double>& hazard) {
  SurvivalSpec s;
  s.hazard = hazard;
  for (double rate : hazard) {
    if (!(rate >= 0.0) || !std::isfinite(rate))
      throw Error(Errc::invalid_config, "hazard rates must be finite and non-negative");
    s.s.push_back(Curve::function([rate](double t) { return std::exp(-rate * t); }));
  }
  return s;
}

EffectiveCoefficients survival_transform(const MarketParams& p, const SurvivalSpec& sv, double t) {
  if (sv.s.size() != p.H) throw Error(Errc::invalid_config, "survival curve count differs from market");
  if (t < 0.0 || t > p.T) throw Error(Errc::invalid_config, "survival time outside [0, T]");
  std::vector<double> st(p.H), sT(p.H);
  double norm = 0.0, fees = 0.0;
  for (std::size_t h = 0; h < p.H; ++h) {
    st[h] = sv.s[h](t);
    sT[h] = sv.s[h](p.T);
    if (!(sT[h] > 0.0)) throw Error(Errc::degenerate_survival, "survival probability vanishes by T");
    norm += p.pi[h] * p.omega[h] * st[h];
    fees += p.omega[h] * (p.e[h] - p.d_e[h]) * st[h];
  }
  if (!(norm > 0.0)) throw Error(Errc::degenerate_survival, "surviving share mass is not positive");
  EffectiveCoefficients out;
  out.l_tilde.resize(p.H);
  out.weight.resize(p.H);
  for (std::size_t h = 0; h < p.H; ++h) {
    out.l_tilde[h] = p.net_income[h] + p.pi[h] * fees / norm;
    out.weight[h] = st[h] / norm;
  }
  out.running_scale = st;
  out.terminal_scale = sT;
  return out;
}

}  // namespace mmfg
