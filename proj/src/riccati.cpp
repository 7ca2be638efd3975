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
#include "mmfg/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mmfg/error.hpp"

namespace mmfg {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kBlowUp = 1e8;

struct RewardSlice {
  VectorXd Q, P, R, S;
};

RewardSlice slice(const QuadraticReward& q, double t) {
  const auto H = static_cast<Eigen::Index>(q.Q.size());
  RewardSlice s{VectorXd(H), VectorXd(H), VectorXd(H), VectorXd(H)};
  for (Eigen::Index h = 0; h < H; ++h) {
    s.Q[h] = q.Q[h](t);
    s.P[h] = q.P[h](t);
    s.R[h] = q.R[h](t);
    s.S[h] = q.S[h](t);
  }
  return s;
}

VectorXd vec(const std::vector<double>& v) {
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct Market {
  VectorXd kappa, sigma2, l, gamma;
  MatrixXd pi_minus_k;
  double r;

  Market(const MarketParams& p, const QuadraticReward& q) {
    kappa = vec(p.kappa);
    sigma2 = vec(p.sigma).cwiseAbs2();
    l = vec(p.l);
    gamma = vec(q.gamma);
    const SharingMatrices sm = sharing_matrices(p);
    pi_minus_k = sm.Pi - sm.K;
    r = p.r;
  }
};

VectorXd gamma_rhs(const Market& m, const RewardSlice& s, const VectorXd& g) {
  const VectorXd denom = s.P + m.sigma2.cwiseProduct(g);
  return m.kappa.cwiseAbs2().cwiseProduct(g.cwiseAbs2()).cwiseQuotient(denom) - 2.0 * m.r * g - s.Q;
}

void check_gamma(const VectorXd& g, const RewardSlice& s, const Market& m, double t) {
  for (Eigen::Index h = 0; h < g.size(); ++h) {
    if (!std::isfinite(g[h]) || std::abs(g[h]) > kBlowUp || !(s.P[h] + m.sigma2[h] * g[h] > 0.0)) {
      std::ostringstream os;
      os << "Gamma[" << h << "] = " << g[h] << " at t = " << t;
      throw Error(Errc::blow_up, os.str());
    }
  }
}

struct BackState {
  VectorXd g;
  MatrixXd xi;
  VectorXd zeta;
};

BackState axpy(const BackState& y, double a, const BackState& k) {
  return {y.g + a * k.g, y.xi + a * k.xi, y.zeta + a * k.zeta};
}

Coefficients coefficients(const Market& m, const RewardSlice& s, const VectorXd& g) {
  const VectorXd s2g = m.sigma2.cwiseProduct(g);
  const VectorXd d1 = s2g + s.P.cwiseProduct(VectorXd::Ones(g.size()) - s.R);
  const VectorXd d2 = s2g + s.P;
  return {m.kappa.cwiseQuotient(d1), s2g.cwiseQuotient(d1), m.kappa.cwiseQuotient(d2),
          s.P.cwiseProduct(s.R).cwiseQuotient(d2), s2g.cwiseQuotient(d2)};
}

BackState back_rhs(const Market& m, const QuadraticReward& q, XiZetaOverrides ov, double t,
                   const BackState& y) {
  const RewardSlice s = slice(q, t);
  BackState d;
  d.g = gamma_rhs(m, s, y.g);
  Coefficients c = coefficients(m, s, y.g);
  if (ov.zero_gain) c.A.setZero();
  const MatrixXd gain = m.pi_minus_k * c.A.asDiagonal();
  const auto H = y.g.size();
  if (ov.zero_xi) {
    d.xi = MatrixXd::Zero(H, H);
  } else {
    const VectorXd running = s.Q.cwiseProduct(VectorXd::Ones(H) - s.S);
    d.xi = -2.0 * m.r * y.xi - y.xi * gain * y.xi;
    d.xi.diagonal() -= running;
  }
  d.zeta = -(m.r * y.zeta + y.xi * gain * y.zeta) - y.xi * (m.l + m.pi_minus_k * c.b);
  return d;
}

// Four-point Lagrange value at the midpoint of [t_k, t_{k+1}] on a uniform grid.
VectorXd midpoint_lagrange(const std::vector<VectorXd>& v, std::size_t k) {
  const std::size_t n = v.size() - 1;
  if (n < 3) return 0.5 * (v[k] + v[k + 1]);
  const std::size_t j0 = std::min<std::size_t>(k == 0 ? 0 : k - 1, n - 3);
  const double x = static_cast<double>(k - j0) + 0.5;
  VectorXd out = VectorXd::Zero(v[0].size());
  for (std::size_t a = 0; a < 4; ++a) {
    double w = 1.0;
    for (std::size_t b = 0; b < 4; ++b)
      if (b != a) w *= (x - static_cast<double>(b)) / (static_cast<double>(a) - static_cast<double>(b));
    out += w * v[j0 + a];
  }
  return out;
}

// Cubic Hermite midpoint from node values and slopes.
template <class V>
V hermite_mid(const V& y0, const V& y1, const V& d0, const V& d1, double h) {
  return 0.5 * (y0 + y1) + (h / 8.0) * (d0 - d1);
}

VectorXd sharing_drift(const Market& m, const VectorXd& vbar) {
  // (Pi v)_h; Pi = (Pi - K) + K
  return m.pi_minus_k * vbar + m.kappa.cwiseProduct(vbar);
}

}  // namespace

GammaCurves solve_gamma(const MarketParams& params, const QuadraticReward& reward, std::size_t n) {
  if (n == 0) throw Error(Errc::invalid_config, "ODE grid needs at least one interval");
  const Market m(params, reward);
  const std::size_t nf = 2 * n;
  const double hf = params.T / static_cast<double>(nf);
  GammaCurves out;
  out.n = n;
  out.T = params.T;
  out.fine.resize(nf + 1);
  out.fine[nf] = slice(reward, params.T).Q;
  auto f = [&](double t, const VectorXd& g) { return VectorXd(-gamma_rhs(m, slice(reward, t), g)); };
  for (std::size_t k = nf; k > 0; --k) {
    const double t = params.T * static_cast<double>(k) / static_cast<double>(nf);
    const VectorXd& y = out.fine[k];
    const VectorXd k1 = f(t, y);
    const VectorXd k2 = f(t - 0.5 * hf, y + 0.5 * hf * k1);
    const VectorXd k3 = f(t - 0.5 * hf, y + 0.5 * hf * k2);
    const VectorXd k4 = f(t - hf, y + hf * k3);
    out.fine[k - 1] = y + (hf / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    check_gamma(out.fine[k - 1], slice(reward, t - hf), m, t - hf);
  }
  return out;
}

Coefficients coefficient_matrices(double t, const VectorXd& gamma, const MarketParams& params,
                                  const QuadraticReward& reward) {
  return coefficients(Market(params, reward), slice(reward, t), gamma);
}

BackwardCurves solve_xi_zeta(const MarketParams& params, const QuadraticReward& reward,
                             const GammaCurves& gamma, XiZetaOverrides ov) {
  const Market m(params, reward);
  const std::size_t nf = 2 * gamma.n;
  const double hf = params.T / static_cast<double>(nf);
  const auto H = static_cast<Eigen::Index>(params.H);

  BackwardCurves out;
  out.n = gamma.n;
  out.T = params.T;
  out.overrides = ov;
  out.gamma.resize(nf + 1);
  out.xi.resize(nf + 1);
  out.zeta.resize(nf + 1);

  const RewardSlice sT = slice(reward, params.T);
  BackState y{sT.Q, MatrixXd::Zero(H, H), -m.gamma};
  if (!ov.zero_xi) y.xi.diagonal() = sT.Q.cwiseProduct(VectorXd::Ones(H) - sT.S);

  auto f = [&](double t, const BackState& s) {
    BackState d = back_rhs(m, reward, ov, t, s);
    return BackState{-d.g, -d.xi, -d.zeta};
  };
  auto store = [&](std::size_t k, const BackState& s) {
    out.gamma[k] = s.g;
    out.xi[k] = s.xi;
    out.zeta[k] = s.zeta;
  };
  store(nf, y);
  for (std::size_t k = nf; k > 0; --k) {
    const double t = params.T * static_cast<double>(k) / static_cast<double>(nf);
    const BackState k1 = f(t, y);
    const BackState k2 = f(t - 0.5 * hf, axpy(y, 0.5 * hf, k1));
    const BackState k3 = f(t - 0.5 * hf, axpy(y, 0.5 * hf, k2));
    const BackState k4 = f(t - hf, axpy(y, hf, k3));
    y = {y.g + (hf / 6.0) * (k1.g + 2.0 * k2.g + 2.0 * k3.g + k4.g),
         y.xi + (hf / 6.0) * (k1.xi + 2.0 * k2.xi + 2.0 * k3.xi + k4.xi),
         y.zeta + (hf / 6.0) * (k1.zeta + 2.0 * k2.zeta + 2.0 * k3.zeta + k4.zeta)};
    check_gamma(y.g, slice(reward, t - hf), m, t - hf);
    if (!y.xi.allFinite() || y.xi.cwiseAbs().maxCoeff() > kBlowUp || !y.zeta.allFinite() ||
        y.zeta.cwiseAbs().maxCoeff() > kBlowUp)
      throw Error(Errc::blow_up, "Xi/zeta left the finite range");
    store(k - 1, y);
  }
  // Same stepping as solve_gamma; a mismatch means the inputs disagree.
  for (std::size_t k = 0; k <= nf; ++k)
    if ((out.gamma[k] - gamma.fine[k]).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + gamma.fine[k].norm()))
      throw Error(Errc::grid_mismatch, "Gamma curves were solved for different inputs");
  return out;
}

MeanFieldSolution mean_field_solution(const MarketParams& params, const QuadraticReward& reward,
                                      const BackwardCurves& bc) {
  const Market m(params, reward);
  const std::size_t n = bc.n;
  const double h = params.T / static_cast<double>(n);
  const VectorXd z0 = vec(params.xi_mean);

  auto coeff = [&](std::size_t j) {
    Coefficients c = coefficients(m, slice(reward, params.T * static_cast<double>(j) /
                                                       static_cast<double>(2 * n)),
                                  bc.gamma[j]);
    if (bc.overrides.zero_gain) c.A.setZero();
    return c;
  };
  auto zdot = [&](std::size_t j, const VectorXd& z) {
    const Coefficients c = coeff(j);
    const VectorXd pbar = bc.xi[j] * z + bc.zeta[j];
    return VectorXd(m.r * z + m.l + m.pi_minus_k * (c.A.cwiseProduct(pbar) + c.b));
  };

  MeanFieldSolution sol;
  sol.t.resize(n + 1);
  sol.z.resize(n + 1);
  sol.z[0] = z0;
  for (std::size_t k = 0; k < n; ++k) {
    const VectorXd& z = sol.z[k];
    const VectorXd k1 = zdot(2 * k, z);
    const VectorXd k2 = zdot(2 * k + 1, z + 0.5 * h * k1);
    const VectorXd k3 = zdot(2 * k + 1, z + 0.5 * h * k2);
    const VectorXd k4 = zdot(2 * k + 2, z + h * k3);
    sol.z[k + 1] = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  for (std::size_t k = 0; k <= n; ++k) {
    const std::size_t j = 2 * k;
    sol.t[k] = params.T * static_cast<double>(k) / static_cast<double>(n);
    sol.gamma.push_back(bc.gamma[j]);
    sol.xi.push_back(bc.xi[j]);
    sol.zeta.push_back(bc.zeta[j]);
    sol.pbar.push_back(bc.xi[j] * sol.z[k] + bc.zeta[j]);
    const Coefficients c = coeff(j);
    sol.vbar.push_back(c.A.cwiseProduct(sol.pbar.back()) + c.b);
  }
  return sol;
}

MeanFieldSolution solve_unconstrained(const MarketParams& params, const QuadraticReward& reward,
                                      std::size_t n) {
  const GammaCurves g = solve_gamma(params, reward, n);
  return mean_field_solution(params, reward, solve_xi_zeta(params, reward, g));
}

MeanFieldSolution MeanFieldSolution::downsample(std::size_t target) const {
  const std::size_t n = intervals();
  if (target == 0 || n % target != 0)
    throw Error(Errc::grid_mismatch, "target grid does not divide the solved grid");
  const std::size_t stride = n / target;
  MeanFieldSolution out;
  for (std::size_t k = 0; k <= n; k += stride) {
    out.t.push_back(t[k]);
    out.gamma.push_back(gamma[k]);
    out.zeta.push_back(zeta[k]);
    out.pbar.push_back(pbar[k]);
    out.z.push_back(z[k]);
    out.vbar.push_back(vbar[k]);
    out.xi.push_back(xi[k]);
  }
  return out;
}

OdeResiduals ode_residuals(const MarketParams& params, const QuadraticReward& reward,
                           const MeanFieldSolution& sol) {
  const Market m(params, reward);
  OdeResiduals res;
  const std::size_t n = sol.intervals();
  const double h = sol.t[1] - sol.t[0];
  for (std::size_t i = 1; i < n; ++i) {
    const BackState y{sol.gamma[i], sol.xi[i], sol.zeta[i]};
    const BackState d = back_rhs(m, reward, {}, sol.t[i], y);
    const double inv = 1.0 / (2.0 * h);
    res.gamma = std::max(res.gamma, ((sol.gamma[i + 1] - sol.gamma[i - 1]) * inv - d.g).cwiseAbs().maxCoeff());
    res.xi = std::max(res.xi, ((sol.xi[i + 1] - sol.xi[i - 1]) * inv - d.xi).cwiseAbs().maxCoeff());
    res.zeta = std::max(res.zeta, ((sol.zeta[i + 1] - sol.zeta[i - 1]) * inv - d.zeta).cwiseAbs().maxCoeff());
  }
  return res;
}

std::vector<VectorXd> pbar_direct(const MarketParams& params, const QuadraticReward& reward,
                                  const MeanFieldSolution& sol) {
  const Market m(params, reward);
  const std::size_t n = sol.intervals();
  const double h = params.T / static_cast<double>(n);
  const auto H = static_cast<Eigen::Index>(params.H);
  std::vector<VectorXd> zd(n + 1);
  for (std::size_t k = 0; k <= n; ++k) zd[k] = m.r * sol.z[k] + m.l + m.pi_minus_k * sol.vbar[k];

  auto rev = [&](double t, const VectorXd& z, const VectorXd& p) {
    const RewardSlice s = slice(reward, t);
    return VectorXd(m.r * p + s.Q.cwiseProduct(VectorXd::Ones(H) - s.S).cwiseProduct(z));
  };
  const RewardSlice sT = slice(reward, params.T);
  std::vector<VectorXd> p(n + 1);
  p[n] = sT.Q.cwiseProduct(VectorXd::Ones(H) - sT.S).cwiseProduct(sol.z[n]) - m.gamma;
  for (std::size_t k = n; k > 0; --k) {
    const double t = sol.t[k];
    const VectorXd zmid = hermite_mid(sol.z[k - 1], sol.z[k], zd[k - 1], zd[k], h);
    const VectorXd k1 = rev(t, sol.z[k], p[k]);
    const VectorXd k2 = rev(t - 0.5 * h, zmid, p[k] + 0.5 * h * k1);
    const VectorXd k3 = rev(t - 0.5 * h, zmid, p[k] + 0.5 * h * k2);
    const VectorXd k4 = rev(t - h, sol.z[k - 1], p[k] + h * k3);
    p[k - 1] = p[k] + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return p;
}

PicardResult picard_fixed_point(const MarketParams& params, const QuadraticReward& reward,
                                std::size_t n, double tol, std::size_t max_iter) {
  const Market m(params, reward);
  const GammaCurves g = solve_gamma(params, reward, n);
  const auto H = static_cast<Eigen::Index>(params.H);
  const double h = params.T / static_cast<double>(n);
  auto tf = [&](std::size_t j) { return params.T * static_cast<double>(j) / static_cast<double>(2 * n); };

  // Coefficients only depend on Gamma, so tabulate them once on the fine grid.
  std::vector<Coefficients> coef(2 * n + 1);
  std::vector<RewardSlice> rs(2 * n + 1);
  for (std::size_t j = 0; j <= 2 * n; ++j) {
    rs[j] = slice(reward, tf(j));
    coef[j] = coefficients(m, rs[j], g.fine[j]);
  }

  PicardResult out;
  std::vector<VectorXd> vt(n + 1, VectorXd::Zero(H));
  std::vector<VectorXd> vmid(n), share(2 * n + 1);
  std::vector<double> phi(n + 1), psi(n + 1), dphi(n + 1), dpsi(n + 1);

  for (std::size_t it = 0; it < max_iter; ++it) {
    for (std::size_t k = 0; k < n; ++k) vmid[k] = midpoint_lagrange(vt, k);
    for (std::size_t k = 0; k <= n; ++k) share[2 * k] = sharing_drift(m, vt[k]);
    for (std::size_t k = 0; k < n; ++k) share[2 * k + 1] = sharing_drift(m, vmid[k]);
    auto vexo = [&](std::size_t j, Eigen::Index c) { return j % 2 ? vmid[j / 2][c] : vt[j / 2][c]; };

    std::vector<VectorXd> next(n + 1, VectorXd::Zero(H));
    for (Eigen::Index c = 0; c < H; ++c) {
      const double kap = m.kappa[c];
      auto rhs = [&](std::size_t j, double ph, double ps) {
        const Coefficients& cf = coef[j];
        const double dph = -2.0 * m.r * ph + kap * cf.C[c] * ph * ph - rs[j].Q[c] * (1.0 - rs[j].S[c]);
        const double src = m.l[c] - kap * cf.e[c] - kap * cf.D[c] * vexo(j, c) + share[j][c];
        const double dps = -m.r * ps + kap * cf.C[c] * ph * ps - ph * src;
        return std::pair{dph, dps};
      };
      phi[n] = rs[2 * n].Q[c] * (1.0 - rs[2 * n].S[c]);
      psi[n] = -m.gamma[c];
      for (std::size_t k = n; k > 0; --k) {
        const std::size_t j = 2 * k;
        const auto [a1, b1] = rhs(j, phi[k], psi[k]);
        const auto [a2, b2] = rhs(j - 1, phi[k] - 0.5 * h * a1, psi[k] - 0.5 * h * b1);
        const auto [a3, b3] = rhs(j - 1, phi[k] - 0.5 * h * a2, psi[k] - 0.5 * h * b2);
        const auto [a4, b4] = rhs(j - 2, phi[k] - h * a3, psi[k] - h * b3);
        phi[k - 1] = phi[k] - (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        psi[k - 1] = psi[k] - (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
      }
      for (std::size_t k = 0; k <= n; ++k) std::tie(dphi[k], dpsi[k]) = rhs(2 * k, phi[k], psi[k]);

      auto response = [&](std::size_t j, double ph, double ps, double mean) {
        const Coefficients& cf = coef[j];
        return cf.C[c] * (ph * mean + ps) + cf.e[c] + cf.D[c] * vexo(j, c);
      };
      auto mdot = [&](std::size_t j, double ph, double ps, double mean) {
        return m.r * mean + m.l[c] - kap * response(j, ph, ps, mean) + share[j][c];
      };
      double mean = params.xi_mean[static_cast<std::size_t>(c)];
      next[0][c] = response(0, phi[0], psi[0], mean);
      for (std::size_t k = 0; k < n; ++k) {
        const double phm = hermite_mid(phi[k], phi[k + 1], dphi[k], dphi[k + 1], h);
        const double psm = hermite_mid(psi[k], psi[k + 1], dpsi[k], dpsi[k + 1], h);
        const double k1 = mdot(2 * k, phi[k], psi[k], mean);
        const double k2 = mdot(2 * k + 1, phm, psm, mean + 0.5 * h * k1);
        const double k3 = mdot(2 * k + 1, phm, psm, mean + 0.5 * h * k2);
        const double k4 = mdot(2 * k + 2, phi[k + 1], psi[k + 1], mean + h * k3);
        mean += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        next[k + 1][c] = response(2 * k + 2, phi[k + 1], psi[k + 1], mean);
      }
    }
    double inc = 0.0;
    for (std::size_t k = 0; k <= n; ++k) inc = std::max(inc, (next[k] - vt[k]).cwiseAbs().maxCoeff());
    vt = std::move(next);
    out.increments.push_back(inc);
    out.iterations = it + 1;
    if (inc < tol) {
      out.converged = true;
      break;
    }
  }
  out.vbar = std::move(vt);
  return out;
}

UniquenessPredicates uniqueness_predicates(const MarketParams& params, const QuadraticReward& reward,
                                           const MeanFieldSolution& sol) {
  const Market m(params, reward);
  UniquenessPredicates u{INFINITY, INFINITY};
  const MatrixXd k_minus_pi = -m.pi_minus_k;
  for (std::size_t i = 0; i < sol.t.size(); ++i) {
    const RewardSlice s = slice(reward, sol.t[i]);
    u.lambda_min_I_minus_S = std::min(u.lambda_min_I_minus_S, (1.0 - s.S.array()).minCoeff());
    const Coefficients c = coefficients(m, s, sol.gamma[i]);
    u.lambda_min_sharing_gain =
        std::min(u.lambda_min_sharing_gain, lambda_min_sym(k_minus_pi * c.A.asDiagonal()));
  }
  return u;
}

CsvTable oracle_table(const MeanFieldSolution& sol) {
  const std::size_t H = sol.classes();
  std::vector<std::string> cols{"t"};
  for (std::size_t h = 1; h <= H; ++h)
    for (const char* name : {"z", "vbar", "Gamma", "pbar"}) cols.push_back(name + std::to_string(h));
  CsvTable table(cols);
  std::vector<double> row(cols.size());
  for (std::size_t i = 0; i < sol.t.size(); ++i) {
    row[0] = sol.t[i];
    for (std::size_t h = 0; h < H; ++h) {
      const auto c = static_cast<Eigen::Index>(h);
      row[1 + 4 * h] = sol.z[i][c];
      row[2 + 4 * h] = sol.vbar[i][c];
      row[3 + 4 * h] = sol.gamma[i][c];
      row[4 + 4 * h] = sol.pbar[i][c];
    }
    table.add_row(row);
  }
  return table;
}

OptimalPaths simulate_optimal_wealth(const MarketParams& params, const QuadraticReward& reward,
                                     const MeanFieldSolution& sol, const PathBatch& batch, Exec exec) {
  if (params.constraint.bounded())
    throw Error(Errc::invalid_config, "feedback simulation assumes an unconstrained interval");
  if (sol.intervals() != batch.n_steps || batch.H != params.H)
    throw Error(Errc::grid_mismatch, "solution grid differs from the path batch");
  const Market m(params, reward);
  const std::size_t M = batch.n_steps, H = params.H, N = batch.n_paths;
  const double dt = batch.dt;

  std::vector<Coefficients> coef(M);
  std::vector<VectorXd> share(M);
  for (std::size_t i = 0; i < M; ++i) {
    coef[i] = coefficients(m, slice(reward, sol.t[i]), sol.gamma[i]);
    share[i] = sharing_drift(m, sol.vbar[i]);
  }
  const std::vector<double> xi0 = initial_wealth(N, params.xi_mean, params.xi_var, batch.seed, batch.stream);

  OptimalPaths out;
  out.n_paths = N;
  out.n_steps = M;
  out.H = H;
  out.x.resize(N * (M + 1) * H);
  out.p.resize(N * (M + 1) * H);
  out.v.resize(N * M * H);

  auto run = [&](long long path) {
    const auto pid = static_cast<std::size_t>(path);
    double* x = out.x.data() + pid * (M + 1) * H;
    double* p = out.p.data() + pid * (M + 1) * H;
    double* v = out.v.data() + pid * M * H;
    for (std::size_t h = 0; h < H; ++h) x[h] = xi0[pid * H + h];
    std::vector<double> drift(H), diffusion(H);
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t h = 0; h < H; ++h) {
        const auto c = static_cast<Eigen::Index>(h);
        const double dev = x[i * H + h] - sol.z[i][c];
        p[i * H + h] = sol.gamma[i][c] * dev + sol.pbar[i][c];
        const double act = coef[i].C[c] * (sol.gamma[i][c] * dev + sol.pbar[i][c]) +
                           coef[i].D[c] * sol.vbar[i][c] + coef[i].e[c];
        v[i * H + h] = act;
        drift[h] = m.r * x[i * H + h] + m.l[c] - m.kappa[c] * act + share[i][c];
        diffusion[h] = params.sigma[h] * (1.0 - act);
      }
      euler_step({x + i * H, H}, drift, diffusion, batch.row(pid, i), dt, {x + (i + 1) * H, H}, i);
    }
    for (std::size_t h = 0; h < H; ++h) {
      const auto c = static_cast<Eigen::Index>(h);
      p[M * H + h] = sol.gamma[M][c] * (x[M * H + h] - sol.z[M][c]) + sol.pbar[M][c];
    }
  };
  const auto np = static_cast<long long>(N);
  if (exec == Exec::parallel) {
    // Exceptions cannot cross the parallel region; rethrow the first afterwards.
    std::exception_ptr err;
#pragma omp parallel for schedule(static)
    for (long long path = 0; path < np; ++path) {
      try {
        run(path);
      } catch (...) {
#pragma omp critical
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  } else {
    for (long long path = 0; path < np; ++path) run(path);
  }

  // Path-ordered moments, independent of the worker count.
  auto moments = [&](const std::vector<double>& data, std::size_t steps, std::vector<VectorXd>& mean,
                     std::vector<VectorXd>& se) {
    mean.assign(steps, VectorXd::Zero(static_cast<Eigen::Index>(H)));
    se.assign(steps, VectorXd::Zero(static_cast<Eigen::Index>(H)));
    for (std::size_t i = 0; i < steps; ++i)
      for (std::size_t h = 0; h < H; ++h) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t q = 0; q < N; ++q) {
          const double val = data[(q * steps + i) * H + h];
          s += val;
          s2 += val * val;
        }
        const double mu = s / static_cast<double>(N);
        const double var = N > 1 ? std::max(0.0, (s2 - N * mu * mu) / static_cast<double>(N - 1)) : 0.0;
        mean[i][static_cast<Eigen::Index>(h)] = mu;
        se[i][static_cast<Eigen::Index>(h)] = std::sqrt(var / static_cast<double>(N));
      }
  };
  moments(out.x, M + 1, out.mean_x, out.se_x);
  moments(out.v, M, out.mean_v, out.se_v);
  return out;
}

}  // namespace mmfg
