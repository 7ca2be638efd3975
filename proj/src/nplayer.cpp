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
#include "mmfg/nplayer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <sstream>

#include "mmfg/error.hpp"

namespace mmfg {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Runs body(k) for k in [0, n); the first exception is rethrown afterwards.
template <class F>
void for_replications(std::size_t n, Exec exec, F&& body) {
  const auto nn = static_cast<long long>(n);
  if (exec == Exec::serial) {
    for (long long k = 0; k < nn; ++k) body(static_cast<std::size_t>(k));
    return;
  }
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic)
  for (long long k = 0; k < nn; ++k) {
    try {
      body(static_cast<std::size_t>(k));
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

std::vector<double> grid(std::size_t M, double T) {
  std::vector<double> t(M + 1);
  for (std::size_t i = 0; i <= M; ++i) t[i] = i == M ? T : T * static_cast<double>(i) / static_cast<double>(M);
  return t;
}

double mean_se(std::span<const double> x, double& se) {
  const auto n = static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += v;
  const double m = s / n;
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  se = x.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return m;
}

// Draws of one replication: member increments, initial wealth and exit times.
struct MemberDraws {
  std::vector<double> dW;  // [member][step]
  std::vector<double> xi;
  std::vector<double> exit_time;
  std::vector<std::size_t> cls;
};

MemberDraws draw_members(const Population& pop, const MarketParams& mk, std::size_t M,
                         const std::vector<double>& t, std::uint64_t seed, std::uint32_t rep) {
  const std::size_t n = pop.total();
  const double sdt = std::sqrt(mk.T / static_cast<double>(M));
  MemberDraws d;
  d.dW.resize(n * M);
  d.xi.resize(n);
  d.exit_time.assign(n, kInf);
  d.cls.resize(n);
  for (std::size_t h = 0, m = 0; h < mk.H; ++h)
    for (std::size_t i = 0; i < pop.N[h]; ++i, ++m) {
      const auto mm = static_cast<std::uint32_t>(m), hh = static_cast<std::uint32_t>(h);
      d.cls[m] = h;
      for (std::size_t s = 0; s < M; ++s)
        d.dW[m * M + s] = sdt * standard_normal({seed, mm, static_cast<std::uint32_t>(s), hh, rep});
      d.xi[m] = mk.xi_mean[h];
      if (mk.xi_var[h] > 0.0)
        d.xi[m] += std::sqrt(mk.xi_var[h]) * standard_normal({seed, mm, kInitialWealthStep, hh, rep});
      if (pop.exits) {
        // Leaves at the first node where the survival curve drops to the uniform.
        const double u = uniform_open({seed, mm, 0, kExitChannel + hh, rep});
        for (std::size_t s = 1; s <= M; ++s)
          if (pop.exits->s[h](t[s]) <= u) {
            d.exit_time[m] = t[s];
            break;
          }
      }
    }
  return d;
}

// One Euler step of the finite game for the surviving members. Returns dU.
double game_step(const MarketParams& mk, const MemberDraws& d, std::size_t step, double t,
                 double dt, std::span<const double> y, std::span<const double> v,
                 std::span<double> next, double& accounting) {
  const std::size_t n = y.size();
  const std::size_t M = d.dW.size() / std::max<std::size_t>(n, 1);
  double du = 0.0, denom = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    if (!(d.exit_time[m] > t)) continue;
    const std::size_t h = d.cls[m];
    const double premium = mk.sharing_disabled ? 0.0 : (mk.kappa[h] - mk.d[h]) * v[m] * dt +
                                                           mk.sigma[h] * v[m] * d.dW[m * M + step];
    du += premium + (mk.e[h] - mk.d_e[h]) * dt;
    denom += mk.pi[h];
  }
  double received = 0.0;
  for (std::size_t m = 0; m < n; ++m) {
    if (!(d.exit_time[m] > t)) {
      next[m] = y[m];
      continue;
    }
    const std::size_t h = d.cls[m];
    const double share = mk.pi[h] / denom * du;
    received += share;
    next[m] = y[m] + (mk.r * y[m] + mk.net_income[h] - mk.e[h] - mk.kappa[h] * v[m]) * dt +
              mk.sigma[h] * (1.0 - v[m]) * d.dW[m * M + step] + share;
    if (!std::isfinite(next[m])) {
      std::ostringstream os;
      os << "member " << m << " at step " << step;
      throw Error(Errc::non_finite_state, os.str());
    }
  }
  accounting = std::max(accounting, std::abs(received - du));
  return du;
}

// Limiting single-member step: averages replaced by the mean-field curve.
void limit_step(const MarketParams& mk, const MemberDraws& d, std::size_t step, double dt,
                std::span<const double> y, std::span<const double> v, std::span<double> next,
                std::span<const double> share) {
  const std::size_t n = y.size();
  const std::size_t M = d.dW.size() / std::max<std::size_t>(n, 1);
  for (std::size_t m = 0; m < n; ++m) {
    const std::size_t h = d.cls[m];
    next[m] = y[m] + (mk.r * y[m] + mk.l[h] - mk.kappa[h] * v[m] + share[h]) * dt +
              mk.sigma[h] * (1.0 - v[m]) * d.dW[m * M + step];
    if (!std::isfinite(next[m])) {
      std::ostringstream os;
      os << "member " << m << " at step " << step;
      throw Error(Errc::non_finite_state, os.str());
    }
  }
}

std::vector<double> sharing_terms(const MarketParams& mk, const VectorXd& vbar) {
  const VectorXd s = sharing_weights(mk) * vbar;
  return {s.data(), s.data() + s.size()};
}

// Class means over surviving members; 0 for an empty class.
void class_means(const Population& pop, const MemberDraws& d, double t, std::span<const double> y,
                 std::span<double> out) {
  for (std::size_t h = 0; h < pop.N.size(); ++h) {
    double s = 0.0;
    std::size_t k = 0;
    for (std::size_t m = pop.offset(h); m < pop.offset(h) + pop.N[h]; ++m)
      if (d.exit_time[m] > t) {
        s += y[m];
        ++k;
      }
    out[h] = k ? s / static_cast<double>(k) : 0.0;
  }
}

// Strategy evaluated class by class at one node.
void act_all(const Strategy& st, const Population& pop, const ActionContext& ctx,
             std::span<const double> y, std::span<const double> aux, std::span<double> v) {
  const std::size_t A = st.aux_size();
  for (std::size_t h = 0; h < pop.N.size(); ++h) {
    const std::size_t o = pop.offset(h), n = pop.N[h];
    st.action(h, ctx, y.subspan(o, n), aux.subspan(o * A, n * A), v.subspan(o, n));
  }
}

void advance_all(const Strategy& st, const Population& pop, const MemberDraws& d,
                 const ActionContext& ctx, std::size_t M, double dt, std::span<const double> y,
                 std::span<double> aux) {
  const std::size_t A = st.aux_size();
  if (A == 0) return;
  std::vector<double> dw;
  for (std::size_t h = 0; h < pop.N.size(); ++h) {
    const std::size_t o = pop.offset(h), n = pop.N[h];
    dw.resize(n);
    for (std::size_t k = 0; k < n; ++k) dw[k] = d.dW[(o + k) * M + ctx.step];
    st.advance_aux(h, ctx, y.subspan(o, n), dw, dt, aux.subspan(o * A, n * A));
  }
}

void init_all(const Strategy& st, const Population& pop, std::span<const double> y,
              std::span<double> aux) {
  const std::size_t A = st.aux_size();
  if (A == 0) return;
  for (std::size_t h = 0; h < pop.N.size(); ++h) {
    const std::size_t o = pop.offset(h), n = pop.N[h];
    st.init_aux(h, y.subspan(o, n), aux.subspan(o * A, n * A));
  }
}

}  // namespace

std::size_t Population::total() const noexcept { return std::accumulate(N.begin(), N.end(), std::size_t{0}); }

std::size_t Population::offset(std::size_t h) const noexcept {
  return std::accumulate(N.begin(), N.begin() + static_cast<std::ptrdiff_t>(h), std::size_t{0});
}

Population scaled_population(const MarketParams& params, std::size_t n) {
  if (n == 0) throw Error(Errc::invalid_config, "population size must be positive");
  const double total = std::accumulate(params.omega.begin(), params.omega.end(), 0.0);
  Population pop;
  for (std::size_t h = 0; h < params.H; ++h) {
    const double share = static_cast<double>(n * params.H) * params.omega[h] / total;
    pop.N.push_back(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(share))));
  }
  return pop;
}

OmegaCheck check_omega(const Population& pop, const MarketParams& params, double tol) {
  if (pop.N.size() != params.H) throw Error(Errc::invalid_config, "population has the wrong class count");
  double denom = 0.0;
  for (std::size_t h = 0; h < params.H; ++h) denom += params.pi[h] * static_cast<double>(pop.N[h]);
  OmegaCheck out;
  for (std::size_t h = 0; h < params.H; ++h) {
    const double gap = std::abs(static_cast<double>(pop.N[h]) / denom - params.omega[h]) / params.omega[h];
    out.max_rel_gap = std::max(out.max_rel_gap, gap);
  }
  out.consistent = out.max_rel_gap <= tol;
  return out;
}

// ---- strategies ----

RiccatiFeedback::RiccatiFeedback(const MarketParams& params, const QuadraticReward& reward,
                                 MeanFieldSolution sol, bool empirical)
    : sol_(std::move(sol)), empirical_(empirical) {
  if (params.constraint.bounded())
    throw Error(Errc::invalid_config, "closed-form feedback needs an unconstrained interval");
  for (std::size_t i = 0; i < sol_.t.size(); ++i)
    coef_.push_back(coefficient_matrices(sol_.t[i], sol_.gamma[i], params, reward));
}

void RiccatiFeedback::action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                             std::span<const double>, std::span<double> v) const {
  if (ctx.step >= sol_.t.size()) throw Error(Errc::grid_mismatch, "step beyond the solution grid");
  const auto c = static_cast<Index>(h);
  const Coefficients& k = coef_[ctx.step];
  const double z = empirical_ ? ctx.class_mean_y[h] : sol_.z[ctx.step][c];
  const double g = sol_.gamma[ctx.step][c], pb = sol_.pbar[ctx.step][c];
  const double rest = k.D[c] * sol_.vbar[ctx.step][c] + k.e[c];
  for (std::size_t m = 0; m < y.size(); ++m) v[m] = k.C[c] * (g * (y[m] - z) + pb) + rest;
}

NetworkFeedback::NetworkFeedback(const Networks& nets, const RolloutProblem& problem, std::size_t n_steps)
    : nets_(nets), problem_(problem), field_(field_curves(nets, problem, n_steps)), n_steps_(n_steps) {}

void NetworkFeedback::init_aux(std::size_t h, std::span<const double> y0, std::span<double> aux) const {
  if (y0.empty()) return;
  MatrixXd in(1, static_cast<Index>(y0.size())), out;
  for (std::size_t m = 0; m < y0.size(); ++m) in(0, static_cast<Index>(m)) = y0[m];
  nets_.p0_arch().forward(nets_.p0(h), in, out);
  for (std::size_t m = 0; m < y0.size(); ++m) aux[m] = out(0, static_cast<Index>(m));
}

MatrixXd NetworkFeedback::eta_out(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                                  std::span<const double> p) const {
  const auto n = static_cast<Index>(y.size());
  MatrixXd in(4, n), out;
  in.row(0).setConstant(ctx.t);
  in.row(2).setConstant(field_.z[ctx.step][static_cast<Index>(h)]);
  for (Index m = 0; m < n; ++m) {
    in(1, m) = y[static_cast<std::size_t>(m)];
    in(3, m) = p[static_cast<std::size_t>(m)];
  }
  nets_.eta_arch().forward(nets_.eta(h), in, out);
  return out;
}

void NetworkFeedback::action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                             std::span<const double> aux, std::span<double> v) const {
  if (ctx.step > n_steps_) throw Error(Errc::grid_mismatch, "step beyond the network grid");
  if (y.empty()) return;
  const MarketParams& mk = problem_.market;
  const ResponseCoefficients rc = response_coefficients(problem_.reward, h, ctx.t);
  double scale = 1.0;
  if (problem_.survival) scale = survival_transform(mk, *problem_.survival, ctx.t).running_scale[h];
  const MatrixXd eta = eta_out(h, ctx, y, aux);
  const double Rv = rc.R * field_.vbar[ctx.step][static_cast<Index>(h)];
  for (std::size_t m = 0; m < y.size(); ++m)
    v[m] = mk.constraint.project((mk.kappa[h] * aux[m] + mk.sigma[h] * eta(0, static_cast<Index>(m))) /
                                     (scale * rc.P) +
                                 Rv);
}

void NetworkFeedback::advance_aux(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                                  std::span<const double> dW, double dt, std::span<double> aux) const {
  if (y.empty()) return;
  const MarketParams& mk = problem_.market;
  double scale = 1.0;
  if (problem_.survival) scale = survival_transform(mk, *problem_.survival, ctx.t).running_scale[h];
  const MatrixXd eta = eta_out(h, ctx, y, aux);
  const double z = field_.z[ctx.step][static_cast<Index>(h)];
  for (std::size_t m = 0; m < y.size(); ++m) {
    const double fx = running_fx(problem_.reward, h, ctx.t, y[m], z).value;
    aux[m] = aux[m] - (mk.r * aux[m] - scale * fx) * dt + eta(0, static_cast<Index>(m)) * dW[m];
  }
}

void ConstantStrategy::action(std::size_t h, const ActionContext&, std::span<const double> y,
                              std::span<const double>, std::span<double> v) const {
  if (h >= value_.size()) throw Error(Errc::invalid_config, "constant strategy lacks a class value");
  std::fill(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(y.size()), value_[h]);
}

ShiftedStrategy::ShiftedStrategy(std::shared_ptr<const Strategy> base, double shift, Interval admissible)
    : base_(std::move(base)), shift_(shift), admissible_(admissible) {
  if (!base_) throw Error(Errc::invalid_config, "shifted strategy needs a base rule");
}

void ShiftedStrategy::init_aux(std::size_t h, std::span<const double> y0, std::span<double> aux) const {
  base_->init_aux(h, y0, aux);
}

void ShiftedStrategy::action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                             std::span<const double> aux, std::span<double> v) const {
  base_->action(h, ctx, y, aux, v);
  for (std::size_t m = 0; m < y.size(); ++m) v[m] = admissible_.project(v[m] + shift_);
}

void ShiftedStrategy::advance_aux(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                                  std::span<const double> dW, double dt, std::span<double> aux) const {
  base_->advance_aux(h, ctx, y, dW, dt, aux);
}

DeviantMember::DeviantMember(std::shared_ptr<const Strategy> base, std::size_t h0, std::size_t i0,
                             std::shared_ptr<const Strategy> alternative)
    : base_(std::move(base)), alt_(std::move(alternative)), h0_(h0), i0_(i0) {
  if (!base_ || !alt_) throw Error(Errc::invalid_config, "deviant member needs two rules");
  if (base_->aux_size() != alt_->aux_size())
    throw Error(Errc::invalid_config, "deviant rule has a different auxiliary layout");
}

void DeviantMember::init_aux(std::size_t h, std::span<const double> y0, std::span<double> aux) const {
  base_->init_aux(h, y0, aux);
}

void DeviantMember::action(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                           std::span<const double> aux, std::span<double> v) const {
  base_->action(h, ctx, y, aux, v);
  if (h != h0_ || i0_ >= y.size()) return;
  const std::size_t A = aux_size();
  alt_->action(h, ctx, y.subspan(i0_, 1), aux.subspan(i0_ * A, A), v.subspan(i0_, 1));
}

void DeviantMember::advance_aux(std::size_t h, const ActionContext& ctx, std::span<const double> y,
                                std::span<const double> dW, double dt, std::span<double> aux) const {
  base_->advance_aux(h, ctx, y, dW, dt, aux);
}

// ---- simulation ----

PopulationRun simulate_population(const Population& pop, const MarketParams& params,
                                  const Strategy& strategy, const SimulationOptions& opts) {
  const std::size_t H = params.H, M = opts.n_steps;
  if (pop.N.size() != H) throw Error(Errc::invalid_config, "population has the wrong class count");
  if (M == 0) throw Error(Errc::invalid_config, "need at least one step");
  if (opts.mean_field && opts.mean_field->size() < M)
    throw Error(Errc::grid_mismatch, "mean-field curve shorter than the grid");
  if (opts.mean_field && pop.exits)
    throw Error(Errc::invalid_config, "limiting dynamics are defined without exits");
  const std::size_t n = pop.total(), A = strategy.aux_size();
  const double dt = params.T / static_cast<double>(M);

  PopulationRun run;
  run.members = n;
  run.n_steps = M;
  run.t = grid(M, params.T);
  const MemberDraws d = draw_members(pop, params, M, run.t, opts.seed, opts.replication);
  run.exit_time = d.exit_time;
  run.y.resize(n * (M + 1));
  run.v.resize(n * (M + 1));
  run.U.assign(M + 1, 0.0);
  run.class_mean_y.assign(M + 1, VectorXd::Zero(static_cast<Index>(H)));

  std::vector<double> y = d.xi, next(n), v(n), aux(n * A), mean(H);
  init_all(strategy, pop, y, aux);
  for (std::size_t i = 0; i <= M; ++i) {
    class_means(pop, d, run.t[i], y, mean);
    for (std::size_t h = 0; h < H; ++h) run.class_mean_y[i][static_cast<Index>(h)] = mean[h];
    const ActionContext ctx{i, run.t[i], mean};
    act_all(strategy, pop, ctx, y, aux, v);
    for (std::size_t m = 0; m < n; ++m) {
      run.y[m * (M + 1) + i] = y[m];
      run.v[m * (M + 1) + i] = v[m];
    }
    if (i == M) break;
    if (opts.mean_field) {
      const std::vector<double> share = sharing_terms(params, (*opts.mean_field)[i]);
      limit_step(params, d, i, dt, y, v, next, share);
      double du = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        const std::size_t h = d.cls[m];
        du += (params.sharing_disabled ? 0.0 : (params.kappa[h] - params.d[h]) * v[m] * dt +
                                                   params.sigma[h] * v[m] * d.dW[m * M + i]) +
              (params.e[h] - params.d_e[h]) * dt;
      }
      run.U[i + 1] = run.U[i] + du;
    } else {
      run.U[i + 1] = run.U[i] + game_step(params, d, i, run.t[i], dt, y, v, next, run.accounting_gap);
    }
    advance_all(strategy, pop, d, ctx, M, dt, y, aux);
    std::swap(y, next);
  }
  return run;
}

LogLogFit fit_log_log(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error(Errc::insufficient_samples, "fit needs two points");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    if (!(x[k] > 0.0) || !(y[k] > 0.0)) throw Error(Errc::invalid_config, "log-log fit needs positive data");
    const double a = std::log(x[k]), b = std::log(y[k]);
    sx += a;
    sy += b;
    sxx += a * a;
    sxy += a * b;
    syy += b * b;
  }
  LogLogFit f;
  const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n, cxy = sxy - sx * sy / n;
  f.slope = cxy / vx;
  f.intercept = (sy - f.slope * sx) / n;
  f.r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
  return f;
}

GapStatistics mean_field_gap(const MarketParams& params, const RiccatiFeedback& strategy,
                             std::span<const std::size_t> schedule, std::size_t n_mc,
                             std::uint64_t seed, Exec exec) {
  if (n_mc < 100) throw Error(Errc::insufficient_samples, "mean-field gap needs at least 100 replications");
  const MeanFieldSolution& sol = strategy.solution();
  const std::size_t M = sol.intervals(), H = params.H;
  const double dt = params.T / static_cast<double>(M);
  const std::vector<double> t = grid(M, params.T);
  std::vector<std::vector<double>> share(M);
  for (std::size_t i = 0; i < M; ++i) share[i] = sharing_terms(params, sol.vbar[i]);

  GapStatistics stats;
  for (std::size_t N : schedule) {
    const Population pop = scaled_population(params, N);
    const std::size_t n = pop.total();
    std::vector<double> samples(n_mc);
    for_replications(n_mc, exec, [&](std::size_t rep) {
      const MemberDraws d = draw_members(pop, params, M, t, seed, static_cast<std::uint32_t>(rep));
      std::vector<double> x = d.xi, y = d.xi, xn(n), yn(n), v(n), sup(n, 0.0), mean(H, 0.0);
      double acc = 0.0;
      for (std::size_t i = 0; i < M; ++i) {
        // Member controls come from the limiting state and drive both systems.
        const ActionContext ctx{i, t[i], mean};
        act_all(strategy, pop, ctx, x, {}, v);
        limit_step(params, d, i, dt, x, v, xn, share[i]);
        game_step(params, d, i, t[i], dt, y, v, yn, acc);
        std::swap(x, xn);
        std::swap(y, yn);
        for (std::size_t m = 0; m < n; ++m) sup[m] = std::max(sup[m], (x[m] - y[m]) * (x[m] - y[m]));
      }
      samples[rep] = std::accumulate(sup.begin(), sup.end(), 0.0) / static_cast<double>(n);
    });
    GapRow row;
    row.N = N;
    row.gap = mean_se(samples, row.stderr_);
    stats.rows.push_back(row);
  }
  if (stats.rows.size() >= 2) {
    std::vector<double> xs, ys;
    for (const GapRow& r : stats.rows) {
      xs.push_back(static_cast<double>(r.N));
      ys.push_back(r.gap);
    }
    stats.fit = fit_log_log(xs, ys);
  }
  return stats;
}

ObjectiveEstimate objective_estimate(std::size_t h, std::size_t i, const Strategy& strategy,
                                     const Population& pop, const MarketParams& params,
                                     const RewardSpec& reward, std::size_t n_mc, std::uint64_t seed,
                                     std::size_t n_steps, Exec exec) {
  if (n_mc < 2) throw Error(Errc::insufficient_samples, "objective needs at least two replications");
  if (h >= pop.N.size() || i >= pop.N[h]) throw Error(Errc::invalid_config, "member outside the population");
  ObjectiveEstimate est;
  est.degenerate = pop.N[h] == 1;
  est.samples.resize(n_mc);
  const std::size_t M = n_steps, me = pop.offset(h) + i, o = pop.offset(h), Nh = pop.N[h];
  const double dt = params.T / static_cast<double>(M);
  for_replications(n_mc, exec, [&](std::size_t rep) {
    SimulationOptions opts;
    opts.n_steps = M;
    opts.seed = seed;
    opts.replication = static_cast<std::uint32_t>(rep);
    const PopulationRun run = simulate_population(pop, params, strategy, opts);
    // Leave-one-out class means of wealth and control over surviving members.
    auto loo = [&](const std::vector<double>& a, std::size_t node) {
      if (Nh == 1) return 0.0;
      double s = 0.0;
      for (std::size_t m = o; m < o + Nh; ++m)
        if (m != me && run.exit_time[m] > run.t[node]) s += a[m * (M + 1) + node];
      return s / static_cast<double>(Nh - 1);
    };
    std::vector<double> f(M + 1, 0.0);
    for (std::size_t k = 0; k <= M; ++k) {
      if (!(run.exit_time[me] > run.t[k])) continue;
      f[k] = running_reward(reward, h, run.t[k], run.y[me * (M + 1) + k], loo(run.y, k),
                            run.v[me * (M + 1) + k], loo(run.v, k));
    }
    double J = 0.0;
    for (std::size_t k = 0; k < M; ++k) J += 0.5 * (f[k] + f[k + 1]) * dt;
    if (run.exit_time[me] > params.T)
      J += terminal_reward(reward, h, params.T, run.y[me * (M + 1) + M], loo(run.y, M));
    est.samples[rep] = J;
  });
  est.mean = mean_se(est.samples, est.stderr_);
  return est;
}

NashProbe epsilon_nash_probe(const MarketParams& params, const RewardSpec& reward,
                             std::shared_ptr<const Strategy> base,
                             std::span<const std::shared_ptr<const Strategy>> deviations,
                             std::span<const std::size_t> schedule, std::size_t n_mc, std::uint64_t seed,
                             std::size_t n_steps, Exec exec) {
  if (!base) throw Error(Errc::invalid_config, "probe needs a base rule");
  NashProbe probe;
  for (std::size_t N : schedule) {
    NashRow row;
    row.N = N;
    if (!deviations.empty()) {
      const Population pop = scaled_population(params, N);
      const ObjectiveEstimate ref = objective_estimate(0, 0, *base, pop, params, reward, n_mc, seed, n_steps, exec);
      for (std::size_t k = 0; k < deviations.size(); ++k) {
        const DeviantMember dev(base, 0, 0, deviations[k]);
        const ObjectiveEstimate alt = objective_estimate(0, 0, dev, pop, params, reward, n_mc, seed, n_steps, exec);
        std::vector<double> diff(n_mc);
        for (std::size_t q = 0; q < n_mc; ++q) diff[q] = alt.samples[q] - ref.samples[q];
        double se = 0.0;
        row.gains.push_back(mean_se(diff, se));
        row.gain_stderr.push_back(se);
        if (!row.max_gain || row.gains.back() > *row.max_gain) {
          row.max_gain = row.gains.back();
          row.stderr_ = se;
          row.best = k;
        }
      }
    }
    probe.rows.push_back(std::move(row));
  }
  // gain ~ a + b / sqrt(N) by ordinary least squares.
  std::vector<double> u, g;
  for (const NashRow& r : probe.rows)
    if (r.max_gain) {
      u.push_back(1.0 / std::sqrt(static_cast<double>(r.N)));
      g.push_back(*r.max_gain);
    }
  if (u.size() >= 2) {
    const auto n = static_cast<double>(u.size());
    double su = 0, sg = 0, suu = 0, sug = 0;
    for (std::size_t k = 0; k < u.size(); ++k) {
      su += u[k];
      sg += g[k];
      suu += u[k] * u[k];
      sug += u[k] * g[k];
    }
    const double b = (sug - su * sg / n) / (suu - su * su / n);
    probe.decay = std::make_pair((sg - b * su) / n, b);
  }
  return probe;
}

CsvTable gap_table(const GapStatistics& stats) {
  CsvTable t({"N", "gap", "stderr"});
  for (const GapRow& r : stats.rows) {
    const double row[] = {static_cast<double>(r.N), r.gap, r.stderr_};
    t.add_row(row);
  }
  return t;
}

nlohmann::json gap_summary(const GapStatistics& stats) {
  nlohmann::json j = nlohmann::json::object();
  if (stats.fit) {
    j["slope"] = stats.fit->slope;
    j["intercept"] = stats.fit->intercept;
    j["r2"] = stats.fit->r2;
  } else {
    j["slope"] = nullptr;
  }
  j["sizes"] = stats.rows.size();
  return j;
}

CsvTable nash_table(const NashProbe& probe) {
  CsvTable t({"N", "max_gain", "stderr"});
  for (const NashRow& r : probe.rows) {
    const double row[] = {static_cast<double>(r.N), r.max_gain ? *r.max_gain : -kInf, r.stderr_};
    t.add_row(row);
  }
  return t;
}

}  // namespace mmfg
