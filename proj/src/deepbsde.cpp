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
#include "mmfg/deepbsde.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <sstream>

#include "mmfg/error.hpp"

namespace mmfg {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// Time-only coefficients of the scheme, one entry per grid node.
struct StepCoefficients {
  std::vector<double> t;
  MatrixXd scale;     // running reward scale s_t        [h][i], i = 0..M
  MatrixXd weight;    // mean-field weight w_t            [h][i]
  MatrixXd drift;     // income constant l (or l-tilde)   [h][i]
  MatrixXd P, R;      // response coefficients            [h][i]
  MatrixXd Pi;        // sharing matrix
  double dt = 0.0;
};

StepCoefficients step_coefficients(const RolloutProblem& pb, std::size_t M) {
  const MarketParams& mk = pb.market;
  const auto H = static_cast<Index>(mk.H);
  const auto nodes = static_cast<Index>(M + 1);
  StepCoefficients c;
  c.dt = mk.T / static_cast<double>(M);
  c.scale = MatrixXd::Ones(H, nodes);
  c.weight = MatrixXd::Ones(H, nodes);
  c.drift.resize(H, nodes);
  c.P.resize(H, nodes);
  c.R.resize(H, nodes);
  c.Pi = sharing_weights(mk);
  for (Index i = 0; i < nodes; ++i) {
    const double t = i == nodes - 1 ? mk.T : c.dt * static_cast<double>(i);
    c.t.push_back(t);
    std::optional<EffectiveCoefficients> eff;
    if (pb.survival) eff = survival_transform(mk, *pb.survival, t);
    for (Index h = 0; h < H; ++h) {
      const auto hh = static_cast<std::size_t>(h);
      const ResponseCoefficients rc = response_coefficients(pb.reward, hh, t);
      c.P(h, i) = rc.P;
      c.R(h, i) = rc.R;
      if (eff) {
        c.scale(h, i) = eff->running_scale[hh];
        c.weight(h, i) = eff->weight[hh];
        c.drift(h, i) = eff->l_tilde[hh];
      } else {
        c.drift(h, i) = mk.l[hh];
      }
    }
  }
  return c;
}

struct FieldState {
  std::vector<MlpTape> tape;  // per class
  MatrixXd raw, vbar, m, z;   // [h][i], i = 0..M
};

FieldState field_forward(const Networks& nets, const RolloutProblem& pb, const StepCoefficients& c,
                         std::size_t M, bool keep_tape) {
  const MarketParams& mk = pb.market;
  const auto H = static_cast<Index>(mk.H);
  const auto nodes = static_cast<Index>(M + 1);
  FieldState f;
  f.tape.resize(mk.H);
  f.raw.resize(H, nodes);
  MatrixXd tin(1, nodes);
  for (Index i = 0; i < nodes; ++i) tin(0, i) = c.t[static_cast<std::size_t>(i)];
  for (Index h = 0; h < H; ++h) {
    MatrixXd out;
    nets.vbar_arch().forward(nets.vbar(static_cast<std::size_t>(h)), tin, out,
                             keep_tape ? &f.tape[static_cast<std::size_t>(h)] : nullptr);
    f.raw.row(h) = out.row(0);
  }
  f.vbar = f.raw.unaryExpr([&](double u) { return mk.constraint.project(u); });

  f.m.resize(H, nodes);
  for (Index h = 0; h < H; ++h) f.m(h, 0) = mk.xi_mean[static_cast<std::size_t>(h)];
  for (Index i = 0; i + 1 < nodes; ++i) {
    const VectorXd share = c.Pi * f.vbar.col(i);
    for (Index h = 0; h < H; ++h) {
      const double kap = mk.kappa[static_cast<std::size_t>(h)];
      // E[v] = vbar / w under the fixed point; w = 1 without exits.
      f.m(h, i + 1) = f.m(h, i) + (mk.r * f.m(h, i) + c.drift(h, i) -
                                   kap * f.vbar(h, i) / c.weight(h, i) + share[h]) * c.dt;
    }
  }
  f.z = f.m.cwiseProduct(c.scale);
  return f;
}

// Per-block results of the forward sweep.
struct BlockForward {
  MatrixXd sum_v;  // [h][i]
  double sum_q = 0.0, sum_q2 = 0.0;
  double v_min = INFINITY, v_max = -INFINITY;
};

struct BlockBackward {
  std::vector<double> grad;
  MatrixXd az, avbar, sum_ax;  // [h][i]
};

template <class Fn>
void for_blocks(std::size_t n_blocks, Exec exec, Fn&& fn) {
  const auto nb = static_cast<long long>(n_blocks);
  if (exec == Exec::parallel) {
    std::exception_ptr err;
#pragma omp parallel for schedule(static)
    for (long long b = 0; b < nb; ++b) {
      try {
        fn(static_cast<std::size_t>(b));
      } catch (...) {
#pragma omp critical(mmfg_rollout_error)
        if (!err) err = std::current_exception();
      }
    }
    if (err) std::rethrow_exception(err);
  } else {
    for (long long b = 0; b < nb; ++b) fn(static_cast<std::size_t>(b));
  }
}

void check_finite_row(const RowVectorXd& row, std::size_t step, const char* what) {
  if (!row.allFinite()) {
    std::ostringstream os;
    os << what << " left the finite range at step " << step;
    throw Error(Errc::non_finite_state, os.str());
  }
}

}  // namespace

void TrainingConfig::validate() const {
  if (n_paths < 2) throw Error(Errc::invalid_config, "n_paths must be at least 2");
  if (n_steps < 1) throw Error(Errc::invalid_config, "n_steps must be positive");
  if (!(penalty >= 0.0)) throw Error(Errc::invalid_config, "penalty must be non-negative");
  if (block == 0) throw Error(Errc::invalid_config, "block size must be positive");
  if (!(adam.lr > 0.0)) throw Error(Errc::invalid_config, "learning rate must be positive");
  if (vbar_start && !std::isfinite(*vbar_start)) throw Error(Errc::invalid_config, "vbar_start must be finite");
}

Networks::Networks(std::size_t H, std::size_t hidden)
    : H_(H),
      vbar_({1, static_cast<Index>(hidden), static_cast<Index>(hidden), 1}),
      eta_({4, static_cast<Index>(hidden), static_cast<Index>(hidden), 1}),
      p0_({1, static_cast<Index>(hidden), static_cast<Index>(hidden), 1}),
      w_(H * (vbar_.size() + eta_.size() + p0_.size()), 0.0) {}

void Networks::initialize(std::uint64_t seed) {
  for (std::size_t h = 0; h < H_; ++h) {
    const auto tag = static_cast<std::uint32_t>(3 * h);
    vbar_.init({w_.data() + vbar_offset(h), vbar_.size()}, seed, tag);
    eta_.init({w_.data() + eta_offset(h), eta_.size()}, seed, tag + 1);
    p0_.init({w_.data() + p0_offset(h), p0_.size()}, seed, tag + 2);
  }
}

FieldCurves field_curves(const Networks& nets, const RolloutProblem& problem, std::size_t n_steps) {
  const StepCoefficients c = step_coefficients(problem, n_steps);
  const FieldState f = field_forward(nets, problem, c, n_steps, false);
  FieldCurves out;
  for (Index i = 0; i < f.raw.cols(); ++i) {
    out.raw.push_back(f.raw.col(i));
    out.vbar.push_back(f.vbar.col(i));
    out.z.push_back(f.z.col(i));
  }
  return out;
}

LossBreakdown rollout_loss(const Networks& nets, const RolloutProblem& pb, const PathBatch& batch,
                           std::span<const double> xi0, double penalty, Exec exec,
                           std::size_t block, bool want_grad) {
  const MarketParams& mk = pb.market;
  const std::size_t H = mk.H, M = batch.n_steps, N = batch.n_paths;
  if (batch.H != H) throw Error(Errc::grid_mismatch, "path batch class count differs");
  if (xi0.size() != N * H) throw Error(Errc::grid_mismatch, "initial wealth size differs");
  if (std::abs(batch.dt * static_cast<double>(M) - mk.T) > 1e-12 * mk.T)
    throw Error(Errc::grid_mismatch, "path batch horizon differs from T");
  if (block == 0) block = 256;

  const StepCoefficients c = step_coefficients(pb, M);
  const FieldState field = field_forward(nets, pb, c, M, want_grad);
  const Interval& box = mk.constraint;
  const double dt = c.dt, r = mk.r;
  const auto Hi = static_cast<Index>(H);
  const auto Mi = static_cast<Index>(M);

  const std::size_t n_blocks = (N + block - 1) / block;
  // State history [h][i][path]; written once per block, read by the reverse sweep.
  std::vector<double> X(H * (M + 1) * N), Pst(H * (M + 1) * N);
  auto at = [&](std::vector<double>& a, std::size_t h, std::size_t i, std::size_t n) -> double* {
    return a.data() + (h * (M + 1) + i) * N + n;
  };

  const Mlp& eta_net = nets.eta_arch();
  const Mlp& p0_net = nets.p0_arch();

  // Strategy of one class at one step for a block of paths.
  auto strategy = [&](std::size_t h, std::size_t i, const RowVectorXd& p, const RowVectorXd& eta,
                      RowVectorXd& what) {
    const double kap = mk.kappa[h], sig = mk.sigma[h];
    const double sP = c.scale(static_cast<Index>(h), static_cast<Index>(i)) *
                      c.P(static_cast<Index>(h), static_cast<Index>(i));
    const double Rv = c.R(static_cast<Index>(h), static_cast<Index>(i)) *
                      field.vbar(static_cast<Index>(h), static_cast<Index>(i));
    what = ((kap * p + sig * eta) / sP).array() + Rv;
  };
  auto eta_input = [&](std::size_t h, std::size_t i, std::size_t n0, Index nb) {
    MatrixXd in(4, nb);
    in.row(0).setConstant(c.t[i]);
    in.row(1) = Eigen::Map<const RowVectorXd>(at(X, h, i, n0), nb);
    in.row(2).setConstant(field.z(static_cast<Index>(h), static_cast<Index>(i)));
    in.row(3) = Eigen::Map<const RowVectorXd>(at(Pst, h, i, n0), nb);
    return in;
  };

  // ---- forward sweep ----
  std::vector<BlockForward> fwd(n_blocks);
  for_blocks(n_blocks, exec, [&](std::size_t b) {
    const std::size_t n0 = b * block, n1 = std::min(N, n0 + block);
    const auto nb = static_cast<Index>(n1 - n0);
    BlockForward& out = fwd[b];
    out.sum_v = MatrixXd::Zero(Hi, Mi);
    RowVectorXd q = RowVectorXd::Zero(nb);
    for (std::size_t h = 0; h < H; ++h) {
      MatrixXd x0(1, nb), p0;
      for (Index k = 0; k < nb; ++k) x0(0, k) = xi0[(n0 + static_cast<std::size_t>(k)) * H + h];
      p0_net.forward(nets.p0(h), x0, p0);
      Eigen::Map<RowVectorXd>(at(X, h, 0, n0), nb) = x0.row(0);
      Eigen::Map<RowVectorXd>(at(Pst, h, 0, n0), nb) = p0.row(0);
    }
    RowVectorXd x(nb), p(nb), eta(nb), what(nb), v(nb), dW(nb);
    MatrixXd eta_out;
    for (std::size_t i = 0; i < M; ++i) {
      for (std::size_t h = 0; h < H; ++h) {
        const auto hi = static_cast<Index>(h), ii = static_cast<Index>(i);
        eta_net.forward(nets.eta(h), eta_input(h, i, n0, nb), eta_out);
        eta = eta_out.row(0);
        x = Eigen::Map<const RowVectorXd>(at(X, h, i, n0), nb);
        p = Eigen::Map<const RowVectorXd>(at(Pst, h, i, n0), nb);
        strategy(h, i, p, eta, what);
        v = what.unaryExpr([&](double u) { return box.project(u); });
        out.sum_v(hi, ii) = v.sum();
        out.v_min = std::min(out.v_min, v.minCoeff());
        out.v_max = std::max(out.v_max, v.maxCoeff());
        const double share = (c.Pi.row(hi) * field.vbar.col(ii))(0);
        const double zi = field.z(hi, ii), s = c.scale(hi, ii);
        const double kap = mk.kappa[h], sig = mk.sigma[h];
        double* xn = at(X, h, i + 1, n0);
        double* pn = at(Pst, h, i + 1, n0);
        for (Index k = 0; k < nb; ++k) {
          const std::size_t n = n0 + static_cast<std::size_t>(k);
          const double w = batch(n, i, h);
          const double fx = running_fx(pb.reward, h, c.t[i], x[k], zi).value;
          xn[k] = x[k] + (r * x[k] + c.drift(hi, ii) - kap * v[k] + share) * dt + sig * (1.0 - v[k]) * w;
          pn[k] = p[k] - (r * p[k] - s * fx) * dt + eta[k] * w;
        }
        check_finite_row(Eigen::Map<const RowVectorXd>(xn, nb), i + 1, "wealth");
        check_finite_row(Eigen::Map<const RowVectorXd>(pn, nb), i + 1, "adjoint");
      }
    }
    for (std::size_t h = 0; h < H; ++h) {
      const auto hi = static_cast<Index>(h);
      const double zT = field.z(hi, Mi), sT = c.scale(hi, Mi);
      const double* xT = at(X, h, M, n0);
      const double* pT = at(Pst, h, M, n0);
      for (Index k = 0; k < nb; ++k) {
        const double res = pT[k] + sT * terminal_gx(pb.reward, h, mk.T, xT[k], zT).value;
        q[k] += res * res;
      }
    }
    out.sum_q = q.sum();
    out.sum_q2 = q.squaredNorm();
  });

  // ---- reduction in block order ----
  LossBreakdown lb;
  MatrixXd sum_v = MatrixXd::Zero(Hi, Mi);
  double sum_q = 0.0, sum_q2 = 0.0;
  lb.v_min = INFINITY;
  lb.v_max = -INFINITY;
  for (const auto& f : fwd) {
    sum_v += f.sum_v;
    sum_q += f.sum_q;
    sum_q2 += f.sum_q2;
    lb.v_min = std::min(lb.v_min, f.v_min);
    lb.v_max = std::max(lb.v_max, f.v_max);
  }
  const double Nd = static_cast<double>(N);
  const MatrixXd mean_v = sum_v / Nd;
  const MatrixXd gap = c.weight.leftCols(Mi).cwiseProduct(mean_v) - field.vbar.leftCols(Mi);
  lb.terminal = sum_q / Nd;
  lb.terminal_se = std::sqrt(std::max(0.0, sum_q2 / Nd - lb.terminal * lb.terminal) / (Nd - 1.0));
  lb.meanfield = gap.squaredNorm() / static_cast<double>(M);
  lb.loss = lb.terminal + penalty * lb.meanfield;
  lb.t = c.t;
  for (Index i = 0; i < Mi; ++i) {
    lb.vbar.push_back(field.vbar.col(i));
    lb.mean_v.push_back(mean_v.col(i));
  }
  for (Index i = 0; i <= Mi; ++i) lb.z.push_back(field.z.col(i));
  if (!std::isfinite(lb.loss)) throw Error(Errc::non_finite_loss, "loss is not finite");
  if (!want_grad) return lb;

  // ---- reverse sweep ----
  const MatrixXd pen = (2.0 * penalty / static_cast<double>(M)) * gap;  // dL/d(w E[v] - vbar)
  const std::size_t n_params = nets.params().size();
  std::vector<BlockBackward> bwd(n_blocks);
  for_blocks(n_blocks, exec, [&](std::size_t b) {
    const std::size_t n0 = b * block, n1 = std::min(N, n0 + block);
    const auto nb = static_cast<Index>(n1 - n0);
    BlockBackward& out = bwd[b];
    out.grad.assign(n_params, 0.0);
    out.az = MatrixXd::Zero(Hi, Mi + 1);
    out.avbar = MatrixXd::Zero(Hi, Mi);
    out.sum_ax = MatrixXd::Zero(Hi, Mi);
    std::span<double> grad(out.grad);

    for (std::size_t h = 0; h < H; ++h) {
      const auto hi = static_cast<Index>(h);
      const double kap = mk.kappa[h], sig = mk.sigma[h];
      RowVectorXd ax(nb), ap(nb);
      {
        const double zT = field.z(hi, Mi), sT = c.scale(hi, Mi);
        const double* xT = at(X, h, M, n0);
        const double* pT = at(Pst, h, M, n0);
        double az = 0.0;
        for (Index k = 0; k < nb; ++k) {
          const Sensitivity g = terminal_gx(pb.reward, h, mk.T, xT[k], zT);
          const double ar = 2.0 * (pT[k] + sT * g.value) / Nd;
          ap[k] = ar;
          ax[k] = ar * sT * g.d_x;
          az += ar * sT * g.d_z;
        }
        out.az(hi, Mi) += az;
      }
      MlpTape tape;
      MatrixXd eta_out, din;
      RowVectorXd eta(nb), what(nb), slope(nb), av(nb), aw(nb), aeta(nb), nax(nb), nap(nb);
      for (std::size_t i = M; i-- > 0;) {
        const auto ii = static_cast<Index>(i);
        eta_net.forward(nets.eta(h), eta_input(h, i, n0, nb), eta_out, &tape);
        eta = eta_out.row(0);
        const Eigen::Map<const RowVectorXd> x(at(X, h, i, n0), nb);
        const Eigen::Map<const RowVectorXd> p(at(Pst, h, i, n0), nb);
        strategy(h, i, p, eta, what);
        slope = what.unaryExpr([&](double u) { return box.project_slope(u); });
        const double s = c.scale(hi, ii);
        const double sP = s * c.P(hi, ii);
        const double zi = field.z(hi, ii);
        const double pen_v = pen(hi, ii) * c.weight(hi, ii) / Nd;
        double az = 0.0;
        for (Index k = 0; k < nb; ++k) {
          const double w = batch(n0 + static_cast<std::size_t>(k), i, h);
          av[k] = ax[k] * (-kap * dt - sig * w) + pen_v;
          aw[k] = av[k] * slope[k];
          aeta[k] = ap[k] * w + aw[k] * sig / sP;
          const Sensitivity fx = running_fx(pb.reward, h, c.t[i], x[k], zi);
          nax[k] = ax[k] * (1.0 + r * dt) + ap[k] * s * fx.d_x * dt;
          nap[k] = ap[k] * (1.0 - r * dt) + aw[k] * kap / sP;
          az += ap[k] * s * fx.d_z * dt;
        }
        out.avbar(hi, ii) += aw.sum() * c.R(hi, ii);
        out.sum_ax(hi, ii) += ax.sum();
        eta_net.backward(nets.eta(h), tape, aeta, grad.subspan(nets.eta_offset(h), eta_net.size()), &din);
        nax += din.row(1);
        nap += din.row(3);
        az += din.row(2).sum();
        out.az(hi, ii) += az;
        ax = nax;
        ap = nap;
      }
      MatrixXd x0(1, nb), p0;
      x0.row(0) = Eigen::Map<const RowVectorXd>(at(X, h, 0, n0), nb);
      p0_net.forward(nets.p0(h), x0, p0, &tape);
      p0_net.backward(nets.p0(h), tape, ap, grad.subspan(nets.p0_offset(h), p0_net.size()));
    }
  });

  // ---- merge and the deterministic mean-field chain ----
  lb.grad.assign(n_params, 0.0);
  MatrixXd az = MatrixXd::Zero(Hi, Mi + 1), avbar = MatrixXd::Zero(Hi, Mi), sum_ax = MatrixXd::Zero(Hi, Mi);
  for (const auto& bb : bwd) {
    for (std::size_t k = 0; k < n_params; ++k) lb.grad[k] += bb.grad[k];
    az += bb.az;
    avbar += bb.avbar;
    sum_ax += bb.sum_ax;
  }
  avbar += dt * (c.Pi.transpose() * sum_ax);  // sharing term of every wealth drift
  avbar -= pen;                               // direct penalty dependence
  // m_{i+1} = m_i (1 + r dt) + (l - kappa vbar / w + Pi vbar) dt,  z = s m.
  VectorXd am = c.scale.col(Mi).cwiseProduct(az.col(Mi));
  for (Index i = Mi - 1; i >= 0; --i) {
    MatrixXd jac = c.Pi;
    for (Index h = 0; h < Hi; ++h) jac(h, h) -= mk.kappa[static_cast<std::size_t>(h)] / c.weight(h, i);
    avbar.col(i) += dt * (jac.transpose() * am);
    am = am * (1.0 + r * dt) + c.scale.col(i).cwiseProduct(az.col(i));
  }
  for (std::size_t h = 0; h < H; ++h) {
    const auto hi = static_cast<Index>(h);
    MatrixXd dout = MatrixXd::Zero(1, Mi + 1);
    for (Index i = 0; i < Mi; ++i) dout(0, i) = avbar(hi, i) * box.project_slope(field.raw(hi, i));
    nets.vbar_arch().backward(nets.vbar(h), field.tape[h], dout,
                              std::span<double>(lb.grad).subspan(nets.vbar_offset(h), nets.vbar_arch().size()));
  }
  return lb;
}

PathBatch training_batch(const RolloutProblem& pb, const TrainingConfig& cfg, std::uint32_t stream,
                         std::size_t n_paths, std::vector<double>& xi0) {
  xi0 = initial_wealth(n_paths, pb.market.xi_mean, pb.market.xi_var, cfg.seed, stream);
  return brownian_increments(n_paths, cfg.n_steps, pb.market.H, cfg.seed, pb.market.T, stream, cfg.exec);
}

LossBreakdown evaluate(const Networks& nets, const RolloutProblem& pb, const TrainingConfig& cfg,
                       std::uint32_t stream) {
  std::vector<double> xi0;
  const std::size_t n = cfg.eval_paths ? cfg.eval_paths : cfg.n_paths;
  const PathBatch batch = training_batch(pb, cfg, stream, n, xi0);
  return rollout_loss(nets, pb, batch, xi0, cfg.penalty, cfg.exec, cfg.block, false);
}

TrainedSolver train(const RolloutProblem& pb, const TrainingConfig& cfg,
                    const std::function<void(std::size_t, double)>& progress) {
  cfg.validate();
  if (!cfg.ignore_wellposedness) {
    const WellposednessReport rep = check_wellposedness(pb.market, pb.reward);
    if (!rep.all_required_hold()) {
      std::string failed;
      for (const auto& e : rep.entries)
        if (e.required && !e.holds) failed += " " + e.name;
      throw Error(Errc::invalid_config, "well-posedness conditions fail:" + failed);
    }
  }
  const auto start = std::chrono::steady_clock::now();
  TrainedSolver out(Networks(pb.market.H, cfg.hidden));
  out.config = cfg;
  out.nets.initialize(cfg.seed);
  const Interval& admissible = pb.market.constraint;
  std::optional<double> vbar0 = cfg.vbar_start;
  if (!vbar0 && std::isfinite(admissible.lo) && std::isfinite(admissible.hi))
    vbar0 = 0.5 * (admissible.lo + admissible.hi);
  if (vbar0)
    for (std::size_t h = 0; h < pb.market.H; ++h)
      out.nets.params()[out.nets.vbar_offset(h) + out.nets.vbar_arch().size() - 1] = *vbar0;
  Adam adam(out.nets.params().size(), cfg.adam);

  std::vector<double> xi0;
  PathBatch batch;
  if (cfg.frozen_batch) batch = training_batch(pb, cfg, 0, cfg.n_paths, xi0);
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    if (!cfg.frozen_batch) batch = training_batch(pb, cfg, static_cast<std::uint32_t>(k), cfg.n_paths, xi0);
    LossBreakdown lb;
    try {
      lb = rollout_loss(out.nets, pb, batch, xi0, cfg.penalty, cfg.exec, cfg.block, true);
    } catch (const Error& e) {
      std::ostringstream os;
      os << e.what() << " (iteration " << k << ")";
      throw Error(e.code() == Errc::non_finite_state ? Errc::non_finite_loss : e.code(), os.str());
    }
    out.loss_history.push_back(lb.loss);
    if (k >= 50 && lb.loss > 10.0 * out.loss_history[k - 50]) {
      std::ostringstream os;
      os << "loss " << lb.loss << " at iteration " << k << " exceeds 10x the value 50 iterations earlier ("
         << out.loss_history[k - 50] << ")";
      throw Error(Errc::early_divergence, os.str());
    }
    adam.step(out.nets.params(), lb.grad);
    if (progress) progress(k, lb.loss);
    if (std::find(cfg.snapshots.begin(), cfg.snapshots.end(), k + 1) != cfg.snapshots.end()) {
      const FieldCurves fc = field_curves(out.nets, pb, cfg.n_steps);
      out.snapshots.push_back({k + 1, fc.vbar, fc.z});
    }
  }

  const LossBreakdown ev = evaluate(out.nets, pb, cfg, kEvalStream);
  out.terminal_error = ev.terminal;
  out.terminal_error_se = ev.terminal_se;
  out.meanfield_error = ev.meanfield;
  out.mean_v = ev.mean_v;
  out.v_min = ev.v_min;
  out.v_max = ev.v_max;
  const FieldCurves fc = field_curves(out.nets, pb, cfg.n_steps);
  out.t = ev.t;
  out.vbar = fc.vbar;
  out.z = fc.z;
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

double relative_error(std::span<const VectorXd> vbar_nn, std::span<const VectorXd> z_nn,
                      const MeanFieldSolution& oracle) {
  const std::size_t M = oracle.intervals();
  if (vbar_nn.size() < M || z_nn.size() != M + 1 || M == 0)
    throw Error(Errc::grid_mismatch, "learned curves and oracle use different grids");
  const std::size_t H = oracle.classes();
  double total = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    const auto c = static_cast<Index>(h);
    double vmax = 0.0, zmax = 0.0;
    for (std::size_t j = 0; j < M; ++j) {
      vmax = std::max(vmax, std::abs(oracle.vbar[j][c]));
      zmax = std::max(zmax, std::abs(oracle.z[j][c]));
    }
    for (std::size_t i = 0; i < M; ++i) total += std::abs(vbar_nn[i][c] - oracle.vbar[i][c]) / vmax;
    for (std::size_t i = 1; i <= M; ++i) total += std::abs(z_nn[i][c] - oracle.z[i][c]) / zmax;
  }
  return 100.0 * total / (2.0 * static_cast<double>(H) * static_cast<double>(M));
}

double relative_error(const TrainedSolver& s, const MeanFieldSolution& oracle) {
  return relative_error(s.vbar, s.z, oracle);
}

CsvTable curves_table(const TrainedSolver& s) {
  const std::size_t H = s.nets.classes();
  std::vector<std::string> cols{"t"};
  for (std::size_t h = 1; h <= H; ++h) {
    cols.push_back("vbar" + std::to_string(h));
    cols.push_back("z" + std::to_string(h));
  }
  CsvTable table(cols);
  std::vector<double> row(cols.size());
  for (std::size_t i = 0; i < s.t.size(); ++i) {
    row[0] = s.t[i];
    for (std::size_t h = 0; h < H; ++h) {
      row[1 + 2 * h] = s.vbar[i][static_cast<Index>(h)];
      row[2 + 2 * h] = s.z[i][static_cast<Index>(h)];
    }
    table.add_row(row);
  }
  return table;
}

CsvTable loss_table(const TrainedSolver& s) {
  CsvTable table({"iteration", "loss"});
  for (std::size_t k = 0; k < s.loss_history.size(); ++k) {
    const double row[2] = {static_cast<double>(k), s.loss_history[k]};
    table.add_row(row);
  }
  return table;
}

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'M', 'F', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error(Errc::io_failure, "truncated checkpoint");
  return v;
}

std::vector<const Mlp*> net_list(const Networks& n) {
  std::vector<const Mlp*> out;
  for (std::size_t h = 0; h < n.classes(); ++h) out.push_back(&n.vbar_arch());
  for (std::size_t h = 0; h < n.classes(); ++h) out.push_back(&n.eta_arch());
  for (std::size_t h = 0; h < n.classes(); ++h) out.push_back(&n.p0_arch());
  return out;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Networks& nets, std::uint64_t hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::io_failure, "cannot open " + path.string());
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, hash);
  const auto list = net_list(nets);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(list.size()));
  for (const Mlp* m : list) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(m->widths().size()));
    for (Index w : m->widths()) put<std::uint32_t>(out, static_cast<std::uint32_t>(w));
  }
  put<std::uint64_t>(out, nets.params().size());
  for (double w : nets.params()) put<double>(out, w);
  if (!out) throw Error(Errc::io_failure, "write failed for " + path.string());
}

Networks read_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash, std::size_t H,
                         std::size_t hidden) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_failure, "cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw Error(Errc::io_failure, "not a checkpoint file");
  if (get<std::uint32_t>(in) != kCheckpointVersion) throw Error(Errc::io_failure, "unsupported checkpoint version");
  if (get<std::uint64_t>(in) != expected_hash) throw Error(Errc::io_failure, "checkpoint belongs to another config");
  Networks nets(H, hidden);
  const auto list = net_list(nets);
  if (get<std::uint32_t>(in) != list.size()) throw Error(Errc::io_failure, "checkpoint network count differs");
  for (const Mlp* m : list) {
    if (get<std::uint32_t>(in) != m->widths().size()) throw Error(Errc::io_failure, "checkpoint depth differs");
    for (Index w : m->widths())
      if (get<std::uint32_t>(in) != static_cast<std::uint32_t>(w))
        throw Error(Errc::io_failure, "checkpoint layer width differs");
  }
  if (get<std::uint64_t>(in) != nets.params().size()) throw Error(Errc::io_failure, "checkpoint size differs");
  for (double& w : nets.params()) w = get<double>(in);
  return nets;
}

}  // namespace mmfg
