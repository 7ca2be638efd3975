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
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmfg/model.hpp"
#include "support.hpp"

using namespace mmfg;
using namespace mmfg::testing;
using nlohmann::json;

namespace {

MarketRecord two_class_record() {
  MarketRecord r;
  r.r = 0.03;
  r.kappa = {0.5, 0.5};
  r.sigma = {0.3, 0.3};
  r.d = {0.05, 0.05};
  r.e = {0.01, 0.01};
  r.net_income = {0.02, 0.02};
  r.omega = {0.5, 0.5};
  r.xi_mean = {2.0, 2.0};
  return r;
}

// Random valid market with explicit shares normalized so sum pi*omega = 1.
MarketParams random_market(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> classes(1, 5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto H = static_cast<std::size_t>(classes(gen));
  MarketRecord r;
  r.r = 0.03;
  std::vector<double> pi;
  double mass = 0.0;
  for (std::size_t h = 0; h < H; ++h) {
    const double kappa = 0.05 + unit(gen);
    r.kappa.push_back(kappa);
    r.d.push_back(kappa * unit(gen) * 0.999);
    r.sigma.push_back(0.3);
    r.e.push_back(0.0);
    r.net_income.push_back(0.02);
    r.omega.push_back(0.05 + unit(gen));
    r.xi_mean.push_back(1.0);
    // Heavy-tailed shares so that some draws violate the conditions.
    pi.push_back(std::exp(3.0 * (unit(gen) - 0.5)));
    mass += pi.back() * r.omega.back();
  }
  for (double& p : pi) p /= mass;
  r.pi = pi;
  r.d_e = std::vector<double>(H, 0.0);
  return build_market(r);
}

double margin(const WellposednessReport& rep, const char* name) {
  const ConditionEntry* e = rep.find(name);
  EXPECT_NE(e, nullptr) << name;
  return e ? e->margin : NAN;
}

}  // namespace

TEST(BuildMarket, BaselineSharesFollowMembershipFee) {
  const MarketParams p = build_market(two_class_record());
  EXPECT_NEAR(p.pi[0], 1.0, 1e-15);
  EXPECT_NEAR(p.pi[1], 1.0, 1e-15);
  EXPECT_NEAR(p.d_e[0], 0.001, 1e-15);
  EXPECT_NEAR(p.l[0], 0.019, 1e-15);
  EXPECT_NEAR(p.l[1], 0.019, 1e-15);
}

TEST(BuildMarket, NoFeesLeavesNetIncome) {
  MarketRecord r = two_class_record();
  r.e = {0.0, 0.0};
  r.d_e = std::vector<double>{0.0, 0.0};
  r.pi = std::vector<double>{1.2, 0.8};
  r.net_income = {0.02, 0.07};
  const MarketParams p = build_market(r);
  EXPECT_DOUBLE_EQ(p.l[0], 0.02);
  EXPECT_DOUBLE_EQ(p.l[1], 0.07);
}

TEST(BuildMarket, HighFeeClassGetsLargerShare) {
  MarketRecord r = two_class_record();
  r.e = {0.1, 0.01};
  const MarketParams p = build_market(r);
  EXPECT_NEAR(p.pi[0], 0.1 / 0.055, 1e-12);
  EXPECT_NEAR(p.pi[0], 1.8182, 5e-5);
  EXPECT_NEAR(p.pi[0] * p.omega[0] + p.pi[1] * p.omega[1], 1.0, 1e-12);
}

TEST(BuildMarket, RejectsFeeAbovePremium) {
  MarketRecord r = two_class_record();
  r.d = {0.6, 0.05};
  EXPECT_TRUE(throws_code([&] { build_market(r); }, Errc::kappa_below_fee));
}

TEST(BuildMarket, RejectsBadShares) {
  MarketRecord r = two_class_record();
  r.pi = std::vector<double>{1.0, 1.1};
  EXPECT_TRUE(throws_code([&] { build_market(r); }, Errc::weight_mismatch));
  r.pi = std::vector<double>{2.0, 0.0};
  EXPECT_TRUE(throws_code([&] { build_market(r); }, Errc::non_positive_share));
}

TEST(BuildMarket, RebuildFromOwnRecordIsIdentical) {
  const MarketParams a = build_market(two_class_record());
  const MarketParams b = build_market(to_record(a));
  EXPECT_EQ(a.pi, b.pi);
  EXPECT_EQ(a.l, b.l);
  EXPECT_EQ(a.d_e, b.d_e);
  EXPECT_EQ(a.kappa, b.kappa);
  EXPECT_EQ(a.omega, b.omega);
}

TEST(SharingMatrices, BaselineEntries) {
  const SharingMatrices s = sharing_matrices(build_market(two_class_record()));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      EXPECT_NEAR(s.Pi(i, j), 0.225, 1e-14);
      EXPECT_NEAR(s.M(i, j), -4.5, 1e-12);
    }
  EXPECT_LT(s.dense_inverse_gap, 1e-10);
}

TEST(SharingMatrices, SingleClassScalar) {
  MarketRecord r;
  r.kappa = {0.5};
  r.sigma = {0.3};
  r.d = {0.05};
  r.e = {0.0};
  r.net_income = {0.02};
  r.omega = {1.0};
  r.xi_mean = {1.0};
  r.pi = std::vector<double>{1.0};
  const SharingMatrices s = sharing_matrices(build_market(r));
  EXPECT_NEAR(s.M(0, 0), -9.0, 1e-12);
}

TEST(SharingMatrices, VanishingMarginKillsSharing) {
  MarketRecord r = two_class_record();
  r.d = {0.4999999, 0.4999999};
  const SharingMatrices s = sharing_matrices(build_market(r));
  EXPECT_LT(s.Pi.cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT(s.M.cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Wellposedness, BaselineMargins) {
  const ScenarioConfig c = baseline();
  const WellposednessReport rep = check_wellposedness(c.market, c.reward);
  EXPECT_NEAR(margin(rep, "premium_spectrum"), 0.1, 1e-12);
  EXPECT_NEAR(margin(rep, "scalar_sharing_bound"), 0.2, 1e-12);
  EXPECT_NEAR(margin(rep, "sharing_coercivity"), 1.0, 1e-10);
  EXPECT_NEAR(lambda_min_closed_form(c.market).value, 1.0, 1e-12);
  EXPECT_TRUE(rep.all_required_hold());
}

TEST(Wellposedness, NoSharingIsIdentity) {
  const ScenarioConfig c = baseline({{"market", {{"sharing", false}}}});
  const WellposednessReport rep = check_wellposedness(c.market, c.reward);
  EXPECT_TRUE(rep.all_hold());
  EXPECT_NEAR(margin(rep, "sharing_coercivity"), 1.0, 1e-14);
  EXPECT_LT(sharing_matrices(c.market).M.cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Wellposedness, HaraMixtureCaseHolds) {
  const ScenarioConfig c = scenario("5");
  const WellposednessReport rep = check_wellposedness(c.market, c.reward);
  ASSERT_NE(rep.find("hara_mixture_bound"), nullptr);
  EXPECT_TRUE(rep.find("hara_mixture_bound")->holds);
}

TEST(Wellposedness, PeerWeightAboveOneFails) {
  const ScenarioConfig c = baseline({{"reward", {{"S", {1.2, 1.2}}}}});
  const WellposednessReport rep = check_wellposedness(c.market, c.reward);
  EXPECT_FALSE(rep.find("peer_wealth_weight")->holds);
  EXPECT_FALSE(rep.all_required_hold());
}

TEST(WellposednessProperty, EquivalentConditionsAgreeOnRandomMarkets) {
  std::mt19937_64 gen(20260101);
  int disagreements = 0, counterexamples = 0, failures = 0, sufficient = 0;
  for (int k = 0; k < 10000; ++k) {
    const MarketParams p = random_market(gen);
    QuadraticReward q;
    for (std::size_t h = 0; h < p.H; ++h) {
      q.Q.emplace_back(1.0);
      q.P.emplace_back(1.0);
      q.R.emplace_back(0.1);
      q.S.emplace_back(0.6);
      q.gamma.push_back(1.0);
    }
    const WellposednessReport rep = check_wellposedness(p, q);
    const bool c1 = rep.find("sharing_coercivity")->holds;
    const bool c2 = rep.find("premium_spectrum")->holds;
    const bool c3 = rep.find("scalar_sharing_bound")->holds;
    const bool c4 = rep.find("class_ratio_bound")->holds;
    if (c1 != c2 || c1 != c3) ++disagreements;
    if (c4 && !(c1 && c2 && c3)) ++counterexamples;
    failures += !c1;
    sufficient += c4;
  }
  EXPECT_EQ(disagreements, 0);
  EXPECT_EQ(counterexamples, 0);
  // The sampler must exercise both outcomes for the check to mean anything.
  EXPECT_GT(failures, 100);
  EXPECT_GT(sufficient, 100);
}

TEST(WellposednessProperty, ClosedFormMatchesEigensolve) {
  std::mt19937_64 gen(7);
  for (int k = 0; k < 2000; ++k) {
    const MarketParams p = random_market(gen);
    const SharingMatrices s = sharing_matrices(p);
    const auto H = static_cast<Eigen::Index>(p.H);
    const double dense = lambda_min_sym(Eigen::MatrixXd::Identity(H, H) - s.M.transpose());
    const double closed = lambda_min_closed_form(p).value;
    EXPECT_NEAR(closed, dense, 1e-8 * std::max(1.0, std::abs(dense))) << "draw " << k;
    EXPECT_GT(lambda_min_closed_form(p).denominator, 0.0);
  }
}

TEST(WellposednessProperty, RankOneInverseMatchesDense) {
  std::mt19937_64 gen(11);
  for (int k = 0; k < 2000; ++k) {
    const SharingMatrices s = sharing_matrices(random_market(gen));
    EXPECT_LT(s.dense_inverse_gap, 1e-10);
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(s.Pi);
    EXPECT_LE(lu.rank(), 1);
    const auto H = s.K.rows();
    EXPECT_LT(((s.Pi - s.K) * s.pi_minus_k_inv - Eigen::MatrixXd::Identity(H, H)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(LinearAlgebraProperty, SymmetrizedOuterProductSpectrum) {
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> dim(2, 8);  // d = 1 has the single eigenvalue 2ab
  std::normal_distribution<double> g;
  for (int k = 0; k < 1000; ++k) {
    const int d = dim(gen);
    Eigen::VectorXd a(d), b(d);
    for (int i = 0; i < d; ++i) {
      a[i] = g(gen);
      b[i] = g(gen);
    }
    const Eigen::MatrixXd m = a * b.transpose() + b * a.transpose();
    const double ab = a.dot(b), nn = a.norm() * b.norm();
    // The outer product is already symmetric; the helper symmetrizes anyway.
    EXPECT_NEAR(lambda_min_sym(m), ab - nn, 1e-10 * std::max(1.0, nn));
    EXPECT_NEAR(lambda_max_sym(m), ab + nn, 1e-10 * std::max(1.0, nn));
  }
}

TEST(Survival, NoExitsRecoversBaseModel) {
  const ScenarioConfig c = baseline();
  const SurvivalSpec s = SurvivalSpec::constant_hazard({0.0, 0.0});
  for (double t : {0.0, 0.4, 1.0}) {
    const EffectiveCoefficients e = survival_transform(c.market, s, t);
    for (std::size_t h = 0; h < 2; ++h) {
      EXPECT_NEAR(e.l_tilde[h], c.market.l[h] + c.market.e[h], 1e-15);
      EXPECT_DOUBLE_EQ(e.weight[h], 1.0);
      EXPECT_DOUBLE_EQ(e.running_scale[h], 1.0);
      EXPECT_DOUBLE_EQ(e.terminal_scale[h], 1.0);
    }
  }
}

TEST(Survival, WeightOfExitingClassDecreases) {
  const ScenarioConfig c = baseline();
  const SurvivalSpec s = SurvivalSpec::constant_hazard({1.0, 0.0});
  double prev = INFINITY;
  for (int i = 0; i <= 10; ++i) {
    const double t = 0.1 * i;
    const double w = survival_transform(c.market, s, t).weight[0];
    EXPECT_NEAR(w, std::exp(-t) / ((std::exp(-t) + 1.0) / 2.0), 1e-14);
    EXPECT_LT(w, prev + (i == 0 ? 0.0 : -1e-6));
    prev = w;
  }
}

TEST(Survival, VanishingSurvivalIsRejected) {
  const ScenarioConfig c = baseline();
  SurvivalSpec s;
  s.s = {Curve::function([](double t) { return 1.0 - t; }), Curve(1.0)};
  EXPECT_TRUE(throws_code([&] { survival_transform(c.market, s, 0.5); }, Errc::degenerate_survival));
}

TEST(Rewards, QuadraticMarginal) {
  const ScenarioConfig c = baseline();
  EXPECT_NEAR(running_fx(c.reward, 0, 0.0, 2.0, 2.0).value, -0.8, 1e-15);
  // Terminal target p_T = -g_x.
  EXPECT_NEAR(-terminal_gx(c.reward, 0, 1.0, 2.0, 2.0).value, -0.2, 1e-15);
  const ScenarioConfig full = baseline({{"reward", {{"S", {1.0, 1.0}}}}});
  for (double x : {-3.0, 0.0, 5.0}) EXPECT_DOUBLE_EQ(terminal_gx(full.reward, 1, 1.0, x, x).value, 1.0);
}

TEST(Rewards, HaraMarginalIsSmoothAtZero) {
  const ScenarioConfig c = scenario("5");
  const double at0 = running_fx(c.reward, 0, 0.0, 0.0, 0.0).value;
  EXPECT_NEAR(at0, 1.0 / std::sqrt(5.0) + 2.5, 1e-12);
  EXPECT_NEAR(at0, 2.947214, 1e-6);
  const double left = running_fx(c.reward, 0, 0.0, -1e-9, 0.0).value;
  const double right = running_fx(c.reward, 0, 0.0, 1e-9, 0.0).value;
  EXPECT_NEAR(left, at0, 1e-8);
  EXPECT_NEAR(right, at0, 1e-8);
  // Below zero the HARA part has the constant slope a b^-gamma.
  const double slope = running_fx(c.reward, 0, 0.0, -2.0, 0.0).value - running_fx(c.reward, 0, 0.0, -1.0, 0.0).value;
  EXPECT_NEAR(slope, 1.0, 1e-12);  // only the quadratic part moves
}

TEST(Rewards, InverseResponse) {
  EXPECT_NEAR(inverse_response(-0.3, {1.0, 0.1}, 0.5), 0.35, 1e-15);
}

TEST(Projection, ClampAndIdentity) {
  const Interval box = Interval::closed(0.0, 1.0);
  EXPECT_EQ(box.project(1.2), 1.0);
  EXPECT_EQ(box.project(-0.27), 0.0);
  EXPECT_EQ(Interval::unbounded().project(0.35), 0.35);
  EXPECT_EQ(box.project_slope(0.5), 1.0);
  EXPECT_EQ(box.project_slope(1.5), 0.0);
}

TEST(ProjectionProperty, MonotoneCompositionInequality) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0), pos(0.0, 2.0);
  const Interval box = Interval::closed(-0.5, 1.0);
  for (int k = 0; k < 5000; ++k) {
    // Random non-decreasing piecewise-linear phi on knots -4..4.
    std::vector<double> knots(9), vals(9);
    double acc = u(gen);
    for (int i = 0; i < 9; ++i) {
      knots[static_cast<std::size_t>(i)] = -4.0 + i;
      vals[static_cast<std::size_t>(i)] = acc;
      acc += pos(gen);
    }
    const Curve phi = Curve::table(knots, vals);
    const double a = u(gen), b = u(gen);
    const double pa = box.project(a), pb = box.project(b);
    EXPECT_GE((pa - pb) * (phi(a) - phi(b)) + 1e-12, (pa - pb) * (phi(pa) - phi(pb)));
  }
}

TEST(Config, RejectsMalformedDocuments) {
  EXPECT_TRUE(throws_code([] { parse_config(json::array()); }, Errc::invalid_config));
  EXPECT_TRUE(throws_code([] { baseline({{"reward", {{"type", "cara"}}}}); }, Errc::invalid_config));
  EXPECT_TRUE(throws_code([] { baseline({{"constraint", {1.0, 0.0}}}); }, Errc::invalid_config));
}

TEST(Config, HashIsStableAndSensitive) {
  const ScenarioConfig a = baseline(), b = baseline();
  EXPECT_EQ(config_hash(a.source), config_hash(b.source));
  const ScenarioConfig c = baseline({{"market", {{"r", 0.031}}}});
  EXPECT_NE(config_hash(a.source), config_hash(c.source));
}
