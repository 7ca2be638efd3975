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

#include "mmfg/mlp.hpp"

using namespace mmfg;

namespace {

// <out, G> for a fixed probe matrix G, so dL/dout = G.
double probe_loss(const Mlp& net, std::span<const double> w, const Eigen::MatrixXd& in, const Eigen::MatrixXd& G) {
  Eigen::MatrixXd out;
  net.forward(w, in, out);
  return (out.array() * G.array()).sum();
}

}  // namespace

TEST(Mlp, ParameterCount) {
  const Mlp net({4, 32, 32, 1});
  EXPECT_EQ(net.size(), 4u * 32 + 32 + 32 * 32 + 32 + 32 + 1);
  EXPECT_EQ(net.layers(), 3u);
}

TEST(Mlp, ZeroWeightsReturnOutputBias) {
  const Mlp net({3, 5, 5, 2});
  std::vector<double> w(net.size(), 0.0);
  w[net.size() - 2] = 0.7;
  w[net.size() - 1] = -1.25;
  Eigen::MatrixXd in = Eigen::MatrixXd::Random(3, 9), out;
  net.forward(w, in, out);
  ASSERT_EQ(out.rows(), 2);
  ASSERT_EQ(out.cols(), 9);
  EXPECT_TRUE((out.row(0).array() == 0.7).all());
  EXPECT_TRUE((out.row(1).array() == -1.25).all());
}

TEST(Mlp, InitializedOutputLayerIsZero) {
  const Mlp net({1, 32, 32, 1});
  std::vector<double> w(net.size());
  net.init(w, 11, 0);
  Eigen::MatrixXd in = Eigen::MatrixXd::Random(1, 20), out;
  net.forward(w, in, out);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
  // Hidden layers are not degenerate and distinct tags draw distinct weights.
  std::vector<double> other(net.size());
  net.init(other, 11, 1);
  EXPECT_NE(w, other);
  double spread = 0.0;
  for (std::size_t i = 0; i < 32; ++i) spread = std::max(spread, std::abs(w[i]));
  EXPECT_GT(spread, 0.1);
}

TEST(Mlp, GradientsMatchCentralDifferences) {
  const Mlp net({4, 32, 32, 1});
  std::mt19937_64 gen(2);
  std::normal_distribution<double> g;
  std::size_t checked = 0, good = 0;
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<double> w(net.size());
    net.init(w, 100 + trial, 0);
    for (double& x : w) x += 0.3 * g(gen);  // wake the output layer up
    Eigen::MatrixXd in(4, 16), G(1, 16);
    for (Eigen::Index i = 0; i < in.size(); ++i) in.data()[i] = g(gen);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = g(gen);

    Eigen::MatrixXd out, din;
    MlpTape tape;
    net.forward(w, in, out, &tape);
    std::vector<double> grad(net.size(), 0.0);
    net.backward(w, tape, G, grad, &din);

    const double h = 1e-4;
    for (std::size_t k = 0; k < w.size(); ++k) {
      std::vector<double> up = w, dn = w;
      up[k] += h;
      dn[k] -= h;
      const double fd = (probe_loss(net, up, in, G) - probe_loss(net, dn, in, G)) / (2.0 * h);
      const double scale = std::max(std::abs(fd), std::abs(grad[k]));
      ++checked;
      if (scale < 1e-12 || std::abs(fd - grad[k]) <= 1e-4 * scale) ++good;
    }
    // Input gradient on one column.
    for (Eigen::Index r = 0; r < 4; ++r) {
      Eigen::MatrixXd up = in, dn = in;
      up(r, 3) += h;
      dn(r, 3) -= h;
      const double fd = (probe_loss(net, w, up, G) - probe_loss(net, w, dn, G)) / (2.0 * h);
      EXPECT_NEAR(din(r, 3), fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
  EXPECT_GE(static_cast<double>(good), 0.95 * static_cast<double>(checked)) << good << "/" << checked;
}

TEST(Mlp, BackwardAccumulates) {
  const Mlp net({2, 4, 1});
  std::vector<double> w(net.size());
  net.init(w, 3, 0);
  Eigen::MatrixXd in = Eigen::MatrixXd::Random(2, 5), out, G = Eigen::MatrixXd::Ones(1, 5);
  MlpTape tape;
  net.forward(w, in, out, &tape);
  std::vector<double> once(net.size(), 0.0), twice(net.size(), 0.0);
  net.backward(w, tape, G, once);
  net.backward(w, tape, G, twice);
  net.backward(w, tape, G, twice);
  for (std::size_t k = 0; k < w.size(); ++k) EXPECT_DOUBLE_EQ(twice[k], 2.0 * once[k]);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // Bias correction makes the first update lr * g / (|g| + eps') = lr * sign(g).
  Adam opt(3, AdamSettings{.lr = 0.01});
  std::vector<double> w{1.0, -2.0, 0.5};
  const std::vector<double> g{4.0, -0.001, 0.0};
  opt.step(w, g);
  EXPECT_NEAR(w[0], 0.99, 1e-9);
  EXPECT_NEAR(w[1], -1.99, 1e-6);
  EXPECT_EQ(w[2], 0.5);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(Adam, MinimizesQuadratic) {
  Adam opt(2, AdamSettings{.lr = 0.05});
  std::vector<double> w{3.0, -4.0};
  for (int k = 0; k < 2000; ++k) {
    const std::vector<double> g{2.0 * (w[0] - 1.0), 2.0 * (w[1] + 0.5)};
    opt.step(w, g);
  }
  EXPECT_NEAR(w[0], 1.0, 1e-3);
  EXPECT_NEAR(w[1], -0.5, 1e-3);
}
