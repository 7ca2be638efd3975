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
#include "mmfg/mlp.hpp"

#include <cmath>

#include "mmfg/error.hpp"
#include "mmfg/paths.hpp"

namespace mmfg {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using CMap = Eigen::Map<const MatrixXd>;
using CVec = Eigen::Map<const Eigen::VectorXd>;

}  // namespace

Mlp::Mlp(std::vector<Index> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw Error(Errc::invalid_config, "network needs input and output widths");
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw Error(Errc::invalid_config, "zero-width layer");
    offsets_.push_back(size_);
    size_ += static_cast<std::size_t>(widths_[l + 1] * widths_[l] + widths_[l + 1]);
  }
}

void Mlp::init(std::span<double> w, std::uint64_t seed, std::uint32_t tag) const {
  if (w.size() != size_) throw Error(Errc::invalid_config, "weight buffer size mismatch");
  std::uint32_t counter = 0;
  for (std::size_t l = 0; l < layers(); ++l) {
    const Index fan_in = widths_[l], fan_out = widths_[l + 1];
    const std::size_t nw = static_cast<std::size_t>(fan_in * fan_out);
    double* W = w.data() + offsets_[l];
    double* b = W + nw;
    if (l + 1 == layers()) {
      std::fill(W, W + nw + static_cast<std::size_t>(fan_out), 0.0);
      continue;
    }
    const double wb = std::sqrt(6.0 / static_cast<double>(fan_in));
    const double bb = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t k = 0; k < nw; ++k)
      W[k] = wb * (2.0 * uniform_open({seed, counter++, tag, kInitChannel, 0}) - 1.0);
    for (Index k = 0; k < fan_out; ++k)
      b[k] = bb * (2.0 * uniform_open({seed, counter++, tag, kInitChannel, 0}) - 1.0);
  }
}

void Mlp::forward(std::span<const double> w, const MatrixXd& in, MatrixXd& out, MlpTape* tape) const {
  const Index B = in.cols();
  MatrixXd cur = in;
  if (tape) {
    tape->act.resize(layers());
    tape->act[0] = in;
  }
  for (std::size_t l = 0; l < layers(); ++l) {
    const Index fi = widths_[l], fo = widths_[l + 1];
    // Aligned copies: Eigen's peeling depends on the address, and with it the
    // rounding, so products over caller buffers would not replay bit for bit.
    const MatrixXd W = CMap(w.data() + offsets_[l], fo, fi);
    const Eigen::VectorXd b = CVec(w.data() + offsets_[l] + fo * fi, fo);
    MatrixXd next(fo, B);
    next.noalias() = W * cur;
    next.colwise() += b;
    if (l + 1 < layers()) {
      next = next.cwiseMax(0.0);
      if (tape) tape->act[l + 1] = next;
    }
    cur = std::move(next);
  }
  out = std::move(cur);
}

void Mlp::backward(std::span<const double> w, const MlpTape& tape, const MatrixXd& dout,
                   std::span<double> grad, MatrixXd* din) const {
  MatrixXd delta = dout;
  for (std::size_t l = layers(); l-- > 0;) {
    const Index fi = widths_[l], fo = widths_[l + 1];
    const MatrixXd W = CMap(w.data() + offsets_[l], fo, fi);
    MatrixXd gW(fo, fi);
    gW.noalias() = delta * tape.act[l].transpose();
    const Eigen::VectorXd gb = delta.rowwise().sum();
    double* g = grad.data() + offsets_[l];
    for (Index k = 0; k < fo * fi; ++k) g[k] += gW.data()[k];
    for (Index k = 0; k < fo; ++k) g[fo * fi + k] += gb[k];
    if (l == 0 && !din) break;
    MatrixXd up(fi, delta.cols());
    up.noalias() = W.transpose() * delta;
    if (l > 0) {
      // ReLU'(pre) = 1 where the rectified activation is positive.
      up = (tape.act[l].array() > 0.0).select(up, 0.0);
      delta = std::move(up);
    } else {
      *din = std::move(up);
    }
  }
}

Adam::Adam(std::size_t n, AdamSettings s) : s_(s), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> w, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < w.size(); ++k) {
    m_[k] = s_.beta1 * m_[k] + (1.0 - s_.beta1) * grad[k];
    v_[k] = s_.beta2 * v_[k] + (1.0 - s_.beta2) * grad[k] * grad[k];
    w[k] -= s_.lr * (m_[k] / c1) / (std::sqrt(v_[k] / c2) + s_.eps);
  }
}

}  // namespace mmfg
