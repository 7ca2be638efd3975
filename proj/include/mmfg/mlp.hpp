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
#include <span>
#include <vector>

namespace mmfg {

// Activations kept by a forward pass: act[0] is the input block, act[l] the
// rectified output of hidden layer l. Columns are samples.
struct MlpTape {
  std::vector<Eigen::MatrixXd> act;
};

// Fully connected network, ReLU hidden layers and identity output. The object
// only describes the shape; weights live in a caller-owned flat buffer laid out
// layer by layer as W (out x in, column-major) followed by b.
class Mlp {
 public:
  explicit Mlp(std::vector<Eigen::Index> widths);

  const std::vector<Eigen::Index>& widths() const noexcept { return widths_; }
  Eigen::Index in_dim() const noexcept { return widths_.front(); }
  Eigen::Index out_dim() const noexcept { return widths_.back(); }
  std::size_t layers() const noexcept { return widths_.size() - 1; }
  std::size_t size() const noexcept { return size_; }

  // He-uniform hidden weights, small uniform hidden biases, zero output layer.
  // Draws are addressed by (seed, tag, index) so nets never share variates.
  void init(std::span<double> w, std::uint64_t seed, std::uint32_t tag) const;

  void forward(std::span<const double> w, const Eigen::MatrixXd& in, Eigen::MatrixXd& out,
               MlpTape* tape = nullptr) const;

  // Accumulates dL/dw into grad; writes dL/din when din is non-null.
  void backward(std::span<const double> w, const MlpTape& tape, const Eigen::MatrixXd& dout,
                std::span<double> grad, Eigen::MatrixXd* din = nullptr) const;

 private:
  std::vector<Eigen::Index> widths_;
  std::vector<std::size_t> offsets_;  // start of each layer's W
  std::size_t size_ = 0;
};

struct AdamSettings {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamSettings s = {});
  void step(std::span<double> w, std::span<const double> grad);
  std::size_t steps() const noexcept { return t_; }

 private:
  AdamSettings s_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace mmfg
