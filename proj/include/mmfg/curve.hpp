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

#include <functional>
#include <utility>
#include <vector>

namespace mmfg {

// Deterministic scalar function of time. Constants and piecewise-linear
// tables round-trip through JSON; arbitrary callables do not.
class Curve {
 public:
  enum class Kind { constant, table, function };

  Curve() = default;
  Curve(double value) : constant_(value) {}  // NOLINT: constants convert implicitly

  static Curve table(std::vector<double> times, std::vector<double> values);
  static Curve function(std::function<double(double)> fn);

  double operator()(double t) const;

  Kind kind() const noexcept { return kind_; }
  bool is_constant() const noexcept { return kind_ == Kind::constant; }
  double constant_value() const noexcept { return constant_; }
  const std::vector<double>& times() const noexcept { return times_; }
  const std::vector<double>& values() const noexcept { return values_; }

  // (min, max) over a uniform grid of [0, horizon] plus any table knots.
  std::pair<double, double> range(double horizon, std::size_t samples = 1000) const;

 private:
  Kind kind_ = Kind::constant;
  double constant_ = 0.0;
  std::vector<double> times_, values_;
  std::function<double(double)> fn_;
};

}  // namespace mmfg
