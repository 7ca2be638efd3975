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
#include "mmfg/curve.hpp"

#include <algorithm>
#include <cmath>

#include "mmfg/error.hpp"

namespace mmfg {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::kappa_below_fee: return "KappaBelowFee";
    case Errc::weight_mismatch: return "WeightMismatch";
    case Errc::non_positive_share: return "NonPositiveShare";
    case Errc::singular_matrix: return "SingularMatrix";
    case Errc::invalid_config: return "InvalidConfig";
    case Errc::degenerate_survival: return "DegenerateSurvival";
    case Errc::blow_up: return "BlowUp";
    case Errc::non_finite_state: return "NonFiniteState";
    case Errc::non_finite_loss: return "NonFiniteLoss";
    case Errc::early_divergence: return "EarlyDivergence";
    case Errc::grid_mismatch: return "GridMismatch";
    case Errc::insufficient_samples: return "InsufficientSamples";
    case Errc::io_failure: return "IoFailure";
  }
  return "Unknown";
}

Curve Curve::table(std::vector<double> times, std::vector<double> values) {
  if (times.empty() || times.size() != values.size())
    throw Error(Errc::invalid_config, "curve table needs matching, non-empty times/values");
  if (!std::is_sorted(times.begin(), times.end()) ||
      std::adjacent_find(times.begin(), times.end()) != times.end())
    throw Error(Errc::invalid_config, "curve table times must be strictly increasing");
  Curve c;
  c.kind_ = Kind::table;
  c.times_ = std::move(times);
  c.values_ = std::move(values);
  return c;
}

Curve Curve::function(std::function<double(double)> fn) {
  Curve c;
  c.kind_ = Kind::function;
  c.fn_ = std::move(fn);
  return c;
}

double Curve::operator()(double t) const {
  switch (kind_) {
    case Kind::constant:
      return constant_;
    case Kind::function:
      return fn_(t);
    case Kind::table: {
      if (t <= times_.front()) return values_.front();
      if (t >= times_.back()) return values_.back();
      const auto hi = std::upper_bound(times_.begin(), times_.end(), t);
      const auto k = static_cast<std::size_t>(hi - times_.begin());
      const double w = (t - times_[k - 1]) / (times_[k] - times_[k - 1]);
      return values_[k - 1] + w * (values_[k] - values_[k - 1]);
    }
  }
  return constant_;
}

std::pair<double, double> Curve::range(double horizon, std::size_t samples) const {
  if (kind_ == Kind::constant) return {constant_, constant_};
  double lo = INFINITY, hi = -INFINITY;
  auto see = [&](double t) {
    const double v = (*this)(t);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  };
  for (std::size_t i = 0; i <= samples; ++i)
    see(horizon * static_cast<double>(i) / static_cast<double>(samples));
  for (double t : times_)
    if (t >= 0.0 && t <= horizon) see(t);
  return {lo, hi};
}

}  // namespace mmfg
