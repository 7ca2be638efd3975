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

#include <gtest/gtest.h>

#include <functional>

#include "mmfg/cases.hpp"
#include "mmfg/config.hpp"
#include "mmfg/error.hpp"

namespace mmfg::testing {

inline ScenarioConfig scenario(const std::string& id, bool constrained = false,
                               nlohmann::json patch = nlohmann::json::object()) {
  return case_config(CaseSpec{id, constrained, std::move(patch)});
}

inline ScenarioConfig baseline(nlohmann::json patch = nlohmann::json::object()) {
  nlohmann::json doc = baseline_scenario();
  doc.merge_patch(patch);
  return parse_config(doc);
}

inline const QuadraticReward& quad(const ScenarioConfig& c) { return std::get<QuadraticReward>(c.reward); }

// Passes when fn throws mmfg::Error carrying `code`.
inline ::testing::AssertionResult throws_code(const std::function<void()>& fn, Errc code) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() == code) return ::testing::AssertionSuccess();
    return ::testing::AssertionFailure() << "wrong code: " << e.what();
  } catch (const std::exception& e) {
    return ::testing::AssertionFailure() << "foreign exception: " << e.what();
  }
  return ::testing::AssertionFailure() << "nothing thrown";
}

}  // namespace mmfg::testing
