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

#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "mmfg/config.hpp"
#include "mmfg/deepbsde.hpp"

namespace mmfg {

// Built-in experiment cases: two-class baseline plus per-case parameter deltas.
// Ids: 1a 1b 1c 2a 2b 2c 3a 3b 4a 4b 4c 5.
const std::vector<std::string>& case_ids();
bool is_known_case(std::string_view id);

nlohmann::json baseline_scenario();

struct CaseSpec {
  std::string id;
  bool constrained = false;
  // JSON merge patch over the scenario; a "training" member overrides
  // TrainingConfig fields (n_paths, n_steps, iterations, lr, penalty, seed, hidden,
  // vbar_start).
  nlohmann::json overrides = nlohmann::json::object();
};

// Scenario document for a case; constrained runs use I = [0, 1].
nlohmann::json case_scenario(const CaseSpec& spec);
ScenarioConfig case_config(const CaseSpec& spec);

// Penalty weight used for a case unless overridden (10 for the volatility and
// membership-fee cases whose fixed point is harder to hit, 1 otherwise).
double default_penalty(std::string_view id);

enum class Profile { desk, paper };
Profile parse_profile(std::string_view name);
const char* profile_name(Profile p) noexcept;

// Profile sizes plus case defaults, then the "training" overrides.
TrainingConfig case_training(const CaseSpec& spec, Profile profile, std::uint64_t seed);

// Every case with its scenario and default penalty; the committed golden file
// is this document's dump.
nlohmann::json case_table_json();
std::string case_table_dump();

}  // namespace mmfg
