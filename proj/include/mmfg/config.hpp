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

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "mmfg/model.hpp"

namespace mmfg {

struct PopulationBlock {
  std::vector<std::size_t> N;
};

// Everything a scenario file can carry. See docs/config_schema.md.
struct ScenarioConfig {
  MarketParams market;
  RewardSpec reward;
  std::optional<SurvivalSpec> survival;
  std::optional<PopulationBlock> population;
  nlohmann::json source;  // canonical form used for hashing
};

MarketRecord market_record_from_json(const nlohmann::json& market, const nlohmann::json* constraint);
RewardSpec reward_from_json(const nlohmann::json& reward, std::size_t H);
ScenarioConfig parse_config(const nlohmann::json& doc);
ScenarioConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const MarketRecord& record);
nlohmann::json to_json(const RewardSpec& reward);
nlohmann::json constraint_to_json(const Interval& interval);
nlohmann::json to_json(const WellposednessReport& report);

// FNV-1a over the compact dump of a JSON document (keys are ordered).
std::uint64_t config_hash(const nlohmann::json& doc);

}  // namespace mmfg
