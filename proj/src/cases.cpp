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
#include "mmfg/cases.hpp"

#include <algorithm>

#include "mmfg/error.hpp"
#include "mmfg/io.hpp"

namespace mmfg {
namespace {

using nlohmann::json;

// Deltas over the baseline, per case. Shares and fixed fees are left out so
// they follow the membership fee (pi = e / sum e omega, d_e = 0.1 e).
json case_delta(std::string_view id) {
  const json sigma = {{"sigma", {0.1, 0.3}}};
  const json gamma = {{"gamma", {1.0, 1.6}}};
  const json income = {{"net_income", {0.02, 0.1}}};
  if (id == "1a") return {{"market", sigma}};
  if (id == "1b") return {{"market", {{"sigma", {0.1, 0.3}}, {"omega", {0.8, 0.2}}}}};
  if (id == "1c") return {{"market", {{"sigma", {0.1, 0.3}}, {"omega", {0.2, 0.8}}}}};
  if (id == "2a") return {{"reward", gamma}};
  if (id == "2b") return {{"reward", gamma}, {"market", {{"omega", {0.8, 0.2}}}}};
  if (id == "2c") return {{"reward", gamma}, {"market", {{"omega", {0.2, 0.8}}}}};
  if (id == "3a") return {{"market", {{"kappa", {0.1, 0.5}}}}, {"reward", {{"gamma", {1.6, 1.6}}}}};
  if (id == "3b") return {{"market", {{"kappa", {0.1, 0.5}}}}, {"reward", {{"gamma", {1.0, 1.0}}}}};
  if (id == "4a") return {{"market", income}};
  if (id == "4b") return {{"market", {{"net_income", {0.02, 0.1}}, {"e", {0.1, 0.01}}}}};
  if (id == "4c") return {{"market", {{"net_income", {0.02, 0.1}}, {"e", {0.01, 0.1}}}}};
  if (id == "5")
    return {{"market", {{"kappa", {0.08, 0.08}}}},
            {"reward",
             {{"type", "hara"}, {"gamma", {0.5, 3.0}}, {"a", {1.0, 1.0}}, {"b", {5.0, 5.0}},
              {"B", {2.5, 2.5}}, {"Q", {1.0, 1.0}}, {"P", {1.0, 1.0}}, {"R", {0.1, 0.1}},
              {"S", nullptr}}}};
  throw Error(Errc::invalid_config, "unknown case id " + std::string(id));
}

std::size_t size_field(const json& j, const char* key, std::size_t fallback) {
  return j.contains(key) ? j.at(key).get<std::size_t>() : fallback;
}

}  // namespace

const std::vector<std::string>& case_ids() {
  static const std::vector<std::string> ids = {"1a", "1b", "1c", "2a", "2b", "2c",
                                               "3a", "3b", "4a", "4b", "4c", "5"};
  return ids;
}

bool is_known_case(std::string_view id) {
  const auto& ids = case_ids();
  return std::find(ids.begin(), ids.end(), id) != ids.end();
}

json baseline_scenario() {
  return {
      {"market",
       {{"classes", 2},
        {"r", 0.03},
        {"T", 1.0},
        {"kappa", {0.5, 0.5}},
        {"sigma", {0.3, 0.3}},
        {"d", {0.05, 0.05}},
        {"e", {0.01, 0.01}},
        {"net_income", {0.02, 0.02}},
        {"omega", {0.5, 0.5}},
        {"xi_mean", {2.0, 2.0}}}},
      {"reward",
       {{"type", "quadratic"},
        {"Q", {1.0, 1.0}},
        {"P", {1.0, 1.0}},
        {"R", {0.1, 0.1}},
        {"S", {0.6, 0.6}},
        {"gamma", {1.0, 1.0}}}},
      {"constraint", "unbounded"},
  };
}

json case_scenario(const CaseSpec& spec) {
  json doc = baseline_scenario();
  doc.merge_patch(case_delta(spec.id));
  if (spec.constrained) doc["constraint"] = json::array({0.0, 1.0});
  json patch = spec.overrides;
  if (patch.is_object()) patch.erase("training");
  if (!patch.is_null()) doc.merge_patch(patch);
  return doc;
}

ScenarioConfig case_config(const CaseSpec& spec) { return parse_config(case_scenario(spec)); }

double default_penalty(std::string_view id) {
  if (!is_known_case(id)) throw Error(Errc::invalid_config, "unknown case id " + std::string(id));
  return (id == "1a" || id == "1b" || id == "1c" || id == "4b" || id == "4c") ? 10.0 : 1.0;
}

Profile parse_profile(std::string_view name) {
  if (name == "desk") return Profile::desk;
  if (name == "paper") return Profile::paper;
  throw Error(Errc::invalid_config, "profile must be desk or paper");
}

const char* profile_name(Profile p) noexcept { return p == Profile::desk ? "desk" : "paper"; }

TrainingConfig case_training(const CaseSpec& spec, Profile profile, std::uint64_t seed) {
  TrainingConfig cfg;
  cfg.n_paths = profile == Profile::desk ? 2000 : 10000;
  cfg.iterations = profile == Profile::desk ? 300 : 1000;
  cfg.n_steps = 100;
  cfg.penalty = default_penalty(spec.id);
  cfg.seed = seed;
  // Both settings of a case start v-bar inside the constrained interval, so
  // that they share a starting point and the constrained one is not born dead.
  cfg.vbar_start = 0.5;
  if (spec.overrides.is_object() && spec.overrides.contains("training")) {
    const json& t = spec.overrides.at("training");
    cfg.n_paths = size_field(t, "n_paths", cfg.n_paths);
    cfg.n_steps = size_field(t, "n_steps", cfg.n_steps);
    cfg.iterations = size_field(t, "iterations", cfg.iterations);
    cfg.hidden = size_field(t, "hidden", cfg.hidden);
    if (t.contains("lr")) cfg.adam.lr = t.at("lr").get<double>();
    if (t.contains("penalty")) cfg.penalty = t.at("penalty").get<double>();
    if (t.contains("seed")) cfg.seed = t.at("seed").get<std::uint64_t>();
    if (t.contains("vbar_start")) cfg.vbar_start = t.at("vbar_start").get<double>();
  }
  cfg.validate();
  return cfg;
}

json case_table_json() {
  json table = json::object();
  table["baseline"] = baseline_scenario();
  json cases = json::object();
  for (const std::string& id : case_ids()) {
    // Parse each entry so the table only ever holds valid scenarios.
    const CaseSpec spec{id, false, json::object()};
    const ScenarioConfig cfg = case_config(spec);
    cases[id] = {{"scenario", cfg.source}, {"penalty", default_penalty(id)}};
  }
  table["cases"] = cases;
  table["constrained_interval"] = json::array({0.0, 1.0});
  table["profiles"] = {{"desk", {{"n_paths", 2000}, {"iterations", 300}, {"n_steps", 100}}},
                       {"paper", {{"n_paths", 10000}, {"iterations", 1000}, {"n_steps", 100}}}};
  return table;
}

std::string case_table_dump() { return dump_json(case_table_json()); }

}  // namespace mmfg
