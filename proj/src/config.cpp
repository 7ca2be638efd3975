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
#include "mmfg/config.hpp"

#include <algorithm>

#include "mmfg/error.hpp"
#include "mmfg/io.hpp"

namespace mmfg {
namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& what) { throw Error(Errc::invalid_config, what); }

double number(const json& j, const std::string& name) {
  if (!j.is_number()) bad(name + " must be a number");
  return j.get<double>();
}

std::vector<double> per_class(const json& j, std::size_t H, const std::string& name) {
  if (j.is_number()) return std::vector<double>(H, j.get<double>());
  if (!j.is_array() || j.size() != H)
    bad(name + " must be a number or an array of " + std::to_string(H) + " numbers");
  std::vector<double> out;
  for (const auto& v : j) out.push_back(number(v, name));
  return out;
}

std::optional<std::vector<double>> optional_per_class(const json& obj, const char* key,
                                                      std::size_t H) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return per_class(obj.at(key), H, key);
}

Curve curve_from_json(const json& j, const std::string& name) {
  if (j.is_number()) return Curve(j.get<double>());
  if (j.is_object() && j.contains("times") && j.contains("values"))
    return Curve::table(j.at("times").get<std::vector<double>>(),
                        j.at("values").get<std::vector<double>>());
  bad(name + " must be a number or {times, values}");
}

std::vector<Curve> per_class_curves(const json& j, std::size_t H, const std::string& name) {
  if (j.is_array()) {
    if (j.size() != H) bad(name + " must list one curve per class");
    std::vector<Curve> out;
    for (const auto& v : j) out.push_back(curve_from_json(v, name));
    return out;
  }
  return std::vector<Curve>(H, curve_from_json(j, name));
}

json curve_to_json(const Curve& c) {
  switch (c.kind()) {
    case Curve::Kind::constant:
      return c.constant_value();
    case Curve::Kind::table:
      return json{{"times", c.times()}, {"values", c.values()}};
    case Curve::Kind::function:
      break;
  }
  throw Error(Errc::invalid_config, "callable curves cannot be serialized");
}

json curves_to_json(const std::vector<Curve>& cs) {
  json arr = json::array();
  for (const auto& c : cs) arr.push_back(curve_to_json(c));
  return arr;
}

std::size_t infer_classes(const json& market) {
  if (market.contains("classes")) return market.at("classes").get<std::size_t>();
  std::size_t H = 1;
  for (const auto& [key, value] : market.items())
    if (value.is_array()) H = std::max(H, value.size());
  return H;
}

const json& field(const json& obj, const char* key) {
  if (!obj.contains(key)) bad(std::string("missing field ") + key);
  return obj.at(key);
}

}  // namespace

MarketRecord market_record_from_json(const json& m, const json* constraint) {
  if (!m.is_object()) bad("market must be an object");
  const std::size_t H = infer_classes(m);
  MarketRecord rec;
  rec.r = number(field(m, "r"), "r");
  rec.T = m.contains("T") ? number(m.at("T"), "T") : 1.0;
  rec.kappa = per_class(field(m, "kappa"), H, "kappa");
  rec.sigma = per_class(field(m, "sigma"), H, "sigma");
  rec.d = per_class(field(m, "d"), H, "d");
  rec.e = per_class(m.value("e", json(0.0)), H, "e");
  rec.net_income = per_class(field(m, "net_income"), H, "net_income");
  rec.omega = per_class(field(m, "omega"), H, "omega");
  rec.xi_mean = per_class(field(m, "xi_mean"), H, "xi_mean");
  rec.d_e = optional_per_class(m, "d_e", H);
  rec.pi = optional_per_class(m, "pi", H);
  rec.xi_var = optional_per_class(m, "xi_var", H);
  rec.sharing_disabled = !m.value("sharing", true);

  if (constraint && !constraint->is_null()) {
    const json& c = *constraint;
    if (c.is_string()) {
      if (c.get<std::string>() != "unbounded") bad("constraint string must be \"unbounded\"");
    } else if (c.is_array() && c.size() == 2) {
      rec.constraint = Interval::closed(number(c[0], "constraint"), number(c[1], "constraint"));
    } else if (c.is_object()) {
      rec.constraint = Interval::closed(number(field(c, "lo"), "lo"), number(field(c, "hi"), "hi"));
    } else {
      bad("constraint must be null, \"unbounded\", [lo, hi] or {lo, hi}");
    }
  }
  return rec;
}

RewardSpec reward_from_json(const json& r, std::size_t H) {
  const std::string type = r.value("type", "quadratic");
  if (type == "quadratic") {
    QuadraticReward q;
    q.Q = per_class_curves(field(r, "Q"), H, "Q");
    q.P = per_class_curves(field(r, "P"), H, "P");
    q.R = per_class_curves(field(r, "R"), H, "R");
    q.S = per_class_curves(field(r, "S"), H, "S");
    q.gamma = per_class(field(r, "gamma"), H, "gamma");
    return q;
  }
  if (type == "hara") {
    HaraReward w;
    w.gamma = per_class(field(r, "gamma"), H, "gamma");
    w.a = per_class(field(r, "a"), H, "a");
    w.b = per_class(field(r, "b"), H, "b");
    w.Q = per_class(field(r, "Q"), H, "Q");
    w.P = per_class(field(r, "P"), H, "P");
    w.R = per_class(field(r, "R"), H, "R");
    w.B = per_class(field(r, "B"), H, "B");
    return w;
  }
  bad("reward.type must be \"quadratic\" or \"hara\"");
}

ScenarioConfig parse_config(const json& doc) {
  if (!doc.is_object()) bad("config root must be an object");
  ScenarioConfig cfg;
  const json* constraint = doc.contains("constraint") ? &doc.at("constraint") : nullptr;
  const MarketRecord rec = market_record_from_json(field(doc, "market"), constraint);
  cfg.market = build_market(rec);
  cfg.reward = reward_from_json(field(doc, "reward"), cfg.market.H);
  validate_reward(cfg.reward, cfg.market);

  if (doc.contains("survival") && !doc.at("survival").is_null()) {
    const json& s = doc.at("survival");
    if (s.contains("hazard")) {
      cfg.survival = SurvivalSpec::constant_hazard(per_class(s.at("hazard"), cfg.market.H, "hazard"));
    } else if (s.contains("curves")) {
      SurvivalSpec spec;
      spec.s = per_class_curves(s.at("curves"), cfg.market.H, "survival curves");
      cfg.survival = spec;
    } else {
      bad("survival needs hazard or curves");
    }
    survival_transform(cfg.market, *cfg.survival, 0.0);  // validates s(T) > 0
  }
  if (doc.contains("population") && !doc.at("population").is_null()) {
    const json& p = doc.at("population");
    PopulationBlock pop;
    for (const auto& n : field(p, "N")) pop.N.push_back(n.get<std::size_t>());
    if (pop.N.size() != cfg.market.H) bad("population.N must list one size per class");
    cfg.population = pop;
  }

  cfg.source = json::object();
  cfg.source["market"] = to_json(to_record(cfg.market));
  cfg.source["reward"] = to_json(cfg.reward);
  cfg.source["constraint"] = constraint_to_json(cfg.market.constraint);
  if (doc.contains("survival")) cfg.source["survival"] = doc.at("survival");
  if (doc.contains("population")) cfg.source["population"] = doc.at("population");
  return cfg;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    bad(path.string() + ": " + e.what());
  }
  return parse_config(doc);
}

json to_json(const MarketRecord& rec) {
  json m;
  m["classes"] = rec.kappa.size();
  m["r"] = rec.r;
  m["T"] = rec.T;
  m["kappa"] = rec.kappa;
  m["sigma"] = rec.sigma;
  m["d"] = rec.d;
  m["e"] = rec.e;
  m["net_income"] = rec.net_income;
  m["omega"] = rec.omega;
  m["xi_mean"] = rec.xi_mean;
  if (rec.d_e) m["d_e"] = *rec.d_e;
  if (rec.pi) m["pi"] = *rec.pi;
  if (rec.xi_var) m["xi_var"] = *rec.xi_var;
  m["sharing"] = !rec.sharing_disabled;
  return m;
}

json constraint_to_json(const Interval& c) {
  if (!c.bounded()) return "unbounded";
  return json{{"lo", c.lo}, {"hi", c.hi}};
}

json to_json(const RewardSpec& reward) {
  if (const auto* q = std::get_if<QuadraticReward>(&reward)) {
    return json{{"type", "quadratic"}, {"Q", curves_to_json(q->Q)}, {"P", curves_to_json(q->P)},
                {"R", curves_to_json(q->R)}, {"S", curves_to_json(q->S)}, {"gamma", q->gamma}};
  }
  const auto& w = std::get<HaraReward>(reward);
  return json{{"type", "hara"}, {"gamma", w.gamma}, {"a", w.a}, {"b", w.b}, {"Q", w.Q},
              {"P", w.P},       {"R", w.R},         {"B", w.B}};
}

json to_json(const WellposednessReport& report) {
  json arr = json::array();
  for (const auto& c : report.entries)
    arr.push_back(json{{"name", c.name}, {"holds", c.holds}, {"margin", c.margin},
                       {"required", c.required}});
  return json{{"conditions", arr}, {"all_required_hold", report.all_required_hold()}};
}

std::uint64_t config_hash(const json& doc) { return fnv1a64(doc.dump()); }

}  // namespace mmfg
