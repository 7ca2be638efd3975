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
// mmfg: experiment runner. Exit codes: 0 ok, 1 check failed, 2 bad input,
// 3 training diverged or went non-finite.
#include <omp.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmfg/cases.hpp"
#include "mmfg/config.hpp"
#include "mmfg/deepbsde.hpp"
#include "mmfg/error.hpp"
#include "mmfg/io.hpp"
#include "mmfg/nplayer.hpp"
#include "mmfg/riccati.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmfg;

namespace {

constexpr int kExitCheckFailed = 1;
constexpr int kExitBadInput = 2;
constexpr int kExitTraining = 3;

void apply_thread_cap() {
  if (const char* env = std::getenv("MFG_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) omp_set_num_threads(n);
  }
}

std::vector<std::size_t> parse_schedule(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    const long long n = std::stoll(item);
    if (n <= 0) throw Error(Errc::invalid_config, "schedule entries must be positive");
    out.push_back(static_cast<std::size_t>(n));
  }
  if (out.empty()) throw Error(Errc::invalid_config, "empty schedule");
  return out;
}

struct RunCaseArgs {
  std::string id;
  bool constrained = false, unconstrained = false;
  std::optional<double> lambda;
  std::string profile = "desk";
  std::uint64_t seed = 2024;
  std::string out = "out";
  std::optional<std::size_t> iterations, paths;
  bool serial = false;
};

// Trains one setting of a case and writes its artifacts into dir.
TrainedSolver run_setting(const RunCaseArgs& a, bool constrained, const fs::path& dir) {
  CaseSpec spec{a.id, constrained, json::object()};
  json training = json::object();
  if (a.lambda) training["penalty"] = *a.lambda;
  if (a.iterations) training["iterations"] = *a.iterations;
  if (a.paths) training["n_paths"] = *a.paths;
  if (!training.empty()) spec.overrides["training"] = training;

  const ScenarioConfig cfg = case_config(spec);
  TrainingConfig tc = case_training(spec, parse_profile(a.profile), a.seed);
  if (a.serial) tc.exec = Exec::serial;
  const std::uint64_t hash = config_hash(cfg.source);
  fs::create_directories(dir);

  std::optional<MeanFieldSolution> oracle;
  if (is_quadratic(cfg.reward) && !cfg.market.constraint.bounded()) {
    oracle = solve_unconstrained(cfg.market, std::get<QuadraticReward>(cfg.reward), kDefaultOdeGrid)
                 .downsample(tc.n_steps);
    oracle_table(*oracle).write(dir / "oracle.csv");
  }

  const RolloutProblem problem{cfg.market, cfg.reward, cfg.survival};
  TrainedSolver s = train(problem, tc, [&](std::size_t k, double loss) {
    if (k % 100 == 0) std::fprintf(stderr, "[%s %s] iter %zu loss %s\n", a.id.c_str(),
                                   constrained ? "constrained" : "unconstrained", k,
                                   format_double(loss).c_str());
  });
  if (oracle) s.relative_error = relative_error(s, *oracle);

  curves_table(s).write(dir / "nn_curves.csv");
  loss_table(s).write(dir / "loss_history.csv");

  const std::size_t M = tc.n_steps;
  json m = json::object();
  m["case"] = a.id;
  m["constrained"] = constrained;
  m["profile"] = a.profile;
  m["seed"] = tc.seed;
  m["config_hash"] = hex64(hash);
  m["grid"] = {{"n_steps", M}, {"n_paths", tc.n_paths}, {"iterations", tc.iterations},
               {"ode_grid", kDefaultOdeGrid}, {"eval_paths", tc.eval_paths ? tc.eval_paths : tc.n_paths}};
  m["penalty"] = tc.penalty;
  for (std::size_t h = 0; h < cfg.market.H; ++h) {
    const auto c = static_cast<Eigen::Index>(h);
    m["vbar" + std::to_string(h + 1) + "_0"] = s.vbar[0][c];
    m["vbar" + std::to_string(h + 1) + "_penult"] = s.vbar[M - 1][c];
    if (oracle) {
      m["oracle_vbar" + std::to_string(h + 1) + "_0"] = oracle->vbar[0][c];
      m["oracle_vbar" + std::to_string(h + 1) + "_penult"] = oracle->vbar[M - 1][c];
    }
  }
  m["terminal_error"] = s.terminal_error;
  m["terminal_error_se"] = s.terminal_error_se;
  m["meanfield_error"] = s.meanfield_error;
  m["relative_error"] = s.relative_error ? json(*s.relative_error) : json(nullptr);
  m["v_min"] = s.v_min;
  m["v_max"] = s.v_max;
  m["scenario"] = cfg.source;
  write_text(dir / "metrics.json", dump_json(m));
  // Wall time lives apart so metrics.json stays byte-stable across replays.
  write_text(dir / "timing.json", dump_json(json{{"wall_seconds", s.wall_seconds}}));

  std::printf("case %s %s: terminal_error %s meanfield_error %s", a.id.c_str(),
              constrained ? "constrained" : "unconstrained", format_double(s.terminal_error).c_str(),
              format_double(s.meanfield_error).c_str());
  if (s.relative_error) std::printf(" relative_error %s%%", format_double(*s.relative_error).c_str());
  std::printf(" wall %ss\n", format_double(s.wall_seconds).c_str());
  return s;
}

int run_case(const RunCaseArgs& a) {
  if (!is_known_case(a.id)) throw Error(Errc::invalid_config, "unknown case id " + a.id);
  const bool both = a.constrained == a.unconstrained;
  const fs::path out(a.out);
  if (!both) {
    run_setting(a, a.constrained, out);
    return 0;
  }
  const TrainedSolver u = run_setting(a, false, out / "unconstrained");
  const TrainedSolver c = run_setting(a, true, out / "constrained");
  double gap = 0.0;
  for (std::size_t i = 0; i < u.vbar.size(); ++i) gap = std::max(gap, (u.vbar[i] - c.vbar[i]).cwiseAbs().maxCoeff());
  write_text(out / "comparison.json", dump_json(json{{"case", a.id}, {"vbar_sup_gap", gap}}));
  std::printf("case %s: sup |vbar_constrained - vbar_unconstrained| = %s\n", a.id.c_str(),
              format_double(gap).c_str());
  return 0;
}

int run_check(const std::string& path, bool strict) {
  const ScenarioConfig cfg = load_config(path);
  const WellposednessReport rep = check_wellposedness(cfg.market, cfg.reward);
  for (const ConditionEntry& e : rep.entries)
    std::printf("%-36s %-4s margin %s%s\n", e.name.c_str(), e.holds ? "ok" : "FAIL",
                format_double(e.margin).c_str(), e.required ? "" : " (advisory)");
  if (cfg.population) {
    const OmegaCheck oc = check_omega(Population{cfg.population->N, std::nullopt}, cfg.market);
    std::printf("%-36s %-4s gap %s (advisory)\n", "population_omega_consistency", oc.consistent ? "ok" : "FAIL",
                format_double(oc.max_rel_gap).c_str());
    if (strict && !oc.consistent) return kExitCheckFailed;
  }
  const bool ok = strict ? rep.all_hold() : rep.all_required_hold();
  std::printf("%s\n", ok ? "well-posed" : "NOT well-posed");
  return ok ? 0 : kExitCheckFailed;
}

struct ScalingArgs {
  std::string config;
  std::string schedule = "10,40,160,640";
  std::size_t mc = 500;
  std::uint64_t seed = 2024;
  std::string out = "out";
  std::string nash_schedule;
  std::size_t n_steps = 100;
  bool serial = false;
};

int run_scaling(const ScalingArgs& a) {
  const ScenarioConfig cfg = load_config(a.config);
  if (!is_quadratic(cfg.reward))
    throw Error(Errc::invalid_config, "nplayer-scaling needs a quadratic reward (exact feedback)");
  const auto& q = std::get<QuadraticReward>(cfg.reward);
  const Exec exec = a.serial ? Exec::serial : Exec::parallel;
  const MeanFieldSolution sol = solve_unconstrained(cfg.market, q, kDefaultOdeGrid).downsample(a.n_steps);
  auto feedback = std::make_shared<RiccatiFeedback>(cfg.market, q, sol);
  const std::vector<std::size_t> schedule = parse_schedule(a.schedule);
  const fs::path out(a.out);
  fs::create_directories(out);

  const GapStatistics stats = mean_field_gap(cfg.market, *feedback, schedule, a.mc, a.seed, exec);
  gap_table(stats).write(out / "gap.csv");
  json summary = gap_summary(stats);
  summary["seed"] = a.seed;
  summary["n_mc"] = a.mc;
  summary["config_hash"] = hex64(config_hash(cfg.source));
  for (const GapRow& r : stats.rows)
    std::printf("N %zu gap %s stderr %s\n", r.N, format_double(r.gap).c_str(), format_double(r.stderr_).c_str());
  if (stats.fit) std::printf("slope %s r2 %s\n", format_double(stats.fit->slope).c_str(), format_double(stats.fit->r2).c_str());

  if (!a.nash_schedule.empty()) {
    const std::vector<std::size_t> ns = parse_schedule(a.nash_schedule);
    const std::vector<std::shared_ptr<const Strategy>> menu = {
        std::make_shared<ShiftedStrategy>(feedback, 0.1, cfg.market.constraint),
        std::make_shared<ShiftedStrategy>(feedback, -0.1, cfg.market.constraint)};
    const NashProbe probe = epsilon_nash_probe(cfg.market, cfg.reward, feedback, menu, ns, a.mc, a.seed, a.n_steps, exec);
    nash_table(probe).write(out / "nash.csv");
    if (probe.decay) summary["nash_decay"] = {{"a", probe.decay->first}, {"b", probe.decay->second}};
    for (const NashRow& r : probe.rows)
      std::printf("N %zu max_gain %s stderr %s\n", r.N, format_double(*r.max_gain).c_str(),
                  format_double(r.stderr_).c_str());
  }
  write_text(out / "gap_summary.json", dump_json(summary));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"Mean-field mutual insurance solver"};
  app.require_subcommand(1);

  RunCaseArgs rc;
  auto* run = app.add_subcommand("run-case", "train one built-in case and write curves and metrics");
  run->add_option("id", rc.id, "case id (1a..4c, 5)")->required();
  auto* fc = run->add_flag("--constrained", rc.constrained, "impose I = [0, 1]");
  run->add_flag("--unconstrained", rc.unconstrained, "no constraint")->excludes(fc);
  run->add_option("--lambda", rc.lambda, "mean-field penalty weight");
  run->add_option("--profile", rc.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  run->add_option("--seed", rc.seed, "training seed");
  run->add_option("--out", rc.out, "output directory");
  run->add_option("--iterations", rc.iterations, "override the profile's iteration count");
  run->add_option("--paths", rc.paths, "override the profile's path count");
  run->add_flag("--serial", rc.serial, "single-threaded execution");

  std::string check_path;
  bool strict = false;
  auto* chk = app.add_subcommand("check", "print the well-posedness report for a config");
  chk->add_option("config", check_path, "scenario JSON")->required();
  chk->add_flag("--strict", strict, "advisory conditions also fail the check");

  ScalingArgs sa;
  auto* sc = app.add_subcommand("nplayer-scaling", "finite-population gap against the mean-field limit");
  sc->add_option("config", sa.config, "scenario JSON")->required();
  sc->add_option("--schedule", sa.schedule, "comma-separated class sizes");
  sc->add_option("--mc", sa.mc, "replications per size");
  sc->add_option("--seed", sa.seed, "simulation seed");
  sc->add_option("--out", sa.out, "output directory");
  sc->add_option("--nash", sa.nash_schedule, "also run the deviation probe on these sizes");
  sc->add_option("--steps", sa.n_steps, "time steps");
  sc->add_flag("--serial", sa.serial, "single-threaded execution");

  auto* tab = app.add_subcommand("case-table", "print the built-in case table as JSON");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return run_case(rc);
    if (*chk) return run_check(check_path, strict);
    if (*sc) return run_scaling(sa);
    if (*tab) {
      std::fputs(case_table_dump().c_str(), stdout);
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    const bool training = e.code() == Errc::early_divergence || e.code() == Errc::non_finite_loss ||
                          e.code() == Errc::non_finite_state || e.code() == Errc::blow_up;
    return training ? kExitTraining : kExitBadInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitBadInput;
  }
  return 0;
}
