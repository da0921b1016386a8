// Command-line front end: realize a scenario for a seed, run it, and leave
// metrics.csv / helpers.csv / summary.txt (or stationary.csv for the chain
// study) in the output directory. Failures remove whatever this invocation
// had already written.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "helpersim/analysis.hpp"
#include "helpersim/metrics_io.hpp"
#include "helpersim/scenario.hpp"
#include "helpersim/simcore.hpp"
#include "helpersim/version.hpp"

namespace fs = std::filesystem;
using namespace helpersim;

namespace {

/// Removes the files this run created unless commit() is reached; directories
/// created along the way go too when they end up empty.
class OutputGuard {
 public:
  explicit OutputGuard(const fs::path& dir) : dir_(dir) {
    created_dir_ = !fs::exists(dir_);
    fs::create_directories(dir_);
  }

  fs::path claim(const char* name) {
    files_.push_back(dir_ / name);
    return files_.back();
  }

  void commit() { committed_ = true; }

  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (const fs::path& f : files_) fs::remove(f, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
  }

 private:
  fs::path dir_;
  std::vector<fs::path> files_;
  bool created_dir_ = false;
  bool committed_ = false;
};

struct RunArgs {
  std::string scenario;
  std::uint64_t seed = 0;
  std::string out;
  double horizon_s = 0.0;  // 0 keeps the scenario's horizon
  bool no_topology_update = false;
  bool no_churn = false;
  int replications = 1;
};

int run_one(const ScenarioConfig& sc, const RunArgs& args, std::uint64_t seed,
            const fs::path& dir) {
  OutputGuard guard(dir);
  BuiltScenario built = build_scenario(sc, seed);
  if (args.horizon_s > 0.0) built.sim.horizon_s = args.horizon_s;
  if (args.no_topology_update) built.sim.topology_update = false;
  if (args.no_churn) built.sim.churn.reset();

  const std::vector<std::string> problems = validate_simulation_config(built.sim);
  if (!problems.empty()) {
    for (const std::string& p : problems) std::cerr << "error: " << p << "\n";
    return 1;
  }

  guard.claim("metrics.csv");
  guard.claim("helpers.csv");
  guard.claim("summary.txt");
  const MetricsLog log = run_simulation(built.sim, built.seed);

  RunMeta meta;
  meta.seed = built.seed;
  meta.scenario_digest = built.scenario_digest;
  meta.population_digest = built.population_digest;
  write_metrics_files(dir, log, meta, sc.catalog.size());
  const RunSummary summary = summarize(log);
  write_summary_file(dir, summary, meta);
  guard.commit();

  std::cout << sc.name << " seed " << seed << ": tail mean load "
            << detail::fmt(summary.tail_mean_load_kbps) << " kbps over ["
            << detail::fmt(summary.tail_start_s) << ", " << detail::fmt(summary.horizon_s)
            << "] s, gap to deficit " << detail::fmt(summary.gap_pct) << "% -> "
            << dir.string() << "\n";
  return 0;
}

int cmd_run(const RunArgs& args) {
  const ScenarioConfig sc = load_scenario(args.scenario);
  for (int rep = 0; rep < args.replications; ++rep) {
    const fs::path dir = args.replications == 1
                             ? fs::path(args.out)
                             : fs::path(args.out) / ("rep" + std::to_string(rep));
    const int rc = run_one(sc, args, args.seed + static_cast<std::uint64_t>(rep), dir);
    if (rc != 0) return rc;
  }
  return 0;
}

int cmd_compare(const std::string& dir_a, const std::string& dir_b, double tail) {
  const ReadRun a = read_metrics_files(dir_a);
  const ReadRun b = read_metrics_files(dir_b);
  if (a.meta.population_digest != b.meta.population_digest) {
    std::cerr << "error: runs are over different populations ("
              << detail::hex16(a.meta.population_digest) << " vs "
              << detail::hex16(b.meta.population_digest)
              << "); comparisons need the same catalog and peers\n";
    return 1;
  }
  const Comparison c = compare_logs(a.log, b.log, tail);
  std::cout << "tail fraction " << detail::fmt(tail) << ": a = " << detail::fmt(c.mean_a_kbps)
            << " kbps, b = " << detail::fmt(c.mean_b_kbps) << " kbps, reduction "
            << detail::fmt(c.reduction_pct) << "%\n";
  return 0;
}

int cmd_analyze(const std::string& scenario, std::uint64_t seed, const std::string& out) {
  const ScenarioConfig sc = load_scenario(scenario);
  OutputGuard guard(out);
  guard.claim("stationary.csv");
  const AnalysisReport report = analyze_scenario(sc, seed);

  RunMeta meta;
  meta.seed = seed;
  meta.scenario_digest = sc.digest;
  meta.population_digest = build_scenario(sc, seed).population_digest;
  write_stationary_file(out, report, meta);
  guard.commit();

  int argmax = 0;
  for (int i = 1; i < static_cast<int>(report.utility.size()); ++i)
    if (report.utility[static_cast<std::size_t>(i)] >
        report.utility[static_cast<std::size_t>(argmax)])
      argmax = i;
  std::cout << sc.name << " seed " << seed << ": " << report.utility.size()
            << " configurations, " << report.mode << " chain, TV "
            << detail::fmt(report.stationary.tv_distance) << " (bound "
            << detail::fmt(report.stationary.tv_bound) << ", "
            << (report.stationary.within_bound ? "within" : "exceeded")
            << "), most visited " << report.stationary.most_visited << ", best utility at "
            << argmax << " -> " << (fs::path(out) / "stationary.csv").string() << "\n";
  return 0;
}

int cmd_validate(const std::string& scenario) {
  const ScenarioConfig sc = load_scenario(scenario);
  const BuiltScenario built = build_scenario(sc, 1);
  const std::vector<std::string> problems = validate_simulation_config(built.sim);
  if (!problems.empty()) {
    for (const std::string& p : problems) std::cerr << "error: " << p << "\n";
    return 1;
  }
  std::cout << sc.name << ": ok (" << sc.catalog.size() << " videos, "
            << built.sim.users.size() << " users, " << built.sim.helpers.size()
            << " helpers, digest " << detail::hex16(sc.digest) << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"helper-assisted video-on-demand swarm simulator"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  RunArgs run_args;
  CLI::App* run = app.add_subcommand("run", "simulate a scenario and write metrics");
  run->add_option("--scenario", run_args.scenario, "scenario JSON file")->required();
  run->add_option("--seed", run_args.seed, "master seed")->required();
  run->add_option("--out", run_args.out, "output directory")
      ->envname("HELPERSIM_OUT")
      ->required();
  run->add_option("--horizon", run_args.horizon_s, "override the horizon (seconds)");
  run->add_flag("--no-topology-update", run_args.no_topology_update,
                "freeze the initial wiring");
  run->add_flag("--no-churn", run_args.no_churn, "drop the scenario's churn block");
  run->add_option("--replications", run_args.replications, "consecutive seeds into rep<i>/")
      ->check(CLI::PositiveNumber);

  std::string cmp_a, cmp_b;
  double tail = 0.2;
  CLI::App* compare = app.add_subcommand("compare", "relative load reduction of b over a");
  compare->add_option("--a", cmp_a, "baseline run directory")->required();
  compare->add_option("--b", cmp_b, "treatment run directory")->required();
  compare->add_option("--tail", tail, "tail fraction of the horizon to average")
      ->check(CLI::Range(0.0, 1.0));

  std::string an_scenario, an_out;
  std::uint64_t an_seed = 0;
  CLI::App* analyze = app.add_subcommand("analyze", "exhaustive configuration-chain study");
  analyze->add_option("--scenario", an_scenario, "scenario JSON file")->required();
  analyze->add_option("--seed", an_seed, "master seed")->required();
  analyze->add_option("--out", an_out, "output directory")
      ->envname("HELPERSIM_OUT")
      ->required();

  std::string val_scenario;
  CLI::App* validate = app.add_subcommand("validate", "check a scenario file");
  validate->add_option("--scenario", val_scenario, "scenario JSON file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(run_args);
    if (compare->parsed()) return cmd_compare(cmp_a, cmp_b, tail);
    if (analyze->parsed()) return cmd_analyze(an_scenario, an_seed, an_out);
    return cmd_validate(val_scenario);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
