#pragma once

// Configuration-chain study for tiny instances: enumerate every admissible
// overlay, score each with the exact allocation solver, then run the choking
// chain under timescale separation (the allocator is assumed converged inside
// each configuration) and compare its occupancy against the closed-form
// stationary law.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "helpersim/metrics_io.hpp"
#include "helpersim/oracle.hpp"
#include "helpersim/rng.hpp"
#include "helpersim/scenario.hpp"
#include "helpersim/topology.hpp"

namespace helpersim {

struct AnalysisReport {
  std::string mode;
  long transitions = 0;
  std::vector<double> utility;  // one per configuration
  ChainLog chain;
  StationaryAnalysis stationary;
  double max_upload_kbps = 0.0;
  ChokeParams choke;
};

/// Build the population for the seed, enumerate its configuration space, and
/// run the requested chain. Throws (with a size estimate) when the space or
/// the per-configuration instances exceed what exact scoring supports.
inline AnalysisReport analyze_scenario(const ScenarioConfig& sc, std::uint64_t seed) {
  if (!sc.analysis)
    throw std::invalid_argument("scenario '" + sc.name + "' has no analysis block");
  const AnalysisOptions& opt = *sc.analysis;

  RngBank bank(seed);
  Population pop = sample_population(sc.catalog, sc.population, bank.stream("population"));

  auto utility_of = [&](const Overlay& o) {
    return oracle_solve(o, sc.catalog, pop.users, pop.helpers).utility;
  };
  ConfigSpace space = enumerate_config_space(pop.users, pop.helpers, utility_of);
  if (space.configs.empty())
    throw std::invalid_argument("analysis: the configuration space is empty");
  if (opt.start < 0 || opt.start >= static_cast<int>(space.configs.size()))
    throw std::invalid_argument("analysis: start index outside the configuration space");

  AnalysisReport report;
  report.mode = opt.mode;
  report.transitions = opt.transitions;
  report.utility = space.utility;
  report.choke = sc.choke;
  for (const auto& [id, h] : pop.helpers)
    report.max_upload_kbps = std::max(report.max_upload_kbps, h.upload_kbps);

  auto& rng = bank.stream("analysis-chain");
  if (opt.mode == "uniform") {
    report.chain = run_uniform_chain(space, sc.choke, opt.transitions, rng, opt.start);
  } else {
    std::vector<std::map<Edge, double>> converged_x;
    converged_x.reserve(space.configs.size());
    for (const Overlay& c : space.configs)
      converged_x.push_back(oracle_solve(c, sc.catalog, pop.users, pop.helpers).x);
    report.chain = run_soft_chain(space, converged_x, pop.users, pop.helpers, sc.choke,
                                  opt.transitions, rng, opt.start);
  }
  report.stationary = stationary_check(space, report.chain, sc.choke, report.max_upload_kbps);
  return report;
}

/// One row per configuration: exact utility, Gibbs weight, and the chain's
/// sojourn-time share.
inline void write_stationary_file(const std::filesystem::path& dir,
                                  const AnalysisReport& report, const RunMeta& meta) {
  std::ofstream out(dir / "stationary.csv");
  if (!out) throw std::runtime_error("cannot write " + (dir / "stationary.csv").string());
  out << kStationaryHeader << "\n";
  detail::write_meta_line(out, meta);
  out << "# mode=" << report.mode << " kappa=" << detail::fmt(report.choke.kappa)
      << " tau=" << detail::fmt(report.choke.tau) << " transitions=" << report.transitions
      << " tv=" << detail::fmt(report.stationary.tv_distance)
      << " bound=" << detail::fmt(report.stationary.tv_bound)
      << " within=" << (report.stationary.within_bound ? 1 : 0)
      << " absorbed=" << (report.chain.absorbed ? 1 : 0)
      << " most_visited=" << report.stationary.most_visited << "\n";
  out << "config,utility,gibbs_p,empirical_p\n";
  for (std::size_t i = 0; i < report.utility.size(); ++i)
    out << i << ',' << detail::fmt(report.utility[i]) << ','
        << detail::fmt(report.stationary.gibbs[i]) << ','
        << detail::fmt(report.stationary.empirical[i]) << "\n";
}

}  // namespace helpersim
