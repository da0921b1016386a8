#pragma once

// Scenario files: JSON in, validated config out. A scenario describes the
// catalog, the population tables, and every simulator knob; building it for
// a seed realizes the population and initial wiring and yields a ready
// SimulationConfig plus digests that tie output files back to their inputs.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "helpersim/allocator.hpp"
#include "helpersim/model.hpp"
#include "helpersim/population.hpp"
#include "helpersim/rng.hpp"
#include "helpersim/simcore.hpp"

namespace helpersim {

/// Configuration-chain study knobs for tiny enumerable instances.
struct AnalysisOptions {
  std::string mode = "uniform";  // "uniform" or "soft"
  long transitions = 100000;
  int start = 0;
};

struct ScenarioConfig {
  std::string name;
  std::string description;
  VideoCatalog catalog;
  PopulationSpec population;
  StepSizes steps;
  bool steps_auto = true;
  double steps_product = 0.01;
  double steps_reach_ticks = 200.0;
  // Average helper links handed to each user on join (fractional part spread
  // deterministically over the user list); degree grows toward the cap via
  // reconnects when topology updates are on. Infinity fills every user to cap.
  double initial_user_links = std::numeric_limits<double>::infinity();
  ChokeParams choke;
  bool topology_update = true;
  double reconnect_period_s = 10.0;
  double delay_min_s = 0.0;
  double delay_max_s = 0.0;
  double horizon_s = 400.0;
  double sample_period_s = 1.0;
  double buffer_time_s = 30.0;
  double segment_s = 10.0;
  double packet_kbit = 8.0;
  std::optional<ChurnConfig> churn;
  std::vector<ChannelSwitchConfig> switches;
  std::optional<AnalysisOptions> analysis;
  std::uint64_t digest = 0;  // canonical-form hash of the source document
};

namespace detail {

[[noreturn]] inline void scenario_fail(const std::string& where, const std::string& what) {
  throw std::runtime_error("scenario " + where + ": " + what);
}

inline const nlohmann::json& need(const nlohmann::json& j, const char* key,
                                  const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) scenario_fail(where, std::string("missing field '") + key + "'");
  return *it;
}

template <typename T>
T as(const nlohmann::json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception& e) {
    scenario_fail(where, e.what());
  }
}

template <typename T>
T field(const nlohmann::json& j, const char* key, const std::string& where) {
  return as<T>(need(j, key, where), where + "." + key);
}

template <typename T>
T field_or(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return as<T>(*it, where + "." + key);
}

/// Percent fractions must cover the whole population.
inline std::vector<double> percent_fractions(const nlohmann::json& arr,
                                             const std::string& where) {
  const auto pct = as<std::vector<double>>(arr, where);
  double sum = 0.0;
  for (double p : pct) {
    if (p < 0.0) scenario_fail(where, "negative fraction");
    sum += p;
  }
  if (std::abs(sum - 100.0) > 1e-7)
    scenario_fail(where, "fractions sum to " + std::to_string(sum) + ", expected 100");
  std::vector<double> unit;
  unit.reserve(pct.size());
  for (double p : pct) unit.push_back(p / 100.0);
  return unit;
}

inline CategoryTable category_table(const nlohmann::json& j, double value_scale,
                                    const std::string& where) {
  CategoryTable t;
  t.value = field<std::vector<double>>(j, "values", where);
  for (double& v : t.value) v *= value_scale;
  t.fraction = percent_fractions(need(j, "fractions_pct", where), where + ".fractions_pct");
  if (t.value.size() != t.fraction.size())
    scenario_fail(where, "values and fractions_pct differ in length");
  if (t.value.empty()) scenario_fail(where, "empty table");
  return t;
}

inline std::pair<int, int> cap_range(const nlohmann::json& j, std::pair<int, int> fallback,
                                     const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  const auto v = as<std::vector<int>>(*it, where + "." + key);
  if (v.size() != 2 || v[0] < 1 || v[1] < v[0])
    scenario_fail(where + "." + key, "expected [lo, hi] with 1 <= lo <= hi");
  return {v[0], v[1]};
}

inline void append_double(std::string& out, double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
  out.push_back(';');
}

}  // namespace detail

inline ScenarioConfig parse_scenario(const nlohmann::json& doc,
                                     const std::string& where = "document") {
  using detail::field;
  using detail::field_or;
  using detail::need;
  using detail::scenario_fail;
  if (!doc.is_object()) scenario_fail(where, "top level must be an object");

  ScenarioConfig sc;
  sc.name = field_or<std::string>(doc, "name", "unnamed", where);
  sc.description = field_or<std::string>(doc, "description", "", where);

  // Videos and the share of users watching each.
  {
    const auto& videos = need(doc, "videos", where);
    if (!videos.is_array() || videos.empty())
      scenario_fail(where + ".videos", "expected a non-empty array");
    std::vector<double> pct;
    int idx = 0;
    for (const auto& v : videos) {
      const std::string vwhere = where + ".videos[" + std::to_string(idx++) + "]";
      const double rate = field<double>(v, "rate_kbps", vwhere);
      const double dur = field<double>(v, "duration_s", vwhere);
      if (rate <= 0.0 || dur <= 0.0)
        scenario_fail(vwhere, "rate and duration must be positive");
      sc.catalog.add_video(rate, dur);
      pct.push_back(field<double>(v, "fraction_pct", vwhere));
    }
    nlohmann::json pj = pct;
    sc.population.video_fraction =
        detail::percent_fractions(pj, where + ".videos.fraction_pct");
  }

  const auto global_cap =
      detail::cap_range(doc, {3, 10}, "neighbor_cap", where);

  sc.initial_user_links = field_or<double>(doc, "initial_user_links",
                                           std::numeric_limits<double>::infinity(), where);
  if (!(sc.initial_user_links >= 1.0))
    scenario_fail(where + ".initial_user_links", "must be >= 1");

  {
    const auto& users = need(doc, "users", where);
    const std::string uwhere = where + ".users";
    sc.population.user_count = field<int>(users, "count", uwhere);
    if (sc.population.user_count < 0) scenario_fail(uwhere, "count must be >= 0");
    const auto cap = detail::cap_range(users, global_cap, "cap", uwhere);
    sc.population.user_cap_min = cap.first;
    sc.population.user_cap_max = cap.second;
  }
  {
    const auto& helpers = need(doc, "helpers", where);
    const std::string hwhere = where + ".helpers";
    sc.population.helper_count = field<int>(helpers, "count", hwhere);
    if (sc.population.helper_count < 0) scenario_fail(hwhere, "count must be >= 0");
    if (sc.population.helper_count > 0) {
      sc.population.upload_kbps = detail::category_table(
          need(helpers, "upload_kbps", hwhere), 1.0, hwhere + ".upload_kbps");
      sc.population.storage_kbit = detail::category_table(
          need(helpers, "storage_mbyte", hwhere), kKbitPerMegabyte, hwhere + ".storage_mbyte");
    }
    const auto cap = detail::cap_range(helpers, global_cap, "cap", hwhere);
    sc.population.helper_cap_min = cap.first;
    sc.population.helper_cap_max = cap.second;
  }

  sc.population.period_set =
      field_or<std::vector<double>>(doc, "update_periods_s", {1.0}, where);
  if (sc.population.period_set.empty())
    scenario_fail(where + ".update_periods_s", "empty period set");
  for (double p : sc.population.period_set)
    if (p <= 0.0) scenario_fail(where + ".update_periods_s", "periods must be positive");

  {
    const std::string mode =
        field_or<std::string>(doc, "population_mode", "deterministic", where);
    if (mode == "sampled")
      sc.population.sampled = true;
    else if (mode == "deterministic")
      sc.population.sampled = false;
    else
      scenario_fail(where + ".population_mode", "expected 'deterministic' or 'sampled'");
  }

  if (auto it = doc.find("allocator"); it != doc.end()) {
    const std::string awhere = where + ".allocator";
    const auto& steps = need(*it, "steps", awhere);
    if (steps.is_string()) {
      if (steps.get<std::string>() != "auto")
        scenario_fail(awhere + ".steps", "expected 'auto' or an explicit step object");
      sc.steps_auto = true;
      sc.steps_product = field_or<double>(*it, "product", 0.01, awhere);
      sc.steps_reach_ticks = field_or<double>(*it, "reach_ticks", 200.0, awhere);
      if (sc.steps_product <= 0.0 || sc.steps_reach_ticks <= 0.0)
        scenario_fail(awhere, "product and reach_ticks must be positive");
    } else {
      sc.steps_auto = false;
      const std::string swhere = awhere + ".steps";
      sc.steps.alpha = field<double>(steps, "alpha", swhere);
      sc.steps.beta = field<double>(steps, "beta", swhere);
      sc.steps.gamma = field<double>(steps, "gamma", swhere);
      sc.steps.delta = field<double>(steps, "delta", swhere);
      sc.steps.epsilon = field<double>(steps, "epsilon", swhere);
      for (double s : {sc.steps.alpha, sc.steps.beta, sc.steps.gamma, sc.steps.delta,
                       sc.steps.epsilon})
        if (s <= 0.0) scenario_fail(swhere, "step sizes must be positive");
    }
  }

  if (auto it = doc.find("choke"); it != doc.end()) {
    const std::string cwhere = where + ".choke";
    sc.choke.kappa = field<double>(*it, "kappa", cwhere);
    sc.choke.tau = field<double>(*it, "tau", cwhere);
    if (sc.choke.kappa < 0.0 || sc.choke.tau <= 0.0)
      scenario_fail(cwhere, "kappa must be >= 0 and tau > 0");
  }
  sc.topology_update = field_or<bool>(doc, "topology_update", true, where);
  sc.reconnect_period_s = field_or<double>(doc, "reconnect_period_s", 10.0, where);
  if (sc.reconnect_period_s <= 0.0)
    scenario_fail(where + ".reconnect_period_s", "must be positive");

  {
    const auto delay =
        field_or<std::vector<double>>(doc, "delay_s", {0.0, 0.0}, where);
    if (delay.size() != 2 || delay[0] < 0.0 || delay[1] < delay[0])
      scenario_fail(where + ".delay_s", "expected [min, max] with 0 <= min <= max");
    sc.delay_min_s = delay[0];
    sc.delay_max_s = delay[1];
  }

  if (auto it = doc.find("sim"); it != doc.end()) {
    const std::string swhere = where + ".sim";
    sc.horizon_s = field_or<double>(*it, "horizon_s", sc.horizon_s, swhere);
    sc.sample_period_s = field_or<double>(*it, "sample_period_s", sc.sample_period_s, swhere);
    sc.buffer_time_s = field_or<double>(*it, "buffer_s", sc.buffer_time_s, swhere);
    sc.segment_s = field_or<double>(*it, "segment_s", sc.segment_s, swhere);
    sc.packet_kbit = field_or<double>(*it, "packet_kbit", sc.packet_kbit, swhere);
  }
  if (sc.horizon_s <= 0.0) scenario_fail(where + ".sim.horizon_s", "must be positive");

  if (auto it = doc.find("churn"); it != doc.end()) {
    const std::string cwhere = where + ".churn";
    ChurnConfig ch;
    ch.arrival_mean_s = field<double>(*it, "arrival_mean_s", cwhere);
    ch.lifetime_mean_s = field<double>(*it, "lifetime_mean_s", cwhere);
    ch.stop_time_s = field<double>(*it, "stop_s", cwhere);
    if (ch.arrival_mean_s <= 0.0 || ch.lifetime_mean_s <= 0.0 || ch.stop_time_s <= 0.0)
      scenario_fail(cwhere, "churn parameters must be positive");
    sc.churn = ch;
  }

  if (auto it = doc.find("switches"); it != doc.end()) {
    int i = 0;
    for (const auto& s : *it) {
      const std::string swhere = where + ".switches[" + std::to_string(i++) + "]";
      ChannelSwitchConfig sw;
      sw.time_s = field<double>(s, "time_s", swhere);
      sw.from_video = field<VideoId>(s, "from_video", swhere);
      sw.to_videos = field<std::vector<VideoId>>(s, "to_videos", swhere);
      if (!sc.catalog.contains(sw.from_video)) scenario_fail(swhere, "unknown from_video");
      if (sw.to_videos.empty()) scenario_fail(swhere, "to_videos is empty");
      for (VideoId v : sw.to_videos)
        if (!sc.catalog.contains(v)) scenario_fail(swhere, "unknown video in to_videos");
      sc.switches.push_back(sw);
    }
  }

  if (auto it = doc.find("analysis"); it != doc.end()) {
    const std::string awhere = where + ".analysis";
    AnalysisOptions a;
    a.mode = field_or<std::string>(*it, "mode", "uniform", awhere);
    if (a.mode != "uniform" && a.mode != "soft")
      scenario_fail(awhere + ".mode", "expected 'uniform' or 'soft'");
    a.transitions = field_or<long>(*it, "transitions", 100000L, awhere);
    a.start = field_or<int>(*it, "start", 0, awhere);
    if (a.transitions <= 0) scenario_fail(awhere + ".transitions", "must be positive");
    sc.analysis = a;
  }

  // Canonical digest: nlohmann objects iterate in sorted key order, so dump()
  // is independent of the field order in the source file.
  sc.digest = fnv1a64(doc.dump());
  return sc;
}

inline ScenarioConfig load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("scenario file '" + path + "': cannot open");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::runtime_error("scenario file '" + path + "': " + e.what());
  }
  return parse_scenario(doc, path);
}

/// Stable hash of a realized world: catalog, peers, wiring. Two runs may be
/// compared only when these agree.
inline std::uint64_t population_digest(const VideoCatalog& catalog, const UserMap& users,
                                       const HelperMap& helpers, const Overlay& overlay) {
  std::string blob;
  for (int m = 1; m <= catalog.size(); ++m) {
    detail::append_double(blob, catalog.spec(m).rate_kbps);
    detail::append_double(blob, catalog.spec(m).duration_s);
  }
  for (const auto& [id, u] : users) {
    blob += "u" + std::to_string(id) + "," + std::to_string(u.video) + "," +
            std::to_string(u.max_neighbors) + ",";
    detail::append_double(blob, u.update_period_s);
  }
  for (const auto& [id, h] : helpers) {
    blob += "h" + std::to_string(id) + "," + std::to_string(h.max_neighbors) + ",";
    detail::append_double(blob, h.upload_kbps);
    detail::append_double(blob, h.storage_kbit);
    detail::append_double(blob, h.update_period_s);
  }
  for (const Edge& e : overlay.edges())
    blob += "e" + std::to_string(e.helper) + "-" + std::to_string(e.user) + ";";
  return fnv1a64(blob);
}

struct BuiltScenario {
  SimulationConfig sim;
  std::uint64_t seed = 0;
  std::uint64_t scenario_digest = 0;
  std::uint64_t population_digest = 0;
};

/// Realize the population and initial overlay for one seed. The simulator
/// draws from differently named streams of the same seed, so build and run
/// stay independent but jointly reproducible.
inline BuiltScenario build_scenario(const ScenarioConfig& sc, std::uint64_t seed) {
  RngBank bank(seed);
  Population pop = sample_population(sc.catalog, sc.population, bank.stream("population"));

  BuiltScenario built;
  built.seed = seed;
  built.scenario_digest = sc.digest;
  SimulationConfig& sim = built.sim;
  sim.catalog = sc.catalog;
  sim.users = std::move(pop.users);
  sim.helpers = std::move(pop.helpers);
  if (std::isinf(sc.initial_user_links)) {
    bootstrap_overlay(sim.overlay, sim.users, sim.helpers, bank.stream("bootstrap"));
  } else {
    // Fractional handout: everyone gets the floor, every N/extras-th user in
    // id order one more, so the total link budget is hit for every seed.
    const int base = static_cast<int>(sc.initial_user_links);
    const long n = static_cast<long>(sim.users.size());
    const long extras =
        std::llround((sc.initial_user_links - base) * static_cast<double>(n));
    long idx = 0;
    for (const auto& [uid, u] : sim.users) {
      const int limit = base + ((idx + 1) * extras / n > idx * extras / n ? 1 : 0);
      top_up_user(sim.overlay, u, sim.helpers, bank.stream("bootstrap"), nullptr, limit);
      ++idx;
    }
  }
  sim.steps = sc.steps_auto
                  ? scaled_step_sizes(sim.overlay, sim.catalog, sim.helpers, sc.steps_product,
                                      sc.steps_reach_ticks)
                  : sc.steps;
  sim.choke = sc.choke;
  sim.topology_update = sc.topology_update;
  sim.reconnect_period_s = sc.reconnect_period_s;
  sim.delay_min_s = sc.delay_min_s;
  sim.delay_max_s = sc.delay_max_s;
  sim.horizon_s = sc.horizon_s;
  sim.sample_period_s = sc.sample_period_s;
  sim.buffer_time_s = sc.buffer_time_s;
  sim.segment_s = sc.segment_s;
  sim.packet_kbit = sc.packet_kbit;
  sim.churn = sc.churn;
  sim.switches = sc.switches;
  sim.video_weights = sc.population.video_fraction;
  sim.upload_dist = sc.population.upload_kbps;
  sim.storage_dist = sc.population.storage_kbit;
  sim.user_cap_min = sc.population.user_cap_min;
  sim.user_cap_max = sc.population.user_cap_max;
  sim.helper_cap_min = sc.population.helper_cap_min;
  sim.helper_cap_max = sc.population.helper_cap_max;
  sim.period_set = sc.population.period_set;
  built.population_digest =
      population_digest(sim.catalog, sim.users, sim.helpers, sim.overlay);
  return built;
}

}  // namespace helpersim
