#include "helpersim/simcore.hpp"

#include <algorithm>
#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "fixtures.hpp"

using namespace helpersim;
using namespace helpersim::test;

namespace {

// Two videos, three users, two helpers, fully meshed candidates. Supply runs
// 250 kbps short of demand, so the server can never idle.
SimulationConfig small_world() {
  SimulationConfig cfg;
  cfg.catalog = VideoCatalog({{400.0, 100.0}, {300.0, 100.0}});
  cfg.users[101] = make_user(101, 1, 2, {1, 2});
  cfg.users[102] = make_user(102, 2, 2, {1, 2});
  cfg.users[103] = make_user(103, 1, 2, {1, 2});
  cfg.helpers[1] = make_helper(1, 500.0, 1.5 * cfg.catalog.spec(1).size_kbit, 3, {101, 102, 103});
  cfg.helpers[2] = make_helper(2, 350.0, 1.5 * cfg.catalog.spec(2).size_kbit, 3, {101, 102, 103});
  for (PeerId h : {1, 2})
    for (PeerId u : {101, 102, 103}) cfg.overlay.add_edge(h, u);
  cfg.steps = scaled_step_sizes(cfg.overlay, cfg.catalog, cfg.helpers);
  cfg.horizon_s = 200.0;
  return cfg;
}

ChurnConfig small_churn() {
  ChurnConfig churn;
  churn.arrival_mean_s = 15.0;
  churn.lifetime_mean_s = 60.0;
  churn.stop_time_s = 120.0;
  return churn;
}

void enable_churn(SimulationConfig& cfg) {
  cfg.churn = small_churn();
  cfg.video_weights = {0.5, 0.5};
  cfg.upload_dist.value = {256.0, 512.0};
  cfg.upload_dist.fraction = {0.5, 0.5};
  cfg.storage_dist.value = {0.5 * cfg.catalog.spec(1).size_kbit,
                            1.5 * cfg.catalog.spec(1).size_kbit};
  cfg.storage_dist.fraction = {0.5, 0.5};
  cfg.user_cap_min = 1;
  cfg.user_cap_max = 3;
  cfg.helper_cap_min = 1;
  cfg.helper_cap_max = 3;
}

bool rows_identical(const MetricsLog& a, const MetricsLog& b) {
  if (a.rows.size() != b.rows.size()) return false;
  for (std::size_t i = 0; i < a.rows.size(); ++i) {
    const MetricsRow& l = a.rows[i];
    const MetricsRow& r = b.rows[i];
    if (l.t_s != r.t_s || l.server_load_kbps != r.server_load_kbps ||
        l.intrinsic_deficit_kbps != r.intrinsic_deficit_kbps ||
        l.total_contribution_kbps != r.total_contribution_kbps ||
        l.user_count != r.user_count || l.helper_count != r.helper_count ||
        l.edge_count != r.edge_count || l.choke_count != r.choke_count ||
        l.abort_count != r.abort_count || l.server_cum_kbit != r.server_cum_kbit ||
        l.credited_cum_kbit != r.credited_cum_kbit ||
        l.wasted_cum_kbit != r.wasted_cum_kbit ||
        l.helper_upload_kbps != r.helper_upload_kbps || l.helper_f != r.helper_f ||
        l.helper_lambda != r.helper_lambda || l.helper_mu != r.helper_mu)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("config validation catches the broken knobs") {
  SimulationConfig cfg = small_world();
  REQUIRE(validate_simulation_config(cfg).empty());

  SECTION("buffer not a whole number of segments") {
    cfg.buffer_time_s = 25.0;
    REQUIRE_FALSE(validate_simulation_config(cfg).empty());
  }
  SECTION("inverted delay range") {
    cfg.delay_min_s = 2.0;
    cfg.delay_max_s = 1.0;
    REQUIRE_FALSE(validate_simulation_config(cfg).empty());
  }
  SECTION("switch outside the horizon") {
    cfg.switches.push_back({250.0, 1, {2}});
    REQUIRE_FALSE(validate_simulation_config(cfg).empty());
  }
  SECTION("churn without population tables") {
    cfg.churn = small_churn();
    REQUIRE_FALSE(validate_simulation_config(cfg).empty());
  }
  SECTION("user on an unknown video") {
    cfg.users[101].video = 9;
    REQUIRE_FALSE(validate_simulation_config(cfg).empty());
  }
  SECTION("run refuses an invalid config") {
    cfg.sample_period_s = 0.0;
    REQUIRE_THROWS_AS(run_simulation(cfg, 1), std::invalid_argument);
  }
}

TEST_CASE("bootstrap wiring honors caps and candidate sets") {
  UserMap users;
  HelperMap helpers;
  for (PeerId u = 101; u <= 106; ++u) users[u] = make_user(u, 1, 2, {1, 2, 3});
  for (PeerId h = 1; h <= 3; ++h)
    helpers[h] = make_helper(h, 300.0, 1000.0, 3, {101, 102, 103, 104, 105, 106});
  // One user may not talk to helper 3 at all.
  users[101].candidates = {1, 2};

  RngBank rng(7);
  Overlay o;
  bootstrap_overlay(o, users, helpers, rng.stream("bootstrap"));
  REQUIRE(validate_overlay(o, users, helpers).ok);
  // 6 users wanting degree 2 against 3 helpers offering 3 slots each: the
  // 9 available slots all fill, and nobody exceeds a cap.
  REQUIRE(o.edges().size() == 9);
  for (PeerId h = 1; h <= 3; ++h) REQUIRE(o.degree_helper(h) == 3);
}

TEST_CASE("identical seeds reproduce the run row for row") {
  SimulationConfig cfg = small_world();
  enable_churn(cfg);
  cfg.switches.push_back({80.0, 1, {2}});
  cfg.delay_min_s = 0.5;
  cfg.delay_max_s = 2.0;
  cfg.horizon_s = 150.0;

  const MetricsLog a = run_simulation(cfg, 2024);
  const MetricsLog b = run_simulation(cfg, 2024);
  const MetricsLog c = run_simulation(cfg, 2025);
  REQUIRE(rows_identical(a, b));
  REQUIRE_FALSE(rows_identical(a, c));
}

TEST_CASE("with no helpers the server carries the full demand") {
  SimulationConfig cfg;
  cfg.catalog = VideoCatalog({{400.0, 100.0}, {300.0, 100.0}});
  cfg.users[101] = make_user(101, 1, 2, {});
  cfg.users[102] = make_user(102, 2, 2, {});
  cfg.horizon_s = 100.0;

  const MetricsLog log = run_simulation(cfg, 5);
  REQUIRE(log.rows.size() == 101);
  for (const MetricsRow& row : log.rows) {
    REQUIRE(row.server_load_kbps == Catch::Approx(700.0).margin(1e-9));
    REQUIRE(row.total_contribution_kbps == 0.0);
    REQUIRE(row.credited_cum_kbit == 0.0);
    REQUIRE(row.wasted_cum_kbit == 0.0);
  }
}

TEST_CASE("every played window is paid for once, by peers or by the server") {
  SimulationConfig cfg = small_world();
  cfg.horizon_s = 200.0;
  const MetricsLog log = run_simulation(cfg, 11);

  // Each user opens a window at t = 0 and refills at 30, 60, ..., 180:
  // 7 windows of 30 s each, worth the channel rate times the window.
  const double windows = 7.0;
  const double expected = windows * 30.0 * (400.0 + 300.0 + 400.0);
  const MetricsRow& last = log.rows.back();
  REQUIRE(last.server_cum_kbit + last.credited_cum_kbit ==
          Catch::Approx(expected).margin(1e-6));
  REQUIRE(last.credited_cum_kbit > 0.0);
}

TEST_CASE("server load never falls below the intrinsic deficit") {
  SimulationConfig cfg = small_world();
  const MetricsLog log = run_simulation(cfg, 17);
  for (const MetricsRow& row : log.rows) {
    REQUIRE(row.intrinsic_deficit_kbps == Catch::Approx(250.0));
    REQUIRE(row.server_load_kbps >= row.intrinsic_deficit_kbps - 1e-6);
  }
}

TEST_CASE("helpers drive the load down toward the deficit") {
  SimulationConfig cfg = small_world();
  cfg.horizon_s = 300.0;
  const MetricsLog log = run_simulation(cfg, 23);

  // Start of run: buffers prefetched entirely from the server.
  REQUIRE(log.rows.front().server_load_kbps == Catch::Approx(1100.0).margin(1e-9));
  // Once the allocation settles, peers cover most of their upload capacity
  // (850 kbps available against a demand of 1100).
  double tail = 0.0;
  int n = 0;
  for (const MetricsRow& row : log.rows)
    if (row.t_s >= 250.0) {
      tail += row.server_load_kbps;
      ++n;
    }
  tail /= n;
  REQUIRE(tail < 0.45 * 1100.0);
  REQUIRE(tail >= 250.0 - 1e-6);
  // And the allocator's own view of the contribution approaches the supply.
  REQUIRE(log.rows.back().total_contribution_kbps > 0.7 * 850.0);
}

TEST_CASE("propagation delay slows but does not break the handoff") {
  SimulationConfig cfg = small_world();
  cfg.delay_min_s = 1.0;
  cfg.delay_max_s = 5.0;
  const MetricsLog log = run_simulation(cfg, 29);
  double tail = 0.0;
  int n = 0;
  for (const MetricsRow& row : log.rows)
    if (row.t_s >= 150.0) {
      tail += row.server_load_kbps;
      ++n;
    }
  tail /= n;
  REQUIRE(tail < 0.6 * 1100.0);
  REQUIRE(tail >= 250.0 - 1e-6);
}

TEST_CASE("mixed update periods still let the allocation settle") {
  SimulationConfig cfg = small_world();
  cfg.users[101].update_period_s = 3.0;
  cfg.users[102].update_period_s = 5.0;
  cfg.helpers[1].update_period_s = 7.0;
  cfg.helpers[2].update_period_s = 9.0;
  cfg.delay_min_s = 1.0;
  cfg.delay_max_s = 5.0;
  // Step sizes are per tick, so a 9 s helper period stretches the transient
  // by the same factor; give it room.
  cfg.horizon_s = 2000.0;
  const MetricsLog log = run_simulation(cfg, 31);
  double tail = 0.0;
  int n = 0;
  for (const MetricsRow& row : log.rows)
    if (row.t_s >= 1700.0) {
      tail += row.server_load_kbps;
      ++n;
    }
  tail /= n;
  REQUIRE(tail < 0.6 * 1100.0);
}

TEST_CASE("churn rewires the overlay without breaking its invariants") {
  SimulationConfig cfg = small_world();
  enable_churn(cfg);
  cfg.paranoid_checks = true;
  cfg.horizon_s = 200.0;

  const MetricsLog log = run_simulation(cfg, 37);
  int max_users = 0;
  for (const MetricsRow& row : log.rows) max_users = std::max(max_users, row.user_count);
  REQUIRE(max_users > 3);  // arrivals actually happened

  // The dynamic process freezes at stop time: populations hold steady after.
  const MetricsRow* frozen = nullptr;
  for (const MetricsRow& row : log.rows) {
    if (row.t_s < cfg.churn->stop_time_s) continue;
    if (!frozen) frozen = &row;
    REQUIRE(row.user_count == frozen->user_count);
    REQUIRE(row.helper_count == frozen->helper_count);
  }
}

TEST_CASE("choking stays active and is counted") {
  SimulationConfig cfg = small_world();
  // More candidates than slots on the user side, so countdowns arm: shrink
  // user caps and add a third helper to compete.
  cfg.helpers[3] = make_helper(3, 300.0, cfg.catalog.spec(1).size_kbit, 3, {101, 102, 103});
  for (PeerId u : {101, 102, 103}) {
    cfg.users[u].candidates = {1, 2, 3};
    cfg.users[u].max_neighbors = 1;
  }
  cfg.overlay = Overlay{};
  cfg.overlay.add_edge(1, 101);
  cfg.overlay.add_edge(2, 102);
  cfg.overlay.add_edge(3, 103);
  cfg.choke.kappa = 0.001;  // near-uniform drops, fast countdowns
  cfg.choke.tau = 0.05;
  cfg.paranoid_checks = true;
  cfg.horizon_s = 150.0;

  const MetricsLog log = run_simulation(cfg, 41);
  const MetricsRow& last = log.rows.back();
  REQUIRE(last.choke_count + last.abort_count > 0);
  REQUIRE(last.edge_count == 3);  // swaps preserve the degree budget
}

TEST_CASE("disabling topology updates freezes the wiring") {
  SimulationConfig cfg = small_world();
  cfg.topology_update = false;
  cfg.choke.tau = 10.0;  // would choke constantly if the flag leaked
  const MetricsLog log = run_simulation(cfg, 43);
  for (const MetricsRow& row : log.rows) {
    REQUIRE(row.choke_count == 0);
    REQUIRE(row.abort_count == 0);
    REQUIRE(row.edge_count == 6);
  }
}

TEST_CASE("a channel switch moves demand and triggers fresh prefetches") {
  SimulationConfig cfg = small_world();
  cfg.switches.push_back({95.0, 1, {2}});
  cfg.horizon_s = 200.0;
  const MetricsLog log = run_simulation(cfg, 47);

  // Demand drops from 1100 (two watchers of the 400 kbps video) to 900 when
  // both move to the 300 kbps one; supply is 850 throughout.
  for (const MetricsRow& row : log.rows) {
    if (row.t_s < 95.0) {
      REQUIRE(row.intrinsic_deficit_kbps == Catch::Approx(250.0));
    } else {
      REQUIRE(row.intrinsic_deficit_kbps == Catch::Approx(50.0));
    }
  }
  // The switch sample itself carries the two movers' full-window prefetch.
  const MetricsRow* at_switch = nullptr;
  const MetricsRow* before = nullptr;
  for (const MetricsRow& row : log.rows) {
    if (row.t_s == 94.0) before = &row;
    if (row.t_s == 95.0) at_switch = &row;
  }
  REQUIRE(before != nullptr);
  REQUIRE(at_switch != nullptr);
  REQUIRE(at_switch->server_load_kbps >=
          before->server_load_kbps + 2.0 * 300.0 - 1e-6);
}

TEST_CASE("switch targets spread round-robin across the destination videos") {
  SimulationConfig cfg;
  cfg.catalog = VideoCatalog({{400.0, 100.0}, {300.0, 100.0}, {200.0, 100.0}});
  for (PeerId u = 101; u <= 104; ++u) cfg.users[u] = make_user(u, 1, 2, {1});
  cfg.helpers[1] = make_helper(1, 100.0, cfg.catalog.spec(1).size_kbit, 4, {101, 102, 103, 104});
  for (PeerId u = 101; u <= 104; ++u) cfg.overlay.add_edge(1, u);
  cfg.steps = scaled_step_sizes(cfg.overlay, cfg.catalog, cfg.helpers);
  cfg.switches.push_back({50.0, 1, {2, 3}});
  cfg.horizon_s = 100.0;

  const MetricsLog log = run_simulation(cfg, 53);
  // Four watchers of video 1 split two and two: demand 2*300 + 2*200 = 1000.
  for (const MetricsRow& row : log.rows) {
    if (row.t_s < 50.0) {
      REQUIRE(row.intrinsic_deficit_kbps == Catch::Approx(4 * 400.0 - 100.0));
    } else {
      REQUIRE(row.intrinsic_deficit_kbps == Catch::Approx(1000.0 - 100.0));
    }
  }
}

TEST_CASE("stale in-flight packets from a departed helper are dropped") {
  SimulationConfig cfg = small_world();
  enable_churn(cfg);
  cfg.churn->arrival_mean_s = 8.0;
  cfg.churn->lifetime_mean_s = 20.0;  // heavy turnover
  cfg.delay_min_s = 2.0;
  cfg.delay_max_s = 5.0;  // delays long enough to strand packets
  cfg.paranoid_checks = true;
  cfg.horizon_s = 150.0;

  // The run completing under paranoid checks is the assertion: every sample
  // revalidates the overlay and the state keying after each departure purge.
  const MetricsLog log = run_simulation(cfg, 59);
  REQUIRE(log.rows.size() == 151);
  for (const MetricsRow& row : log.rows) {
    REQUIRE(std::isfinite(row.server_load_kbps));
    REQUIRE(row.server_load_kbps >= -1e-9);
  }
}
