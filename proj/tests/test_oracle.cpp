#include <catch2/catch_amalgamated.hpp>

#include "fixtures.hpp"
#include "helpersim/model.hpp"
#include "helpersim/oracle.hpp"
#include "helpersim/rng.hpp"

using namespace helpersim;
using namespace helpersim::test;

TEST_CASE("supply-limited single link tops out at the upload capacity") {
  SingleLink inst;  // upload 300, channel 400, ample storage
  OracleSolution sol = oracle_solve(inst.overlay, inst.catalog, inst.users, inst.helpers);
  CHECK(sol.utility == Catch::Approx(300.0).margin(1e-6));
  CHECK(sol.f.at(1)[0] == Catch::Approx(1.0).margin(0.02));
  CHECK(sol.x.at(Edge{1, 101}) == Catch::Approx(300.0).margin(1e-6));
}

TEST_CASE("demand-limited single link tops out at the channel rate") {
  SingleLink inst(400.0, 100.0, 500.0);  // upload 500 > channel 400
  OracleSolution sol = oracle_solve(inst.overlay, inst.catalog, inst.users, inst.helpers);
  CHECK(sol.utility == Catch::Approx(400.0).margin(1e-6));
}

TEST_CASE("storage worth one video goes to the video with more viewers") {
  VideoCatalog cat({{300.0, 100.0}, {300.0, 100.0}});
  UserMap users;
  HelperMap helpers;
  Overlay o;
  users[101] = make_user(101, 1, 4, {1});
  users[102] = make_user(102, 2, 4, {1});
  users[103] = make_user(103, 2, 4, {1});
  helpers[1] = make_helper(1, 800.0, cat.spec(1).size_kbit, 4, {101, 102, 103});
  for (PeerId u : {101, 102, 103}) o.add_edge(1, u);

  OracleSolution sol = oracle_solve(o, cat, users, helpers, 100);
  CHECK(sol.utility == Catch::Approx(600.0).margin(1e-6));
  CHECK(sol.f.at(1)[0] == Catch::Approx(0.0).margin(0.02));
  CHECK(sol.f.at(1)[1] == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("storage-limited link caps service at the stored fraction") {
  StorageBound inst;  // S = 0.75 V, upload 500, channel 400
  OracleSolution sol = oracle_solve(inst.overlay, inst.catalog, inst.users, inst.helpers);
  CHECK(sol.utility == Catch::Approx(300.0).margin(0.5));
  CHECK(sol.f.at(1)[0] == Catch::Approx(0.75).margin(0.01));
}

TEST_CASE("bandwidth routes around a user another helper cannot reach") {
  // u1 reachable only through h1. Serving u2 greedily from h1 first would
  // strand u1, so the exact assignment must route h1 to u1.
  VideoCatalog cat({{150.0, 100.0}});
  UserMap users;
  HelperMap helpers;
  Overlay o;
  users[101] = make_user(101, 1, 4, {1});
  users[102] = make_user(102, 1, 4, {1, 2});
  helpers[1] = make_helper(1, 100.0, 2.0 * cat.spec(1).size_kbit, 4, {101, 102});
  helpers[2] = make_helper(2, 100.0, 2.0 * cat.spec(1).size_kbit, 4, {102});
  o.add_edge(1, 101);
  o.add_edge(1, 102);
  o.add_edge(2, 102);

  OracleSolution sol = oracle_solve(o, cat, users, helpers, 100);
  CHECK(sol.utility == Catch::Approx(200.0).margin(1e-6));
}

TEST_CASE("split storage across two equally popular videos is optimal") {
  VideoCatalog cat({{400.0, 100.0}, {400.0, 100.0}});
  UserMap users;
  HelperMap helpers;
  Overlay o;
  users[101] = make_user(101, 1, 4, {1});
  users[102] = make_user(102, 2, 4, {1});
  helpers[1] = make_helper(1, 1000.0, 0.5 * (cat.spec(1).size_kbit + cat.spec(2).size_kbit),
                           4, {101, 102});
  o.add_edge(1, 101);
  o.add_edge(1, 102);

  OracleSolution sol = oracle_solve(o, cat, users, helpers, 100);
  CHECK(sol.utility == Catch::Approx(400.0).margin(0.5));
}

TEST_CASE("oracle refuses instances beyond its size box") {
  VideoCatalog cat({{300.0, 100.0}});
  UserMap users;
  HelperMap helpers;
  Overlay o;

  SECTION("too many helpers") {
    for (int j = 1; j <= 4; ++j) helpers[j] = make_helper(j, 100.0, 1e5, 4, {});
    users[101] = make_user(101, 1, 4, {});
    CHECK_THROWS_AS(oracle_solve(o, cat, users, helpers, 100), std::invalid_argument);
  }
  SECTION("too many users") {
    helpers[1] = make_helper(1, 100.0, 1e5, 8, {});
    for (int i = 101; i <= 105; ++i) users[i] = make_user(i, 1, 4, {});
    CHECK_THROWS_AS(oracle_solve(o, cat, users, helpers, 100), std::invalid_argument);
  }
  SECTION("resolution too coarse") {
    helpers[1] = make_helper(1, 100.0, 1e5, 4, {101});
    users[101] = make_user(101, 1, 4, {1});
    o.add_edge(1, 101);
    CHECK_THROWS_AS(oracle_solve(o, cat, users, helpers, 50), std::invalid_argument);
  }
}

namespace {

struct RandomInstance {
  VideoCatalog catalog;
  UserMap users;
  HelperMap helpers;
  Overlay overlay;
};

double total_catalog_size(const VideoCatalog& cat) {
  double total = 0.0;
  for (int m = 1; m <= cat.size(); ++m) total += cat.spec(m).size_kbit;
  return total;
}

RandomInstance random_instance(std::mt19937_64& g) {
  const int videos = draw_uniform_int(g, 1, 3);
  const int nh = draw_uniform_int(g, 1, 3);
  const int nu = draw_uniform_int(g, 1, 4);
  RandomInstance inst;
  for (int m = 0; m < videos; ++m)
    inst.catalog.add_video(draw_uniform(g, 100.0, 600.0), draw_uniform(g, 50.0, 200.0));
  for (int i = 0; i < nu; ++i) {
    const PeerId id = 101 + i;
    inst.users[id] = make_user(id, draw_uniform_int(g, 1, videos), 4, {});
  }
  double total_size = 0.0;
  for (int m = 1; m <= videos; ++m) total_size += inst.catalog.spec(m).size_kbit;
  for (int j = 0; j < nh; ++j) {
    const PeerId id = 1 + j;
    inst.helpers[id] = make_helper(id, draw_uniform(g, 100.0, 800.0),
                                   draw_uniform(g, 0.2, 1.2) * total_size, 4, {});
  }
  for (auto& [uid, u] : inst.users)
    for (auto& [hid, h] : inst.helpers)
      if (draw_u01(g) < 0.7) {
        u.candidates.insert(hid);
        h.candidates.insert(uid);
        inst.overlay.add_edge(hid, uid);
      }
  return inst;
}

}  // namespace

TEST_CASE("oracle solutions are feasible, bounded, and beat uniform storage") {
  RngBank rng(23);
  auto& g = rng.stream("oracle-prop");
  for (int trial = 0; trial < 20; ++trial) {
    RandomInstance inst = random_instance(g);
    OracleSolution sol =
        oracle_solve(inst.overlay, inst.catalog, inst.users, inst.helpers, 100);

    double demand = 0.0;
    for (const auto& [id, u] : inst.users)
      demand += inst.catalog.spec(u.video).rate_kbps;
    double supply = 0.0;
    for (const auto& [id, h] : inst.helpers) supply += h.upload_kbps;
    CHECK(sol.utility >= -1e-9);
    CHECK(sol.utility <= std::min(demand, supply) + 1e-6);

    for (const auto& [id, h] : inst.helpers) {
      double out = 0.0;
      double stored = 0.0;
      const auto& row = sol.f.at(id);
      for (int m = 1; m <= inst.catalog.size(); ++m) {
        stored += row[static_cast<std::size_t>(m) - 1] * inst.catalog.spec(m).size_kbit;
        CHECK(row[static_cast<std::size_t>(m) - 1] >= -1e-9);
        CHECK(row[static_cast<std::size_t>(m) - 1] <= 1.0 + 1e-9);
      }
      CHECK(stored <= h.storage_kbit + 1e-6);
      for (PeerId u : inst.overlay.users_of(id)) {
        const Edge e{id, u};
        const VideoSpec& v = inst.catalog.spec(inst.users.at(u).video);
        CHECK(sol.x.at(e) >= -1e-9);
        CHECK(sol.x.at(e) <=
              row[static_cast<std::size_t>(v.id) - 1] * v.rate_kbps + 1e-6);
        out += sol.x.at(e);
      }
      CHECK(out <= h.upload_kbps + 1e-6);
    }

    // The returned utility matches its own rate assignment.
    AllocationState as = zero_state(inst.overlay, inst.helpers, inst.catalog.size());
    as.x = sol.x;
    CHECK(effective_contribution(inst.overlay, as, inst.catalog, inst.users) ==
          Catch::Approx(sol.utility).margin(1e-6));

    // Lower bound from an explicit feasible point: uniform storage split and
    // an even upload split capped by the stored rate.
    AllocationState lb = zero_state(inst.overlay, inst.helpers, inst.catalog.size());
    for (const auto& [id, h] : inst.helpers) {
      const auto& neighbors = inst.overlay.users_of(id);
      if (neighbors.empty()) continue;
      const double uniform = std::min(1.0, h.storage_kbit / total_catalog_size(inst.catalog));
      const double share = h.upload_kbps / static_cast<double>(neighbors.size());
      for (PeerId u : neighbors) {
        const VideoSpec& v = inst.catalog.spec(inst.users.at(u).video);
        lb.x[Edge{id, u}] = std::min(share, uniform * v.rate_kbps);
      }
    }
    CHECK(sol.utility >=
          effective_contribution(inst.overlay, lb, inst.catalog, inst.users) - 1e-6);
  }
}

TEST_CASE("oracle value is reproducible for a fixed instance") {
  RngBank rng(29);
  auto& g = rng.stream("oracle-repro");
  RandomInstance inst = random_instance(g);
  OracleSolution a = oracle_solve(inst.overlay, inst.catalog, inst.users, inst.helpers, 100);
  OracleSolution b = oracle_solve(inst.overlay, inst.catalog, inst.users, inst.helpers, 100);
  CHECK(a.utility == b.utility);
  CHECK(a.x == b.x);
  CHECK(a.f == b.f);
}
