#pragma once

// Small instance builders shared across the test suite.

#include <set>
#include <vector>

#include "helpersim/allocator.hpp"
#include "helpersim/model.hpp"

namespace helpersim::test {

inline UserNode make_user(PeerId id, VideoId video, int cap, std::set<PeerId> candidates,
                          double period_s = 1.0) {
  UserNode u;
  u.id = id;
  u.video = video;
  u.max_neighbors = cap;
  u.candidates = std::move(candidates);
  u.update_period_s = period_s;
  return u;
}

inline HelperNode make_helper(PeerId id, double upload_kbps, double storage_kbit, int cap,
                              std::set<PeerId> candidates, double period_s = 1.0) {
  HelperNode h;
  h.id = id;
  h.upload_kbps = upload_kbps;
  h.storage_kbit = storage_kbit;
  h.max_neighbors = cap;
  h.candidates = std::move(candidates);
  h.update_period_s = period_s;
  return h;
}

/// One helper (id 1), one user (id 101) on video 1, connected.
struct SingleLink {
  VideoCatalog catalog;
  UserMap users;
  HelperMap helpers;
  Overlay overlay;

  SingleLink(double rate_kbps = 400.0, double duration_s = 100.0, double upload_kbps = 300.0,
             double storage_kbit = -1.0) {
    catalog.add_video(rate_kbps, duration_s);
    const double storage =
        storage_kbit < 0.0 ? 2.0 * catalog.spec(1).size_kbit : storage_kbit;
    helpers[1] = make_helper(1, upload_kbps, storage, 4, {101});
    users[101] = make_user(101, 1, 4, {1});
    overlay.add_edge(1, 101);
  }
};

/// One helper whose storage, not upload, limits the single user: optimum is
/// f = 0.75, x = 300 with duals k = 1, mu = 1/duration.
struct StorageBound {
  VideoCatalog catalog;
  UserMap users;
  HelperMap helpers;
  Overlay overlay;

  StorageBound() {
    catalog.add_video(400.0, 100.0);
    helpers[1] = make_helper(1, 500.0, 0.75 * catalog.spec(1).size_kbit, 4, {101});
    users[101] = make_user(101, 1, 4, {1});
    overlay.add_edge(1, 101);
  }
};

/// Step sizes sized for test instances with rates in the hundreds of kbit/s
/// and durations around 100 s: every loop gain sits near 0.01 so the orbits
/// rotate at ~0.1 rad per tick and one averaging window covers them all.
inline StepSizes tiny_steps() {
  StepSizes s;
  s.alpha = 2.0;
  s.beta = 0.005;
  s.gamma = 0.005;
  s.delta = 5e-7;
  s.epsilon = 0.005;
  return s;
}

/// Convergence schedule used by tight-residual runs.
inline ConvergenceOptions tight_convergence() {
  ConvergenceOptions o;
  o.max_ticks = 200000;
  o.tol = 1e-3;
  o.sustain = 50;
  o.warmup_ticks = 2000;
  o.avg_window = 256;
  o.avg_min_ticks = 64;
  return o;
}

}  // namespace helpersim::test
