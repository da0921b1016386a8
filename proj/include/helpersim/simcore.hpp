#pragma once

// Seeded discrete-event simulator. Helpers run the allocation tick on their
// own clocks and push packetized service through a rate-limited egress queue;
// users measure what actually arrived, report saturation, refill their play
// buffer from the central server at window boundaries, and occasionally choke
// a neighbor. Peer churn and channel switches rewrite the population while
// the run is in flight. Everything is driven by one event queue ordered by
// (time, insertion sequence), with named random streams per subsystem so
// toggling one feature does not shift another's draws.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "helpersim/allocator.hpp"
#include "helpersim/model.hpp"
#include "helpersim/rng.hpp"
#include "helpersim/topology.hpp"

namespace helpersim {

struct ChurnConfig {
  double arrival_mean_s = 20.0;   // one new user and one new helper per arrival
  double lifetime_mean_s = 200.0; // applies to churn arrivals, not the initial population
  double stop_time_s = 600.0;     // arrivals and departures both freeze here
};

struct ChannelSwitchConfig {
  double time_s = 0.0;
  VideoId from_video = 0;
  std::vector<VideoId> to_videos;  // watchers split round-robin in id order
};

/// Discrete distribution over category values (upload kbps, storage kbit).
struct CategoryTable {
  std::vector<double> value;
  std::vector<double> fraction;
};

struct SimulationConfig {
  VideoCatalog catalog;
  UserMap users;
  HelperMap helpers;
  Overlay overlay;  // initial wiring; see bootstrap_overlay
  StepSizes steps;
  ChokeParams choke;
  bool topology_update = true;
  // While topology updates run, users with spare degree re-wire to helpers
  // with spare degree this often; keeps choked-off helpers reachable.
  double reconnect_period_s = 10.0;
  double delay_min_s = 0.0;
  double delay_max_s = 0.0;
  double horizon_s = 400.0;
  double sample_period_s = 1.0;
  double buffer_time_s = 30.0;  // window the server tops up, whole segments
  double segment_s = 10.0;
  double packet_kbit = 8.0;  // 1 KB packets
  std::optional<ChurnConfig> churn;
  std::vector<ChannelSwitchConfig> switches;
  // Arrival sampling (used when churn is on).
  std::vector<double> video_weights;  // indexed by video id - 1
  CategoryTable upload_dist;
  CategoryTable storage_dist;
  int user_cap_min = 3;
  int user_cap_max = 10;
  int helper_cap_min = 3;
  int helper_cap_max = 10;
  std::vector<double> period_set = {1.0};
  // Re-validate the overlay and state keying at every metrics sample. Costly;
  // meant for tests that mutate the population heavily.
  bool paranoid_checks = false;
};

struct MetricsRow {
  double t_s = 0.0;
  double server_load_kbps = 0.0;
  double intrinsic_deficit_kbps = 0.0;
  double total_contribution_kbps = 0.0;
  int user_count = 0;
  int helper_count = 0;
  int edge_count = 0;
  long choke_count = 0;  // cumulative accepted swaps
  long abort_count = 0;  // cumulative rolled-back chokes
  double server_cum_kbit = 0.0;
  double credited_cum_kbit = 0.0;
  double wasted_cum_kbit = 0.0;
  std::map<PeerId, double> helper_upload_kbps;
  std::map<PeerId, std::vector<double>> helper_f;
  std::map<PeerId, double> helper_lambda;
  std::map<PeerId, double> helper_mu;
};

struct MetricsLog {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
};

/// Connect one user to uniformly chosen candidate helpers with spare degree
/// until the user reaches its cap (or the tighter `limit`) or runs out of
/// options.
inline void top_up_user(Overlay& overlay, const UserNode& user, const HelperMap& helpers,
                        std::mt19937_64& rng, std::vector<Edge>* created = nullptr,
                        int limit = std::numeric_limits<int>::max()) {
  const int target = std::min(user.max_neighbors, limit);
  while (overlay.degree_user(user.id) < target) {
    std::vector<PeerId> eligible;
    for (PeerId h : user.candidates) {
      auto it = helpers.find(h);
      if (it == helpers.end() || !it->second.candidates.count(user.id)) continue;
      if (overlay.has_edge(h, user.id)) continue;
      if (overlay.degree_helper(h) >= it->second.max_neighbors) continue;
      eligible.push_back(h);
    }
    if (eligible.empty()) break;
    const PeerId pick = eligible[static_cast<std::size_t>(
        draw_uniform_int(rng, 0, static_cast<long>(eligible.size()) - 1))];
    overlay.add_edge(pick, user.id);
    if (created) created->push_back(Edge{pick, user.id});
  }
}

/// Initial wiring: every user, in id order, fills its degree from the helper
/// pool. Mirrors the join procedure used for churn arrivals. `initial_links`
/// models a tracker that hands out only a short helper list on join; degree
/// then grows toward the cap through reconnects, when those are enabled.
inline void bootstrap_overlay(Overlay& overlay, const UserMap& users, const HelperMap& helpers,
                              std::mt19937_64& rng,
                              int initial_links = std::numeric_limits<int>::max()) {
  for (const auto& [id, u] : users) top_up_user(overlay, u, helpers, rng, nullptr, initial_links);
}

inline std::vector<std::string> validate_simulation_config(const SimulationConfig& cfg) {
  std::vector<std::string> problems;
  if (cfg.horizon_s <= 0.0) problems.push_back("horizon must be positive");
  if (cfg.sample_period_s <= 0.0) problems.push_back("sample period must be positive");
  if (cfg.segment_s <= 0.0) problems.push_back("segment duration must be positive");
  if (cfg.packet_kbit <= 0.0) problems.push_back("packet size must be positive");
  const double segs = cfg.buffer_time_s / cfg.segment_s;
  if (cfg.buffer_time_s <= 0.0 || std::abs(segs - std::round(segs)) > 1e-9 ||
      std::round(segs) < 1.0)
    problems.push_back("buffer time must be a whole positive number of segments");
  if (cfg.delay_min_s < 0.0 || cfg.delay_max_s < cfg.delay_min_s)
    problems.push_back("delay range must satisfy 0 <= min <= max");
  if (cfg.reconnect_period_s <= 0.0) problems.push_back("reconnect period must be positive");
  if (cfg.user_cap_min < 1 || cfg.user_cap_max < cfg.user_cap_min ||
      cfg.helper_cap_min < 1 || cfg.helper_cap_max < cfg.helper_cap_min)
    problems.push_back("neighbor cap ranges must satisfy 1 <= lo <= hi");
  if (cfg.period_set.empty()) problems.push_back("update period set is empty");
  for (double p : cfg.period_set)
    if (p <= 0.0) problems.push_back("update periods must be positive");
  if (cfg.catalog.size() == 0) problems.push_back("catalog is empty");
  if (cfg.churn) {
    if (cfg.churn->arrival_mean_s <= 0.0 || cfg.churn->lifetime_mean_s <= 0.0)
      problems.push_back("churn means must be positive");
    if (static_cast<int>(cfg.video_weights.size()) != cfg.catalog.size())
      problems.push_back("churn needs one video weight per catalog entry");
    if (cfg.upload_dist.value.empty() ||
        cfg.upload_dist.value.size() != cfg.upload_dist.fraction.size())
      problems.push_back("churn needs a helper upload distribution");
    if (cfg.storage_dist.value.empty() ||
        cfg.storage_dist.value.size() != cfg.storage_dist.fraction.size())
      problems.push_back("churn needs a helper storage distribution");
  }
  for (const auto& sw : cfg.switches) {
    if (sw.time_s <= 0.0 || sw.time_s >= cfg.horizon_s)
      problems.push_back("channel switch time outside the run horizon");
    if (!cfg.catalog.contains(sw.from_video))
      problems.push_back("channel switch names an unknown source video");
    if (sw.to_videos.empty()) problems.push_back("channel switch has no target videos");
    for (VideoId v : sw.to_videos)
      if (!cfg.catalog.contains(v))
        problems.push_back("channel switch names an unknown target video");
  }
  for (const auto& [id, u] : cfg.users)
    if (!cfg.catalog.contains(u.video))
      problems.push_back("user " + std::to_string(id) + " watches an unknown video");
  ValidationResult vr = validate_overlay(cfg.overlay, cfg.users, cfg.helpers);
  for (const std::string& p : vr.violations) problems.push_back(p);
  return problems;
}

namespace detail {

enum class EventKind {
  MetricsSample,
  UserRateUpdate,
  UserBufferRefill,
  UserChoke,
  HelperTick,
  HelperChoke,
  MessageDelivery,
  RampStart,
  DrainComplete,
  PeerArrival,
  PeerDeparture,
  ChannelSwitch,
  ServerRateExpire,
  Reconnect,
};

struct SimEvent {
  double time = 0.0;
  long seq = 0;
  EventKind kind = EventKind::MetricsSample;
  PeerId peer = 0;
  PeerId other = 0;
  double a = 0.0;
  double b = 0.0;
  VideoId video = 0;
  long epoch = 0;
  int index = 0;  // switch table index
};

struct SimEventLater {
  bool operator()(const SimEvent& l, const SimEvent& r) const {
    if (l.time != r.time) return l.time > r.time;
    return l.seq > r.seq;
  }
};

/// Service arriving at a user as a constant rate over an interval: the drain
/// of one egress chunk shifted by the pair's propagation delay.
struct Ramp {
  PeerId helper = 0;
  double rate_kbps = 0.0;
  double start_s = 0.0;
  double end_s = 0.0;
  VideoId video = 0;
};

struct UserRuntime {
  std::vector<Ramp> ramps;
  std::map<PeerId, double> measured_x;  // last period's kbit/s per helper
  std::vector<double> segment_credit;   // toward the next window
  double last_refill_s = 0.0;
  double last_measure_s = 0.0;
  long refill_epoch = 0;
  bool choke_armed = false;
};

struct Mailbox {
  double g = 1.0;  // report defaults: a fresh link is assumed hungry
  double x = 0.0;
};

struct EgressChunk {
  PeerId user = 0;
  double kbit = 0.0;
  VideoId video = 0;
};

struct HelperRuntime {
  std::deque<EgressChunk> egress;
  bool draining = false;
  std::map<PeerId, Mailbox> mail;
  std::map<PeerId, double> carry_kbit;  // sub-packet remainders
  bool choke_armed = false;
};

class Simulation {
 public:
  Simulation(const SimulationConfig& cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {
    log_.seed = seed;
  }

  MetricsLog run() {
    {
      std::vector<std::string> problems = validate_simulation_config(cfg_);
      if (!problems.empty())
        throw std::invalid_argument("simulation config: " + problems.front());
    }
    users_ = cfg_.users;
    helpers_ = cfg_.helpers;
    overlay_ = cfg_.overlay;
    state_ = zero_state(overlay_, helpers_, cfg_.catalog.size());
    for (const auto& [id, u] : users_) next_id_ = std::max(next_id_, id + 1);
    for (const auto& [id, h] : helpers_) next_id_ = std::max(next_id_, id + 1);

    for (const Edge& e : overlay_.edges()) sample_delays(e);
    for (auto& [id, u] : users_) {
      urt_[id] = make_user_runtime();
      prefetch_window(id, 0.0);
      push(u.update_period_s, EventKind::UserRateUpdate, id);
      push_refill(id, cfg_.buffer_time_s, 0);
    }
    for (auto& [id, h] : helpers_) {
      hrt_[id];
      push(h.update_period_s, EventKind::HelperTick, id);
    }
    if (cfg_.topology_update) {
      for (auto& [id, u] : users_) arm_user_choke(id, 0.0);
      for (auto& [id, h] : helpers_) arm_helper_choke(id, 0.0);
      push(cfg_.reconnect_period_s, EventKind::Reconnect, 0);
    }
    push(0.0, EventKind::MetricsSample, 0);
    if (cfg_.churn) schedule_next_arrival(0.0);
    for (int i = 0; i < static_cast<int>(cfg_.switches.size()); ++i) {
      SimEvent ev;
      ev.kind = EventKind::ChannelSwitch;
      ev.index = i;
      push_event(cfg_.switches[static_cast<std::size_t>(i)].time_s, ev);
    }

    while (!queue_.empty() && queue_.top().time <= cfg_.horizon_s + 1e-12) {
      const SimEvent ev = queue_.top();
      queue_.pop();
      now_ = ev.time;
      dispatch(ev);
    }
    return std::move(log_);
  }

 private:
  // --- scheduling -----------------------------------------------------------

  void push_event(double time, SimEvent ev) {
    ev.time = time;
    ev.seq = next_seq_++;
    queue_.push(ev);
  }

  void push(double time, EventKind kind, PeerId peer) {
    SimEvent ev;
    ev.kind = kind;
    ev.peer = peer;
    push_event(time, ev);
  }

  void push_refill(PeerId user, double time, long epoch) {
    SimEvent ev;
    ev.kind = EventKind::UserBufferRefill;
    ev.peer = user;
    ev.epoch = epoch;
    push_event(time, ev);
  }

  void dispatch(const SimEvent& ev) {
    switch (ev.kind) {
      case EventKind::MetricsSample: return on_metrics();
      case EventKind::UserRateUpdate: return on_user_rate_update(ev.peer);
      case EventKind::UserBufferRefill: return on_refill(ev.peer, ev.epoch);
      case EventKind::UserChoke: return on_user_choke(ev.peer);
      case EventKind::HelperTick: return on_helper_tick(ev.peer);
      case EventKind::HelperChoke: return on_helper_choke(ev.peer);
      case EventKind::MessageDelivery: return on_message(ev);
      case EventKind::RampStart: return on_ramp_start(ev);
      case EventKind::DrainComplete: return on_drain_complete(ev.peer);
      case EventKind::PeerArrival: return on_arrival();
      case EventKind::PeerDeparture: return on_departure(ev.peer);
      case EventKind::ChannelSwitch: return on_switch(ev.index);
      case EventKind::ServerRateExpire: server_rate_kbps_ -= ev.a; return;
      case EventKind::Reconnect: return on_reconnect();
    }
  }

  // --- world plumbing -------------------------------------------------------

  UserRuntime make_user_runtime() const {
    UserRuntime rt;
    rt.segment_credit.assign(static_cast<std::size_t>(segments_per_window()), 0.0);
    rt.last_refill_s = now_;
    rt.last_measure_s = now_;
    return rt;
  }

  int segments_per_window() const {
    return static_cast<int>(std::round(cfg_.buffer_time_s / cfg_.segment_s));
  }

  void sample_delays(const Edge& e) {
    auto& delay_stream = rng_.stream("delays");
    delay_[{e.user, e.helper}] = draw_uniform(delay_stream, cfg_.delay_min_s, cfg_.delay_max_s);
    delay_[{e.helper, e.user}] = draw_uniform(delay_stream, cfg_.delay_min_s, cfg_.delay_max_s);
  }

  void init_edge(const Edge& e) {
    sample_delays(e);
    state_.x[e] = 0.0;
    state_.k[e] = 0.0;
    hrt_.at(e.helper).mail[e.user];  // defaults g=1, x=0
  }

  void drop_edge_state(const Edge& e) {
    delay_.erase({e.user, e.helper});
    delay_.erase({e.helper, e.user});
    state_.x.erase(e);
    state_.k.erase(e);
    auto hit = hrt_.find(e.helper);
    if (hit != hrt_.end()) {
      hit->second.mail.erase(e.user);
      hit->second.carry_kbit.erase(e.user);
    }
  }

  double delay_of(PeerId from, PeerId to) const { return delay_.at({from, to}); }

  void prefetch_window(PeerId user, double at) {
    const double r = cfg_.catalog.spec(users_.at(user).video).rate_kbps;
    const double kbit = r * cfg_.buffer_time_s;
    add_server_load(kbit, at);
  }

  void add_server_load(double kbit, double at) {
    server_cum_kbit_ += kbit;
    const double rate = kbit / cfg_.buffer_time_s;
    server_rate_kbps_ += rate;
    SimEvent ev;
    ev.kind = EventKind::ServerRateExpire;
    ev.a = rate;
    push_event(at + cfg_.buffer_time_s, ev);
  }

  // --- user events ----------------------------------------------------------

  double integrate_ramps(const UserRuntime& rt, PeerId helper, VideoId video, double from,
                         double to) const {
    double kbit = 0.0;
    for (const Ramp& ramp : rt.ramps) {
      if (ramp.helper != helper || ramp.video != video) continue;
      const double lo = std::max(from, ramp.start_s);
      const double hi = std::min(to, ramp.end_s);
      if (hi > lo) kbit += ramp.rate_kbps * (hi - lo);
    }
    return kbit;
  }

  void prune_ramps(UserRuntime& rt) {
    const double keep_after = std::min(rt.last_refill_s, rt.last_measure_s);
    std::erase_if(rt.ramps, [&](const Ramp& r) { return r.end_s <= keep_after; });
  }

  void on_user_rate_update(PeerId uid) {
    auto uit = users_.find(uid);
    if (uit == users_.end()) return;
    const UserNode& u = uit->second;
    UserRuntime& rt = urt_.at(uid);
    const double period = u.update_period_s;
    const double from = now_ - period;

    rt.measured_x.clear();
    double granted = 0.0;
    for (PeerId h : overlay_.helpers_of(uid)) {
      const double kbit = integrate_ramps(rt, h, u.video, from, now_);
      rt.measured_x[h] = kbit / period;
      granted += kbit / period;
    }
    const double g = subgradient_g(granted, cfg_.catalog.spec(u.video).rate_kbps);
    for (PeerId h : overlay_.helpers_of(uid)) {
      SimEvent ev;
      ev.kind = EventKind::MessageDelivery;
      ev.peer = h;
      ev.other = uid;
      ev.a = g;
      ev.b = rt.measured_x[h];
      push_event(now_ + delay_of(uid, h), ev);
    }
    rt.last_measure_s = now_;
    prune_ramps(rt);
    if (cfg_.topology_update && !rt.choke_armed) arm_user_choke(uid, now_);
    push(now_ + period, EventKind::UserRateUpdate, uid);
  }

  void on_message(const SimEvent& ev) {
    auto hit = hrt_.find(ev.peer);
    if (hit == hrt_.end() || !overlay_.has_edge(ev.peer, ev.other)) return;
    hit->second.mail[ev.other] = Mailbox{ev.a, ev.b};
  }

  void on_ramp_start(const SimEvent& ev) {
    auto uit = urt_.find(ev.peer);
    if (uit == urt_.end()) return;
    if (!helpers_.count(ev.other)) return;  // sender left; in-flight data dropped
    uit->second.ramps.push_back(Ramp{ev.other, ev.a, now_, now_ + ev.b, ev.video});
  }

  void on_refill(PeerId uid, long epoch) {
    auto uit = users_.find(uid);
    if (uit == users_.end()) return;
    UserRuntime& rt = urt_.at(uid);
    if (epoch != rt.refill_epoch) return;  // superseded by a channel switch
    const UserNode& u = uit->second;
    const double seg_kbit = cfg_.catalog.spec(u.video).rate_kbps * cfg_.segment_s;

    // All matching ramps count, including ones whose link has since dropped:
    // those packets still arrived within the window.
    double arrived = 0.0;
    for (const Ramp& ramp : rt.ramps) {
      if (ramp.video != u.video) continue;
      const double lo = std::max(rt.last_refill_s, ramp.start_s);
      const double hi = std::min(now_, ramp.end_s);
      if (hi > lo) arrived += ramp.rate_kbps * (hi - lo);
    }

    double remaining = arrived;
    double credited = 0.0;
    for (double& seg : rt.segment_credit) {
      const double fill = std::min(seg_kbit, remaining);
      seg = fill;
      credited += fill;
      remaining -= fill;
    }
    credited_cum_kbit_ += credited;
    wasted_cum_kbit_ += remaining;
    const double topup =
        seg_kbit * static_cast<double>(segments_per_window()) - credited;
    if (topup > 0.0) add_server_load(topup, now_);
    for (double& seg : rt.segment_credit) seg = 0.0;
    rt.last_refill_s = now_;
    prune_ramps(rt);
    push_refill(uid, now_ + cfg_.buffer_time_s, epoch);
  }

  // --- helper events --------------------------------------------------------

  void on_helper_tick(PeerId hid) {
    auto hit = helpers_.find(hid);
    if (hit == helpers_.end()) return;
    const HelperNode& h = hit->second;
    HelperRuntime& rt = hrt_.at(hid);

    GObservations obs;
    for (PeerId u : overlay_.users_of(hid)) obs[Edge{hid, u}] = rt.mail[u].g;
    helper_tick_inplace(state_, overlay_, cfg_.catalog, users_, helpers_, cfg_.steps, hid, obs);

    for (PeerId u : overlay_.users_of(hid)) {
      const Edge e{hid, u};
      double alloc = state_.x.at(e) * h.update_period_s + rt.carry_kbit[u];
      const double packets = std::floor(alloc / cfg_.packet_kbit);
      const double kbit = packets * cfg_.packet_kbit;
      rt.carry_kbit[u] = alloc - kbit;
      if (kbit > 0.0) rt.egress.push_back(EgressChunk{u, kbit, users_.at(u).video});
    }
    start_drain(hid);
    if (cfg_.topology_update && !rt.choke_armed) arm_helper_choke(hid, now_);
    push(now_ + h.update_period_s, EventKind::HelperTick, hid);
  }

  void start_drain(PeerId hid) {
    HelperRuntime& rt = hrt_.at(hid);
    if (rt.draining) return;
    const double upload = helpers_.at(hid).upload_kbps;
    while (!rt.egress.empty()) {
      const EgressChunk& front = rt.egress.front();
      const bool valid = users_.count(front.user) && overlay_.has_edge(hid, front.user) &&
                         users_.at(front.user).video == front.video;
      if (!valid) {
        rt.egress.pop_front();
        continue;
      }
      const double duration = front.kbit / upload;
      rt.draining = true;
      push(now_ + duration, EventKind::DrainComplete, hid);
      // The receive ramp mirrors the drain, shifted by the pair delay.
      SimEvent ramp;
      ramp.kind = EventKind::RampStart;
      ramp.peer = front.user;
      ramp.other = hid;
      ramp.a = upload;
      ramp.b = duration;
      ramp.video = front.video;
      push_event(now_ + delay_of(hid, front.user), ramp);
      break;
    }
  }

  void on_drain_complete(PeerId hid) {
    auto hit = hrt_.find(hid);
    if (hit == hrt_.end()) return;
    hit->second.egress.pop_front();
    hit->second.draining = false;
    start_drain(hid);
  }

  // --- choking --------------------------------------------------------------

  int live_candidates_user(const UserNode& u) const {
    int n = 0;
    for (PeerId c : u.candidates) n += helpers_.count(c) ? 1 : 0;
    return n;
  }

  int live_candidates_helper(const HelperNode& h) const {
    int n = 0;
    for (PeerId c : h.candidates) n += users_.count(c) ? 1 : 0;
    return n;
  }

  void arm_user_choke(PeerId uid, double at) {
    UserRuntime& rt = urt_.at(uid);
    if (rt.choke_armed) return;
    const UserNode& u = users_.at(uid);
    std::vector<double> rates;
    for (PeerId h : overlay_.helpers_of(uid)) {
      auto it = rt.measured_x.find(h);
      rates.push_back(it != rt.measured_x.end() ? it->second : 0.0);
    }
    auto mean = countdown_mean(live_candidates_user(u), u.max_neighbors, rates, cfg_.choke);
    if (!mean || std::isinf(*mean)) return;  // rechecked at the next rate update
    rt.choke_armed = true;
    push(at + draw_exponential(rng_.stream("chokes"), *mean), EventKind::UserChoke, uid);
  }

  void arm_helper_choke(PeerId hid, double at) {
    HelperRuntime& rt = hrt_.at(hid);
    if (rt.choke_armed) return;
    const HelperNode& h = helpers_.at(hid);
    std::vector<double> rates;
    for (PeerId u : overlay_.users_of(hid)) rates.push_back(state_.x.at(Edge{hid, u}));
    auto mean = countdown_mean(live_candidates_helper(h), h.max_neighbors, rates, cfg_.choke);
    if (!mean || std::isinf(*mean)) return;  // rechecked at the next tick
    rt.choke_armed = true;
    push(at + draw_exponential(rng_.stream("chokes"), *mean), EventKind::HelperChoke, hid);
  }

  void on_user_choke(PeerId uid) {
    auto uit = users_.find(uid);
    if (uit == users_.end()) return;
    UserRuntime& rt = urt_.at(uid);
    rt.choke_armed = false;
    if (!cfg_.topology_update || overlay_.helpers_of(uid).empty()) return;
    auto rate_of = [&](const Edge& e) {
      auto it = rt.measured_x.find(e.helper);
      return it != rt.measured_x.end() ? it->second : 0.0;
    };
    ChokeOutcome out = perform_choke(overlay_, users_, helpers_, PeerRef{true, uid}, rate_of,
                                     cfg_.choke.kappa, rng_.stream("chokes"));
    finish_choke(out);
    arm_user_choke(uid, now_);
  }

  void on_helper_choke(PeerId hid) {
    auto hit = helpers_.find(hid);
    if (hit == helpers_.end()) return;
    HelperRuntime& rt = hrt_.at(hid);
    rt.choke_armed = false;
    if (!cfg_.topology_update || overlay_.users_of(hid).empty()) return;
    auto rate_of = [&](const Edge& e) { return state_.x.at(e); };
    ChokeOutcome out = perform_choke(overlay_, users_, helpers_, PeerRef{false, hid}, rate_of,
                                     cfg_.choke.kappa, rng_.stream("chokes"));
    finish_choke(out);
    arm_helper_choke(hid, now_);
  }

  void finish_choke(const ChokeOutcome& out) {
    if (out.aborted) {
      ++abort_count_;
      return;
    }
    ++choke_count_;
    drop_edge_state(out.dropped);
    init_edge(out.added);
  }

  // --- churn and switches ---------------------------------------------------

  void schedule_next_arrival(double from) {
    const double at = from + draw_exponential(rng_.stream("churn"), cfg_.churn->arrival_mean_s);
    if (at >= cfg_.churn->stop_time_s) return;
    push(at, EventKind::PeerArrival, 0);
  }

  void create_edges(const std::vector<Edge>& created) {
    for (const Edge& e : created) init_edge(e);
  }

  void top_up_all_users() {
    for (auto& [uid, u] : users_) {
      std::vector<Edge> created;
      top_up_user(overlay_, u, helpers_, rng_.stream("churn"), &created);
      create_edges(created);
    }
  }

  void on_reconnect() {
    top_up_all_users();
    push(now_ + cfg_.reconnect_period_s, EventKind::Reconnect, 0);
  }

  void on_arrival() {
    auto& pop = rng_.stream("churn-pop");
    auto& wiring = rng_.stream("churn");

    // One user...
    UserNode u;
    u.id = next_id_++;
    u.video = static_cast<VideoId>(draw_categorical(pop, cfg_.video_weights)) + 1;
    u.max_neighbors =
        static_cast<int>(draw_uniform_int(pop, cfg_.user_cap_min, cfg_.user_cap_max));
    u.update_period_s = cfg_.period_set[static_cast<std::size_t>(
        draw_uniform_int(pop, 0, static_cast<long>(cfg_.period_set.size()) - 1))];
    for (const auto& [hid, h] : helpers_) u.candidates.insert(hid);
    for (auto& [hid, h] : helpers_) h.candidates.insert(u.id);
    users_[u.id] = u;
    urt_[u.id] = make_user_runtime();

    // ...and one helper per arrival.
    HelperNode h;
    h.id = next_id_++;
    h.upload_kbps = cfg_.upload_dist.value[draw_categorical(pop, cfg_.upload_dist.fraction)];
    h.storage_kbit = cfg_.storage_dist.value[draw_categorical(pop, cfg_.storage_dist.fraction)];
    h.max_neighbors =
        static_cast<int>(draw_uniform_int(pop, cfg_.helper_cap_min, cfg_.helper_cap_max));
    h.update_period_s = cfg_.period_set[static_cast<std::size_t>(
        draw_uniform_int(pop, 0, static_cast<long>(cfg_.period_set.size()) - 1))];
    for (const auto& [uid2, u2] : users_) h.candidates.insert(uid2);
    for (auto& [uid2, u2] : users_) u2.candidates.insert(h.id);
    helpers_[h.id] = h;
    hrt_[h.id];
    state_.f[h.id].assign(static_cast<std::size_t>(cfg_.catalog.size()), 0.0);
    state_.lambda[h.id] = 0.0;
    state_.mu[h.id] = 0.0;

    std::vector<Edge> created;
    top_up_user(overlay_, users_.at(u.id), helpers_, wiring, &created);
    create_edges(created);
    top_up_all_users();

    prefetch_window(u.id, now_);
    push(now_ + u.update_period_s, EventKind::UserRateUpdate, u.id);
    push_refill(u.id, now_ + cfg_.buffer_time_s, 0);
    push(now_ + h.update_period_s, EventKind::HelperTick, h.id);
    if (cfg_.topology_update) {
      arm_user_choke(u.id, now_);
      arm_helper_choke(h.id, now_);
    }

    for (PeerId id : {u.id, h.id}) {
      const double dep = now_ + draw_exponential(rng_.stream("churn"), cfg_.churn->lifetime_mean_s);
      if (dep < cfg_.churn->stop_time_s) push(dep, EventKind::PeerDeparture, id);
    }
    schedule_next_arrival(now_);
  }

  void on_departure(PeerId id) {
    if (users_.count(id)) {
      for (const Edge& e : overlay_.remove_peer(id)) drop_edge_state(e);
      for (auto& [hid, h] : helpers_) h.candidates.erase(id);
      urt_.erase(id);
      users_.erase(id);
    } else if (helpers_.count(id)) {
      for (const Edge& e : overlay_.remove_peer(id)) drop_edge_state(e);
      for (auto& [uid, u] : users_) u.candidates.erase(id);
      // In-flight packets from the departed helper are lost.
      for (auto& [uid, rt] : urt_)
        for (Ramp& ramp : rt.ramps)
          if (ramp.helper == id) ramp.end_s = std::min(ramp.end_s, now_);
      state_.f.erase(id);
      state_.lambda.erase(id);
      state_.mu.erase(id);
      hrt_.erase(id);
      helpers_.erase(id);
    } else {
      return;  // already gone
    }
    top_up_all_users();
  }

  void on_switch(int index) {
    const ChannelSwitchConfig& sw = cfg_.switches[static_cast<std::size_t>(index)];
    std::vector<PeerId> movers;
    for (const auto& [uid, u] : users_)
      if (u.video == sw.from_video) movers.push_back(uid);
    for (std::size_t i = 0; i < movers.size(); ++i) {
      UserNode& u = users_.at(movers[i]);
      u.video = sw.to_videos[i % sw.to_videos.size()];
      UserRuntime& rt = urt_.at(movers[i]);
      ++rt.refill_epoch;
      rt.last_refill_s = now_;
      for (double& seg : rt.segment_credit) seg = 0.0;
      prefetch_window(movers[i], now_);
      push_refill(movers[i], now_ + cfg_.buffer_time_s, rt.refill_epoch);
    }
  }

  // --- metrics --------------------------------------------------------------

  void on_metrics() {
    if (cfg_.paranoid_checks) {
      ValidationResult vr = validate_overlay(overlay_, users_, helpers_);
      if (!vr.ok) throw std::logic_error("overlay invariant broken: " + vr.violations.front());
      check_state_alignment(state_, overlay_, helpers_, cfg_.catalog.size());
    }
    MetricsRow row;
    row.t_s = now_;
    row.server_load_kbps = server_rate_kbps_;
    row.intrinsic_deficit_kbps = intrinsic_deficit(cfg_.catalog, users_, helpers_);
    row.total_contribution_kbps =
        effective_contribution(overlay_, state_, cfg_.catalog, users_);
    row.user_count = static_cast<int>(users_.size());
    row.helper_count = static_cast<int>(helpers_.size());
    row.edge_count = static_cast<int>(overlay_.edges().size());
    row.choke_count = choke_count_;
    row.abort_count = abort_count_;
    row.server_cum_kbit = server_cum_kbit_;
    row.credited_cum_kbit = credited_cum_kbit_;
    row.wasted_cum_kbit = wasted_cum_kbit_;
    for (const auto& [hid, h] : helpers_) {
      double out = 0.0;
      for (PeerId u : overlay_.users_of(hid)) out += state_.x.at(Edge{hid, u});
      row.helper_upload_kbps[hid] = out;
      row.helper_f[hid] = state_.f.at(hid);
      row.helper_lambda[hid] = state_.lambda.at(hid);
      row.helper_mu[hid] = state_.mu.at(hid);
    }
    log_.rows.push_back(std::move(row));
    const double next = now_ + cfg_.sample_period_s;
    if (next <= cfg_.horizon_s + 1e-12) push(next, EventKind::MetricsSample, 0);
  }

  // --- members --------------------------------------------------------------

  SimulationConfig cfg_;
  RngBank rng_;
  UserMap users_;
  HelperMap helpers_;
  Overlay overlay_;
  AllocationState state_;
  std::map<PeerId, UserRuntime> urt_;
  std::map<PeerId, HelperRuntime> hrt_;
  std::map<std::pair<PeerId, PeerId>, double> delay_;
  std::priority_queue<SimEvent, std::vector<SimEvent>, SimEventLater> queue_;
  MetricsLog log_;
  double now_ = 0.0;
  long next_seq_ = 0;
  PeerId next_id_ = 1;
  double server_rate_kbps_ = 0.0;
  double server_cum_kbit_ = 0.0;
  double credited_cum_kbit_ = 0.0;
  double wasted_cum_kbit_ = 0.0;
  long choke_count_ = 0;
  long abort_count_ = 0;
};

}  // namespace detail

/// Execute one seeded run. Same config and seed give the same log, row for
/// row.
inline MetricsLog run_simulation(const SimulationConfig& cfg, std::uint64_t seed) {
  return detail::Simulation(cfg, seed).run();
}

}  // namespace helpersim
