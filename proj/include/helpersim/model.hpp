#pragma once

// Entities and bookkeeping for a helper-assisted multi-channel VoD swarm:
// a catalog of constant-bit-rate videos, users that each watch one channel,
// helper peers that donate upload bandwidth and cache storage, the bipartite
// helper-user overlay, and the allocation variables attached to it.
//
// Units: rates in kbit/s, storage and video sizes in kbit, time in seconds.

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace helpersim {

using PeerId = std::int32_t;
using VideoId = std::int32_t;

inline constexpr double kKbitPerMegabyte = 8192.0;

/// One constant-bit-rate channel. size_kbit is always rate_kbps * duration_s.
struct VideoSpec {
  VideoId id = 0;  // contiguous, 1-based
  double rate_kbps = 0.0;
  double duration_s = 0.0;
  double size_kbit = 0.0;
};

/// Ordered catalog of the M channels. Ids are assigned 1..M on construction.
class VideoCatalog {
 public:
  VideoCatalog() = default;

  VideoCatalog(std::vector<std::pair<double, double>> rate_duration) {
    for (const auto& [rate, dur] : rate_duration) add_video(rate, dur);
  }

  VideoId add_video(double rate_kbps, double duration_s) {
    if (rate_kbps <= 0.0 || duration_s <= 0.0)
      throw std::invalid_argument("video rate and duration must be positive");
    VideoSpec v;
    v.id = static_cast<VideoId>(videos_.size()) + 1;
    v.rate_kbps = rate_kbps;
    v.duration_s = duration_s;
    v.size_kbit = rate_kbps * duration_s;
    videos_.push_back(v);
    return v.id;
  }

  int size() const { return static_cast<int>(videos_.size()); }
  bool contains(VideoId id) const { return id >= 1 && id <= size(); }

  const VideoSpec& spec(VideoId id) const {
    if (!contains(id)) throw std::out_of_range("unknown video id " + std::to_string(id));
    return videos_[static_cast<std::size_t>(id) - 1];
  }

  const std::vector<VideoSpec>& videos() const { return videos_; }

 private:
  std::vector<VideoSpec> videos_;
};

/// A user watches exactly one channel and holds at most max_neighbors helper
/// links, drawn from its candidate set.
struct UserNode {
  PeerId id = 0;
  VideoId video = 0;
  int max_neighbors = 0;
  std::set<PeerId> candidates;  // helper ids visible to this user
  double update_period_s = 1.0;
};

/// A helper donates upload_kbps of egress and storage_kbit of cache.
struct HelperNode {
  PeerId id = 0;
  double upload_kbps = 0.0;
  double storage_kbit = 0.0;
  int max_neighbors = 0;
  std::set<PeerId> candidates;  // user ids visible to this helper
  double update_period_s = 1.0;
};

using UserMap = std::map<PeerId, UserNode>;
using HelperMap = std::map<PeerId, HelperNode>;

/// Directed label of an active helper-to-user link.
struct Edge {
  PeerId helper = 0;
  PeerId user = 0;
  auto operator<=>(const Edge&) const = default;
};

/// Active edge set plus adjacency views, kept sorted for deterministic walks.
class Overlay {
 public:
  bool add_edge(PeerId helper, PeerId user) {
    auto [it, inserted] = edges_.insert(Edge{helper, user});
    if (!inserted) return false;
    insert_sorted(by_helper_[helper], user);
    insert_sorted(by_user_[user], helper);
    return true;
  }

  bool remove_edge(PeerId helper, PeerId user) {
    if (edges_.erase(Edge{helper, user}) == 0) return false;
    erase_value(by_helper_, helper, user);
    erase_value(by_user_, user, helper);
    return true;
  }

  bool has_edge(PeerId helper, PeerId user) const {
    return edges_.count(Edge{helper, user}) > 0;
  }

  /// Drops every edge touching the peer; returns the removed edges.
  std::vector<Edge> remove_peer(PeerId id) {
    std::vector<Edge> removed;
    for (PeerId u : users_of(id)) removed.push_back(Edge{id, u});
    for (PeerId h : helpers_of(id)) removed.push_back(Edge{h, id});
    for (const Edge& e : removed) remove_edge(e.helper, e.user);
    return removed;
  }

  const std::vector<PeerId>& users_of(PeerId helper) const {
    return view(by_helper_, helper);
  }
  const std::vector<PeerId>& helpers_of(PeerId user) const {
    return view(by_user_, user);
  }

  int degree_helper(PeerId helper) const { return static_cast<int>(users_of(helper).size()); }
  int degree_user(PeerId user) const { return static_cast<int>(helpers_of(user).size()); }

  /// Helper-side neighbors split by the channel each user watches.
  std::map<VideoId, std::vector<PeerId>> users_of_by_video(PeerId helper,
                                                           const UserMap& users) const {
    std::map<VideoId, std::vector<PeerId>> part;
    for (PeerId u : users_of(helper)) part[users.at(u).video].push_back(u);
    return part;
  }

  const std::set<Edge>& edges() const { return edges_; }
  int edge_count() const { return static_cast<int>(edges_.size()); }

  bool operator==(const Overlay& other) const { return edges_ == other.edges_; }
  bool operator<(const Overlay& other) const { return edges_ < other.edges_; }

 private:
  static void insert_sorted(std::vector<PeerId>& v, PeerId x) {
    v.insert(std::lower_bound(v.begin(), v.end(), x), x);
  }
  static void erase_value(std::map<PeerId, std::vector<PeerId>>& m, PeerId key, PeerId x) {
    auto it = m.find(key);
    if (it == m.end()) return;
    auto& v = it->second;
    auto pos = std::lower_bound(v.begin(), v.end(), x);
    if (pos != v.end() && *pos == x) v.erase(pos);
    if (v.empty()) m.erase(it);
  }
  static const std::vector<PeerId>& view(const std::map<PeerId, std::vector<PeerId>>& m,
                                         PeerId key) {
    static const std::vector<PeerId> empty;
    auto it = m.find(key);
    return it == m.end() ? empty : it->second;
  }

  std::set<Edge> edges_;
  std::map<PeerId, std::vector<PeerId>> by_helper_;
  std::map<PeerId, std::vector<PeerId>> by_user_;
};

/// Allocation and price variables. x and k are keyed by active edge, f by
/// (helper, video) over the full catalog, lambda and mu by helper. Keys must
/// stay aligned with the overlay and helper population at all times.
struct AllocationState {
  std::map<Edge, double> x;                  // kbit/s granted on each link
  std::map<PeerId, std::vector<double>> f;   // stored fraction per video, [0,1]
  std::map<PeerId, double> lambda;           // bandwidth price, >= 0
  std::map<PeerId, double> mu;               // storage price, >= 0
  std::map<Edge, double> k;                  // per-link availability price, >= 0
};

/// All-zero state keyed to the given overlay and helper population.
inline AllocationState zero_state(const Overlay& overlay, const HelperMap& helpers,
                                  int video_count) {
  AllocationState s;
  for (const auto& [id, h] : helpers) {
    s.f[id] = std::vector<double>(static_cast<std::size_t>(video_count), 0.0);
    s.lambda[id] = 0.0;
    s.mu[id] = 0.0;
  }
  for (const Edge& e : overlay.edges()) {
    s.x[e] = 0.0;
    s.k[e] = 0.0;
  }
  return s;
}

/// Throws if the state's key sets disagree with the overlay or helper set.
inline void check_state_alignment(const AllocationState& s, const Overlay& overlay,
                                  const HelperMap& helpers, int video_count) {
  auto fail = [](const std::string& what) {
    throw std::logic_error("allocation state misaligned: " + what);
  };
  if (s.x.size() != overlay.edges().size() || s.k.size() != overlay.edges().size())
    fail("edge key count");
  for (const Edge& e : overlay.edges())
    if (!s.x.count(e) || !s.k.count(e)) fail("missing edge key");
  if (s.f.size() != helpers.size() || s.lambda.size() != helpers.size() ||
      s.mu.size() != helpers.size())
    fail("helper key count");
  for (const auto& [id, h] : helpers) {
    auto it = s.f.find(id);
    if (it == s.f.end() || !s.lambda.count(id) || !s.mu.count(id)) fail("missing helper key");
    if (static_cast<int>(it->second.size()) != video_count) fail("f row length");
  }
}

struct ValidationResult {
  bool ok = true;
  std::vector<std::string> violations;
};

/// Structural audit of an overlay against the peer population: endpoints must
/// exist, links must be mutually candidate-listed, and neither endpoint may
/// exceed its neighbor cap.
inline ValidationResult validate_overlay(const Overlay& overlay, const UserMap& users,
                                         const HelperMap& helpers) {
  ValidationResult r;
  auto flag = [&r](std::string msg) {
    r.ok = false;
    r.violations.push_back(std::move(msg));
  };
  for (const Edge& e : overlay.edges()) {
    std::ostringstream tag;
    tag << "edge (" << e.helper << "," << e.user << ")";
    auto hit = helpers.find(e.helper);
    auto uit = users.find(e.user);
    if (hit == helpers.end()) {
      flag(tag.str() + ": unknown helper");
      continue;
    }
    if (uit == users.end()) {
      flag(tag.str() + ": unknown user");
      continue;
    }
    if (!uit->second.candidates.count(e.helper))
      flag(tag.str() + ": helper not in user's candidate set");
    if (!hit->second.candidates.count(e.user))
      flag(tag.str() + ": user not in helper's candidate set");
  }
  for (const auto& [id, u] : users)
    if (overlay.degree_user(id) > u.max_neighbors) {
      std::ostringstream m;
      m << "user " << id << " degree " << overlay.degree_user(id) << " exceeds cap "
        << u.max_neighbors;
      flag(m.str());
    }
  for (const auto& [id, h] : helpers)
    if (overlay.degree_helper(id) > h.max_neighbors) {
      std::ostringstream m;
      m << "helper " << id << " degree " << overlay.degree_helper(id) << " exceeds cap "
        << h.max_neighbors;
      flag(m.str());
    }
  return r;
}

/// Total stream demand of the current user population, kbit/s.
inline double total_demand(const VideoCatalog& catalog, const UserMap& users) {
  double d = 0.0;
  for (const auto& [id, u] : users) d += catalog.spec(u.video).rate_kbps;
  return d;
}

/// Demand minus the helpers' aggregate upload. This is the floor on central
/// server load no allocation can beat; it may be negative when helpers could
/// oversupply the swarm.
inline double intrinsic_deficit(const VideoCatalog& catalog, const UserMap& users,
                                const HelperMap& helpers) {
  double supply = 0.0;
  for (const auto& [id, h] : helpers) supply += h.upload_kbps;
  return total_demand(catalog, users) - supply;
}

/// Stream rate the helpers actually offload: per user, the granted sum counts
/// only up to the channel rate. Server load is total demand minus this.
inline double effective_contribution(const Overlay& overlay, const AllocationState& state,
                                     const VideoCatalog& catalog, const UserMap& users) {
  double total = 0.0;
  for (const auto& [id, u] : users) {
    double got = 0.0;
    for (PeerId h : overlay.helpers_of(id)) got += state.x.at(Edge{h, id});
    total += std::min(got, catalog.spec(u.video).rate_kbps);
  }
  return total;
}

}  // namespace helpersim
