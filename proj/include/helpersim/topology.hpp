#pragma once

// Stochastic overlay adaptation. Peers occasionally drop one neighbor and
// pick a replacement; the drop leans toward the worst-fed link (soft-min in
// the link rates) and the countdown to the next choke is exponential, so the
// induced configuration process is a continuous-time Markov chain. With the
// uniform-reference variant (rates depending only on configuration utility)
// the chain is reversible with a Gibbs stationary law; the practical variant
// stays within a total-variation bound of it.

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <vector>

#include "helpersim/model.hpp"
#include "helpersim/rng.hpp"

namespace helpersim {

struct ChokeParams {
  double kappa = 10.0;  // softness: large kappa concentrates on the best
  double tau = 0.01;    // base choke rate, 1/s
};

/// Gibbs weights over configurations: p(c) proportional to exp(kappa * U(c)),
/// computed shift-stably.
inline std::vector<double> gibbs_distribution(const std::vector<double>& utilities,
                                              double kappa) {
  if (utilities.empty()) throw std::invalid_argument("gibbs_distribution: no configurations");
  double u_max = utilities[0];
  for (double u : utilities) u_max = std::max(u_max, u);
  std::vector<double> p(utilities.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(kappa * (utilities[i] - u_max));
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

/// Drop distribution over a peer's active links: soft-min in the link rates,
/// computed shift-stably. Equal rates give the uniform law.
inline std::vector<double> choke_probabilities(const std::vector<double>& rates_kbps,
                                               double kappa) {
  if (rates_kbps.empty()) throw std::invalid_argument("choke_probabilities: no active links");
  double x_min = rates_kbps[0];
  for (double x : rates_kbps) x_min = std::min(x_min, x);
  std::vector<double> p(rates_kbps.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(-kappa * (rates_kbps[i] - x_min));
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

/// Expected seconds until the peer's next choke. Disengaged (nullopt) when
/// the candidate pool offers no alternative neighbor; +infinity when every
/// link is so well fed that the soft-min weights underflow, meaning the peer
/// will effectively never choke.
inline std::optional<double> countdown_mean(int candidate_count, int max_neighbors,
                                            const std::vector<double>& active_rates_kbps,
                                            const ChokeParams& params) {
  if (candidate_count <= max_neighbors) return std::nullopt;
  if (active_rates_kbps.empty()) return std::nullopt;
  double weight = 0.0;
  for (double x : active_rates_kbps) weight += std::exp(-params.kappa * x);
  const double rate = params.tau * (candidate_count - max_neighbors) * weight;
  if (rate <= 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / rate;
}

struct PeerRef {
  bool is_user = true;
  PeerId id = 0;
};

struct ChokeOutcome {
  bool aborted = false;
  Edge dropped{};
  Edge added{};
};

/// One drop-and-replace move for a user or helper. The dropped link is
/// soft-min-sampled from the peer's active links at the supplied rates; the
/// replacement is uniform over candidates that were inactive before the drop
/// and still have spare degree. With no eligible replacement the drop is
/// rolled back and the overlay left untouched.
template <typename RateFn>
ChokeOutcome perform_choke(Overlay& overlay, const UserMap& users, const HelperMap& helpers,
                           const PeerRef& peer, RateFn&& rate_of, double kappa,
                           std::mt19937_64& rng) {
  const std::set<PeerId>& candidates =
      peer.is_user ? users.at(peer.id).candidates : helpers.at(peer.id).candidates;
  const std::vector<PeerId>& active =
      peer.is_user ? overlay.helpers_of(peer.id) : overlay.users_of(peer.id);
  if (active.empty()) throw std::invalid_argument("perform_choke: peer has no active links");

  auto edge_to = [&](PeerId other) {
    return peer.is_user ? Edge{other, peer.id} : Edge{peer.id, other};
  };

  std::vector<double> rates;
  rates.reserve(active.size());
  for (PeerId other : active) rates.push_back(rate_of(edge_to(other)));
  const std::vector<double> p = choke_probabilities(rates, kappa);
  const std::size_t drop_idx = draw_categorical(rng, p);
  const std::set<PeerId> active_before(active.begin(), active.end());
  const Edge dropped = edge_to(active[drop_idx]);
  overlay.remove_edge(dropped.helper, dropped.user);

  std::vector<PeerId> eligible;
  for (PeerId cand : candidates) {
    if (active_before.count(cand)) continue;  // includes the dropped neighbor
    if (peer.is_user) {
      auto it = helpers.find(cand);
      if (it == helpers.end()) continue;
      if (overlay.degree_helper(cand) >= it->second.max_neighbors) continue;
    } else {
      auto it = users.find(cand);
      if (it == users.end()) continue;
      if (overlay.degree_user(cand) >= it->second.max_neighbors) continue;
    }
    eligible.push_back(cand);
  }

  ChokeOutcome out;
  out.dropped = dropped;
  if (eligible.empty()) {
    overlay.add_edge(dropped.helper, dropped.user);
    out.aborted = true;
    return out;
  }
  const PeerId pick =
      eligible[static_cast<std::size_t>(draw_uniform_int(rng, 0, static_cast<long>(eligible.size()) - 1))];
  out.added = edge_to(pick);
  overlay.add_edge(out.added.helper, out.added.user);
  return out;
}

/// Reference choke rate toward each adjacent configuration when the process
/// is driven by configuration utility alone.
inline double uniform_choke_rate(double utility, const ChokeParams& params) {
  return params.tau * std::exp(-params.kappa * utility);
}

/// All overlays in which every user holds exactly min(cap, candidate count)
/// links and helper caps are respected, together with their utilities and
/// single-swap adjacency.
struct ConfigSpace {
  std::vector<Overlay> configs;
  std::vector<double> utility;
  std::vector<std::vector<int>> neighbors;  // single-swap moves staying in the space

  int argmax_utility() const {
    int best = 0;
    for (int i = 1; i < static_cast<int>(utility.size()); ++i)
      if (utility[i] > utility[best]) best = i;
    return best;
  }
};

template <typename UtilityFn>  // double(const Overlay&)
ConfigSpace enumerate_config_space(const UserMap& users, const HelperMap& helpers,
                                   UtilityFn&& utility_fn, long max_configs = 5000) {
  // Mutual candidacy: the helper must also list the user.
  auto mutual = [&](const UserNode& u) {
    std::vector<PeerId> cands;
    for (PeerId c : u.candidates) {
      auto it = helpers.find(c);
      if (it != helpers.end() && it->second.candidates.count(u.id)) cands.push_back(c);
    }
    return cands;
  };

  // Refuse clearly oversized spaces before materializing anything.
  double estimate = 1.0;
  for (const auto& [uid, u] : users) {
    const std::vector<PeerId> cands = mutual(u);
    const int n = static_cast<int>(cands.size());
    const int k = std::min(u.max_neighbors, n);
    double comb = 1.0;
    for (int i = 0; i < k; ++i) comb = comb * (n - i) / (i + 1);
    estimate *= comb;
  }
  if (estimate > static_cast<double>(max_configs)) {
    // estimate can overflow to inf for large populations; report it as a double
    char approx[32];
    std::snprintf(approx, sizeof(approx), "%.3g", estimate);
    throw std::invalid_argument("enumerate_config_space: about " + std::string(approx) +
                                " raw configurations exceed the limit of " +
                                std::to_string(max_configs));
  }

  std::vector<PeerId> user_ids;
  for (const auto& [id, u] : users) user_ids.push_back(id);

  ConfigSpace space;
  Overlay current;
  auto build = [&](auto&& self, std::size_t ui) -> void {
    if (ui == user_ids.size()) {
      space.configs.push_back(current);
      return;
    }
    const UserNode& u = users.at(user_ids[ui]);
    const std::vector<PeerId> cands = mutual(u);
    const int k = std::min<int>(u.max_neighbors, static_cast<int>(cands.size()));
    std::vector<int> pick(static_cast<std::size_t>(k));
    auto choose = [&](auto&& rec, int start, int depth) -> void {
      if (depth == k) {
        bool ok = true;
        for (int i = 0; i < k && ok; ++i) {
          const PeerId h = cands[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])];
          if (current.degree_helper(h) >= helpers.at(h).max_neighbors) ok = false;
        }
        if (!ok) return;
        for (int i = 0; i < k; ++i)
          current.add_edge(cands[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])],
                           u.id);
        self(self, ui + 1);
        for (int i = 0; i < k; ++i)
          current.remove_edge(cands[static_cast<std::size_t>(pick[static_cast<std::size_t>(i)])],
                              u.id);
        return;
      }
      for (int c = start; c <= static_cast<int>(cands.size()) - (k - depth); ++c) {
        pick[static_cast<std::size_t>(depth)] = c;
        rec(rec, c + 1, depth + 1);
      }
    };
    choose(choose, 0, 0);
  };
  build(build, 0);

  if (static_cast<long>(space.configs.size()) > max_configs)
    throw std::invalid_argument("enumerate_config_space: " +
                                std::to_string(space.configs.size()) +
                                " configurations exceed the limit of " +
                                std::to_string(max_configs));

  space.utility.reserve(space.configs.size());
  for (const Overlay& c : space.configs) space.utility.push_back(utility_fn(c));

  std::map<std::set<Edge>, int> index;
  for (int i = 0; i < static_cast<int>(space.configs.size()); ++i)
    index[space.configs[static_cast<std::size_t>(i)].edges()] = i;

  space.neighbors.resize(space.configs.size());
  for (int i = 0; i < static_cast<int>(space.configs.size()); ++i) {
    const Overlay& c = space.configs[static_cast<std::size_t>(i)];
    std::set<int> nbrs;
    for (const Edge& e : c.edges()) {
      for (PeerId cand : mutual(users.at(e.user))) {
        if (c.has_edge(cand, e.user)) continue;
        if (c.degree_helper(cand) >= helpers.at(cand).max_neighbors) continue;
        std::set<Edge> next = c.edges();
        next.erase(e);
        next.insert(Edge{cand, e.user});
        auto it = index.find(next);
        if (it != index.end() && it->second != i) nbrs.insert(it->second);
      }
    }
    space.neighbors[static_cast<std::size_t>(i)].assign(nbrs.begin(), nbrs.end());
  }
  return space;
}

/// Time-weighted trajectory of a configuration chain.
struct ChainLog {
  std::vector<double> sojourn_s;
  std::vector<long> visits;
  long transitions = 0;
  bool absorbed = false;  // hit a state with zero outgoing rate
};

namespace detail {

inline ChainLog run_chain(const std::vector<std::vector<std::pair<int, double>>>& moves,
                          int start, long n_transitions, std::mt19937_64& rng) {
  ChainLog log;
  log.sojourn_s.assign(moves.size(), 0.0);
  log.visits.assign(moves.size(), 0);
  int c = start;
  ++log.visits[static_cast<std::size_t>(c)];
  for (long t = 0; t < n_transitions; ++t) {
    const auto& out = moves[static_cast<std::size_t>(c)];
    double total = 0.0;
    for (const auto& [to, rate] : out) total += rate;
    if (total <= 0.0) {
      log.absorbed = true;
      break;
    }
    log.sojourn_s[static_cast<std::size_t>(c)] += draw_exponential(rng, 1.0 / total);
    std::vector<double> w;
    w.reserve(out.size());
    for (const auto& [to, rate] : out) w.push_back(rate);
    c = out[draw_categorical(rng, w)].first;
    ++log.visits[static_cast<std::size_t>(c)];
    ++log.transitions;
  }
  return log;
}

}  // namespace detail

/// Reference chain: every admissible swap fires at rate tau*exp(-kappa*U(c)).
inline ChainLog run_uniform_chain(const ConfigSpace& space, const ChokeParams& params,
                                  long n_transitions, std::mt19937_64& rng, int start = 0) {
  std::vector<std::vector<std::pair<int, double>>> moves(space.configs.size());
  for (std::size_t i = 0; i < space.configs.size(); ++i) {
    const double q = uniform_choke_rate(space.utility[i], params);
    for (int j : space.neighbors[i]) moves[i].push_back({j, q});
  }
  return detail::run_chain(moves, start, n_transitions, rng);
}

/// Practical chain under timescale separation: the allocator is assumed to
/// re-converge between chokes, so the rate of the swap that drops edge e from
/// configuration c is tau*exp(-kappa * x_c(e)) with x_c the converged
/// allocation in c.
inline ChainLog run_soft_chain(const ConfigSpace& space,
                               const std::vector<std::map<Edge, double>>& converged_x,
                               const UserMap& users, const HelperMap& helpers,
                               const ChokeParams& params, long n_transitions,
                               std::mt19937_64& rng, int start = 0) {
  std::map<std::set<Edge>, int> index;
  for (int i = 0; i < static_cast<int>(space.configs.size()); ++i)
    index[space.configs[static_cast<std::size_t>(i)].edges()] = i;

  std::vector<std::vector<std::pair<int, double>>> moves(space.configs.size());
  for (std::size_t i = 0; i < space.configs.size(); ++i) {
    const Overlay& c = space.configs[i];
    for (const Edge& e : c.edges()) {
      for (PeerId cand : users.at(e.user).candidates) {
        auto hit = helpers.find(cand);
        if (hit == helpers.end() || !hit->second.candidates.count(e.user)) continue;
        if (c.has_edge(cand, e.user)) continue;
        if (c.degree_helper(cand) >= hit->second.max_neighbors) continue;
        std::set<Edge> next = c.edges();
        next.erase(e);
        next.insert(Edge{cand, e.user});
        auto it = index.find(next);
        if (it == index.end() || it->second == static_cast<int>(i)) continue;
        moves[i].push_back({it->second, params.tau * std::exp(-params.kappa *
                                                              converged_x[i].at(e))});
      }
    }
  }
  return detail::run_chain(moves, start, n_transitions, rng);
}

/// Comparison of a chain trajectory against the Gibbs law.
struct StationaryAnalysis {
  std::vector<double> empirical;  // sojourn-time weighted
  std::vector<double> gibbs;
  double tv_distance = 0.0;
  double tv_bound = 0.0;  // 1 - exp(-kappa * B_max)
  bool within_bound = true;
  int most_visited = 0;  // by sojourn time
};

inline StationaryAnalysis stationary_check(const ConfigSpace& space, const ChainLog& log,
                                           const ChokeParams& params, double max_upload_kbps,
                                           double margin = 0.05) {
  StationaryAnalysis a;
  a.gibbs = gibbs_distribution(space.utility, params.kappa);
  double total = 0.0;
  for (double s : log.sojourn_s) total += s;
  a.empirical.assign(log.sojourn_s.size(), 0.0);
  if (total > 0.0)
    for (std::size_t i = 0; i < log.sojourn_s.size(); ++i)
      a.empirical[i] = log.sojourn_s[i] / total;
  for (std::size_t i = 0; i < a.empirical.size(); ++i)
    a.tv_distance += std::abs(a.empirical[i] - a.gibbs[i]);
  a.tv_distance /= 2.0;
  a.tv_bound = 1.0 - std::exp(-params.kappa * max_upload_kbps);
  a.within_bound = a.tv_distance <= a.tv_bound + margin;
  for (std::size_t i = 1; i < log.sojourn_s.size(); ++i)
    if (log.sojourn_s[i] > log.sojourn_s[static_cast<std::size_t>(a.most_visited)])
      a.most_visited = static_cast<int>(i);
  return a;
}

}  // namespace helpersim
