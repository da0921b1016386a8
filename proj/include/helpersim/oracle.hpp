#pragma once

// Independent reference solver for tiny instances. The dynamics in
// allocator.hpp are never consulted here: for a fixed topology the best
// total offload is found by searching helper storage splits on a refining
// grid and, for each split, routing bandwidth exactly with augmenting-path
// max-flow (source -> helper caps B_j, helper->user caps f_jm * r_m,
// user -> sink caps r_m). Offloaded rate equals the max-flow value because
// every kbit/s below a user's channel rate counts 1:1 and everything above
// counts 0.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "helpersim/model.hpp"

namespace helpersim {

struct OracleSolution {
  double utility = 0.0;                     // kbit/s offloaded from the server
  std::map<Edge, double> x;                 // rate per overlay edge
  std::map<PeerId, std::vector<double>> f;  // storage split per helper
};

namespace detail {

/// Max-flow with double capacities on a tiny graph (<= 9 nodes here).
class TinyMaxFlow {
 public:
  explicit TinyMaxFlow(int nodes) : head_(static_cast<std::size_t>(nodes), -1) {}

  int add_edge(int from, int to, double cap) {
    const int id = static_cast<int>(edges_.size());
    edges_.push_back({to, head_[static_cast<std::size_t>(from)], cap});
    head_[static_cast<std::size_t>(from)] = id;
    edges_.push_back({from, head_[static_cast<std::size_t>(to)], 0.0});
    head_[static_cast<std::size_t>(to)] = id + 1;
    return id;
  }

  double run(int source, int sink) {
    static constexpr double kEps = 1e-9;
    double total = 0.0;
    std::vector<int> parent_edge(head_.size());
    while (true) {
      std::fill(parent_edge.begin(), parent_edge.end(), -1);
      parent_edge[static_cast<std::size_t>(source)] = -2;
      std::deque<int> queue{source};
      while (!queue.empty() && parent_edge[static_cast<std::size_t>(sink)] == -1) {
        const int v = queue.front();
        queue.pop_front();
        for (int id = head_[static_cast<std::size_t>(v)]; id != -1; id = edges_[static_cast<std::size_t>(id)].next) {
          const auto& e = edges_[static_cast<std::size_t>(id)];
          if (e.cap > kEps && parent_edge[static_cast<std::size_t>(e.to)] == -1) {
            parent_edge[static_cast<std::size_t>(e.to)] = id;
            queue.push_back(e.to);
          }
        }
      }
      if (parent_edge[static_cast<std::size_t>(sink)] == -1) break;
      double push = std::numeric_limits<double>::infinity();
      for (int v = sink; v != source;) {
        const int id = parent_edge[static_cast<std::size_t>(v)];
        push = std::min(push, edges_[static_cast<std::size_t>(id)].cap);
        v = edges_[static_cast<std::size_t>(id ^ 1)].to;
      }
      for (int v = sink; v != source;) {
        const int id = parent_edge[static_cast<std::size_t>(v)];
        edges_[static_cast<std::size_t>(id)].cap -= push;
        edges_[static_cast<std::size_t>(id ^ 1)].cap += push;
        v = edges_[static_cast<std::size_t>(id ^ 1)].to;
      }
      total += push;
    }
    return total;
  }

  /// Flow pushed through a forward edge returned by add_edge.
  double flow_on(int edge_id) const {
    return edges_[static_cast<std::size_t>(edge_id) ^ 1].cap;
  }

 private:
  struct E {
    int to;
    int next;
    double cap;
  };
  std::vector<int> head_;
  std::vector<E> edges_;
};

}  // namespace detail

/// Exact-within-grid solver. Instances are capped hard (<= 3 helpers,
/// <= 4 users, <= 3 videos) and resolution is the number of grid steps per
/// unit of f on the finest level; anything larger is refused rather than
/// silently approximated.
inline OracleSolution oracle_solve(const Overlay& overlay, const VideoCatalog& catalog,
                                   const UserMap& users, const HelperMap& helpers,
                                   int resolution = 100) {
  if (helpers.size() > 3 || users.size() > 4 || catalog.size() > 3)
    throw std::invalid_argument(
        "oracle_solve: instance too large (" + std::to_string(helpers.size()) + " helpers, " +
        std::to_string(users.size()) + " users, " + std::to_string(catalog.size()) +
        " videos; limit 3/4/3)");
  if (resolution < 100)
    throw std::invalid_argument("oracle_solve: resolution must be >= 100");

  std::vector<PeerId> helper_ids, user_ids;
  for (const auto& [id, h] : helpers) helper_ids.push_back(id);
  for (const auto& [id, u] : users) user_ids.push_back(id);
  const int H = static_cast<int>(helper_ids.size());
  const int U = static_cast<int>(user_ids.size());

  // Active videos per helper: only channels its neighbors actually watch can
  // turn storage into flow, so every other f coordinate is pinned to zero.
  std::vector<std::vector<VideoId>> active(static_cast<std::size_t>(H));
  std::vector<double> budget(static_cast<std::size_t>(H), 0.0);
  for (int hi = 0; hi < H; ++hi) {
    std::set<VideoId> vids;
    for (PeerId u : overlay.users_of(helper_ids[static_cast<std::size_t>(hi)]))
      vids.insert(users.at(u).video);
    active[static_cast<std::size_t>(hi)].assign(vids.begin(), vids.end());
    double full = 0.0;
    for (VideoId m : vids) full += catalog.spec(m).size_kbit;
    budget[static_cast<std::size_t>(hi)] =
        std::min(helpers.at(helper_ids[static_cast<std::size_t>(hi)]).storage_kbit, full);
  }

  // One candidate storage split, expressed over the active videos only.
  using Row = std::vector<double>;

  auto row_cost = [&](int hi, const Row& row) {
    double c = 0.0;
    for (std::size_t i = 0; i < row.size(); ++i)
      c += row[i] * catalog.spec(active[static_cast<std::size_t>(hi)][i]).size_kbit;
    return c;
  };

  // Spend leftover budget by raising coordinates toward 1, starting at
  // `first`: offload never decreases in any f coordinate, so topping up is
  // always safe and recovers budget-tight splits off the grid.
  auto topped_up = [&](int hi, Row row, std::size_t first) {
    double leftover = budget[static_cast<std::size_t>(hi)] - row_cost(hi, row);
    for (std::size_t step = 0; step < row.size() && leftover > 1e-12; ++step) {
      const std::size_t i = (first + step) % row.size();
      const double size = catalog.spec(active[static_cast<std::size_t>(hi)][i]).size_kbit;
      const double add = std::min(1.0 - row[i], leftover / size);
      row[i] += add;
      leftover -= add * size;
    }
    return row;
  };

  // Candidate rows for one helper at one refinement level: independent
  // coordinates take up to five values around the incumbent, and each choice
  // of dependent coordinate absorbs the remaining budget.
  auto candidate_rows = [&](int hi, const Row& center, double spacing) {
    std::vector<Row> rows;
    const std::size_t d = active[static_cast<std::size_t>(hi)].size();
    if (d == 0) {
      rows.push_back({});
      return rows;
    }
    double full = 0.0;
    for (VideoId m : active[static_cast<std::size_t>(hi)]) full += catalog.spec(m).size_kbit;
    if (budget[static_cast<std::size_t>(hi)] >= full - 1e-9) {
      rows.push_back(Row(d, 1.0));  // storage is not binding
      return rows;
    }
    std::set<Row> seen;
    auto push = [&](Row r) {
      if (row_cost(hi, r) > budget[static_cast<std::size_t>(hi)] + 1e-9) return;
      if (seen.insert(r).second) rows.push_back(std::move(r));
    };
    std::vector<std::vector<double>> coord_values(d);
    for (std::size_t i = 0; i < d; ++i) {
      std::set<double> vals;
      for (int s = -2; s <= 2; ++s) {
        const double v = std::min(1.0, std::max(0.0, center[i] + s * spacing));
        vals.insert(v);
      }
      coord_values[i].assign(vals.begin(), vals.end());
    }
    // Enumerate the independent coordinates recursively.
    Row row(d, 0.0);
    auto rec = [&](auto&& self, std::size_t dep, std::size_t pos) -> void {
      if (pos == d) {
        Row r = row;
        const double size = catalog.spec(active[static_cast<std::size_t>(hi)][dep]).size_kbit;
        double others = 0.0;
        for (std::size_t i = 0; i < d; ++i)
          if (i != dep) others += r[i] * catalog.spec(active[static_cast<std::size_t>(hi)][i]).size_kbit;
        r[dep] = std::min(1.0, std::max(0.0, (budget[static_cast<std::size_t>(hi)] - others) / size));
        push(topped_up(hi, r, 0));
        push(r);
        return;
      }
      if (pos == dep) {
        self(self, dep, pos + 1);
        return;
      }
      for (double v : coord_values[pos]) {
        row[pos] = v;
        self(self, dep, pos + 1);
      }
    };
    for (std::size_t dep = 0; dep < d; ++dep) rec(rec, dep, 0);
    return rows;
  };

  // Exact routing for a fixed storage split across all helpers.
  struct EdgeRef {
    int flow_edge;
    Edge e;
  };
  auto evaluate = [&](const std::vector<Row>& split, std::map<Edge, double>* x_out) {
    const int source = 0, sink = H + U + 1;
    detail::TinyMaxFlow net(H + U + 2);
    std::vector<EdgeRef> refs;
    for (int hi = 0; hi < H; ++hi)
      net.add_edge(source, 1 + hi, helpers.at(helper_ids[static_cast<std::size_t>(hi)]).upload_kbps);
    for (int ui = 0; ui < U; ++ui)
      net.add_edge(1 + H + ui, sink,
                   catalog.spec(users.at(user_ids[static_cast<std::size_t>(ui)]).video).rate_kbps);
    for (int hi = 0; hi < H; ++hi) {
      const PeerId j = helper_ids[static_cast<std::size_t>(hi)];
      for (PeerId u : overlay.users_of(j)) {
        const int ui = static_cast<int>(std::lower_bound(user_ids.begin(), user_ids.end(), u) -
                                        user_ids.begin());
        const VideoId m = users.at(u).video;
        const auto& act = active[static_cast<std::size_t>(hi)];
        const std::size_t mi = static_cast<std::size_t>(
            std::lower_bound(act.begin(), act.end(), m) - act.begin());
        const double cap =
            split[static_cast<std::size_t>(hi)][mi] * catalog.spec(m).rate_kbps;
        const int id = net.add_edge(1 + hi, 1 + H + ui, cap);
        if (x_out) refs.push_back({id, Edge{j, u}});
      }
    }
    const double value = net.run(source, sink);
    if (x_out)
      for (const EdgeRef& r : refs) (*x_out)[r.e] = net.flow_on(r.flow_edge);
    return value;
  };

  // Coarse-to-fine search over the product of per-helper candidate rows.
  std::vector<Row> best_split(static_cast<std::size_t>(H));
  for (int hi = 0; hi < H; ++hi)
    best_split[static_cast<std::size_t>(hi)] =
        Row(active[static_cast<std::size_t>(hi)].size(), 0.5);
  double best_value = -1.0;
  const double target = 1.0 / resolution;
  for (double spacing = 0.25;; spacing /= 4.0) {
    std::vector<std::vector<Row>> rows(static_cast<std::size_t>(H));
    for (int hi = 0; hi < H; ++hi)
      rows[static_cast<std::size_t>(hi)] =
          candidate_rows(hi, best_split[static_cast<std::size_t>(hi)], spacing);
    std::vector<std::size_t> pick(static_cast<std::size_t>(H), 0);
    std::vector<Row> split(static_cast<std::size_t>(H));
    auto walk = [&](auto&& self, int hi) -> void {
      if (hi == H) {
        const double v = evaluate(split, nullptr);
        if (v > best_value + 1e-12) {
          best_value = v;
          best_split = split;
        }
        return;
      }
      for (const Row& r : rows[static_cast<std::size_t>(hi)]) {
        split[static_cast<std::size_t>(hi)] = r;
        self(self, hi + 1);
      }
    };
    walk(walk, 0);
    if (spacing <= target) break;
  }

  // Final cyclic 1-D polish at full resolution: each coordinate's slice of
  // the offload value is concave, so a line grid search per coordinate can
  // only improve the incumbent.
  for (int cycle = 0; cycle < 3; ++cycle) {
    for (int hi = 0; hi < H; ++hi) {
      auto& row = best_split[static_cast<std::size_t>(hi)];
      for (std::size_t i = 0; i < row.size(); ++i) {
        for (int s = -4; s <= 4; ++s) {
          std::vector<Row> trial = best_split;
          const double v = std::min(1.0, std::max(0.0, row[i] + s * target));
          trial[static_cast<std::size_t>(hi)][i] = v;
          if (row_cost(hi, trial[static_cast<std::size_t>(hi)]) >
              budget[static_cast<std::size_t>(hi)] + 1e-9)
            continue;
          const double val = evaluate(trial, nullptr);
          if (val > best_value + 1e-12) {
            best_value = val;
            best_split = trial;
          }
        }
      }
    }
  }

  OracleSolution out;
  out.utility = evaluate(best_split, &out.x);
  for (int hi = 0; hi < H; ++hi) {
    const PeerId j = helper_ids[static_cast<std::size_t>(hi)];
    std::vector<double> f(static_cast<std::size_t>(catalog.size()), 0.0);
    const auto& act = active[static_cast<std::size_t>(hi)];
    for (std::size_t i = 0; i < act.size(); ++i)
      f[static_cast<std::size_t>(act[i]) - 1] = best_split[static_cast<std::size_t>(hi)][i];
    out.f[j] = std::move(f);
  }
  return out;
}

}  // namespace helpersim
