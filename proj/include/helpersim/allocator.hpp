#pragma once

// Distributed allocation dynamics. Each helper adjusts its per-link rates x,
// stored fractions f, and prices (lambda for upload, mu for storage, k per
// link for content availability) by projected Euler steps; users contribute
// only the saturation subgradient g of their served-rate utility.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>

#include "helpersim/model.hpp"

namespace helpersim {

struct StepSizes {
  double alpha = 1.0;     // x, kbit/s per unit drift
  double beta = 0.01;     // f
  double gamma = 0.5;     // lambda
  double delta = 0.5;     // mu
  double epsilon = 0.05;  // k
};

/// Positive-drift gate used by every dual/primal variable: the drift h passes
/// through in the interior and is one-sidedly zeroed at a bound so the
/// variable cannot be pushed outside [lower, upper].
inline double project_rate(double h, double y, double lower, double upper) {
  if (y >= upper) return std::min(0.0, h);
  if (y <= lower) return std::max(0.0, h);
  return h;
}

/// Marginal utility of one more kbit/s for a user: 1 while the granted sum is
/// below the channel rate, 0 once saturated (the kink takes the flat side).
inline double subgradient_g(double granted_kbps, double channel_rate_kbps) {
  return granted_kbps < channel_rate_kbps ? 1.0 : 0.0;
}

/// Optional per-edge override of g, as received from user reports. Absent
/// edges fall back to the state-derived subgradient.
using GObservations = std::map<Edge, double>;

namespace detail {

inline double clamp(double v, double lo, double hi) { return std::min(hi, std::max(lo, v)); }

inline double state_g(const AllocationState& s, const Overlay& overlay,
                      const VideoCatalog& catalog, const UserMap& users, PeerId user) {
  double granted = 0.0;
  for (PeerId h : overlay.helpers_of(user)) granted += s.x.at(Edge{h, user});
  return subgradient_g(granted, catalog.spec(users.at(user).video).rate_kbps);
}

}  // namespace detail

/// One synchronous Euler tick of the five update families. Every right-hand
/// side reads the pre-tick state. scope limits the tick to a single helper
/// (its links, prices, and f row); other entries are copied through, which is
/// what an asynchronous schedule of per-helper ticks composes from.
inline AllocationState primal_dual_step(const AllocationState& state, const Overlay& overlay,
                                        const VideoCatalog& catalog, const UserMap& users,
                                        const HelperMap& helpers, const StepSizes& steps,
                                        std::optional<PeerId> scope = std::nullopt,
                                        const GObservations* g_obs = nullptr) {
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  AllocationState next = state;
  for (const auto& [j, helper] : helpers) {
    if (scope && *scope != j) continue;
    const auto& neighbor_users = overlay.users_of(j);
    const double lambda_j = state.lambda.at(j);
    const double mu_j = state.mu.at(j);
    const auto& f_row = state.f.at(j);

    double upload_sum = 0.0;
    for (PeerId u : neighbor_users) {
      const Edge e{j, u};
      const double x_e = state.x.at(e);
      upload_sum += x_e;
      double g;
      if (g_obs) {
        auto it = g_obs->find(e);
        g = it != g_obs->end() ? it->second
                               : detail::state_g(state, overlay, catalog, users, u);
      } else {
        g = detail::state_g(state, overlay, catalog, users, u);
      }
      const double drift = g - (lambda_j + state.k.at(e));
      next.x[e] = std::max(0.0, x_e + steps.alpha * project_rate(drift, x_e, 0.0, kInf));
    }

    // Per-video availability pressure on f: link prices pull the fraction up,
    // the storage price (scaled by duration) pushes it down.
    std::vector<double> k_sum_by_video(static_cast<std::size_t>(catalog.size()), 0.0);
    for (PeerId u : neighbor_users)
      k_sum_by_video[static_cast<std::size_t>(users.at(u).video) - 1] += state.k.at(Edge{j, u});
    auto& f_next = next.f[j];
    for (int m = 1; m <= catalog.size(); ++m) {
      const auto idx = static_cast<std::size_t>(m) - 1;
      const double f_jm = f_row[idx];
      const double drift = k_sum_by_video[idx] - catalog.spec(m).duration_s * mu_j;
      f_next[idx] = detail::clamp(f_jm + steps.beta * project_rate(drift, f_jm, 0.0, 1.0),
                                  0.0, 1.0);
    }

    const double lambda_drift = upload_sum - helper.upload_kbps;
    next.lambda[j] = std::max(
        0.0, lambda_j + steps.gamma * project_rate(lambda_drift, lambda_j, 0.0, kInf));

    double stored = 0.0;
    for (int m = 1; m <= catalog.size(); ++m)
      stored += f_row[static_cast<std::size_t>(m) - 1] * catalog.spec(m).size_kbit;
    const double mu_drift = stored - helper.storage_kbit;
    next.mu[j] =
        std::max(0.0, mu_j + steps.delta * project_rate(mu_drift, mu_j, 0.0, kInf));

    for (PeerId u : neighbor_users) {
      const Edge e{j, u};
      const VideoSpec& v = catalog.spec(users.at(u).video);
      const double cap = f_row[static_cast<std::size_t>(v.id) - 1] * v.rate_kbps;
      const double k_e = state.k.at(e);
      const double drift = state.x.at(e) - cap;
      next.k[e] = std::max(0.0, k_e + steps.epsilon * project_rate(drift, k_e, 0.0, kInf));
    }
  }
  return next;
}

/// In-place variant of a single helper's tick for the event loop. Reads the
/// helper's slice into locals first so the write-back cannot feed the tick's
/// own inputs; other helpers' entries are untouched, so per-helper events may
/// run in any order. g must be supplied for every attached edge (the event
/// loop owns the user reports); absent edges fall back to g = 1, the
/// new-link default.
inline void helper_tick_inplace(AllocationState& state, const Overlay& overlay,
                                const VideoCatalog& catalog, const UserMap& users,
                                const HelperMap& helpers, const StepSizes& steps,
                                PeerId helper_id, const GObservations& g_obs) {
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  const HelperNode& helper = helpers.at(helper_id);
  const auto& neighbor_users = overlay.users_of(helper_id);
  const double lambda_j = state.lambda.at(helper_id);
  const double mu_j = state.mu.at(helper_id);
  const std::vector<double> f_row = state.f.at(helper_id);

  std::vector<double> x_old, k_old;
  x_old.reserve(neighbor_users.size());
  k_old.reserve(neighbor_users.size());
  for (PeerId u : neighbor_users) {
    const Edge e{helper_id, u};
    x_old.push_back(state.x.at(e));
    k_old.push_back(state.k.at(e));
  }

  double upload_sum = 0.0;
  std::vector<double> k_sum_by_video(static_cast<std::size_t>(catalog.size()), 0.0);
  for (std::size_t i = 0; i < neighbor_users.size(); ++i) {
    const PeerId u = neighbor_users[i];
    const Edge e{helper_id, u};
    upload_sum += x_old[i];
    k_sum_by_video[static_cast<std::size_t>(users.at(u).video) - 1] += k_old[i];
    auto it = g_obs.find(e);
    const double g = it != g_obs.end() ? it->second : 1.0;
    const double drift = g - (lambda_j + k_old[i]);
    state.x[e] = std::max(0.0, x_old[i] + steps.alpha * project_rate(drift, x_old[i], 0.0, kInf));
  }

  auto& f_next = state.f[helper_id];
  double stored = 0.0;
  for (int m = 1; m <= catalog.size(); ++m) {
    const auto idx = static_cast<std::size_t>(m) - 1;
    stored += f_row[idx] * catalog.spec(m).size_kbit;
    const double drift = k_sum_by_video[idx] - catalog.spec(m).duration_s * mu_j;
    f_next[idx] =
        detail::clamp(f_row[idx] + steps.beta * project_rate(drift, f_row[idx], 0.0, 1.0),
                      0.0, 1.0);
  }

  state.lambda[helper_id] = std::max(
      0.0, lambda_j + steps.gamma * project_rate(upload_sum - helper.upload_kbps, lambda_j,
                                                 0.0, kInf));
  state.mu[helper_id] = std::max(
      0.0,
      mu_j + steps.delta * project_rate(stored - helper.storage_kbit, mu_j, 0.0, kInf));

  for (std::size_t i = 0; i < neighbor_users.size(); ++i) {
    const PeerId u = neighbor_users[i];
    const Edge e{helper_id, u};
    const VideoSpec& v = catalog.spec(users.at(u).video);
    const double cap = f_row[static_cast<std::size_t>(v.id) - 1] * v.rate_kbps;
    state.k[e] = std::max(
        0.0, k_old[i] + steps.epsilon * project_rate(x_old[i] - cap, k_old[i], 0.0, kInf));
  }
}

/// Worst-case violation of each first-order optimality family, as max
/// absolute terms. All five go to zero exactly at a saddle point.
struct KktResiduals {
  double stationarity_x = 0.0;
  double stationarity_f = 0.0;
  double comp_lambda = 0.0;
  double comp_mu = 0.0;
  double comp_k = 0.0;

  double max() const {
    return std::max({stationarity_x, stationarity_f, comp_lambda, comp_mu, comp_k});
  }
};

inline KktResiduals kkt_residuals(const AllocationState& state, const Overlay& overlay,
                                  const VideoCatalog& catalog, const UserMap& users,
                                  const HelperMap& helpers) {
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  // The utility is piecewise linear, so its subgradient at a saturated user is
  // the whole interval [0, 1]; within this band of the channel rate the
  // stationarity gap is the distance of the price to that interval, not to a
  // single branch. Complementarity terms are scaled by their capacity so every
  // component is dimensionless and comparable against one threshold.
  static constexpr double kKinkBand = 1e-3;
  KktResiduals r;
  for (const auto& [j, helper] : helpers) {
    const double lambda_j = state.lambda.at(j);
    const double mu_j = state.mu.at(j);
    const auto& f_row = state.f.at(j);

    double upload_sum = 0.0;
    std::vector<double> k_sum_by_video(static_cast<std::size_t>(catalog.size()), 0.0);
    for (PeerId u : overlay.users_of(j)) {
      const Edge e{j, u};
      const VideoSpec& v = catalog.spec(users.at(u).video);
      const double x_e = state.x.at(e);
      const double k_e = state.k.at(e);
      upload_sum += x_e;
      k_sum_by_video[static_cast<std::size_t>(v.id) - 1] += k_e;

      double granted = 0.0;
      for (PeerId h : overlay.helpers_of(u)) granted += state.x.at(Edge{h, u});
      double g_lo = 0.0, g_hi = 1.0;
      if (granted < v.rate_kbps * (1.0 - kKinkBand))
        g_lo = g_hi = 1.0;
      else if (granted > v.rate_kbps * (1.0 + kKinkBand))
        g_lo = g_hi = 0.0;
      const double price = lambda_j + k_e;
      const double drift = price < g_lo ? g_lo - price : price > g_hi ? g_hi - price : 0.0;
      r.stationarity_x =
          std::max(r.stationarity_x, std::abs(project_rate(drift, x_e, 0.0, kInf)));
      const double cap = f_row[static_cast<std::size_t>(v.id) - 1] * v.rate_kbps;
      r.comp_k =
          std::max(r.comp_k, std::abs(k_e * (x_e - cap)) / std::max(v.rate_kbps, 1.0));
    }

    double stored = 0.0;
    for (int m = 1; m <= catalog.size(); ++m) {
      const auto idx = static_cast<std::size_t>(m) - 1;
      stored += f_row[idx] * catalog.spec(m).size_kbit;
      const double drift = k_sum_by_video[idx] - catalog.spec(m).duration_s * mu_j;
      r.stationarity_f =
          std::max(r.stationarity_f, std::abs(project_rate(drift, f_row[idx], 0.0, 1.0)));
    }
    r.comp_lambda = std::max(r.comp_lambda, std::abs(lambda_j * (upload_sum - helper.upload_kbps)) /
                                                std::max(helper.upload_kbps, 1.0));
    r.comp_mu = std::max(r.comp_mu, std::abs(mu_j * (stored - helper.storage_kbit)) /
                                        std::max(helper.storage_kbit, 1.0));
  }
  return r;
}

/// Step-size-weighted squared distance to a reference point, split by
/// variable family. Strictly decreasing along the continuous dynamics toward
/// a saddle; the discrete tests track it per tick.
struct LyapunovSnapshot {
  double x = 0.0;
  double f = 0.0;
  double lambda = 0.0;
  double mu = 0.0;
  double k = 0.0;
  double total = 0.0;
};

inline LyapunovSnapshot lyapunov(const AllocationState& state, const AllocationState& ref,
                                 const StepSizes& steps) {
  if (state.x.size() != ref.x.size() || state.f.size() != ref.f.size() ||
      state.k.size() != ref.k.size())
    throw std::invalid_argument("lyapunov: reference keying mismatch");
  LyapunovSnapshot v;
  for (const auto& [e, xv] : state.x) {
    const double d = xv - ref.x.at(e);
    v.x += d * d;
  }
  for (const auto& [j, row] : state.f) {
    const auto& ref_row = ref.f.at(j);
    if (row.size() != ref_row.size())
      throw std::invalid_argument("lyapunov: f row length mismatch");
    for (std::size_t i = 0; i < row.size(); ++i) {
      const double d = row[i] - ref_row[i];
      v.f += d * d;
    }
  }
  for (const auto& [j, lv] : state.lambda) {
    const double d = lv - ref.lambda.at(j);
    v.lambda += d * d;
  }
  for (const auto& [j, mv] : state.mu) {
    const double d = mv - ref.mu.at(j);
    v.mu += d * d;
  }
  for (const auto& [e, kv] : state.k) {
    const double d = kv - ref.k.at(e);
    v.k += d * d;
  }
  v.x /= 2.0 * steps.alpha;
  v.f /= 2.0 * steps.beta;
  v.lambda /= 2.0 * steps.gamma;
  v.mu /= 2.0 * steps.delta;
  v.k /= 2.0 * steps.epsilon;
  v.total = v.x + v.f + v.lambda + v.mu + v.k;
  return v;
}

/// Closed-form storage split at frozen prices: fill whole videos in
/// descending order of link-price revenue net of storage cost, ties broken by
/// video id, with a fractional marginal video; non-positive-profit videos get
/// nothing.
inline std::vector<double> water_filling_storage(PeerId helper_id, const AllocationState& state,
                                                 const Overlay& overlay,
                                                 const VideoCatalog& catalog,
                                                 const UserMap& users,
                                                 const HelperMap& helpers) {
  const double mu_j = state.mu.at(helper_id);
  struct Entry {
    double profit;
    VideoId id;
  };
  std::vector<Entry> order;
  for (int m = 1; m <= catalog.size(); ++m) {
    const VideoSpec& v = catalog.spec(m);
    double k_sum = 0.0;
    for (PeerId u : overlay.users_of(helper_id))
      if (users.at(u).video == m) k_sum += state.k.at(Edge{helper_id, u});
    order.push_back({v.rate_kbps * k_sum - mu_j * v.size_kbit, m});
  }
  std::sort(order.begin(), order.end(), [](const Entry& a, const Entry& b) {
    if (a.profit != b.profit) return a.profit > b.profit;
    return a.id < b.id;
  });
  std::vector<double> f(static_cast<std::size_t>(catalog.size()), 0.0);
  double remaining = helpers.at(helper_id).storage_kbit;
  for (const Entry& e : order) {
    if (e.profit <= 0.0 || remaining <= 0.0) break;
    const double size = catalog.spec(e.id).size_kbit;
    const double fill = std::min(1.0, remaining / size);
    f[static_cast<std::size_t>(e.id) - 1] = fill;
    remaining -= fill * size;
  }
  return f;
}

/// Step sizes with all three oscillator gains balanced for the instance's
/// magnitudes: the x/lambda, x/k, and f/mu loops each get a tick gain near
/// `product`, which keeps the Euler map stable and gives every family the
/// same rotation rate (~sqrt(product) radians per tick) so one averaging
/// window fits all of them.
inline StepSizes scaled_step_sizes(const Overlay& overlay, const VideoCatalog& catalog,
                                   const HelperMap& helpers, double product = 0.01,
                                   double reach_ticks = 200.0) {
  double max_rate = 0.0, max_duration = 0.0, max_size = 0.0;
  for (int m = 1; m <= catalog.size(); ++m) {
    max_rate = std::max(max_rate, catalog.spec(m).rate_kbps);
    max_duration = std::max(max_duration, catalog.spec(m).duration_s);
    max_size = std::max(max_size, catalog.spec(m).size_kbit);
  }
  std::size_t max_degree = 1;
  for (const auto& [j, h] : helpers)
    max_degree = std::max(max_degree, overlay.users_of(j).size());
  const double d = static_cast<double>(max_degree);

  StepSizes s;
  s.alpha = std::max(1e-9, max_rate) / reach_ticks;
  s.gamma = product / (s.alpha * d);
  s.epsilon = product / s.alpha;
  // f must also cross its whole [0,1] box within reach_ticks, or the cache
  // ramp dominates the transient. The f/k loop gain this implies,
  // beta*epsilon*rate*degree = product*degree, stays well under the Euler
  // stability bound for any sane degree.
  s.beta = 1.0 / reach_ticks;
  s.delta = product / (s.beta * std::max(1e-9, max_duration * max_size));
  return s;
}

/// Synchronous ticking until every residual family stays below tol. The
/// utility is piecewise linear, so the Euler map has undamped rotation modes:
/// the raw trajectory settles onto an orbit around the saddle whose radius
/// does not shrink with the step sizes. The orbit's time average over whole
/// cycles, however, sits at the orbit's center, so after a warm-up the run
/// proceeds in rounds: accumulate the running mean of the state, test the
/// residuals at that mean each tick, and at the end of a round restart the
/// dynamics from the mean. Each restart contracts the orbit radius by a
/// constant factor, which is what actually lands on the saddle.
struct ConvergenceOptions {
  long max_ticks = 200000;
  double tol = 1e-3;
  int sustain = 50;
  long warmup_ticks = 2000;  // raw ticks before the first averaging round
  long avg_window = 256;     // round length; ~2 / (gain product) fits the orbit
  long avg_min_ticks = 64;   // ticks into a round before its mean is tested
};

struct ConvergenceResult {
  AllocationState state;  // the averaged point the residual test accepted
  long ticks = 0;
  bool converged = false;
};

namespace detail {

inline void accumulate(AllocationState& acc, const AllocationState& s) {
  for (auto& [e, v] : acc.x) v += s.x.at(e);
  for (auto& [j, row] : acc.f) {
    const auto& src = s.f.at(j);
    for (std::size_t i = 0; i < row.size(); ++i) row[i] += src[i];
  }
  for (auto& [j, v] : acc.lambda) v += s.lambda.at(j);
  for (auto& [j, v] : acc.mu) v += s.mu.at(j);
  for (auto& [e, v] : acc.k) v += s.k.at(e);
}

inline AllocationState scaled(const AllocationState& sum, double inv_n) {
  AllocationState out = sum;
  for (auto& [e, v] : out.x) v *= inv_n;
  for (auto& [j, row] : out.f)
    for (double& v : row) v *= inv_n;
  for (auto& [j, v] : out.lambda) v *= inv_n;
  for (auto& [j, v] : out.mu) v *= inv_n;
  for (auto& [e, v] : out.k) v *= inv_n;
  return out;
}

}  // namespace detail

inline ConvergenceResult run_to_convergence(AllocationState state, const Overlay& overlay,
                                            const VideoCatalog& catalog, const UserMap& users,
                                            const HelperMap& helpers, const StepSizes& steps,
                                            const ConvergenceOptions& opt = {}) {
  ConvergenceResult out;
  long t = 0;
  for (; t < std::min(opt.warmup_ticks, opt.max_ticks); ++t)
    state = primal_dual_step(state, overlay, catalog, users, helpers, steps);

  AllocationState best = state;
  double best_res = kkt_residuals(state, overlay, catalog, users, helpers).max();
  int streak = 0;
  while (t < opt.max_ticks) {
    AllocationState sum;
    long n = 0;
    for (long i = 0; i < opt.avg_window && t < opt.max_ticks; ++i, ++t) {
      state = primal_dual_step(state, overlay, catalog, users, helpers, steps);
      if (n == 0)
        sum = state;
      else
        detail::accumulate(sum, state);
      ++n;
      if (n < opt.avg_min_ticks) continue;
      AllocationState mean = detail::scaled(sum, 1.0 / static_cast<double>(n));
      const double res = kkt_residuals(mean, overlay, catalog, users, helpers).max();
      if (res < best_res) {
        best_res = res;
        best = mean;
      }
      if (res < opt.tol) {
        if (++streak >= opt.sustain) {
          out.state = std::move(mean);
          out.ticks = t;
          out.converged = true;
          return out;
        }
      } else {
        streak = 0;
      }
    }
    if (n > 0) state = detail::scaled(sum, 1.0 / static_cast<double>(n));
  }
  out.state = std::move(best);
  out.ticks = t;
  return out;
}

}  // namespace helpersim
