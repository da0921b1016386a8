#pragma once

// Peer population synthesis from category tables. The default mode rounds
// fraction*count to exact per-category counts (largest remainder) so the same
// table always yields the same mix; which peer lands in which category is
// still shuffled so independent tables do not end up correlated by id order.

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "helpersim/model.hpp"
#include "helpersim/rng.hpp"
#include "helpersim/simcore.hpp"

namespace helpersim {

/// Per-category counts for `total` items: floors first, then one extra seat
/// per largest fractional remainder, ties to the lower index.
inline std::vector<int> largest_remainder_counts(const std::vector<double>& fractions,
                                                 int total) {
  std::vector<int> counts(fractions.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainder;
  int assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double share = fractions[i] * total;
    // The nudge keeps shares like 6.999999999 from losing their seat.
    counts[i] = static_cast<int>(std::floor(share + 1e-9));
    assigned += counts[i];
    remainder.push_back({share - counts[i], i});
  }
  if (assigned > total)
    throw std::logic_error("largest_remainder_counts: fractions exceed one");
  std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int k = 0; k < total - assigned; ++k)
    ++counts[remainder[static_cast<std::size_t>(k)].second];
  return counts;
}

struct PopulationSpec {
  std::vector<double> video_fraction;  // per catalog entry, sums to 1
  int user_count = 0;
  int helper_count = 0;
  CategoryTable upload_kbps;
  CategoryTable storage_kbit;
  int user_cap_min = 3;
  int user_cap_max = 10;
  int helper_cap_min = 3;
  int helper_cap_max = 10;
  std::vector<double> period_set = {1.0};
  bool sampled = false;  // i.i.d. categorical draws instead of exact counts
};

struct Population {
  UserMap users;
  HelperMap helpers;
};

namespace detail {

/// One category index per peer. Deterministic mode realizes the exact
/// largest-remainder counts, then shuffles the assignment order.
inline std::vector<std::size_t> assign_categories(const std::vector<double>& fractions,
                                                  int count, bool sampled,
                                                  std::mt19937_64& rng) {
  std::vector<std::size_t> idx;
  idx.reserve(static_cast<std::size_t>(count));
  if (sampled) {
    for (int i = 0; i < count; ++i) idx.push_back(draw_categorical(rng, fractions));
    return idx;
  }
  const std::vector<int> counts = largest_remainder_counts(fractions, count);
  for (std::size_t c = 0; c < counts.size(); ++c)
    idx.insert(idx.end(), static_cast<std::size_t>(counts[c]), c);
  // Fisher-Yates with our own integer draw; std::shuffle's sequence is
  // implementation-defined and would break cross-build determinism.
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1],
              idx[static_cast<std::size_t>(draw_uniform_int(rng, 0, static_cast<long>(i) - 1))]);
  return idx;
}

}  // namespace detail

/// Helpers get ids 1..J, users J+1..J+I. Candidate sets are the full
/// opposite-role population. Caps and periods are drawn per peer from the
/// configured ranges in both modes.
inline Population sample_population(const VideoCatalog& catalog, const PopulationSpec& spec,
                                    std::mt19937_64& rng) {
  if (static_cast<int>(spec.video_fraction.size()) != catalog.size())
    throw std::invalid_argument("population: one video fraction per catalog entry required");
  if (spec.upload_kbps.value.size() != spec.upload_kbps.fraction.size() ||
      spec.storage_kbit.value.size() != spec.storage_kbit.fraction.size())
    throw std::invalid_argument("population: category values and fractions differ in length");
  if (spec.period_set.empty())
    throw std::invalid_argument("population: update period set is empty");

  const auto videos =
      detail::assign_categories(spec.video_fraction, spec.user_count, spec.sampled, rng);
  const auto uploads =
      detail::assign_categories(spec.upload_kbps.fraction, spec.helper_count, spec.sampled, rng);
  const auto storages = detail::assign_categories(spec.storage_kbit.fraction, spec.helper_count,
                                                  spec.sampled, rng);

  auto pick_period = [&]() {
    return spec.period_set[static_cast<std::size_t>(
        draw_uniform_int(rng, 0, static_cast<long>(spec.period_set.size()) - 1))];
  };

  Population pop;
  for (int i = 0; i < spec.helper_count; ++i) {
    HelperNode h;
    h.id = i + 1;
    h.upload_kbps = spec.upload_kbps.value[uploads[static_cast<std::size_t>(i)]];
    h.storage_kbit = spec.storage_kbit.value[storages[static_cast<std::size_t>(i)]];
    h.max_neighbors =
        static_cast<int>(draw_uniform_int(rng, spec.helper_cap_min, spec.helper_cap_max));
    h.update_period_s = pick_period();
    pop.helpers[h.id] = h;
  }
  for (int i = 0; i < spec.user_count; ++i) {
    UserNode u;
    u.id = spec.helper_count + i + 1;
    u.video = static_cast<VideoId>(videos[static_cast<std::size_t>(i)]) + 1;
    u.max_neighbors =
        static_cast<int>(draw_uniform_int(rng, spec.user_cap_min, spec.user_cap_max));
    u.update_period_s = pick_period();
    pop.users[u.id] = u;
  }
  for (auto& [uid, u] : pop.users)
    for (const auto& [hid, h] : pop.helpers) u.candidates.insert(hid);
  for (auto& [hid, h] : pop.helpers)
    for (const auto& [uid, u] : pop.users) h.candidates.insert(uid);
  return pop;
}

}  // namespace helpersim
