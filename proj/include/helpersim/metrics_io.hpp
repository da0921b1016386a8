#pragma once

// Run artifacts on disk. metrics.csv holds the scalar time series, helpers.csv
// the per-helper detail in long form (one row per live helper per sample);
// both carry a versioned header plus the seed and digests that identify the
// run. Doubles are written shortest-round-trip, so reading a file back yields
// bit-identical values.

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "helpersim/simcore.hpp"
#include "helpersim/version.hpp"

namespace helpersim {

struct RunMeta {
  std::uint64_t seed = 0;
  std::uint64_t scenario_digest = 0;
  std::uint64_t population_digest = 0;
  std::string version{kVersion};
};

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error(where + ": bad number '" + std::string(s) + "'");
  return v;
}

inline long parse_long(std::string_view s, const std::string& where) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw std::runtime_error(where + ": bad integer '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

inline void write_meta_line(std::ofstream& out, const RunMeta& meta) {
  out << "# seed=" << meta.seed << " scenario=" << hex16(meta.scenario_digest)
      << " population=" << hex16(meta.population_digest) << " version=" << meta.version
      << "\n";
}

inline RunMeta parse_meta_line(const std::string& line, const std::string& where) {
  RunMeta meta;
  meta.version.clear();
  std::size_t pos = 1;  // skip '#'
  auto grab = [&](const char* key) {
    const std::string needle = std::string(key) + "=";
    const std::size_t at = line.find(needle, pos);
    if (at == std::string::npos)
      throw std::runtime_error(where + ": metadata line lacks '" + key + "'");
    const std::size_t start = at + needle.size();
    const std::size_t end = line.find(' ', start);
    return line.substr(start, end == std::string::npos ? end : end - start);
  };
  meta.seed = std::stoull(grab("seed"));
  meta.scenario_digest = std::stoull(grab("scenario"), nullptr, 16);
  meta.population_digest = std::stoull(grab("population"), nullptr, 16);
  meta.version = grab("version");
  return meta;
}

}  // namespace detail

inline constexpr std::string_view kMetricsHeader = "# helpersim-metrics v1";
inline constexpr std::string_view kHelpersHeader = "# helpersim-helpers v1";
inline constexpr std::string_view kStationaryHeader = "# helpersim-stationary v1";

inline void write_metrics_files(const std::filesystem::path& dir, const MetricsLog& log,
                                const RunMeta& meta, int video_count) {
  {
    std::ofstream out(dir / "metrics.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
    out << kMetricsHeader << "\n";
    detail::write_meta_line(out, meta);
    out << "t_s,server_load_kbps,intrinsic_deficit_kbps,total_contribution_kbps,"
           "users,helpers,edges,chokes,aborts,server_cum_kbit,credited_cum_kbit,"
           "wasted_cum_kbit\n";
    for (const MetricsRow& r : log.rows) {
      out << detail::fmt(r.t_s) << ',' << detail::fmt(r.server_load_kbps) << ','
          << detail::fmt(r.intrinsic_deficit_kbps) << ','
          << detail::fmt(r.total_contribution_kbps) << ',' << r.user_count << ','
          << r.helper_count << ',' << r.edge_count << ',' << r.choke_count << ','
          << r.abort_count << ',' << detail::fmt(r.server_cum_kbit) << ','
          << detail::fmt(r.credited_cum_kbit) << ',' << detail::fmt(r.wasted_cum_kbit)
          << "\n";
    }
  }
  {
    std::ofstream out(dir / "helpers.csv");
    if (!out) throw std::runtime_error("cannot write " + (dir / "helpers.csv").string());
    out << kHelpersHeader << "\n";
    detail::write_meta_line(out, meta);
    out << "t_s,helper,upload_kbps,lambda,mu";
    for (int m = 1; m <= video_count; ++m) out << ",f_" << m;
    out << "\n";
    for (const MetricsRow& r : log.rows) {
      for (const auto& [hid, upload] : r.helper_upload_kbps) {
        out << detail::fmt(r.t_s) << ',' << hid << ',' << detail::fmt(upload) << ','
            << detail::fmt(r.helper_lambda.at(hid)) << ','
            << detail::fmt(r.helper_mu.at(hid));
        for (double f : r.helper_f.at(hid)) out << ',' << detail::fmt(f);
        out << "\n";
      }
    }
  }
}

struct ReadRun {
  MetricsLog log;
  RunMeta meta;
  int video_count = 0;
};

inline ReadRun read_metrics_files(const std::filesystem::path& dir) {
  ReadRun run;
  std::map<double, std::size_t> row_at;
  {
    const auto path = dir / "metrics.csv";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    const std::string where = path.string();
    std::string line;
    if (!std::getline(in, line) || line != kMetricsHeader)
      throw std::runtime_error(where + ": not a helpersim metrics file (v1)");
    if (!std::getline(in, line)) throw std::runtime_error(where + ": missing metadata");
    run.meta = detail::parse_meta_line(line, where);
    run.log.seed = run.meta.seed;
    if (!std::getline(in, line)) throw std::runtime_error(where + ": missing column header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = detail::split(line);
      if (cells.size() != 12) throw std::runtime_error(where + ": bad row '" + line + "'");
      MetricsRow r;
      r.t_s = detail::parse_double(cells[0], where);
      r.server_load_kbps = detail::parse_double(cells[1], where);
      r.intrinsic_deficit_kbps = detail::parse_double(cells[2], where);
      r.total_contribution_kbps = detail::parse_double(cells[3], where);
      r.user_count = static_cast<int>(detail::parse_long(cells[4], where));
      r.helper_count = static_cast<int>(detail::parse_long(cells[5], where));
      r.edge_count = static_cast<int>(detail::parse_long(cells[6], where));
      r.choke_count = detail::parse_long(cells[7], where);
      r.abort_count = detail::parse_long(cells[8], where);
      r.server_cum_kbit = detail::parse_double(cells[9], where);
      r.credited_cum_kbit = detail::parse_double(cells[10], where);
      r.wasted_cum_kbit = detail::parse_double(cells[11], where);
      row_at[r.t_s] = run.log.rows.size();
      run.log.rows.push_back(std::move(r));
    }
  }
  {
    const auto path = dir / "helpers.csv";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    const std::string where = path.string();
    std::string line;
    if (!std::getline(in, line) || line != kHelpersHeader)
      throw std::runtime_error(where + ": not a helpersim helpers file (v1)");
    if (!std::getline(in, line)) throw std::runtime_error(where + ": missing metadata");
    const RunMeta meta2 = detail::parse_meta_line(line, where);
    if (meta2.seed != run.meta.seed ||
        meta2.population_digest != run.meta.population_digest)
      throw std::runtime_error(where + ": metadata disagrees with metrics.csv");
    if (!std::getline(in, line)) throw std::runtime_error(where + ": missing column header");
    run.video_count = static_cast<int>(detail::split(line).size()) - 5;
    if (run.video_count < 0) throw std::runtime_error(where + ": malformed column header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto cells = detail::split(line);
      if (static_cast<int>(cells.size()) != 5 + run.video_count)
        throw std::runtime_error(where + ": bad row '" + line + "'");
      const double t = detail::parse_double(cells[0], where);
      auto it = row_at.find(t);
      if (it == row_at.end())
        throw std::runtime_error(where + ": helper row at unknown sample time " +
                                 std::string(cells[0]));
      MetricsRow& r = run.log.rows[it->second];
      const PeerId hid = static_cast<PeerId>(detail::parse_long(cells[1], where));
      r.helper_upload_kbps[hid] = detail::parse_double(cells[2], where);
      r.helper_lambda[hid] = detail::parse_double(cells[3], where);
      r.helper_mu[hid] = detail::parse_double(cells[4], where);
      auto& f = r.helper_f[hid];
      f.clear();
      for (int m = 0; m < run.video_count; ++m)
        f.push_back(detail::parse_double(cells[static_cast<std::size_t>(5 + m)], where));
    }
  }
  return run;
}

struct RunSummary {
  double tail_fraction = 0.2;
  double tail_start_s = 0.0;
  double horizon_s = 0.0;
  double tail_mean_load_kbps = 0.0;
  double final_load_kbps = 0.0;
  double tail_mean_deficit_kbps = 0.0;
  double gap_pct = 0.0;  // (tail load - tail deficit) / tail deficit * 100
  long chokes = 0;
  long aborts = 0;
  int final_users = 0;
  int final_helpers = 0;
  int final_edges = 0;
};

inline RunSummary summarize(const MetricsLog& log, double tail_fraction = 0.2) {
  if (log.rows.empty()) throw std::invalid_argument("summarize: empty log");
  RunSummary s;
  s.tail_fraction = tail_fraction;
  s.horizon_s = log.rows.back().t_s;
  s.tail_start_s = s.horizon_s * (1.0 - tail_fraction);
  double load = 0.0, deficit = 0.0;
  long n = 0;
  for (const MetricsRow& r : log.rows) {
    if (r.t_s < s.tail_start_s) continue;
    load += r.server_load_kbps;
    deficit += r.intrinsic_deficit_kbps;
    ++n;
  }
  s.tail_mean_load_kbps = load / static_cast<double>(n);
  s.tail_mean_deficit_kbps = deficit / static_cast<double>(n);
  const MetricsRow& last = log.rows.back();
  s.final_load_kbps = last.server_load_kbps;
  s.gap_pct = s.tail_mean_deficit_kbps > 0.0
                  ? (s.tail_mean_load_kbps - s.tail_mean_deficit_kbps) /
                        s.tail_mean_deficit_kbps * 100.0
                  : 0.0;
  s.chokes = last.choke_count;
  s.aborts = last.abort_count;
  s.final_users = last.user_count;
  s.final_helpers = last.helper_count;
  s.final_edges = last.edge_count;
  return s;
}

inline void write_summary_file(const std::filesystem::path& dir, const RunSummary& s,
                               const RunMeta& meta) {
  std::ofstream out(dir / "summary.txt");
  if (!out) throw std::runtime_error("cannot write " + (dir / "summary.txt").string());
  out << "helpersim run summary\n"
      << "version: " << meta.version << "\n"
      << "seed: " << meta.seed << "\n"
      << "scenario digest: " << detail::hex16(meta.scenario_digest) << "\n"
      << "population digest: " << detail::hex16(meta.population_digest) << "\n"
      << "horizon_s: " << detail::fmt(s.horizon_s) << "\n"
      << "tail window: [" << detail::fmt(s.tail_start_s) << ", " << detail::fmt(s.horizon_s)
      << "] (fraction " << detail::fmt(s.tail_fraction) << ")\n"
      << "tail mean server load (kbps): " << detail::fmt(s.tail_mean_load_kbps) << "\n"
      << "final server load (kbps): " << detail::fmt(s.final_load_kbps) << "\n"
      << "tail mean intrinsic deficit (kbps): " << detail::fmt(s.tail_mean_deficit_kbps)
      << "\n"
      << "gap to deficit (%): " << detail::fmt(s.gap_pct) << "\n"
      << "chokes: " << s.chokes << " (aborted " << s.aborts << ")\n"
      << "final population: " << s.final_users << " users, " << s.final_helpers
      << " helpers, " << s.final_edges << " edges\n";
}

struct Comparison {
  double tail_fraction = 0.2;
  double mean_a_kbps = 0.0;
  double mean_b_kbps = 0.0;
  double reduction_pct = 0.0;  // (a - b) / a * 100
};

inline Comparison compare_logs(const MetricsLog& a, const MetricsLog& b,
                               double tail_fraction = 0.2) {
  Comparison c;
  c.tail_fraction = tail_fraction;
  c.mean_a_kbps = summarize(a, tail_fraction).tail_mean_load_kbps;
  c.mean_b_kbps = summarize(b, tail_fraction).tail_mean_load_kbps;
  c.reduction_pct =
      c.mean_a_kbps != 0.0 ? (c.mean_a_kbps - c.mean_b_kbps) / c.mean_a_kbps * 100.0 : 0.0;
  return c;
}

}  // namespace helpersim
