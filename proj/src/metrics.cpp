#include "tpsim/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace tpsim {

std::optional<double> percentile(std::vector<double> series, double q) {
  if (series.empty()) return std::nullopt;
  if (!(q > 0.0) || q > 100.0) throw std::invalid_argument("percentile: q must be in (0, 100]");
  std::sort(series.begin(), series.end());
  const double n = static_cast<double>(series.size());
  auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, series.size());
  return series[rank - 1];
}

LatencySummary summarize(const std::vector<double>& series) {
  return {percentile(series, 50), percentile(series, 90), percentile(series, 99)};
}

MetricsReport goodput(std::span<const CompletionRecord> records, std::span<const SloTier> tiers,
                      double bucket_s, double duration_s) {
  if (!(bucket_s > 0.0)) throw std::invalid_argument("goodput: bucket must be > 0");
  MetricsReport rep;
  rep.bucket_s = bucket_s;

  double last = 0.0;
  for (const CompletionRecord& r : records) last = std::max(last, r.completion_time);
  rep.duration_s = duration_s > 0.0 ? duration_s : std::ceil(last / bucket_s) * bucket_s;
  const auto buckets = static_cast<std::size_t>(
      std::ceil(std::max(rep.duration_s, last + 1e-12) / bucket_s));
  rep.goodput_series.assign(buckets, 0.0);
  rep.throughput_series.assign(buckets, 0.0);
  rep.background_series.assign(buckets, 0.0);

  std::vector<TierStats> stats(tiers.size());
  std::vector<std::vector<double>> ttft(tiers.size()), tpot(tiers.size());
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    stats[i].tier_id = tiers[i].id;
    stats[i].name = tiers[i].name;
    stats[i].background = tiers[i].background;
  }

  std::size_t met = 0, foreground = 0;
  for (const CompletionRecord& r : records) {
    const auto idx = tier_index(tiers, r.tier_id);
    if (!idx) continue;
    const SloTier& tier = tiers[*idx];
    const auto b = std::min(buckets - 1, static_cast<std::size_t>(r.completion_time / bucket_s));
    rep.throughput_series[b] += 1.0;
    TierStats& s = stats[*idx];
    ++s.completed;
    ttft[*idx].push_back(r.ttft());
    if (r.output_len > 1) tpot[*idx].push_back(r.tpot());
    if (tier.background) {
      rep.background_series[b] += 1.0;
      continue;
    }
    ++foreground;
    if (tier.met_by(r.ttft(), r.tpot())) {
      ++s.slo_met;
      ++met;
      rep.goodput_series[b] += 1.0;
    }
  }
  for (std::size_t b = 0; b < buckets; ++b) {
    rep.goodput_series[b] /= bucket_s;
    rep.throughput_series[b] /= bucket_s;
    rep.background_series[b] /= bucket_s;
  }

  const double dur = rep.duration_s > 0.0 ? rep.duration_s : bucket_s;
  rep.goodput_rps = met / dur;
  rep.throughput_rps = static_cast<double>(records.size()) / dur;
  rep.attainment = foreground ? static_cast<double>(met) / foreground : 0.0;
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    stats[i].goodput_rps = stats[i].slo_met / dur;
    stats[i].attainment =
        stats[i].completed ? static_cast<double>(stats[i].slo_met) / stats[i].completed : 0.0;
    stats[i].ttft_s = summarize(ttft[i]);
    stats[i].tpot_s = summarize(tpot[i]);
  }
  rep.tiers = std::move(stats);
  return rep;
}

void attach_run_stats(MetricsReport& report, const RunResult& run) {
  report.migrations = run.migrations;
  report.pause_s = run.total_pause_s;
  report.preemptions = run.preemptions;
}

std::vector<ComparisonRow> compare(std::span<const MetricsReport> reports, std::size_t baseline) {
  if (reports.empty()) throw std::invalid_argument("compare: no reports");
  if (baseline >= reports.size()) throw std::invalid_argument("compare: baseline out of range");
  const double base = reports[baseline].goodput_rps;
  std::vector<ComparisonRow> rows;
  for (const MetricsReport& r : reports) {
    ComparisonRow row;
    row.name = r.name;
    row.goodput_rps = r.goodput_rps;
    row.throughput_rps = r.throughput_rps;
    row.attainment = r.attainment;
    for (const TierStats& t : r.tiers) {
      if (t.background) continue;
      if (t.ttft_s.p99 && (!row.ttft_p99_s || *t.ttft_s.p99 > *row.ttft_p99_s)) {
        row.ttft_p99_s = t.ttft_s.p99;
      }
      if (t.tpot_s.p99 && (!row.tpot_p99_s || *t.tpot_s.p99 > *row.tpot_p99_s)) {
        row.tpot_p99_s = t.tpot_s.p99;
      }
    }
    if (base > 0.0) {
      row.goodput_ratio = r.goodput_rps / base;
    } else {
      row.goodput_ratio = r.goodput_rps > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
    }
    rows.push_back(row);
  }
  return rows;
}

void write_goodput_csv(std::ostream& out, std::span<const MetricsReport> reports) {
  out << "policy,bucket_start_s,goodput_rps,throughput_rps,background_rps\n";
  for (const MetricsReport& r : reports) {
    for (std::size_t b = 0; b < r.goodput_series.size(); ++b) {
      out << r.name << ',' << b * r.bucket_s << ',' << r.goodput_series[b] << ','
          << r.throughput_series[b] << ',' << r.background_series[b] << '\n';
    }
  }
}

namespace {

std::string opt_str(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream s;
  s << *v;
  return s.str();
}

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

void write_comparison_csv(std::ostream& out, std::span<const ComparisonRow> rows) {
  out << "policy,goodput_rps,throughput_rps,attainment,ttft_p99_s,tpot_p99_s,goodput_ratio\n";
  for (const ComparisonRow& r : rows) {
    out << r.name << ',' << r.goodput_rps << ',' << r.throughput_rps << ',' << r.attainment << ','
        << opt_str(r.ttft_p99_s) << ',' << opt_str(r.tpot_p99_s) << ',' << r.goodput_ratio << '\n';
  }
}

std::string summary_json(const MetricsReport& r) {
  using nlohmann::json;
  json tiers = json::array();
  for (const TierStats& t : r.tiers) {
    auto lat = [](const LatencySummary& s) {
      return json{{"p50", opt_json(s.p50)}, {"p90", opt_json(s.p90)}, {"p99", opt_json(s.p99)}};
    };
    tiers.push_back({{"tier", t.tier_id},
                     {"name", t.name},
                     {"background", t.background},
                     {"completed", t.completed},
                     {"slo_met", t.slo_met},
                     {"goodput_rps", t.goodput_rps},
                     {"attainment", t.attainment},
                     {"ttft_s", lat(t.ttft_s)},
                     {"tpot_s", lat(t.tpot_s)}});
  }
  json doc = {{"policy", r.name},
              {"duration_s", r.duration_s},
              {"bucket_s", r.bucket_s},
              {"goodput_rps", r.goodput_rps},
              {"throughput_rps", r.throughput_rps},
              {"attainment", r.attainment},
              {"migrations", r.migrations},
              {"pause_s", r.pause_s},
              {"preemptions", r.preemptions},
              {"tiers", tiers}};
  return doc.dump(2);
}

}  // namespace tpsim
