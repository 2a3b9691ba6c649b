// Goodput timelines, SLO attainment and latency percentiles from completion records.
#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpsim/engine.h"
#include "tpsim/trace.h"

namespace tpsim {

/// Nearest-rank percentile, q in (0, 100]. nullopt for an empty series.
std::optional<double> percentile(std::vector<double> series, double q);

struct LatencySummary {
  std::optional<double> p50, p90, p99;
};

LatencySummary summarize(const std::vector<double>& series);

struct TierStats {
  int tier_id = 0;
  std::string name;
  bool background = false;
  std::size_t completed = 0;
  std::size_t slo_met = 0;
  double goodput_rps = 0.0;
  double attainment = 0.0;  // slo_met / completed
  LatencySummary ttft_s, tpot_s;
};

struct MetricsReport {
  std::string name;
  double bucket_s = 1.0;
  double duration_s = 0.0;
  // One value per bucket, by completion time.
  std::vector<double> goodput_series;
  std::vector<double> throughput_series;
  std::vector<double> background_series;
  double goodput_rps = 0.0;
  double throughput_rps = 0.0;
  double attainment = 0.0;
  std::vector<TierStats> tiers;
  int migrations = 0;
  double pause_s = 0.0;
  int preemptions = 0;
};

/// A record counts toward goodput iff its TTFT and TPOT meet the targets of
/// its tier in `tiers`; background records only count as throughput.
/// `duration_s` <= 0 uses the last completion rounded up to a bucket.
MetricsReport goodput(std::span<const CompletionRecord> records, std::span<const SloTier> tiers,
                      double bucket_s, double duration_s = 0.0);

/// Copies migration, pause and preemption counts from a run.
void attach_run_stats(MetricsReport& report, const RunResult& run);

struct ComparisonRow {
  std::string name;
  double goodput_rps = 0.0;
  double throughput_rps = 0.0;
  double attainment = 0.0;
  std::optional<double> ttft_p99_s, tpot_p99_s;  // worst tier
  double goodput_ratio = 0.0;                    // vs baseline
};

/// Rows in input order; ratios against reports[baseline]. Empty input throws.
std::vector<ComparisonRow> compare(std::span<const MetricsReport> reports, std::size_t baseline = 0);

/// policy,bucket_start_s,goodput_rps,throughput_rps,background_rps
void write_goodput_csv(std::ostream& out, std::span<const MetricsReport> reports);
void write_comparison_csv(std::ostream& out, std::span<const ComparisonRow> rows);
std::string summary_json(const MetricsReport& report);

}  // namespace tpsim
