// Experiment configuration and the runners behind the command-line tool.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tpsim/engine.h"
#include "tpsim/metrics.h"
#include "tpsim/policy.h"
#include "tpsim/profile.h"
#include "tpsim/trace.h"

namespace tpsim {

enum class PolicyKind { kAdaptive, kStatic, kSplit, kOracle };

const char* to_string(PolicyKind k);
PolicyKind parse_policy_kind(const std::string& s);

struct PolicySpec {
  PolicyKind kind = PolicyKind::kAdaptive;
  std::string name;  // optional display name
  int tp_prefill = 1;
  int tp_decode = 1;
  bool disaggregated = false;
  int prefill_gpus = -1;  // -1: pick the best split by simulation
  bool weighted = true;

  bool operator==(const PolicySpec&) const = default;
};

struct TraceSource {
  std::optional<std::string> file;  // JSON-lines trace
  std::optional<SyntheticSpec> synthetic;

  bool operator==(const TraceSource&) const = default;
};

struct ExperimentConfig {
  std::string profile = "builtin:a100-like";
  int pool_size = 8;
  std::vector<SloTier> tiers;
  std::optional<DeriveSlosOptions> derive;  // used when `tiers` is empty
  TraceSource trace;
  PolicySpec policy;
  std::vector<PolicySpec> baselines;
  double headroom = 1.0;
  double epsilon = 0.01;
  double window_s = 1.0;
  SwitchMode switch_mode = SwitchMode::kWarm;
  std::uint64_t seed = 1;
  bool kv_accounting = false;
  double planning_delay_s = 0.0;
  double drain_limit_s = 120.0;
  int background_batch_cap = 64;
  std::optional<CostModelParams> migration;  // overrides the profile's
  std::string output_dir = "out";

  bool operator==(const ExperimentConfig&) const = default;
};

/// Relative paths inside the document resolve against `base_dir`.
ExperimentConfig parse_config(const std::string& text,
                              const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg);

/// Everything a simulation needs, resolved from a config.
struct Workload {
  PerfProfile profile;
  std::vector<SloTier> tiers;
  std::vector<Request> trace;
  double duration_s = 0.0;
  std::vector<TierDemand> initial_demand;
  std::vector<TierDemand> average_demand;
  CostModelParams migration;
};

Workload prepare(const ExperimentConfig& cfg);

struct SimOutcome {
  std::string name;
  RunResult run;
  MetricsReport report;
};

EngineConfig engine_config(const ExperimentConfig& cfg, const Workload& w);
SimOutcome simulate(const ExperimentConfig& cfg, const Workload& w, const PolicySpec& spec);
/// Main policy followed by the baselines.
std::vector<SimOutcome> simulate_all(const ExperimentConfig& cfg);

enum class SweepParam { kRpsScale, kSloScale, kWindow, kPoolSize };

SweepParam parse_sweep_param(const std::string& s);
const char* to_string(SweepParam p);
/// Copy of `cfg` with one parameter changed.
ExperimentConfig with_param(const ExperimentConfig& cfg, SweepParam p, double value);

struct SweepPoint {
  double value = 0.0;
  std::vector<ComparisonRow> rows;  // policy rows, ratios vs the first policy
};

/// Points run concurrently; results are ordered by value.
std::vector<SweepPoint> sweep(const ExperimentConfig& cfg, SweepParam p,
                              const std::vector<double>& values);

void write_records(std::ostream& out, std::span<const CompletionRecord> records);
void write_windows(std::ostream& out, std::span<const WindowLog> windows);
std::string config_to_json(const ClusterConfig& cfg);
std::string plan_to_json(const MigrationPlan& plan);

}  // namespace tpsim
