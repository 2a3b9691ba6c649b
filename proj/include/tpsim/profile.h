// Offline latency tables and the SLO-constrained throughput envelopes derived from them.
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tpsim/cost_params.h"
#include "tpsim/trace.h"

namespace tpsim {

enum class Stage { kPrefill, kDecode };

std::string_view to_string(Stage s);
Stage parse_stage(std::string_view s);

struct ProfileEntry {
  Stage stage = Stage::kPrefill;
  int tp = 1;
  int batch = 1;
  int seq_len = 1;
  double latency_ms = 0.0;
};

/// One (stage, tp) table over a rectangular batch x seq_len grid.
struct LatencyGrid {
  std::vector<int> batches;  // ascending
  std::vector<int> seqs;     // ascending
  std::vector<double> latency_ms;  // row-major, batch-major

  double at(std::size_t bi, std::size_t si) const { return latency_ms[bi * seqs.size() + si]; }
};

class PerfProfile {
 public:
  std::string gpu_type;
  std::string model_name;
  std::vector<int> tp_levels;  // ascending
  double weight_full_copy_gb = 0.0;
  double gpu_memory_gb = 0.0;
  double kv_bytes_per_token_per_head = 0.0;
  int total_kv_heads = 0;
  CostModelParams migration;

  PerfProfile() = default;
  /// Builds the grids from flat entries and checks every invariant.
  PerfProfile(std::string gpu, std::string model, std::vector<ProfileEntry> entries);

  /// Latency in ms; bilinear in (log batch, log seq_len) between grid points,
  /// clamped at the grid edges. `extrapolated` is set when clamping happened.
  double lookup_latency(Stage stage, int tp, double batch, double seq_len,
                        bool* extrapolated = nullptr) const;

  const LatencyGrid& grid(Stage stage, int tp) const;
  bool supports_tp(int tp) const;
  int max_batch(Stage stage, int tp) const;
  std::vector<ProfileEntry> entries() const;

  /// KV footprint of `tokens` tokens across all heads, in bytes.
  double kv_bytes(double tokens) const { return tokens * total_kv_heads * kv_bytes_per_token_per_head; }

  /// Throws ValidationError on any broken invariant.
  void validate() const;

 private:
  std::map<std::pair<Stage, int>, LatencyGrid> grids_;
};

PerfProfile parse_profile(std::istream& in);
/// Path to a JSON profile, or "builtin:<name>".
PerfProfile load_profile(const std::string& path);
void write_profile(std::ostream& out, const PerfProfile& profile);

/// Synthetic profiles shipped with the library: "a100-like", "h100-like".
PerfProfile builtin_profile(std::string_view name);
std::vector<std::string> builtin_profile_names();

struct ThroughputEnvelope {
  int tier_id = 0;
  int tp = 1;
  double thp = 0.0;  // prefill requests/s per group
  double thd = 0.0;  // decode completions/s per group
  int prefill_batch_cap = 0;
  int decode_batch_cap = 0;

  bool operator==(const ThroughputEnvelope&) const = default;
};

/// Largest batch whose latency fits the target, and the rate it sustains.
ThroughputEnvelope derive_envelope(const PerfProfile& profile, const SloTier& tier, int tp,
                                   double avg_prompt_len, double avg_output_len,
                                   double headroom = 1.0);

struct DeriveSlosOptions {
  int tp_min = 1;
  double avg_prompt_len = 1024.0;
  double avg_output_len = 128.0;
  double strict_batch = 1.0;
  double relaxed_batch = 128.0;
  double scale = 1.0;

  bool operator==(const DeriveSlosOptions&) const = default;
};

/// Strict and relaxed tiers (ids 0 and 1) from profiled latencies at two batch sizes.
std::pair<SloTier, SloTier> derive_slos(const PerfProfile& profile, const DeriveSlosOptions& opt);

}  // namespace tpsim
