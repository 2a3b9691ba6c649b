// Discrete-event simulation of a GPU pool serving tiered-SLO requests.
#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "tpsim/migration.h"
#include "tpsim/policy.h"
#include "tpsim/profile.h"
#include "tpsim/trace.h"

namespace tpsim {

/// Rate/burst bucket; one admission costs one token.
struct TokenBucket {
  double rate = 0.0;
  double burst = 0.0;
  double level = 0.0;
  double last = 0.0;

  static TokenBucket full(double rate, double burst, double now) {
    return {rate, burst, burst, now};
  }
  void refill(double now);
  /// Changes rate and burst at `now`, keeping the accrued level (clamped).
  void reset_rate(double rate, double burst, double now);
  bool try_take(double now);
};

/// What the dispatcher needs to know about a group.
struct DispatchGroup {
  int tier_id = 0;
  GroupStage stage = GroupStage::kPrefill;
  int load = 0;  // queued plus in-flight prefill requests
  bool accepting = true;
  std::vector<std::pair<int, TokenBucket>> buckets;  // per tier

  TokenBucket* bucket_for(int tier);
};

struct Placement {
  int group = -1;  // index into the group list; -1 parks the request
  bool feasible = false;
};

/// Feasible requests go to the least-loaded group of their tier with bucket
/// tokens left; everything else is spread round-robin.
class Dispatcher {
 public:
  Placement dispatch(const Request& req, bool background, double now,
                     std::span<DispatchGroup* const> groups, bool isolate_tiers);

 private:
  std::size_t rr_spill_ = 0;
  std::size_t rr_background_ = 0;
  std::vector<int> scratch_;
};

struct CompletionRecord {
  std::int64_t request_id = 0;
  int tier_id = 0;
  double arrival = 0.0;
  double first_token_time = 0.0;
  double completion_time = 0.0;
  int prompt_len = 0;
  int output_len = 1;
  bool feasible = false;
  bool slo_met = false;

  double ttft() const { return first_token_time - arrival; }
  double tpot() const {
    return (completion_time - first_token_time) / std::max(1, output_len - 1);
  }
  bool operator==(const CompletionRecord&) const = default;
};

struct EngineConfig {
  int pool_size = 8;
  double window_s = 1.0;
  SwitchMode switch_mode = SwitchMode::kWarm;
  std::uint64_t seed = 1;
  bool kv_accounting = false;
  double planning_delay_s = 0.0;
  // Ticks stop this long after the last arrival even if work remains.
  double drain_limit_s = 120.0;
  double headroom = 1.0;
  int background_batch_cap = 64;
  // Demand used to plan the first window.
  std::vector<TierDemand> initial_demand;
  CostModelParams migration;

  void validate() const;
};

struct WindowLog {
  int window_index = 0;
  double start = 0.0;
  double end = 0.0;
  std::vector<TierDemand> demand;  // observed over [start, end)
  ClusterConfig config;            // chosen at `end` for the next window
  int groups_changed = 0;
  double pause_ms = 0.0;  // longest pause among changed groups
  double moved_bytes = 0.0;
};

/// Feasible admissions per prefill-capable group and window.
struct BucketAudit {
  int group_uid = 0;
  int window_index = 0;
  int admitted = 0;
  double rate = 0.0;
  double burst = 0.0;
};

struct RunResult {
  std::vector<CompletionRecord> records;  // in completion order
  std::vector<WindowLog> windows;
  std::vector<BucketAudit> audits;
  int migrations = 0;  // groups created by reconfiguration
  double total_pause_s = 0.0;
  double moved_bytes = 0.0;
  int preemptions = 0;
  std::size_t arrived = 0;
  std::size_t completed = 0;
  std::size_t in_flight = 0;
  std::size_t parked = 0;
  double end_time = 0.0;
};

RunResult run(std::span<const Request> trace, std::span<const SloTier> tiers,
              const PerfProfile& profile, Policy& policy, const EngineConfig& config);

}  // namespace tpsim
