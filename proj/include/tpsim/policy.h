// Goodput-efficiency scoring, weighted greedy GPU assignment, and baseline policies.
#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpsim/profile.h"
#include "tpsim/trace.h"

namespace tpsim {

enum class GroupStage { kPrefill, kDecode, kBackground, kUnified };

const char* to_string(GroupStage s);
GroupStage parse_group_stage(const std::string& s);

/// Group tier for static policies that serve every tier from the same groups.
inline constexpr int kSharedTier = -1;

struct GpuGroup {
  std::vector<int> gpu_ids;
  int tier_id = 0;
  GroupStage stage = GroupStage::kPrefill;
  int tp = 1;

  bool can_prefill() const { return stage != GroupStage::kDecode; }
  bool can_decode() const { return stage == GroupStage::kDecode || stage == GroupStage::kUnified; }
  bool operator==(const GpuGroup&) const = default;
};

struct ClusterConfig {
  int window_index = 0;
  std::vector<GpuGroup> groups;
  // Best-effort spill stays inside the request's own tier (split baseline).
  bool isolate_tiers = false;

  int gpus_used() const;
  /// Throws std::invalid_argument on overlapping ids, ids outside the pool,
  /// or a group whose size differs from its tp.
  void validate(int pool_size) const;
  /// Same groups, ignoring window_index and group order.
  bool same_groups(const ClusterConfig& other) const;
  bool operator==(const ClusterConfig&) const = default;
};

/// Envelopes for every (tier, tp) pair, built for one planning window.
class EnvelopeSet {
 public:
  EnvelopeSet() = default;
  explicit EnvelopeSet(std::vector<ThroughputEnvelope> envs) : envs_(std::move(envs)) {}

  const ThroughputEnvelope* find(int tier_id, int tp) const;
  const std::vector<ThroughputEnvelope>& all() const { return envs_; }
  std::vector<int> tp_levels() const;

 private:
  std::vector<ThroughputEnvelope> envs_;
};

/// Average lengths come from the demand entry when the window saw arrivals,
/// otherwise from the tier's nominal lengths.
EnvelopeSet make_envelopes(const PerfProfile& profile, std::span<const SloTier> tiers,
                           std::span<const TierDemand> demands, double headroom);

struct ConfigCandidate {
  int tier_id = 0;
  int tp_prefill = 1;
  int tp_decode = 1;
  int prefill_groups = 1;
  int decode_groups = 1;
  int gpus_used = 0;
  double capacity = 0.0;  // P x thp
  double ge = 0.0;
  double wge = 0.0;
};

/// D = ceil(P*thp/thd); nullopt when thd is zero.
std::optional<int> balance_stages(const ThroughputEnvelope& env_p,
                                  const ThroughputEnvelope& env_d, int prefill_groups);
double goodput_efficiency(const ConfigCandidate& c, const TierDemand& demand);
double weighted_score(double ge, const TierDemand& demand, double epsilon);

struct PlannerOptions {
  double headroom = 1.0;
  double epsilon = 0.01;
  bool weighted = true;
  // Knapsack pass over all tiers after the greedy picks; kept when it scores higher.
  bool refine = true;
  // Hand GPUs left after demand is covered to the tiers with the least slack.
  bool spare = true;
};

std::vector<ConfigCandidate> enumerate_candidates(const EnvelopeSet& envs,
                                                  std::span<const SloTier> tiers,
                                                  std::span<const TierDemand> demands,
                                                  int pool_size, const PlannerOptions& opt = {});
std::vector<ConfigCandidate> enumerate_candidates(const PerfProfile& profile,
                                                  std::span<const SloTier> tiers,
                                                  std::span<const TierDemand> demands,
                                                  int pool_size, const PlannerOptions& opt = {});

/// Chosen candidates plus leftover disposal, before GPU ids are laid out.
struct Assignment {
  std::vector<ConfigCandidate> picks;
  std::vector<GpuGroup> groups;  // gpu_ids empty
};

Assignment assign_candidates(std::span<const ConfigCandidate> candidates,
                             std::span<const SloTier> tiers, std::span<const TierDemand> demands,
                             int pool_size, const PlannerOptions& opt = {});
ClusterConfig assign_greedy(std::span<const ConfigCandidate> candidates,
                            std::span<const SloTier> tiers, std::span<const TierDemand> demands,
                            int pool_size, const PlannerOptions& opt = {});

/// Served rate credited to `picks`: per tier min(sum of P*thp, rps).
double credited_rps(std::span<const ConfigCandidate> picks, std::span<const TierDemand> demands);

/// Lays out ids for `groups`, reusing ids of previous groups with equal
/// (tier, stage, tp) before handing out fresh ones.
ClusterConfig layout_groups(std::vector<GpuGroup> groups, int pool_size,
                            const ClusterConfig* previous, int window_index);

ClusterConfig plan_window(const PerfProfile& profile, std::span<const SloTier> tiers,
                          std::span<const TierDemand> demands, int pool_size,
                          const ClusterConfig& previous, const PlannerOptions& opt = {});

struct PlanContext {
  int window_index = 0;
  std::span<const TierDemand> observed;  // last window, served_rps filled
  std::span<const TierDemand> upcoming;  // next window's arrivals (oracle only)
  const ClusterConfig* previous = nullptr;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  /// False for constant configurations; the engine then skips replanning.
  virtual bool adaptive() const { return true; }
  virtual ClusterConfig plan(const PlanContext& ctx) = 0;
};

std::unique_ptr<Policy> make_adaptive_policy(const PerfProfile& profile,
                                             std::vector<SloTier> tiers, int pool_size,
                                             PlannerOptions opt = {});

struct StaticOptions {
  int tp_prefill = 1;
  int tp_decode = 1;
  bool disaggregated = false;
  int prefill_gpus = 0;  // disaggregated only
};

/// Constant config of shared groups. Non-disaggregated: unified groups of tp_prefill.
ClusterConfig static_config(const StaticOptions& opt, int pool_size);
std::unique_ptr<Policy> make_static_policy(const StaticOptions& opt, int pool_size);

/// Fixed per-tier sub-pools, each with the tier's best single TP pair for
/// the trace-wide average demand.
std::unique_ptr<Policy> make_split_policy(const PerfProfile& profile, std::vector<SloTier> tiers,
                                          std::span<const TierDemand> average_demand,
                                          int pool_size, PlannerOptions opt = {});

/// Exhaustive search over candidate multisets scored on the next window's
/// arrivals. Throws std::invalid_argument for pools larger than 8.
std::unique_ptr<Policy> make_oracle_policy(const PerfProfile& profile, std::vector<SloTier> tiers,
                                           int pool_size, PlannerOptions opt = {});

/// Best multiset of candidates by credited_rps, ties to fewer GPUs.
std::vector<ConfigCandidate> exhaustive_best(std::span<const ConfigCandidate> candidates,
                                             std::span<const TierDemand> demands, int pool_size);

}  // namespace tpsim
