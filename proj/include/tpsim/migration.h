// KV-head repartitioning between TP layouts and the cost of moving the bytes.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tpsim/cost_params.h"

namespace tpsim {

class PerfProfile;

struct KvRequest {
  std::int64_t request_id = 0;
  int context_len = 0;  // tokens

  bool operator==(const KvRequest&) const = default;
};

/// KV of `requests` spread over `gpus` in rank order. Rank r of N holds
/// heads [r*H/N, (r+1)*H/N) of every request.
struct KvLayout {
  std::vector<int> gpus;
  int total_heads = 0;
  std::vector<KvRequest> requests;

  int tp() const { return static_cast<int>(gpus.size()); }
};

/// Rank that owns head `h` when H heads are split over N ranks.
inline int head_owner(int h, int n, int total_heads) { return h * n / total_heads; }

struct Transfer {
  int src_gpu = 0;
  int dst_gpu = 0;
  std::int64_t request_id = 0;
  int head_lo = 0;
  int head_hi = 0;  // exclusive
  double bytes = 0.0;

  bool operator==(const Transfer&) const = default;
};

struct MigrationPlan {
  std::vector<Transfer> transfers;
  double handshake_ms = 0.0;
  // Filled by the latency functions.
  double per_page_ms = 0.0;
  double aggregate_ms = 0.0;
  double pipelined_ms = 0.0;

  double total_bytes() const;
};

/// Merge `old` groups into one group on `target.gpus` (same GPU set). The
/// requests of every old group are carried over; target.requests is ignored.
MigrationPlan plan_repartition(std::span<const KvLayout> old, const KvLayout& target,
                               double kv_bytes_per_token_per_head);

/// General form: each request in `target` must appear in exactly one `old`
/// layout. Old requests absent from `target` are dropped without transfers.
MigrationPlan plan_relayout(std::span<const KvLayout> old, std::span<const KvLayout> target,
                            double kv_bytes_per_token_per_head);

/// Every page is its own transfer, serialized per source GPU.
double latency_per_page(const MigrationPlan& plan, const CostModelParams& p);
/// Gather everything from a source into one buffer, then one send.
double latency_aggregate(const MigrationPlan& plan, const CostModelParams& p);
/// Two staging buffers: copy chunk k+1 while chunk k is on the wire.
/// Each source's bytes are cut into ceil(B/chunk_bytes) equal chunks.
double latency_pipelined(const MigrationPlan& plan, const CostModelParams& p);
/// Pipelined time for B bytes from a single source.
double pipelined_bytes_ms(double bytes, const CostModelParams& p);

/// Fills the three predicted latencies and the handshake on `plan`.
void annotate_costs(MigrationPlan& plan, const CostModelParams& p);

enum class SwitchMode { kWarm, kNaiveReload, kNaiveKernelInit };

const char* to_string(SwitchMode m);
SwitchMode parse_switch_mode(const std::string& s);

/// Pause imposed on a reconfigured group.
double switch_cost(SwitchMode mode, const MigrationPlan& plan, const CostModelParams& p);

enum class WeightMode { kFullCopyPerGpu, kPerTpCopies, kSharded };

/// GB of weights resident per GPU. `tp` only matters for kSharded.
double weight_memory(WeightMode mode, const PerfProfile& profile, int tp = 1);

}  // namespace tpsim
