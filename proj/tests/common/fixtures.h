// Small hand-built profiles shared by the unit and acceptance tests.
#pragma once

#include <functional>
#include <vector>

#include "tpsim/profile.h"

namespace tpsim::testing {

using LatencyFn = std::function<double(int tp, int batch, int seq)>;

inline PerfProfile grid_profile(const std::vector<int>& tps, const std::vector<int>& batches,
                                const std::vector<int>& seqs, const LatencyFn& prefill,
                                const LatencyFn& decode, int heads = 8) {
  std::vector<ProfileEntry> entries;
  for (int tp : tps) {
    for (int b : batches) {
      for (int s : seqs) {
        entries.push_back({Stage::kPrefill, tp, b, s, prefill(tp, b, s)});
        entries.push_back({Stage::kDecode, tp, b, s, decode(tp, b, s)});
      }
    }
  }
  PerfProfile p("test-gpu", "test-model", std::move(entries));
  p.weight_full_copy_gb = 16.0;
  p.gpu_memory_gb = 80.0;
  p.kv_bytes_per_token_per_head = 16384.0;
  p.total_kv_heads = heads;
  p.validate();
  return p;
}

// Prefill 10 ms per request, decode 5 ms per iteration, regardless of length.
// A KV handoff of n tokens costs 1 ms plus 0.2 ms per token (copy and wire).
inline PerfProfile golden_profile() {
  PerfProfile p = grid_profile(
      {1}, {1, 2, 4}, {1, 4096}, [](int, int b, int) { return 10.0 * b; },
      [](int, int, int) { return 5.0; }, 1);
  p.kv_bytes_per_token_per_head = 1e8;
  p.migration.copy_bw_gbps = 1000.0;
  p.migration.link_bw_gbps = 1000.0;
  p.migration.per_transfer_overhead_us = 1000.0;
  p.migration.chunk_bytes = 1e12;
  p.migration.page_bytes = 1e6;
  return p;
}

}  // namespace tpsim::testing
