// Independent reference computations the library results are checked against.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tpsim/migration.h"
#include "tpsim/policy.h"

namespace tpsim::testing {

// Moves heads one at a time according to `plan`, starting from `old`, and
// compares the result against the rank rule applied to `target`. Returns an
// empty string on success, otherwise what went wrong.
inline std::string check_plan(std::span<const KvLayout> old, std::span<const KvLayout> target,
                              const MigrationPlan& plan, double kvb) {
  std::map<std::pair<std::int64_t, int>, int> where;  // (request, head) -> gpu
  std::map<std::int64_t, int> ctx;
  for (const auto& l : old) {
    int n = static_cast<int>(l.gpus.size());
    for (const auto& r : l.requests) {
      ctx[r.request_id] = r.context_len;
      for (int h = 0; h < l.total_heads; ++h)
        where[{r.request_id, h}] = l.gpus[h / (l.total_heads / n)];
    }
  }
  std::map<std::pair<std::int64_t, int>, int> moves;
  for (const auto& t : plan.transfers) {
    if (t.src_gpu == t.dst_gpu) return "transfer with src == dst";
    if (t.head_hi <= t.head_lo) return "empty head range";
    double want = (t.head_hi - t.head_lo) * static_cast<double>(ctx[t.request_id]) * kvb;
    if (t.bytes != want) return "byte count mismatch";
    for (int h = t.head_lo; h < t.head_hi; ++h) {
      auto it = where.find({t.request_id, h});
      if (it == where.end()) return "unknown (request, head)";
      if (it->second != t.src_gpu) return "head not on the source gpu";
      if (++moves[{t.request_id, h}] > 1) return "head moved twice";
      it->second = t.dst_gpu;
    }
  }
  std::size_t expected = 0;
  for (const auto& l : target) {
    int n = static_cast<int>(l.gpus.size());
    for (const auto& r : l.requests) {
      for (int h = 0; h < l.total_heads; ++h) {
        auto it = where.find({r.request_id, h});
        if (it == where.end()) return "target request missing from old layouts";
        if (it->second != l.gpus[h / (l.total_heads / n)]) return "head on the wrong gpu";
        ++expected;
      }
    }
  }
  if (expected != where.size()) return "head count changed";
  return {};
}

// Event simulation of the double-buffered copy/send schedule for one source.
// Copy k waits for the copy engine and a free buffer (freed when send k-2
// ends); send k waits for copy k and the link.
inline double two_buffer_sim_ms(double bytes, const CostModelParams& p) {
  if (bytes <= 0) return 0.0;
  long n = static_cast<long>(std::ceil(bytes / p.chunk_bytes));
  double chunk = bytes / static_cast<double>(n);
  double t_copy = chunk / (p.copy_bw_gbps * 1e9);
  double t_send = p.per_transfer_overhead_us * 1e-6 + chunk / (p.link_bw_gbps * 1e9);
  std::vector<double> copy_end(n), send_end(n);
  double copy_free = 0.0, link_free = 0.0;
  for (long k = 0; k < n; ++k) {
    double buffer_free = k >= 2 ? send_end[k - 2] : 0.0;
    double start = std::max(copy_free, buffer_free);
    copy_end[k] = start + t_copy;
    copy_free = copy_end[k];
    double s = std::max(copy_end[k], link_free);
    send_end[k] = s + t_send;
    link_free = send_end[k];
  }
  return send_end[n - 1] * 1e3;
}

inline double pipelined_oracle_ms(const MigrationPlan& plan, const CostModelParams& p) {
  std::map<int, double> by_src;
  for (const auto& t : plan.transfers) by_src[t.src_gpu] += t.bytes;
  double worst = 0.0;
  for (const auto& [src, b] : by_src) worst = std::max(worst, two_buffer_sim_ms(b, p));
  return worst;
}

// Best served rps over every multiset of candidates fitting the pool, by
// depth-first search. Served rps of a tier is min(sum of P*thp, rps).
inline double brute_force_served(std::span<const ConfigCandidate> cands,
                                 std::span<const TierDemand> demands, int pool) {
  std::map<int, double> rps;
  for (const auto& d : demands) rps[d.tier_id] = d.rps_observed;
  std::map<int, double> cap;
  double best = 0.0;
  std::function<void(std::size_t, int)> go = [&](std::size_t i, int left) {
    double served = 0.0;
    for (const auto& [tier, c] : cap) served += std::min(c, rps[tier]);
    best = std::max(best, served);
    for (std::size_t j = i; j < cands.size(); ++j) {
      if (cands[j].gpus_used > left) continue;
      cap[cands[j].tier_id] += cands[j].capacity;
      go(j, left - cands[j].gpus_used);
      cap[cands[j].tier_id] -= cands[j].capacity;
    }
  };
  go(0, pool);
  return best;
}

}  // namespace tpsim::testing
