#include "tpsim/migration.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "tpsim/profile.h"

namespace tpsim {

double MigrationPlan::total_bytes() const {
  double sum = 0.0;
  for (const Transfer& t : transfers) sum += t.bytes;
  return sum;
}

namespace {

void check_layout(const KvLayout& l, const char* what) {
  if (l.gpus.empty()) throw std::invalid_argument(std::string(what) + ": empty gpu list");
  if (l.total_heads < 1 || l.total_heads % l.tp() != 0) {
    throw std::invalid_argument(std::string(what) + ": total_heads " +
                                std::to_string(l.total_heads) + " not divisible by tp " +
                                std::to_string(l.tp()));
  }
}

}  // namespace

MigrationPlan plan_relayout(std::span<const KvLayout> old, std::span<const KvLayout> target,
                            double kv_bytes_per_token_per_head) {
  struct Where {
    const KvLayout* layout;
    int context_len;
  };
  std::unordered_map<std::int64_t, Where> source;
  int heads = -1;
  for (const KvLayout& l : old) {
    check_layout(l, "old layout");
    if (heads >= 0 && l.total_heads != heads) {
      throw std::invalid_argument("layouts disagree on total_heads");
    }
    heads = l.total_heads;
    for (const KvRequest& r : l.requests) {
      if (!source.emplace(r.request_id, Where{&l, r.context_len}).second) {
        throw std::invalid_argument("request " + std::to_string(r.request_id) +
                                    " appears in more than one old layout");
      }
    }
  }

  MigrationPlan plan;
  std::set<std::int64_t> placed;
  for (const KvLayout& dst : target) {
    check_layout(dst, "new layout");
    if (heads >= 0 && dst.total_heads != heads) {
      throw std::invalid_argument("layouts disagree on total_heads");
    }
    const int h_total = dst.total_heads;
    for (const KvRequest& r : dst.requests) {
      auto it = source.find(r.request_id);
      if (it == source.end()) {
        throw std::invalid_argument("request " + std::to_string(r.request_id) +
                                    " has no source layout");
      }
      if (!placed.insert(r.request_id).second) {
        throw std::invalid_argument("request " + std::to_string(r.request_id) +
                                    " placed twice in the new layout");
      }
      const KvLayout& src = *it->second.layout;
      const double per_head = it->second.context_len * kv_bytes_per_token_per_head;

      // Walk heads and coalesce runs sharing (src gpu, dst gpu).
      int run_lo = 0;
      int run_src = -1, run_dst = -1;
      auto flush = [&](int hi) {
        if (run_src >= 0 && run_src != run_dst) {
          plan.transfers.push_back(
              {run_src, run_dst, r.request_id, run_lo, hi, (hi - run_lo) * per_head});
        }
      };
      for (int h = 0; h < h_total; ++h) {
        const int s = src.gpus[head_owner(h, src.tp(), h_total)];
        const int d = dst.gpus[head_owner(h, dst.tp(), h_total)];
        if (s != run_src || d != run_dst) {
          flush(h);
          run_lo = h;
          run_src = s;
          run_dst = d;
        }
      }
      flush(h_total);
    }
  }
  return plan;
}

MigrationPlan plan_repartition(std::span<const KvLayout> old, const KvLayout& target,
                               double kv_bytes_per_token_per_head) {
  check_layout(target, "new layout");
  std::multiset<int> old_gpus;
  KvLayout merged{target.gpus, target.total_heads, {}};
  for (const KvLayout& l : old) {
    check_layout(l, "old layout");
    if (l.total_heads != target.total_heads) {
      throw std::invalid_argument("old and new layouts disagree on total_heads");
    }
    old_gpus.insert(l.gpus.begin(), l.gpus.end());
    merged.requests.insert(merged.requests.end(), l.requests.begin(), l.requests.end());
  }
  const std::multiset<int> new_gpus(target.gpus.begin(), target.gpus.end());
  if (old_gpus != new_gpus) {
    throw std::invalid_argument("old groups' GPUs differ from the new group's GPUs");
  }
  return plan_relayout(old, std::span<const KvLayout>(&merged, 1), kv_bytes_per_token_per_head);
}

namespace {

std::map<int, std::vector<double>> bytes_by_source(const MigrationPlan& plan) {
  std::map<int, std::vector<double>> out;
  for (const Transfer& t : plan.transfers) out[t.src_gpu].push_back(t.bytes);
  return out;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

double latency_per_page(const MigrationPlan& plan, const CostModelParams& p) {
  const double per_page_s = p.per_transfer_overhead_us * 1e-6 + p.page_bytes / (p.link_bw_gbps * 1e9);
  double worst = 0.0;
  for (const auto& [src, sizes] : bytes_by_source(plan)) {
    double pages = 0.0;
    for (double b : sizes) pages += std::ceil(b / p.page_bytes);
    worst = std::max(worst, pages * per_page_s);
  }
  return worst * 1e3;
}

double latency_aggregate(const MigrationPlan& plan, const CostModelParams& p) {
  double worst = 0.0;
  for (const auto& [src, sizes] : bytes_by_source(plan)) {
    const double b = sum(sizes);
    if (b <= 0.0) continue;
    const double t = b / (p.copy_bw_gbps * 1e9) + p.per_transfer_overhead_us * 1e-6 +
                     b / (p.link_bw_gbps * 1e9);
    worst = std::max(worst, t);
  }
  return worst * 1e3;
}

double pipelined_bytes_ms(double bytes, const CostModelParams& p) {
  if (bytes <= 0.0) return 0.0;
  const double n = std::ceil(bytes / p.chunk_bytes);
  const double chunk = bytes / n;
  const double c = chunk / (p.copy_bw_gbps * 1e9);
  const double s = p.per_transfer_overhead_us * 1e-6 + chunk / (p.link_bw_gbps * 1e9);
  return (c + (n - 1.0) * std::max(c, s) + s) * 1e3;
}

double latency_pipelined(const MigrationPlan& plan, const CostModelParams& p) {
  double worst = 0.0;
  for (const auto& [src, sizes] : bytes_by_source(plan)) {
    worst = std::max(worst, pipelined_bytes_ms(sum(sizes), p));
  }
  return worst;
}

void annotate_costs(MigrationPlan& plan, const CostModelParams& p) {
  plan.handshake_ms = p.handshake_ms;
  plan.per_page_ms = latency_per_page(plan, p);
  plan.aggregate_ms = latency_aggregate(plan, p);
  plan.pipelined_ms = latency_pipelined(plan, p);
}

const char* to_string(SwitchMode m) {
  switch (m) {
    case SwitchMode::kWarm: return "warm";
    case SwitchMode::kNaiveReload: return "naive_reload";
    case SwitchMode::kNaiveKernelInit: return "naive_kernel_init";
  }
  return "?";
}

SwitchMode parse_switch_mode(const std::string& s) {
  if (s == "warm") return SwitchMode::kWarm;
  if (s == "naive_reload") return SwitchMode::kNaiveReload;
  if (s == "naive_kernel_init") return SwitchMode::kNaiveKernelInit;
  throw std::invalid_argument("unknown switch mode '" + s + "'");
}

double switch_cost(SwitchMode mode, const MigrationPlan& plan, const CostModelParams& p) {
  switch (mode) {
    case SwitchMode::kWarm: return p.handshake_ms + latency_pipelined(plan, p);
    case SwitchMode::kNaiveReload: return p.reload_ms + latency_per_page(plan, p);
    case SwitchMode::kNaiveKernelInit: return p.kernel_init_ms + latency_per_page(plan, p);
  }
  return 0.0;
}

double weight_memory(WeightMode mode, const PerfProfile& profile, int tp) {
  switch (mode) {
    case WeightMode::kFullCopyPerGpu: return profile.weight_full_copy_gb;
    case WeightMode::kPerTpCopies: {
      double total = 0.0;
      for (int level : profile.tp_levels) total += profile.weight_full_copy_gb / level;
      return total;
    }
    case WeightMode::kSharded:
      if (tp < 1) throw std::invalid_argument("weight_memory: tp must be >= 1");
      return profile.weight_full_copy_gb / tp;
  }
  return 0.0;
}

}  // namespace tpsim
