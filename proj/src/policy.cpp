#include "tpsim/policy.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

namespace tpsim {

const char* to_string(GroupStage s) {
  switch (s) {
    case GroupStage::kPrefill: return "prefill";
    case GroupStage::kDecode: return "decode";
    case GroupStage::kBackground: return "background";
    case GroupStage::kUnified: return "unified";
  }
  return "?";
}

GroupStage parse_group_stage(const std::string& s) {
  if (s == "prefill") return GroupStage::kPrefill;
  if (s == "decode") return GroupStage::kDecode;
  if (s == "background") return GroupStage::kBackground;
  if (s == "unified") return GroupStage::kUnified;
  throw std::invalid_argument("unknown group stage '" + s + "'");
}

int ClusterConfig::gpus_used() const {
  int n = 0;
  for (const GpuGroup& g : groups) n += static_cast<int>(g.gpu_ids.size());
  return n;
}

void ClusterConfig::validate(int pool_size) const {
  std::set<int> seen;
  for (const GpuGroup& g : groups) {
    if (g.tp < 1 || static_cast<int>(g.gpu_ids.size()) != g.tp) {
      throw std::invalid_argument("group size differs from its tp");
    }
    for (int id : g.gpu_ids) {
      if (id < 0 || id >= pool_size) {
        throw std::invalid_argument("gpu id " + std::to_string(id) + " outside pool of " +
                                    std::to_string(pool_size));
      }
      if (!seen.insert(id).second) {
        throw std::invalid_argument("gpu id " + std::to_string(id) + " used by two groups");
      }
    }
  }
}

bool ClusterConfig::same_groups(const ClusterConfig& other) const {
  auto key = [](const GpuGroup& g) {
    return std::make_tuple(g.gpu_ids, g.tier_id, static_cast<int>(g.stage), g.tp);
  };
  std::vector<decltype(key(GpuGroup{}))> a, b;
  for (const GpuGroup& g : groups) a.push_back(key(g));
  for (const GpuGroup& g : other.groups) b.push_back(key(g));
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return a == b && isolate_tiers == other.isolate_tiers;
}

const ThroughputEnvelope* EnvelopeSet::find(int tier_id, int tp) const {
  for (const ThroughputEnvelope& e : envs_) {
    if (e.tier_id == tier_id && e.tp == tp) return &e;
  }
  return nullptr;
}

std::vector<int> EnvelopeSet::tp_levels() const {
  std::set<int> s;
  for (const ThroughputEnvelope& e : envs_) s.insert(e.tp);
  return {s.begin(), s.end()};
}

namespace {

const TierDemand* demand_of(std::span<const TierDemand> demands, int tier_id) {
  for (const TierDemand& d : demands) {
    if (d.tier_id == tier_id) return &d;
  }
  return nullptr;
}

double rps_of(std::span<const TierDemand> demands, int tier_id) {
  const TierDemand* d = demand_of(demands, tier_id);
  return d ? d->rps_observed : 0.0;
}

}  // namespace

EnvelopeSet make_envelopes(const PerfProfile& profile, std::span<const SloTier> tiers,
                           std::span<const TierDemand> demands, double headroom) {
  std::vector<ThroughputEnvelope> out;
  for (const SloTier& tier : tiers) {
    if (tier.background) continue;
    double prompt = tier.nominal_prompt_len;
    double output = tier.nominal_output_len;
    if (const TierDemand* d = demand_of(demands, tier.id); d && d->avg_prompt_len >= 1.0) {
      prompt = d->avg_prompt_len;
      output = std::max(1.0, d->avg_output_len);
    }
    for (int tp : profile.tp_levels) {
      out.push_back(derive_envelope(profile, tier, tp, prompt, output, headroom));
    }
  }
  return EnvelopeSet(std::move(out));
}

std::optional<int> balance_stages(const ThroughputEnvelope& env_p, const ThroughputEnvelope& env_d,
                                  int prefill_groups) {
  if (!(env_d.thd > 0.0)) return std::nullopt;
  const double ratio = prefill_groups * env_p.thp / env_d.thd;
  // Guard against ratios like 2.0000000000000004 turning into 3 groups.
  const double rounded = std::round(ratio);
  const double d = std::abs(ratio - rounded) < 1e-9 * std::max(1.0, ratio) ? rounded
                                                                             : std::ceil(ratio);
  return std::max(1, static_cast<int>(d));
}

double goodput_efficiency(const ConfigCandidate& c, const TierDemand& demand) {
  if (c.gpus_used <= 0) return 0.0;
  return std::min(c.capacity, demand.rps_observed) / c.gpus_used;
}

double weighted_score(double ge, const TierDemand& demand, double epsilon) {
  return ge * (demand.rps_observed + epsilon) / (demand.served_rps + epsilon);
}

std::vector<ConfigCandidate> enumerate_candidates(const EnvelopeSet& envs,
                                                  std::span<const SloTier> tiers,
                                                  std::span<const TierDemand> demands,
                                                  int pool_size, const PlannerOptions& opt) {
  std::vector<ConfigCandidate> out;
  const std::vector<int> tps = envs.tp_levels();
  for (const SloTier& tier : tiers) {
    if (tier.background) continue;
    TierDemand demand{tier.id};
    if (const TierDemand* d = demand_of(demands, tier.id)) demand = *d;
    for (int tpi : tps) {
      const ThroughputEnvelope* ep = envs.find(tier.id, tpi);
      if (!ep || !(ep->thp > 0.0)) continue;
      for (int tpj : tps) {
        const ThroughputEnvelope* ed = envs.find(tier.id, tpj);
        if (!ed || !(ed->thd > 0.0)) continue;
        for (int p = 1;; ++p) {
          const std::optional<int> d = balance_stages(*ep, *ed, p);
          const int gpus = p * tpi + *d * tpj;
          if (gpus > pool_size) break;
          ConfigCandidate c;
          c.tier_id = tier.id;
          c.tp_prefill = tpi;
          c.tp_decode = tpj;
          c.prefill_groups = p;
          c.decode_groups = *d;
          c.gpus_used = gpus;
          c.capacity = p * ep->thp;
          c.ge = goodput_efficiency(c, demand);
          c.wge = weighted_score(c.ge, demand, opt.epsilon);
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

std::vector<ConfigCandidate> enumerate_candidates(const PerfProfile& profile,
                                                  std::span<const SloTier> tiers,
                                                  std::span<const TierDemand> demands,
                                                  int pool_size, const PlannerOptions& opt) {
  return enumerate_candidates(make_envelopes(profile, tiers, demands, opt.headroom), tiers,
                              demands, pool_size, opt);
}

double credited_rps(std::span<const ConfigCandidate> picks, std::span<const TierDemand> demands) {
  std::map<int, double> cap;
  for (const ConfigCandidate& c : picks) cap[c.tier_id] += c.capacity;
  double total = 0.0;
  for (const auto& [tier, c] : cap) total += std::min(c, rps_of(demands, tier));
  return total;
}

namespace {

constexpr double kTol = 1e-9;

bool candidate_less(const ConfigCandidate& a, const ConfigCandidate& b) {
  return std::tie(a.gpus_used, a.tier_id, a.tp_prefill, a.tp_decode, a.prefill_groups) <
         std::tie(b.gpus_used, b.tier_id, b.tp_prefill, b.tp_decode, b.prefill_groups);
}

// Picks for one tier maximizing min(sum of capacity, rps) within `budget`
// GPUs, using as few GPUs as possible. Unbounded knapsack over candidates.
std::vector<ConfigCandidate> best_for_tier(const std::vector<const ConfigCandidate*>& items,
                                           double rps, int budget) {
  if (budget <= 0 || items.empty() || !(rps > 0.0)) return {};
  std::vector<double> best(budget + 1, 0.0);
  std::vector<int> choice(budget + 1, -1);
  for (int g = 1; g <= budget; ++g) {
    best[g] = best[g - 1];
    choice[g] = -1;  // -1: same as g-1
    for (std::size_t i = 0; i < items.size(); ++i) {
      const int w = items[i]->gpus_used;
      if (w > g) continue;
      const double v = best[g - w] + items[i]->capacity;
      if (v > best[g] + kTol) {
        best[g] = v;
        choice[g] = static_cast<int>(i);
      }
    }
  }
  const double target = std::min(best[budget], rps);
  int g = 0;
  while (std::min(best[g], rps) < target - kTol * std::max(1.0, target)) ++g;

  std::vector<ConfigCandidate> picks;
  while (g > 0) {
    if (choice[g] < 0) {
      --g;
      continue;
    }
    const ConfigCandidate* c = items[choice[g]];
    picks.push_back(*c);
    g -= c->gpus_used;
  }
  return picks;
}

std::vector<GpuGroup> groups_from_picks(std::span<const ConfigCandidate> picks,
                                        std::span<const SloTier> tiers,
                                        std::span<const TierDemand> demands, int pool_size,
                                        int min_tp) {
  std::vector<GpuGroup> groups;
  int used = 0;
  std::map<int, double> cap;
  std::map<int, int> decode_gpus;
  std::map<int, int> decode_tp;
  for (const ConfigCandidate& c : picks) {
    for (int i = 0; i < c.prefill_groups; ++i) {
      groups.push_back({{}, c.tier_id, GroupStage::kPrefill, c.tp_prefill});
    }
    for (int i = 0; i < c.decode_groups; ++i) {
      groups.push_back({{}, c.tier_id, GroupStage::kDecode, c.tp_decode});
    }
    used += c.gpus_used;
    cap[c.tier_id] += c.capacity;
    const int dg = c.decode_groups * c.tp_decode;
    if (dg > decode_gpus[c.tier_id]) decode_tp[c.tier_id] = c.tp_decode;
    decode_gpus[c.tier_id] += dg;
  }

  int left = pool_size - used;
  // Leftover goes to decode of the unmet tier with the most decode GPUs.
  int target = kSharedTier;
  int target_gpus = 0;
  for (const SloTier& t : tiers) {
    if (t.background) continue;
    const double unmet = rps_of(demands, t.id) - cap[t.id];
    if (unmet <= kTol || decode_gpus[t.id] <= target_gpus) continue;
    target = t.id;
    target_gpus = decode_gpus[t.id];
  }
  if (target != kSharedTier) {
    const int tp = decode_tp[target];
    for (; left >= tp; left -= tp) groups.push_back({{}, target, GroupStage::kDecode, tp});
  }
  for (; left >= min_tp; left -= min_tp) {
    groups.push_back({{}, kSharedTier, GroupStage::kBackground, min_tp});
  }
  return groups;
}

int min_tp_of(std::span<const ConfigCandidate> candidates) {
  int m = 1;
  bool any = false;
  for (const ConfigCandidate& c : candidates) {
    const int t = std::min(c.tp_prefill, c.tp_decode);
    if (!any || t < m) m = t;
    any = true;
  }
  return m;
}

// Hands `free` GPUs to the tiers with the least provisioned/demand ratio,
// each time adding that tier's most efficient candidate that still fits.
void add_spare(std::vector<ConfigCandidate>& picks, const std::vector<const ConfigCandidate*>& sorted,
               std::span<const SloTier> tiers, std::span<const TierDemand> demands, int free,
               int min_tp) {
  int reserve = 0;
  for (const SloTier& t : tiers) {
    if (t.background && rps_of(demands, t.id) > kTol) reserve = min_tp;
  }
  std::map<int, double> cap;
  for (const ConfigCandidate& c : picks) cap[c.tier_id] += c.capacity;
  std::set<int> full;
  while (true) {
    int tier = kSharedTier;
    double ratio = 0.0;
    for (const SloTier& t : tiers) {
      const double rps = rps_of(demands, t.id);
      if (t.background || rps <= kTol || full.count(t.id)) continue;
      const double r = cap[t.id] / rps;
      if (tier == kSharedTier || r < ratio) {
        tier = t.id;
        ratio = r;
      }
    }
    if (tier == kSharedTier) break;
    const ConfigCandidate* best = nullptr;
    for (const ConfigCandidate* c : sorted) {
      if (c->tier_id != tier || c->gpus_used > free - reserve) continue;
      if (!best || c->capacity / c->gpus_used > best->capacity / best->gpus_used * (1.0 + 1e-12)) {
        best = c;
      }
    }
    if (!best) {
      full.insert(tier);
      continue;
    }
    picks.push_back(*best);
    free -= best->gpus_used;
    cap[tier] += best->capacity;
  }
}

}  // namespace

Assignment assign_candidates(std::span<const ConfigCandidate> candidates,
                             std::span<const SloTier> tiers, std::span<const TierDemand> demands,
                             int pool_size, const PlannerOptions& opt) {
  std::vector<const ConfigCandidate*> sorted;
  for (const ConfigCandidate& c : candidates) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(),
            [](const ConfigCandidate* a, const ConfigCandidate* b) { return candidate_less(*a, *b); });

  std::map<int, double> unmet, weight;
  for (const SloTier& t : tiers) {
    if (t.background) continue;
    TierDemand d{t.id};
    if (const TierDemand* found = demand_of(demands, t.id)) d = *found;
    unmet[t.id] = d.rps_observed;
    weight[t.id] = opt.weighted ? weighted_score(1.0, d, opt.epsilon) : 1.0;
  }

  std::vector<ConfigCandidate> picks;
  int free = pool_size;
  while (true) {
    const ConfigCandidate* best = nullptr;
    double best_score = 0.0;
    // `sorted` is already in tie-break order, so a strict improvement test suffices.
    for (const ConfigCandidate* c : sorted) {
      if (c->gpus_used > free) continue;
      const double u = unmet[c->tier_id];
      if (u <= kTol) continue;
      const double score = std::min(c->capacity, u) / c->gpus_used * weight[c->tier_id];
      if (score > best_score * (1.0 + 1e-12) + 1e-300) {
        best = c;
        best_score = score;
      }
    }
    if (!best) break;
    picks.push_back(*best);
    free -= best->gpus_used;
    unmet[best->tier_id] = std::max(0.0, unmet[best->tier_id] - best->capacity);
  }

  if (opt.refine) {
    // Greedy can strand GPUs that a less efficient but larger candidate would
    // use. Split the pool across tiers exactly on the same weighted objective
    // and keep the result if it is better.
    struct TierCurve {
      int id;
      double rps, w;
      std::vector<const ConfigCandidate*> items;
      std::vector<double> cap;  // most capacity reachable with <= g GPUs
    };
    std::vector<TierCurve> curves;
    for (const SloTier& t : tiers) {
      if (t.background) continue;
      TierCurve c{t.id, rps_of(demands, t.id), weight[t.id], {}, std::vector<double>(pool_size + 1, 0.0)};
      for (const ConfigCandidate* cand : sorted) {
        if (cand->tier_id == t.id) c.items.push_back(cand);
      }
      for (int g = 1; g <= pool_size; ++g) {
        c.cap[g] = c.cap[g - 1];
        for (const ConfigCandidate* cand : c.items) {
          if (cand->gpus_used <= g) c.cap[g] = std::max(c.cap[g], c.cap[g - cand->gpus_used] + cand->capacity);
        }
      }
      curves.push_back(std::move(c));
    }
    const std::size_t n = curves.size();
    std::vector<std::vector<double>> dp(n + 1, std::vector<double>(pool_size + 1, 0.0));
    std::vector<std::vector<int>> take(n, std::vector<int>(pool_size + 1, 0));
    for (std::size_t i = 0; i < n; ++i) {
      const TierCurve& c = curves[i];
      for (int b = 0; b <= pool_size; ++b) {
        double best = -1.0;
        for (int g = 0; g <= b; ++g) {
          const double v = dp[i][b - g] + c.w * std::min(c.cap[g], c.rps);
          if (v > best + kTol * std::max(1.0, std::abs(best))) {
            best = v;
            take[i][b] = g;
          }
        }
        dp[i + 1][b] = best;
      }
    }
    std::vector<ConfigCandidate> better;
    for (int i = static_cast<int>(n) - 1, b = pool_size; i >= 0; --i) {
      const int g = take[i][b];
      b -= g;
      auto part = best_for_tier(curves[i].items, curves[i].rps, g);
      better.insert(better.end(), part.begin(), part.end());
    }
    auto value = [&](const std::vector<ConfigCandidate>& ps, int& gpus) {
      std::map<int, double> cap;
      gpus = 0;
      for (const ConfigCandidate& c : ps) {
        cap[c.tier_id] += c.capacity;
        gpus += c.gpus_used;
      }
      double v = 0.0;
      for (const TierCurve& c : curves) v += c.w * std::min(cap[c.id], c.rps);
      return v;
    };
    int cur_gpus = 0, new_gpus = 0;
    const double cur_val = value(picks, cur_gpus);
    const double new_val = value(better, new_gpus);
    const double tol = kTol * std::max(1.0, cur_val);
    if (new_val > cur_val + tol || (new_val >= cur_val - tol && new_gpus < cur_gpus)) {
      std::sort(better.begin(), better.end(), candidate_less);
      picks = std::move(better);
      free = pool_size - new_gpus;
    }
  }

  if (opt.spare) add_spare(picks, sorted, tiers, demands, free, min_tp_of(candidates));

  Assignment a;
  a.groups = groups_from_picks(picks, tiers, demands, pool_size, min_tp_of(candidates));
  a.picks = std::move(picks);
  return a;
}

ClusterConfig layout_groups(std::vector<GpuGroup> groups, int pool_size,
                            const ClusterConfig* previous, int window_index) {
  std::vector<bool> taken(pool_size, false);
  std::vector<bool> placed(groups.size(), false);

  if (previous) {
    std::vector<bool> reused(previous->groups.size(), false);
    for (std::size_t i = 0; i < groups.size(); ++i) {
      for (std::size_t j = 0; j < previous->groups.size(); ++j) {
        const GpuGroup& old = previous->groups[j];
        if (reused[j] || old.tier_id != groups[i].tier_id || old.stage != groups[i].stage ||
            old.tp != groups[i].tp) {
          continue;
        }
        bool fits = true;
        for (int id : old.gpu_ids) fits = fits && id < pool_size && !taken[id];
        if (!fits) continue;
        groups[i].gpu_ids = old.gpu_ids;
        for (int id : old.gpu_ids) taken[id] = true;
        reused[j] = placed[i] = true;
        break;
      }
    }
  }

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    if (!placed[i]) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return groups[a].tp > groups[b].tp; });
  for (std::size_t i : order) {
    GpuGroup& g = groups[i];
    g.gpu_ids.clear();
    // Prefer an aligned contiguous block, else the lowest free ids.
    for (int s = 0; s + g.tp <= pool_size && g.gpu_ids.empty(); s += g.tp) {
      bool ok = true;
      for (int k = 0; k < g.tp; ++k) ok = ok && !taken[s + k];
      if (!ok) continue;
      for (int k = 0; k < g.tp; ++k) g.gpu_ids.push_back(s + k);
    }
    if (g.gpu_ids.empty()) {
      for (int id = 0; id < pool_size && static_cast<int>(g.gpu_ids.size()) < g.tp; ++id) {
        if (!taken[id]) g.gpu_ids.push_back(id);
      }
    }
    if (static_cast<int>(g.gpu_ids.size()) != g.tp) {
      throw std::logic_error("layout_groups: groups exceed the pool");
    }
    for (int id : g.gpu_ids) taken[id] = true;
  }

  std::sort(groups.begin(), groups.end(),
            [](const GpuGroup& a, const GpuGroup& b) { return a.gpu_ids.front() < b.gpu_ids.front(); });
  ClusterConfig cfg;
  cfg.window_index = window_index;
  cfg.groups = std::move(groups);
  return cfg;
}

ClusterConfig assign_greedy(std::span<const ConfigCandidate> candidates,
                            std::span<const SloTier> tiers, std::span<const TierDemand> demands,
                            int pool_size, const PlannerOptions& opt) {
  Assignment a = assign_candidates(candidates, tiers, demands, pool_size, opt);
  return layout_groups(std::move(a.groups), pool_size, nullptr, 0);
}

ClusterConfig plan_window(const PerfProfile& profile, std::span<const SloTier> tiers,
                          std::span<const TierDemand> demands, int pool_size,
                          const ClusterConfig& previous, const PlannerOptions& opt) {
  const auto candidates = enumerate_candidates(profile, tiers, demands, pool_size, opt);
  Assignment a = assign_candidates(candidates, tiers, demands, pool_size, opt);
  if (candidates.empty()) {
    // Nothing feasible: every GPU serves background and best-effort work.
    a.groups.clear();
    const int tp = profile.tp_levels.front();
    for (int i = 0; i + tp <= pool_size; i += tp) {
      a.groups.push_back({{}, kSharedTier, GroupStage::kBackground, tp});
    }
  }
  ClusterConfig cfg = layout_groups(std::move(a.groups), pool_size, &previous,
                                    previous.window_index + 1);
  return cfg;
}

std::vector<ConfigCandidate> exhaustive_best(std::span<const ConfigCandidate> candidates,
                                             std::span<const TierDemand> demands, int pool_size) {
  // Per (tier, gpus) only the highest capacity matters to the objective.
  std::map<std::pair<int, int>, ConfigCandidate> kept;
  std::vector<ConfigCandidate> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end(), candidate_less);
  for (const ConfigCandidate& c : sorted) {
    auto [it, fresh] = kept.emplace(std::make_pair(c.tier_id, c.gpus_used), c);
    if (!fresh && c.capacity > it->second.capacity + kTol) it->second = c;
  }
  std::vector<ConfigCandidate> items;
  for (auto& [k, c] : kept) items.push_back(c);

  std::vector<ConfigCandidate> cur, best;
  double best_val = -1.0;
  int best_gpus = 0;
  auto dfs = [&](auto&& self, std::size_t start, int free) -> void {
    const double val = credited_rps(cur, demands);
    const int used = pool_size - free;
    if (val > best_val + kTol || (val >= best_val - kTol && used < best_gpus)) {
      best_val = val;
      best_gpus = used;
      best = cur;
    }
    for (std::size_t i = start; i < items.size(); ++i) {
      if (items[i].gpus_used > free) continue;
      cur.push_back(items[i]);
      self(self, i, free - items[i].gpus_used);
      cur.pop_back();
    }
  };
  dfs(dfs, 0, pool_size);
  return best;
}

namespace {

class AdaptivePolicy : public Policy {
 public:
  AdaptivePolicy(const PerfProfile& profile, std::vector<SloTier> tiers, int pool,
                 PlannerOptions opt)
      : profile_(profile), tiers_(std::move(tiers)), pool_(pool), opt_(opt) {}

  std::string name() const override { return opt_.weighted ? "adaptive" : "adaptive-unweighted"; }

  ClusterConfig plan(const PlanContext& ctx) override {
    ClusterConfig empty;
    const ClusterConfig& prev = ctx.previous ? *ctx.previous : empty;
    ClusterConfig cfg = plan_window(profile_, tiers_, ctx.observed, pool_, prev, opt_);
    cfg.window_index = ctx.window_index;
    return cfg;
  }

 private:
  const PerfProfile& profile_;
  std::vector<SloTier> tiers_;
  int pool_;
  PlannerOptions opt_;
};

class FixedPolicy : public Policy {
 public:
  FixedPolicy(std::string name, ClusterConfig cfg) : name_(std::move(name)), cfg_(std::move(cfg)) {}
  std::string name() const override { return name_; }
  bool adaptive() const override { return false; }
  ClusterConfig plan(const PlanContext& ctx) override {
    ClusterConfig c = cfg_;
    c.window_index = ctx.window_index;
    return c;
  }

 private:
  std::string name_;
  ClusterConfig cfg_;
};

class OraclePolicy : public Policy {
 public:
  OraclePolicy(const PerfProfile& profile, std::vector<SloTier> tiers, int pool, PlannerOptions opt)
      : profile_(profile), tiers_(std::move(tiers)), pool_(pool), opt_(opt) {}

  std::string name() const override { return "oracle"; }

  ClusterConfig plan(const PlanContext& ctx) override {
    const auto candidates = enumerate_candidates(profile_, tiers_, ctx.upcoming, pool_, opt_);
    auto picks = exhaustive_best(candidates, ctx.upcoming, pool_);
    if (opt_.spare) {
      std::vector<const ConfigCandidate*> sorted;
      for (const ConfigCandidate& c : candidates) sorted.push_back(&c);
      std::sort(sorted.begin(), sorted.end(), [](const ConfigCandidate* a, const ConfigCandidate* b) {
        return candidate_less(*a, *b);
      });
      int used = 0;
      for (const ConfigCandidate& c : picks) used += c.gpus_used;
      add_spare(picks, sorted, tiers_, ctx.upcoming, pool_ - used, min_tp_of(candidates));
    }
    std::vector<GpuGroup> groups =
        groups_from_picks(picks, tiers_, ctx.upcoming, pool_, profile_.tp_levels.front());
    return layout_groups(std::move(groups), pool_, ctx.previous, ctx.window_index);
  }

 private:
  const PerfProfile& profile_;
  std::vector<SloTier> tiers_;
  int pool_;
  PlannerOptions opt_;
};

}  // namespace

std::unique_ptr<Policy> make_adaptive_policy(const PerfProfile& profile, std::vector<SloTier> tiers,
                                             int pool_size, PlannerOptions opt) {
  return std::make_unique<AdaptivePolicy>(profile, std::move(tiers), pool_size, opt);
}

ClusterConfig static_config(const StaticOptions& opt, int pool_size) {
  if (opt.tp_prefill < 1 || opt.tp_decode < 1) {
    throw ValidationError("policy.tp: must be >= 1");
  }
  std::vector<GpuGroup> groups;
  if (!opt.disaggregated) {
    if (pool_size % opt.tp_prefill != 0) {
      throw ValidationError("policy.tp_prefill: pool size not divisible by tp");
    }
    for (int i = 0; i < pool_size / opt.tp_prefill; ++i) {
      groups.push_back({{}, kSharedTier, GroupStage::kUnified, opt.tp_prefill});
    }
  } else {
    const int decode_gpus = pool_size - opt.prefill_gpus;
    if (opt.prefill_gpus < opt.tp_prefill || opt.prefill_gpus % opt.tp_prefill != 0) {
      throw ValidationError("policy.prefill_gpus: must be a positive multiple of tp_prefill");
    }
    if (decode_gpus < opt.tp_decode || decode_gpus % opt.tp_decode != 0) {
      throw ValidationError("policy.prefill_gpus: remaining GPUs must be a positive multiple of tp_decode");
    }
    for (int i = 0; i < opt.prefill_gpus / opt.tp_prefill; ++i) {
      groups.push_back({{}, kSharedTier, GroupStage::kPrefill, opt.tp_prefill});
    }
    for (int i = 0; i < decode_gpus / opt.tp_decode; ++i) {
      groups.push_back({{}, kSharedTier, GroupStage::kDecode, opt.tp_decode});
    }
  }
  // Prefill first so prefill groups take the low ids.
  int next = 0;
  for (GpuGroup& g : groups) {
    for (int k = 0; k < g.tp; ++k) g.gpu_ids.push_back(next++);
  }
  ClusterConfig cfg;
  cfg.groups = std::move(groups);
  return cfg;
}

std::unique_ptr<Policy> make_static_policy(const StaticOptions& opt, int pool_size) {
  std::string name = "static-tp" + std::to_string(opt.tp_prefill);
  if (opt.disaggregated) {
    name = "static-p" + std::to_string(opt.tp_prefill) + "d" + std::to_string(opt.tp_decode) +
           "-" + std::to_string(opt.prefill_gpus);
  }
  return std::make_unique<FixedPolicy>(name, static_config(opt, pool_size));
}

std::unique_ptr<Policy> make_split_policy(const PerfProfile& profile, std::vector<SloTier> tiers,
                                          std::span<const TierDemand> average_demand,
                                          int pool_size, PlannerOptions opt) {
  const auto candidates = enumerate_candidates(profile, tiers, average_demand, pool_size, opt);

  struct Plan {
    int tier_id;
    const ConfigCandidate* unit;  // P = 1 candidate of the chosen pair
    int need;                     // GPUs to cover the average demand
    double rps;
  };
  std::vector<Plan> plans;
  for (const SloTier& t : tiers) {
    if (t.background) continue;
    const double rps = rps_of(average_demand, t.id);
    const ConfigCandidate* unit = nullptr;
    int need = 0;
    // Best pair: fewest GPUs covering the demand, else the largest capacity.
    std::map<std::pair<int, int>, std::vector<const ConfigCandidate*>> by_pair;
    for (const ConfigCandidate& c : candidates) {
      if (c.tier_id == t.id) by_pair[{c.tp_prefill, c.tp_decode}].push_back(&c);
    }
    double best_cap = -1.0;
    for (auto& [pair, list] : by_pair) {
      const ConfigCandidate* cover = nullptr;
      for (const ConfigCandidate* c : list) {
        if (c->capacity >= rps - kTol) {
          cover = c;
          break;
        }
      }
      const int gpus = cover ? cover->gpus_used : list.back()->gpus_used;
      const double cap = cover ? 1e300 / gpus : list.back()->capacity;
      if (cap > best_cap + kTol) {
        best_cap = cap;
        unit = list.front();
        need = gpus;
      }
    }
    if (unit) plans.push_back({t.id, unit, need, rps});
  }

  // Every tier keeps at least one unit; the rest is apportioned by need.
  std::vector<int> share(plans.size(), 0);
  int total_need = 0, floor_sum = 0;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    share[i] = plans[i].unit->gpus_used;
    floor_sum += share[i];
    total_need += std::max(0, plans[i].need - share[i]);
  }
  int spare = pool_size - floor_sum;
  if (spare < 0) {
    throw ValidationError("split policy: pool too small for one group pair per tier");
  }
  if (total_need > 0) {
    const int budget = spare;
    for (std::size_t i = 0; i < plans.size(); ++i) {
      const int want = std::max(0, plans[i].need - share[i]);
      const int add = static_cast<int>(std::floor(static_cast<double>(budget) * want / total_need));
      share[i] += std::min(add, want);
      spare -= std::min(add, want);
    }
  }
  // Hand out what is left one GPU at a time to the busiest tiers.
  std::vector<std::size_t> by_rps(plans.size());
  for (std::size_t i = 0; i < plans.size(); ++i) by_rps[i] = i;
  std::stable_sort(by_rps.begin(), by_rps.end(),
                   [&](std::size_t a, std::size_t b) { return plans[a].rps > plans[b].rps; });
  for (std::size_t k = 0; spare > 0 && !by_rps.empty(); k = (k + 1) % by_rps.size()) {
    ++share[by_rps[k]];
    --spare;
  }

  std::vector<GpuGroup> groups;
  int leftover = 0;
  for (std::size_t i = 0; i < plans.size(); ++i) {
    const ConfigCandidate& u = *plans[i].unit;
    // Largest P whose balanced footprint fits the share.
    int best_p = 1, best_d = u.decode_groups;
    for (int p = 1;; ++p) {
      const auto found = std::find_if(candidates.begin(), candidates.end(), [&](const ConfigCandidate& c) {
        return c.tier_id == u.tier_id && c.tp_prefill == u.tp_prefill &&
               c.tp_decode == u.tp_decode && c.prefill_groups == p;
      });
      if (found == candidates.end() || found->gpus_used > share[i]) break;
      best_p = p;
      best_d = found->decode_groups;
    }
    int rest = share[i] - best_p * u.tp_prefill - best_d * u.tp_decode;
    for (int k = 0; k < best_p; ++k) groups.push_back({{}, u.tier_id, GroupStage::kPrefill, u.tp_prefill});
    for (int k = 0; k < best_d; ++k) groups.push_back({{}, u.tier_id, GroupStage::kDecode, u.tp_decode});
    for (; rest >= u.tp_decode; rest -= u.tp_decode) {
      groups.push_back({{}, u.tier_id, GroupStage::kDecode, u.tp_decode});
    }
    leftover += rest;
  }
  leftover += spare;
  const int min_tp = profile.tp_levels.front();
  for (; leftover >= min_tp; leftover -= min_tp) {
    groups.push_back({{}, kSharedTier, GroupStage::kBackground, min_tp});
  }
  ClusterConfig cfg = layout_groups(std::move(groups), pool_size, nullptr, 0);
  cfg.isolate_tiers = true;
  return std::make_unique<FixedPolicy>("split", std::move(cfg));
}

std::unique_ptr<Policy> make_oracle_policy(const PerfProfile& profile, std::vector<SloTier> tiers,
                                           int pool_size, PlannerOptions opt) {
  if (pool_size > 8) {
    throw std::invalid_argument("oracle policy is limited to pools of at most 8 GPUs");
  }
  return std::make_unique<OraclePolicy>(profile, std::move(tiers), pool_size, opt);
}

}  // namespace tpsim
