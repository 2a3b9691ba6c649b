#include "tpsim/engine.h"

#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <memory>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_map>

namespace tpsim {

void TokenBucket::refill(double now) {
  if (now > last) {
    level = std::min(burst, level + rate * (now - last));
    last = now;
  }
}

void TokenBucket::reset_rate(double new_rate, double new_burst, double now) {
  refill(now);
  rate = new_rate;
  burst = new_burst;
  level = std::min(level, burst);
}

bool TokenBucket::try_take(double now) {
  refill(now);
  if (level >= 1.0 - 1e-12) {
    level = std::max(0.0, level - 1.0);
    return true;
  }
  return false;
}

TokenBucket* DispatchGroup::bucket_for(int tier) {
  for (auto& [t, b] : buckets) {
    if (t == tier) return &b;
  }
  return nullptr;
}

Placement Dispatcher::dispatch(const Request& req, bool background, double now,
                               std::span<DispatchGroup* const> groups, bool isolate_tiers) {
  scratch_.clear();
  if (background) {
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const DispatchGroup& g = *groups[i];
      if (g.accepting && (g.stage == GroupStage::kBackground || g.stage == GroupStage::kUnified)) {
        scratch_.push_back(static_cast<int>(i));
      }
    }
    if (scratch_.empty()) {
      for (std::size_t i = 0; i < groups.size(); ++i) {
        if (groups[i]->accepting && groups[i]->stage != GroupStage::kDecode) {
          scratch_.push_back(static_cast<int>(i));
        }
      }
    }
    if (scratch_.empty()) return {};
    return {scratch_[rr_background_++ % scratch_.size()], false};
  }

  int best = -1;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    DispatchGroup& g = *groups[i];
    if (!g.accepting) continue;
    if (g.stage != GroupStage::kPrefill && g.stage != GroupStage::kUnified) continue;
    if (g.tier_id != req.tier_id && g.tier_id != kSharedTier) continue;
    TokenBucket* b = g.bucket_for(req.tier_id);
    if (!b) continue;
    b->refill(now);
    if (b->level < 1.0 - 1e-12) continue;
    if (best < 0 || g.load < groups[best]->load) best = static_cast<int>(i);
  }
  if (best >= 0) {
    groups[best]->bucket_for(req.tier_id)->try_take(now);
    return {best, true};
  }

  for (std::size_t i = 0; i < groups.size(); ++i) {
    const DispatchGroup& g = *groups[i];
    if (!g.accepting || g.stage == GroupStage::kDecode) continue;
    if (isolate_tiers && g.tier_id != req.tier_id && g.stage != GroupStage::kBackground) continue;
    scratch_.push_back(static_cast<int>(i));
  }
  if (scratch_.empty()) return {};
  return {scratch_[rr_spill_++ % scratch_.size()], false};
}

void EngineConfig::validate() const {
  if (pool_size < 1) throw ValidationError("pool_size: must be >= 1");
  if (!(window_s > 0.0)) throw ValidationError("engine.window_s: must be > 0");
  if (!(planning_delay_s >= 0.0) || planning_delay_s >= window_s) {
    throw ValidationError("engine.planning_delay_s: must be in [0, window_s)");
  }
  if (!(drain_limit_s >= 0.0)) throw ValidationError("engine.drain_limit_s: must be >= 0");
  if (!(headroom > 0.0)) throw ValidationError("planner.headroom: must be > 0");
  if (background_batch_cap < 1) throw ValidationError("engine.background_batch_cap: must be >= 1");
  migration.validate();
}

namespace {

enum class Ev : std::uint8_t { kIterationDone, kDecodeEnqueue, kResume, kTick, kApply };

struct Event {
  double t;
  int prio;
  std::uint64_t seq;
  Ev kind;
  int group;
  int req;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    if (a.t != b.t) return a.t > b.t;
    if (a.prio != b.prio) return a.prio > b.prio;
    return a.seq > b.seq;
  }
};

struct Live {
  const Request* req = nullptr;
  const SloTier* tier = nullptr;
  bool feasible = false;
  double first_token = -1.0;  // < 0 until prefill completes
  int generated = 0;
  bool done = false;

  bool has_kv() const { return first_token >= 0.0; }
};

struct Group {
  int uid = 0;
  GpuGroup g;
  DispatchGroup route;
  std::deque<int> feasible_q, best_effort_q, background_q;
  std::deque<int> waiting;   // KV resident or arriving, not yet in the decode batch
  std::vector<int> running;  // decode batch
  std::vector<int> batch;    // prefill batch in flight
  bool busy = false;
  bool prefill_iter = false;
  double busy_until = 0.0;
  double resume = 0.0;
  bool resume_scheduled = false;
  bool retired = false;
  int incoming = 0;
  int admitted = 0;  // feasible admissions this window

  bool prefill_pending() const {
    return !feasible_q.empty() || !best_effort_q.empty() || !background_q.empty();
  }
  int decode_load() const {
    return static_cast<int>(running.size() + waiting.size()) + incoming;
  }
};

class Sim {
 public:
  Sim(std::span<const Request> trace, std::span<const SloTier> tiers, const PerfProfile& profile,
      Policy& policy, const EngineConfig& cfg)
      : trace_(trace), tiers_(tiers), profile_(profile), policy_(policy), cfg_(cfg) {}

  RunResult run();

 private:
  // Events.
  void push(double t, int prio, Ev kind, int group = -1, int req = -1) {
    heap_.push({t, prio, seq_++, kind, group, req});
  }

  // Requests.
  void on_arrival(int i);
  void dispatch_request(int i);
  void complete(int i);
  void preempt(int i);

  // Groups.
  Group& grp(int uid) { return *groups_[uid]; }
  int cap_for(const Group& g, const Live& r, Stage stage) const;
  void try_start(Group& g);
  void start_prefill(Group& g);
  void start_decode(Group& g);
  void on_iteration_done(Group& g);
  void on_decode_enqueue(int i, Group& g);
  int choose_decode_dest(int i, const Group* from) const;
  void handoff(int i, Group& from);
  void deliver(int i, Group& dest, double t);
  double kv_capacity_bytes(const Group& g) const;
  double kv_bytes_of(int i) const;

  // Control.
  void on_tick();
  void apply(const ClusterConfig& cfg, bool initial);
  void refresh_routes();
  std::vector<TierDemand> demand_for_window(double start, double end);
  void audit(Group& g, int window_index);

  std::span<const Request> trace_;
  std::span<const SloTier> tiers_;
  const PerfProfile& profile_;
  Policy& policy_;
  const EngineConfig& cfg_;

  double now_ = 0.0;
  std::uint64_t seq_ = 0;
  std::priority_queue<Event, std::vector<Event>, EventLater> heap_;
  std::size_t next_arrival_ = 0;

  std::vector<Live> live_;
  std::vector<std::unique_ptr<Group>> groups_;
  std::vector<int> active_;  // uids in config order
  std::vector<DispatchGroup*> route_view_;
  bool isolate_ = false;
  Dispatcher dispatcher_;
  EnvelopeSet envs_;
  ClusterConfig config_;
  std::deque<int> parked_;
  std::unordered_map<int, std::pair<int, double>> pending_dest_;  // req -> (group uid, ready)
  std::map<int, ClusterConfig> pending_apply_;
  int window_ = 0;

  std::vector<double> cum_prompt_, cum_output_;
  std::vector<int> cum_count_;

  RunResult out_;
};

int Sim::cap_for(const Group& g, const Live& r, Stage stage) const {
  const int bg = cfg_.background_batch_cap;
  if (g.g.stage == GroupStage::kBackground) return bg;
  const int tier = g.g.tier_id != kSharedTier ? g.g.tier_id : r.tier->id;
  const ThroughputEnvelope* env = envs_.find(tier, g.g.tp);
  if (!env) return bg;
  const int cap = stage == Stage::kPrefill ? env->prefill_batch_cap : env->decode_batch_cap;
  return std::max(1, cap);
}

double Sim::kv_bytes_of(int i) const {
  const Live& r = live_[i];
  return profile_.kv_bytes(r.req->prompt_len + r.generated);
}

double Sim::kv_capacity_bytes(const Group& g) const {
  const double free_gb = profile_.gpu_memory_gb - weight_memory(WeightMode::kPerTpCopies, profile_);
  return std::max(0.0, free_gb) * 1e9 * g.g.tp;
}

void Sim::on_arrival(int i) {
  ++out_.arrived;
  const Live& r = live_[i];
  if (auto idx = tier_index(tiers_, r.req->tier_id)) {
    cum_prompt_[*idx] += r.req->prompt_len;
    cum_output_[*idx] += r.req->output_len;
    ++cum_count_[*idx];
  }
  dispatch_request(i);
}

void Sim::dispatch_request(int i) {
  Live& r = live_[i];
  if (r.has_kv()) {
    // Already prefilled: only needs a decode slot.
    const int dest = choose_decode_dest(i, nullptr);
    if (dest < 0) {
      parked_.push_back(i);
      return;
    }
    deliver(i, grp(dest), std::max(now_, grp(dest).resume));
    return;
  }
  const Placement p = dispatcher_.dispatch(*r.req, r.tier->background, now_, route_view_, isolate_);
  if (p.group < 0) {
    parked_.push_back(i);
    return;
  }
  Group& g = grp(active_[p.group]);
  r.feasible = p.feasible;
  if (r.tier->background) {
    g.background_q.push_back(i);
  } else if (p.feasible) {
    g.feasible_q.push_back(i);
    ++g.admitted;
  } else {
    g.best_effort_q.push_back(i);
  }
  ++g.route.load;
  try_start(g);
}

void Sim::complete(int i) {
  Live& r = live_[i];
  r.done = true;
  CompletionRecord rec;
  rec.request_id = r.req->id;
  rec.tier_id = r.req->tier_id;
  rec.arrival = r.req->arrival_time;
  rec.first_token_time = r.first_token;
  rec.completion_time = now_;
  rec.prompt_len = r.req->prompt_len;
  rec.output_len = r.req->output_len;
  rec.feasible = r.feasible;
  rec.slo_met = r.tier->met_by(rec.ttft(), rec.tpot());
  out_.records.push_back(rec);
  ++out_.completed;
}

void Sim::preempt(int i) {
  Live& r = live_[i];
  r.first_token = -1.0;
  r.generated = 0;
  r.feasible = false;
  ++out_.preemptions;
  dispatch_request(i);
}

void Sim::try_start(Group& g) {
  if (g.busy || g.retired) return;
  if (now_ < g.resume) {
    if (!g.resume_scheduled) {
      g.resume_scheduled = true;
      push(g.resume, 0, Ev::kResume, g.uid);
    }
    return;
  }
  const bool prefill = g.prefill_pending();
  const bool decode = !g.running.empty() || !g.waiting.empty();
  if (!prefill && !decode) return;

  switch (g.g.stage) {
    case GroupStage::kPrefill:
      prefill ? start_prefill(g) : start_decode(g);
      break;
    case GroupStage::kDecode:
      decode ? start_decode(g) : start_prefill(g);
      break;
    case GroupStage::kUnified:
    case GroupStage::kBackground: {
      // Prefill first unless the decode batch is already full.
      int cap = std::numeric_limits<int>::max();
      for (int i : g.running) cap = std::min(cap, cap_for(g, live_[i], Stage::kDecode));
      if (prefill && (static_cast<int>(g.running.size()) < cap || !decode)) {
        start_prefill(g);
      } else {
        start_decode(g);
      }
      break;
    }
  }
}

void Sim::start_prefill(Group& g) {
  int cap = std::numeric_limits<int>::max();
  double tokens = 0.0;
  for (std::deque<int>* q : {&g.feasible_q, &g.best_effort_q, &g.background_q}) {
    while (!q->empty()) {
      const int i = q->front();
      const int c = std::min(cap, cap_for(g, live_[i], Stage::kPrefill));
      if (static_cast<int>(g.batch.size()) + 1 > c) break;
      cap = c;
      g.batch.push_back(i);
      tokens += live_[i].req->prompt_len;
      q->pop_front();
    }
    if (static_cast<int>(g.batch.size()) >= cap) break;
  }
  if (g.batch.empty()) throw std::logic_error("empty prefill batch");
  // Packed batch: costed at its mean prompt length.
  const double n = static_cast<double>(g.batch.size());
  const double ms = profile_.lookup_latency(Stage::kPrefill, g.g.tp, n, tokens / n);
  g.busy = true;
  g.prefill_iter = true;
  g.busy_until = now_ + ms / 1e3;
  push(g.busy_until, 0, Ev::kIterationDone, g.uid);
}

void Sim::start_decode(Group& g) {
  int cap = std::numeric_limits<int>::max();
  for (int i : g.running) cap = std::min(cap, cap_for(g, live_[i], Stage::kDecode));
  double kv = 0.0;
  if (cfg_.kv_accounting) {
    for (int i : g.running) kv += kv_bytes_of(i);
  }
  const double kv_cap = cfg_.kv_accounting ? kv_capacity_bytes(g) : 0.0;

  while (!g.waiting.empty()) {
    const int i = g.waiting.front();
    const int c = std::min(cap, cap_for(g, live_[i], Stage::kDecode));
    if (static_cast<int>(g.running.size()) + 1 > c) break;
    if (cfg_.kv_accounting && kv + kv_bytes_of(i) > kv_cap) {
      // Make room by evicting the newest best-effort request in the batch.
      int victim = -1;
      for (int j : g.running) {
        if (!live_[j].feasible && !live_[j].tier->background &&
            (victim < 0 || live_[j].req->arrival_time > live_[victim].req->arrival_time)) {
          victim = j;
        }
      }
      if (victim < 0 || live_[victim].req->arrival_time <= live_[i].req->arrival_time) break;
      std::erase(g.running, victim);
      kv -= kv_bytes_of(victim);
      preempt(victim);
      continue;
    }
    cap = c;
    kv += kv_bytes_of(i);
    g.running.push_back(i);
    g.waiting.pop_front();
  }
  if (g.running.empty()) {
    // Nothing admissible yet (memory bound); wait for the next delivery.
    return;
  }
  // Caps can shrink when envelopes are re-derived; the running batch is left alone.

  double ctx = 0.0;
  for (int i : g.running) ctx += live_[i].req->prompt_len + live_[i].generated;
  ctx /= static_cast<double>(g.running.size());
  const double ms = profile_.lookup_latency(Stage::kDecode, g.g.tp,
                                            static_cast<double>(g.running.size()), ctx);
  g.busy = true;
  g.prefill_iter = false;
  g.busy_until = now_ + ms / 1e3;
  push(g.busy_until, 0, Ev::kIterationDone, g.uid);
}

int Sim::choose_decode_dest(int i, const Group* from) const {
  const Live& r = live_[i];
  int best = -1;
  auto better = [&](int uid) {
    return best < 0 || groups_[uid]->decode_load() < groups_[best]->decode_load();
  };
  for (int uid : active_) {
    const Group& g = *groups_[uid];
    if (g.g.stage != GroupStage::kDecode && g.g.stage != GroupStage::kUnified) continue;
    if (g.g.tier_id != r.tier->id && g.g.tier_id != kSharedTier) continue;
    if (better(uid)) best = uid;
  }
  if (best >= 0) return best;
  if (from && !from->retired) return from->uid;
  for (int uid : active_) {
    const Group& g = *groups_[uid];
    if (g.g.stage == GroupStage::kPrefill) continue;
    if (better(uid)) best = uid;
  }
  if (best >= 0) return best;
  for (int uid : active_) {
    if (better(uid)) best = uid;
  }
  return best;
}

void Sim::deliver(int i, Group& dest, double t) {
  ++dest.incoming;
  push(t, 0, Ev::kDecodeEnqueue, dest.uid, i);
}

void Sim::handoff(int i, Group& from) {
  const int dest = choose_decode_dest(i, &from);
  if (dest < 0) {
    parked_.push_back(i);
    return;
  }
  Group& d = grp(dest);
  if (dest == from.uid) {
    d.waiting.push_back(i);
    return;
  }
  const Live& r = live_[i];
  const int heads = profile_.total_kv_heads;
  const KvRequest kv{r.req->id, r.req->prompt_len};
  const KvLayout src{from.g.gpu_ids, heads, {kv}};
  const KvLayout dst{d.g.gpu_ids, heads, {kv}};
  const MigrationPlan plan = plan_relayout(std::span<const KvLayout>(&src, 1),
                                           std::span<const KvLayout>(&dst, 1),
                                           profile_.kv_bytes_per_token_per_head);
  const double ms = latency_pipelined(plan, cfg_.migration);
  deliver(i, d, std::max(now_ + ms / 1e3, d.resume));
}

void Sim::on_iteration_done(Group& g) {
  g.busy = false;
  if (g.prefill_iter) {
    std::vector<int> batch;
    batch.swap(g.batch);
    for (int i : batch) {
      Live& r = live_[i];
      --g.route.load;
      r.first_token = now_;
      r.generated = 1;
      if (r.req->output_len <= 1) {
        complete(i);
      } else {
        handoff(i, g);
      }
    }
  } else {
    std::vector<int> still;
    for (int i : g.running) {
      Live& r = live_[i];
      ++r.generated;
      if (r.generated >= r.req->output_len) {
        complete(i);
      } else {
        still.push_back(i);
      }
    }
    g.running.swap(still);
  }

  if (g.retired) {
    std::vector<int> left(g.running.begin(), g.running.end());
    left.insert(left.end(), g.waiting.begin(), g.waiting.end());
    g.running.clear();
    g.waiting.clear();
    for (int i : left) {
      auto it = pending_dest_.find(i);
      int dest = -1;
      double ready = now_;
      if (it != pending_dest_.end() && !grp(it->second.first).retired) {
        dest = it->second.first;
        ready = it->second.second;
      } else {
        dest = choose_decode_dest(i, nullptr);
        if (dest >= 0) ready = grp(dest).resume;
      }
      if (it != pending_dest_.end()) pending_dest_.erase(it);
      if (dest < 0) {
        parked_.push_back(i);
      } else {
        deliver(i, grp(dest), std::max(now_, ready));
      }
    }
    return;
  }
  try_start(g);
}

void Sim::on_decode_enqueue(int i, Group& g) {
  --g.incoming;
  if (g.retired) {
    const int dest = choose_decode_dest(i, nullptr);
    if (dest < 0) {
      parked_.push_back(i);
    } else {
      deliver(i, grp(dest), std::max(now_, grp(dest).resume));
    }
    return;
  }
  g.waiting.push_back(i);
  try_start(g);
}

std::vector<TierDemand> Sim::demand_for_window(double start, double end) {
  std::vector<TierDemand> d = observe_demand(trace_, start, end, tiers_);
  for (std::size_t k = 0; k < d.size(); ++k) {
    d[k].served_rps = 0.0;
    if (d[k].avg_prompt_len < 1.0 && cum_count_[k] > 0) {
      d[k].avg_prompt_len = cum_prompt_[k] / cum_count_[k];
      d[k].avg_output_len = cum_output_[k] / cum_count_[k];
    }
  }
  return d;
}

void Sim::audit(Group& g, int window_index) {
  if (g.g.tier_id == kSharedTier || g.route.buckets.empty()) {
    g.admitted = 0;
    return;
  }
  const TokenBucket& b = g.route.buckets.front().second;
  out_.audits.push_back({g.uid, window_index, g.admitted, b.rate, b.burst});
  g.admitted = 0;
}

void Sim::refresh_routes() {
  for (int uid : active_) {
    Group& g = grp(uid);
    std::vector<int> tiers;
    if (g.g.stage == GroupStage::kPrefill || g.g.stage == GroupStage::kUnified) {
      if (g.g.tier_id == kSharedTier) {
        for (const SloTier& t : tiers_) {
          if (!t.background) tiers.push_back(t.id);
        }
      } else {
        tiers.push_back(g.g.tier_id);
      }
    }
    for (int t : tiers) {
      const ThroughputEnvelope* env = envs_.find(t, g.g.tp);
      const double rate = env ? env->thp : 0.0;
      const double burst = rate * cfg_.window_s;
      if (TokenBucket* b = g.route.bucket_for(t)) {
        b->reset_rate(rate, burst, now_);
      } else {
        g.route.buckets.push_back({t, TokenBucket::full(rate, burst, now_)});
      }
    }
  }
}

void Sim::apply(const ClusterConfig& cfg, bool initial) {
  cfg.validate(cfg_.pool_size);
  // Match unchanged groups.
  std::vector<int> next_active;
  std::vector<bool> kept(groups_.size(), false);
  std::vector<int> created;
  for (const GpuGroup& ng : cfg.groups) {
    int match = -1;
    for (int uid : active_) {
      if (!kept[uid] && grp(uid).g == ng) {
        match = uid;
        break;
      }
    }
    if (match >= 0) {
      kept[match] = true;
      next_active.push_back(match);
      continue;
    }
    auto g = std::make_unique<Group>();
    g->uid = static_cast<int>(groups_.size());
    g->g = ng;
    g->route.tier_id = ng.tier_id;
    g->route.stage = ng.stage;
    g->resume = now_;
    next_active.push_back(g->uid);
    created.push_back(g->uid);
    groups_.push_back(std::move(g));
    kept.push_back(true);
  }
  std::vector<int> retired;
  for (int uid : active_) {
    if (!kept[uid]) retired.push_back(uid);
  }
  active_ = std::move(next_active);
  isolate_ = cfg.isolate_tiers;
  route_view_.clear();
  for (int uid : active_) route_view_.push_back(&grp(uid).route);
  config_ = cfg;
  refresh_routes();

  std::vector<int> requeue;
  std::vector<std::pair<int, int>> moves;  // (request, from uid)
  for (int uid : retired) {
    Group& g = grp(uid);
    audit(g, window_);
    g.retired = true;
    g.route.accepting = false;
    for (std::deque<int>* q : {&g.feasible_q, &g.best_effort_q, &g.background_q}) {
      requeue.insert(requeue.end(), q->begin(), q->end());
      q->clear();
    }
    g.route.load = 0;
    for (int i : g.waiting) moves.push_back({i, uid});
    g.waiting.clear();
    if (!g.busy) {
      for (int i : g.running) moves.push_back({i, uid});
      g.running.clear();
    } else if (!g.prefill_iter) {
      // Still computing; they leave when the iteration ends.
      for (int i : g.running) moves.push_back({i, -1 - uid});
    }
  }

  // Destinations and the combined migration plan.
  std::map<int, KvLayout> src_layouts, dst_layouts;
  std::vector<std::pair<int, int>> dest_of;  // (request, dest uid)
  for (auto [i, from] : moves) {
    const int src_uid = from >= 0 ? from : -1 - from;
    const int dest = choose_decode_dest(i, nullptr);
    dest_of.push_back({i, dest});
    if (dest < 0) continue;
    ++grp(dest).incoming;  // spreads the remaining moves; undone below
    const KvRequest kv{live_[i].req->id, live_[i].req->prompt_len + live_[i].generated};
    auto& s = src_layouts[src_uid];
    s.gpus = grp(src_uid).g.gpu_ids;
    s.total_heads = profile_.total_kv_heads;
    s.requests.push_back(kv);
    auto& d = dst_layouts[dest];
    d.gpus = grp(dest).g.gpu_ids;
    d.total_heads = profile_.total_kv_heads;
    d.requests.push_back(kv);
  }
  std::vector<KvLayout> olds, news;
  for (auto& [uid, l] : src_layouts) olds.push_back(l);
  for (auto& [uid, l] : dst_layouts) news.push_back(l);
  const MigrationPlan plan = plan_relayout(olds, news, profile_.kv_bytes_per_token_per_head);

  auto subplan = [&](const Group& g) {
    MigrationPlan p;
    for (const Transfer& t : plan.transfers) {
      if (std::find(g.g.gpu_ids.begin(), g.g.gpu_ids.end(), t.dst_gpu) != g.g.gpu_ids.end()) {
        p.transfers.push_back(t);
      }
    }
    return p;
  };

  double max_pause = 0.0;
  if (!initial) {
    for (int uid : created) {
      Group& g = grp(uid);
      double start = now_;
      for (int r : retired) {
        const Group& old = grp(r);
        if (!old.busy) continue;
        for (int id : g.g.gpu_ids) {
          if (std::find(old.g.gpu_ids.begin(), old.g.gpu_ids.end(), id) != old.g.gpu_ids.end()) {
            start = std::max(start, old.busy_until);
          }
        }
      }
      const double cost_ms = switch_cost(cfg_.switch_mode, subplan(g), cfg_.migration);
      g.resume = start + cost_ms / 1e3;
      out_.total_pause_s += g.resume - now_;
      max_pause = std::max(max_pause, (g.resume - now_) * 1e3);
    }
    out_.migrations += static_cast<int>(created.size());
    out_.moved_bytes += plan.total_bytes();
  }
  if (!out_.windows.empty()) {
    WindowLog& log = out_.windows.back();
    log.config = cfg;
    log.groups_changed = initial ? 0 : static_cast<int>(created.size());
    log.pause_ms = max_pause;
    log.moved_bytes = plan.total_bytes();
  }

  for (auto [i, dest] : dest_of) {
    const bool waiting_on_iteration = std::any_of(moves.begin(), moves.end(), [&](auto m) {
      return m.first == i && m.second < 0;
    });
    if (dest < 0) {
      if (!waiting_on_iteration) parked_.push_back(i);
      continue;
    }
    Group& d = grp(dest);
    --d.incoming;
    double ready = d.resume;
    if (std::find(created.begin(), created.end(), dest) == created.end()) {
      // Kept group: not paused, only waits for the bytes.
      const MigrationPlan p = subplan(d);
      const double ms = cfg_.switch_mode == SwitchMode::kWarm
                            ? cfg_.migration.handshake_ms + latency_pipelined(p, cfg_.migration)
                            : latency_per_page(p, cfg_.migration);
      ready = now_ + ms / 1e3;
    }
    if (waiting_on_iteration) {
      pending_dest_[i] = {dest, ready};
    } else {
      deliver(i, d, std::max(now_, ready));
    }
  }

  std::deque<int> parked;
  parked.swap(parked_);
  for (int i : requeue) dispatch_request(i);
  for (int i : parked) dispatch_request(i);
  for (int uid : active_) try_start(grp(uid));
}

void Sim::on_tick() {
  const double w = cfg_.window_s;
  const int k = window_ + 1;
  const double start = window_ * w;
  const double end = k * w;

  std::vector<TierDemand> observed = demand_for_window(start, end);
  // Served: SLO-met completions in [start, end), attributed per tier.
  {
    std::map<int, int> met;
    for (auto it = out_.records.rbegin(); it != out_.records.rend(); ++it) {
      if (it->completion_time < start) break;
      if (it->completion_time < end && it->slo_met) ++met[it->tier_id];
    }
    for (TierDemand& d : observed) d.served_rps = met[d.tier_id] / w;
  }
  for (int uid : active_) audit(grp(uid), window_);
  window_ = k;

  envs_ = make_envelopes(profile_, tiers_, observed, cfg_.headroom);
  refresh_routes();

  WindowLog log;
  log.window_index = k;
  log.start = start;
  log.end = end;
  log.demand = observed;
  log.config = config_;
  out_.windows.push_back(log);

  if (policy_.adaptive()) {
    const std::vector<TierDemand> upcoming = observe_demand(trace_, end, end + w, tiers_);
    PlanContext ctx;
    ctx.window_index = k;
    ctx.observed = observed;
    ctx.upcoming = upcoming;
    ctx.previous = &config_;
    ClusterConfig next = policy_.plan(ctx);
    if (cfg_.planning_delay_s > 0.0) {
      pending_apply_[k] = std::move(next);
      push(now_ + cfg_.planning_delay_s, 1, Ev::kApply, k);
    } else {
      apply(next, false);
    }
  } else {
    // Parked work may fit now that buckets refilled.
    std::deque<int> parked;
    parked.swap(parked_);
    for (int i : parked) dispatch_request(i);
  }

  const double last = trace_.empty() ? 0.0 : trace_.back().arrival_time;
  const bool arrivals_left = next_arrival_ < trace_.size();
  const bool work_left = out_.completed < out_.arrived;
  if (arrivals_left || (work_left && end + w <= last + cfg_.drain_limit_s)) {
    push(end + w, 1, Ev::kTick);
  }
}

RunResult Sim::run() {
  cfg_.validate();
  validate_tiers(tiers_);
  live_.resize(trace_.size());
  for (std::size_t i = 0; i < trace_.size(); ++i) {
    if (i > 0 && trace_[i].arrival_time < trace_[i - 1].arrival_time) {
      throw ValidationError("trace must be sorted by arrival time");
    }
    const auto idx = tier_index(tiers_, trace_[i].tier_id);
    if (!idx) throw ValidationError("request " + std::to_string(trace_[i].id) + ": unknown tier");
    live_[i].req = &trace_[i];
    live_[i].tier = &tiers_[*idx];
  }
  cum_prompt_.assign(tiers_.size(), 0.0);
  cum_output_.assign(tiers_.size(), 0.0);
  cum_count_.assign(tiers_.size(), 0);

  envs_ = make_envelopes(profile_, tiers_, cfg_.initial_demand, cfg_.headroom);
  {
    const std::vector<TierDemand> upcoming = observe_demand(trace_, 0.0, cfg_.window_s, tiers_);
    PlanContext ctx;
    ctx.window_index = 0;
    ctx.observed = cfg_.initial_demand;
    ctx.upcoming = upcoming;
    WindowLog log;
    log.demand = cfg_.initial_demand;
    out_.windows.push_back(log);
    apply(policy_.plan(ctx), true);
  }
  if (!trace_.empty()) push(cfg_.window_s, 1, Ev::kTick);

  while (true) {
    const bool have_event = !heap_.empty();
    const bool have_arrival = next_arrival_ < trace_.size();
    if (!have_event && !have_arrival) break;
    // Arrivals rank after every event kind at the same instant.
    if (have_arrival && (!have_event || trace_[next_arrival_].arrival_time < heap_.top().t)) {
      now_ = trace_[next_arrival_].arrival_time;
      on_arrival(static_cast<int>(next_arrival_++));
      continue;
    }
    const Event e = heap_.top();
    heap_.pop();
    if (e.t < now_) throw std::logic_error("event time went backwards");
    now_ = e.t;
    switch (e.kind) {
      case Ev::kIterationDone: on_iteration_done(grp(e.group)); break;
      case Ev::kDecodeEnqueue: on_decode_enqueue(e.req, grp(e.group)); break;
      case Ev::kResume:
        grp(e.group).resume_scheduled = false;
        try_start(grp(e.group));
        break;
      case Ev::kTick: on_tick(); break;
      case Ev::kApply: {
        auto it = pending_apply_.find(e.group);
        ClusterConfig next = std::move(it->second);
        pending_apply_.erase(it);
        apply(next, false);
        break;
      }
    }
  }

  out_.end_time = now_;
  out_.parked = parked_.size();
  out_.in_flight = out_.arrived - out_.completed - out_.parked;
  return std::move(out_);
}

}  // namespace

RunResult run(std::span<const Request> trace, std::span<const SloTier> tiers,
              const PerfProfile& profile, Policy& policy, const EngineConfig& config) {
  Sim sim(trace, tiers, profile, policy, config);
  return sim.run();
}

}  // namespace tpsim
