#include "tpsim/experiment.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <sstream>

#include "json.hpp"

namespace tpsim {

using nlohmann::json;

const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kAdaptive: return "adaptive";
    case PolicyKind::kStatic: return "static";
    case PolicyKind::kSplit: return "split";
    case PolicyKind::kOracle: return "oracle";
  }
  return "?";
}

PolicyKind parse_policy_kind(const std::string& s) {
  if (s == "adaptive") return PolicyKind::kAdaptive;
  if (s == "static") return PolicyKind::kStatic;
  if (s == "split") return PolicyKind::kSplit;
  if (s == "oracle") return PolicyKind::kOracle;
  throw ValidationError("policy.kind: unknown policy '" + s + "'");
}

namespace {

// Typed field access that reports the full path on failure.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }
  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  const json& raw(const char* key) const {
    if (!j_.contains(key)) throw ValidationError(at(key) + ": missing");
    return j_[key];
  }

  template <typename T>
  T get(const char* key) const {
    const json& v = raw(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ValidationError(at(key) + ": expected a number");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ValidationError(at(key) + ": expected an integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ValidationError(at(key) + ": expected true or false");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ValidationError(at(key) + ": expected a string");
      }
      return v.get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(at(key) + ": " + e.what());
    }
  }

  template <typename T>
  T get(const char* key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  Reader child(const char* key) const { return Reader(raw(key), at(key)); }

 private:
  const json& j_;
  std::string path_;
};

LengthDist parse_length(const Reader& r, LengthDist d) {
  d.median = r.get<double>("median", d.median);
  d.sigma = r.get<double>("sigma", d.sigma);
  d.max_len = r.get<int>("max_len", d.max_len);
  return d;
}

json length_json(const LengthDist& d) {
  return {{"median", d.median}, {"sigma", d.sigma}, {"max_len", d.max_len}};
}

PolicySpec parse_policy(const Reader& r) {
  PolicySpec p;
  try {
    p.kind = parse_policy_kind(r.get<std::string>("kind", "adaptive"));
  } catch (const ValidationError& e) {
    throw ValidationError(r.at("kind") + ": " + e.what());
  }
  p.name = r.get<std::string>("name", "");
  p.tp_prefill = r.get<int>("tp_prefill", p.tp_prefill);
  p.tp_decode = r.get<int>("tp_decode", p.tp_prefill);
  p.disaggregated = r.get<bool>("disaggregated", p.disaggregated);
  p.prefill_gpus = r.get<int>("prefill_gpus", p.prefill_gpus);
  p.weighted = r.get<bool>("weighted", p.weighted);
  if (p.tp_prefill < 1 || p.tp_decode < 1) throw ValidationError(r.at("tp_prefill") + ": must be >= 1");
  return p;
}

json policy_json(const PolicySpec& p) {
  json j = {{"kind", to_string(p.kind)},
            {"tp_prefill", p.tp_prefill},
            {"tp_decode", p.tp_decode},
            {"disaggregated", p.disaggregated},
            {"prefill_gpus", p.prefill_gpus},
            {"weighted", p.weighted}};
  if (!p.name.empty()) j["name"] = p.name;
  return j;
}

CostModelParams parse_migration(const Reader& r, CostModelParams c) {
  c.copy_bw_gbps = r.get<double>("copy_bw_gbps", c.copy_bw_gbps);
  c.link_bw_gbps = r.get<double>("link_bw_gbps", c.link_bw_gbps);
  c.per_transfer_overhead_us = r.get<double>("per_transfer_overhead_us", c.per_transfer_overhead_us);
  c.page_bytes = r.get<double>("page_bytes", c.page_bytes);
  c.chunk_bytes = r.get<double>("chunk_bytes", c.chunk_bytes);
  c.handshake_ms = r.get<double>("handshake_ms", c.handshake_ms);
  c.reload_ms = r.get<double>("reload_ms", c.reload_ms);
  c.kernel_init_ms = r.get<double>("kernel_init_ms", c.kernel_init_ms);
  c.validate();
  return c;
}

json migration_json(const CostModelParams& c) {
  return {{"copy_bw_gbps", c.copy_bw_gbps},
          {"link_bw_gbps", c.link_bw_gbps},
          {"per_transfer_overhead_us", c.per_transfer_overhead_us},
          {"page_bytes", c.page_bytes},
          {"chunk_bytes", c.chunk_bytes},
          {"handshake_ms", c.handshake_ms},
          {"reload_ms", c.reload_ms},
          {"kernel_init_ms", c.kernel_init_ms}};
}

std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.starts_with("builtin:")) return p;
  std::filesystem::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal().string();
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("config: malformed JSON (") + e.what() + ")");
  }
  const Reader r(doc, "");
  ExperimentConfig c;

  if (!r.has("profile")) throw ValidationError("profile: missing");
  c.profile = resolve(r.get<std::string>("profile"), base_dir);
  if (!c.profile.starts_with("builtin:") && !std::filesystem::exists(c.profile)) {
    throw ValidationError("profile: file '" + c.profile + "' does not exist");
  }
  c.pool_size = r.get<int>("pool_size", c.pool_size);
  if (c.pool_size < 1) throw ValidationError("pool_size: must be >= 1");

  if (r.has("tiers")) {
    const json& arr = r.raw("tiers");
    if (!arr.is_array()) throw ValidationError("tiers: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const Reader t(arr[i], "tiers[" + std::to_string(i) + "]");
      SloTier tier;
      tier.id = t.get<int>("id");
      tier.name = t.get<std::string>("name", "tier" + std::to_string(tier.id));
      tier.background = t.get<bool>("background", false);
      tier.ttft_target_ms = t.get<double>("ttft_ms", 0.0);
      tier.tpot_target_ms = t.get<double>("tpot_ms", 0.0);
      tier.nominal_prompt_len = t.get<double>("nominal_prompt_len", tier.nominal_prompt_len);
      tier.nominal_output_len = t.get<double>("nominal_output_len", tier.nominal_output_len);
      c.tiers.push_back(tier);
    }
    validate_tiers(c.tiers);
  }
  if (r.has("derive_slos")) {
    const Reader d = r.child("derive_slos");
    DeriveSlosOptions o;
    o.tp_min = d.get<int>("tp_min", o.tp_min);
    o.avg_prompt_len = d.get<double>("avg_prompt_len", o.avg_prompt_len);
    o.avg_output_len = d.get<double>("avg_output_len", o.avg_output_len);
    o.strict_batch = d.get<double>("strict_batch", o.strict_batch);
    o.relaxed_batch = d.get<double>("relaxed_batch", o.relaxed_batch);
    o.scale = d.get<double>("scale", o.scale);
    if (!(o.scale > 0.0)) throw ValidationError("derive_slos.scale: must be > 0");
    c.derive = o;
  }
  if (c.tiers.empty() && !c.derive) throw ValidationError("tiers: missing (or give derive_slos)");
  if (!c.tiers.empty() && c.derive) {
    throw ValidationError("tiers: give either tiers or derive_slos, not both");
  }

  const Reader tr = r.child("trace");
  if (tr.has("file") == tr.has("synthetic")) {
    throw ValidationError("trace: exactly one of 'file' or 'synthetic' is required");
  }
  if (tr.has("file")) {
    c.trace.file = resolve(tr.get<std::string>("file"), base_dir);
    if (!std::filesystem::exists(*c.trace.file)) {
      throw ValidationError("trace.file: '" + *c.trace.file + "' does not exist");
    }
  } else {
    const Reader s = tr.child("synthetic");
    SyntheticSpec spec;
    spec.duration = s.get<double>("duration_s", spec.duration);
    spec.seed = s.get<std::uint64_t>("seed", spec.seed);
    const json& streams = s.raw("streams");
    if (!streams.is_array()) throw ValidationError("trace.synthetic.streams: expected an array");
    for (std::size_t i = 0; i < streams.size(); ++i) {
      const Reader st(streams[i], "trace.synthetic.streams[" + std::to_string(i) + "]");
      TierStream ts;
      ts.tier_id = st.get<int>("tier");
      ts.rate = st.get<double>("rate");
      if (st.has("prompt")) ts.prompt = parse_length(st.child("prompt"), ts.prompt);
      if (st.has("output")) ts.output = parse_length(st.child("output"), ts.output);
      spec.streams.push_back(ts);
    }
    if (s.has("bursts")) {
      const json& bursts = s.raw("bursts");
      if (!bursts.is_array()) throw ValidationError("trace.synthetic.bursts: expected an array");
      for (std::size_t i = 0; i < bursts.size(); ++i) {
        const Reader b(bursts[i], "trace.synthetic.bursts[" + std::to_string(i) + "]");
        Burst burst;
        burst.start = b.get<double>("start_s");
        burst.end = b.get<double>("end_s");
        burst.multiplier = b.get<double>("multiplier");
        if (b.has("tier")) burst.tier_id = b.get<int>("tier");
        spec.bursts.push_back(burst);
      }
    }
    validate(spec);
    c.trace.synthetic = spec;
  }

  if (r.has("policy")) c.policy = parse_policy(r.child("policy"));
  if (r.has("baselines")) {
    const json& arr = r.raw("baselines");
    if (!arr.is_array()) throw ValidationError("baselines: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      c.baselines.push_back(parse_policy(Reader(arr[i], "baselines[" + std::to_string(i) + "]")));
    }
  }
  if (r.has("planner")) {
    const Reader p = r.child("planner");
    c.headroom = p.get<double>("headroom", c.headroom);
    c.epsilon = p.get<double>("epsilon", c.epsilon);
    if (!(c.headroom > 0.0)) throw ValidationError("planner.headroom: must be > 0");
    if (!(c.epsilon > 0.0)) throw ValidationError("planner.epsilon: must be > 0");
  }
  if (r.has("engine")) {
    const Reader e = r.child("engine");
    c.window_s = e.get<double>("window_s", c.window_s);
    if (e.has("switch_mode")) {
      try {
        c.switch_mode = parse_switch_mode(e.get<std::string>("switch_mode"));
      } catch (const std::invalid_argument& err) {
        throw ValidationError("engine.switch_mode: " + std::string(err.what()));
      }
    }
    c.seed = e.get<std::uint64_t>("seed", c.seed);
    c.kv_accounting = e.get<bool>("kv_accounting", c.kv_accounting);
    c.planning_delay_s = e.get<double>("planning_delay_s", c.planning_delay_s);
    c.drain_limit_s = e.get<double>("drain_limit_s", c.drain_limit_s);
    c.background_batch_cap = e.get<int>("background_batch_cap", c.background_batch_cap);
    if (!(c.window_s > 0.0)) throw ValidationError("engine.window_s: must be > 0");
  }
  if (r.has("migration")) c.migration = parse_migration(r.child("migration"), CostModelParams{});
  c.output_dir = resolve(r.get<std::string>("output_dir", c.output_dir), base_dir);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("config: file '" + path.string() + "' cannot be opened");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? "." : path.parent_path());
}

std::string dump_config(const ExperimentConfig& c) {
  json doc;
  doc["profile"] = c.profile;
  doc["pool_size"] = c.pool_size;
  if (!c.tiers.empty()) {
    json tiers = json::array();
    for (const SloTier& t : c.tiers) {
      tiers.push_back({{"id", t.id},
                       {"name", t.name},
                       {"background", t.background},
                       {"ttft_ms", t.ttft_target_ms},
                       {"tpot_ms", t.tpot_target_ms},
                       {"nominal_prompt_len", t.nominal_prompt_len},
                       {"nominal_output_len", t.nominal_output_len}});
    }
    doc["tiers"] = tiers;
  }
  if (c.derive) {
    const DeriveSlosOptions& o = *c.derive;
    doc["derive_slos"] = {{"tp_min", o.tp_min},
                          {"avg_prompt_len", o.avg_prompt_len},
                          {"avg_output_len", o.avg_output_len},
                          {"strict_batch", o.strict_batch},
                          {"relaxed_batch", o.relaxed_batch},
                          {"scale", o.scale}};
  }
  if (c.trace.file) {
    doc["trace"] = {{"file", *c.trace.file}};
  } else if (c.trace.synthetic) {
    const SyntheticSpec& s = *c.trace.synthetic;
    json streams = json::array();
    for (const TierStream& ts : s.streams) {
      streams.push_back({{"tier", ts.tier_id},
                         {"rate", ts.rate},
                         {"prompt", length_json(ts.prompt)},
                         {"output", length_json(ts.output)}});
    }
    json bursts = json::array();
    for (const Burst& b : s.bursts) {
      json jb = {{"start_s", b.start}, {"end_s", b.end}, {"multiplier", b.multiplier}};
      if (b.tier_id) jb["tier"] = *b.tier_id;
      bursts.push_back(jb);
    }
    doc["trace"] = {{"synthetic",
                     {{"duration_s", s.duration}, {"seed", s.seed}, {"streams", streams},
                      {"bursts", bursts}}}};
  }
  doc["policy"] = policy_json(c.policy);
  if (!c.baselines.empty()) {
    json arr = json::array();
    for (const PolicySpec& p : c.baselines) arr.push_back(policy_json(p));
    doc["baselines"] = arr;
  }
  doc["planner"] = {{"headroom", c.headroom}, {"epsilon", c.epsilon}};
  doc["engine"] = {{"window_s", c.window_s},
                   {"switch_mode", to_string(c.switch_mode)},
                   {"seed", c.seed},
                   {"kv_accounting", c.kv_accounting},
                   {"planning_delay_s", c.planning_delay_s},
                   {"drain_limit_s", c.drain_limit_s},
                   {"background_batch_cap", c.background_batch_cap}};
  if (c.migration) doc["migration"] = migration_json(*c.migration);
  doc["output_dir"] = c.output_dir;
  return doc.dump(2);
}

namespace {

// Mean of a lognormal clamped length, estimated by its unclamped mean.
double mean_length(const LengthDist& d) {
  return std::min<double>(d.max_len, d.median * std::exp(d.sigma * d.sigma / 2.0));
}

}  // namespace

Workload prepare(const ExperimentConfig& cfg) {
  Workload w;
  w.profile = load_profile(cfg.profile);
  w.migration = cfg.migration.value_or(w.profile.migration);
  w.profile.migration = w.migration;
  if (!cfg.tiers.empty()) {
    w.tiers = cfg.tiers;
  } else {
    auto [strict, relaxed] = derive_slos(w.profile, *cfg.derive);
    w.tiers = {strict, relaxed};
  }
  validate_tiers(w.tiers);

  if (cfg.trace.synthetic) {
    SyntheticSpec spec = *cfg.trace.synthetic;
    for (const TierStream& s : spec.streams) {
      if (!tier_index(w.tiers, s.tier_id)) {
        throw ValidationError("trace.synthetic.streams: unknown tier " + std::to_string(s.tier_id));
      }
    }
    w.trace = generate_trace(spec);
    w.duration_s = spec.duration;
    for (const SloTier& t : w.tiers) {
      TierDemand d{t.id};
      for (const TierStream& s : spec.streams) {
        if (s.tier_id != t.id) continue;
        d.rps_observed = s.rate;
        d.avg_prompt_len = mean_length(s.prompt);
        d.avg_output_len = mean_length(s.output);
      }
      w.initial_demand.push_back(d);
    }
  } else {
    w.trace = load_trace(*cfg.trace.file, w.tiers);
    w.duration_s = w.trace.empty() ? cfg.window_s
                                   : std::ceil(w.trace.back().arrival_time / cfg.window_s + 1e-9) *
                                         cfg.window_s;
  }
  w.average_demand = observe_demand(w.trace, 0.0, std::max(w.duration_s, 1e-9), w.tiers);
  if (w.initial_demand.empty()) w.initial_demand = w.average_demand;
  return w;
}

EngineConfig engine_config(const ExperimentConfig& cfg, const Workload& w) {
  EngineConfig e;
  e.pool_size = cfg.pool_size;
  e.window_s = cfg.window_s;
  e.switch_mode = cfg.switch_mode;
  e.seed = cfg.seed;
  e.kv_accounting = cfg.kv_accounting;
  e.planning_delay_s = cfg.planning_delay_s;
  e.drain_limit_s = cfg.drain_limit_s;
  e.headroom = cfg.headroom;
  e.background_batch_cap = cfg.background_batch_cap;
  e.initial_demand = w.initial_demand;
  e.migration = w.migration;
  return e;
}

namespace {

std::string default_name(const PolicySpec& s) {
  if (!s.name.empty()) return s.name;
  switch (s.kind) {
    case PolicyKind::kAdaptive: return s.weighted ? "adaptive" : "adaptive-unweighted";
    case PolicyKind::kSplit: return "split";
    case PolicyKind::kOracle: return "oracle";
    case PolicyKind::kStatic:
      if (!s.disaggregated) return "static-tp" + std::to_string(s.tp_prefill);
      return "static-p" + std::to_string(s.tp_prefill) + "d" + std::to_string(s.tp_decode);
  }
  return "?";
}

SimOutcome run_policy(const ExperimentConfig& cfg, const Workload& w, Policy& policy,
                      std::string name) {
  const EngineConfig e = engine_config(cfg, w);
  SimOutcome out;
  out.name = std::move(name);
  out.run = run(w.trace, w.tiers, w.profile, policy, e);
  out.report = goodput(out.run.records, w.tiers, 1.0, w.duration_s);
  out.report.name = out.name;
  attach_run_stats(out.report, out.run);
  return out;
}

}  // namespace

SimOutcome simulate(const ExperimentConfig& cfg, const Workload& w, const PolicySpec& spec) {
  PlannerOptions opt;
  opt.headroom = cfg.headroom;
  opt.epsilon = cfg.epsilon;
  opt.weighted = spec.weighted;
  const std::string name = default_name(spec);

  switch (spec.kind) {
    case PolicyKind::kAdaptive: {
      auto p = make_adaptive_policy(w.profile, w.tiers, cfg.pool_size, opt);
      return run_policy(cfg, w, *p, name);
    }
    case PolicyKind::kOracle: {
      std::unique_ptr<Policy> p;
      try {
        p = make_oracle_policy(w.profile, w.tiers, cfg.pool_size, opt);
      } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string("policy.kind: ") + e.what());
      }
      return run_policy(cfg, w, *p, name);
    }
    case PolicyKind::kSplit: {
      auto p = make_split_policy(w.profile, w.tiers, w.average_demand, cfg.pool_size, opt);
      return run_policy(cfg, w, *p, name);
    }
    case PolicyKind::kStatic: {
      StaticOptions so{spec.tp_prefill, spec.tp_decode, spec.disaggregated, spec.prefill_gpus};
      if (!so.disaggregated || so.prefill_gpus >= 0) {
        auto p = make_static_policy(so, cfg.pool_size);
        return run_policy(cfg, w, *p, name);
      }
      // Offline sweep over the prefill/decode split; keep the best.
      std::optional<SimOutcome> best;
      for (int pg = so.tp_prefill; pg < cfg.pool_size; pg += so.tp_prefill) {
        if ((cfg.pool_size - pg) % so.tp_decode != 0) continue;
        so.prefill_gpus = pg;
        auto p = make_static_policy(so, cfg.pool_size);
        SimOutcome o = run_policy(cfg, w, *p, name);
        if (!best || o.report.goodput_rps > best->report.goodput_rps) best = std::move(o);
      }
      if (!best) throw ValidationError("policy.prefill_gpus: no valid prefill/decode split");
      return std::move(*best);
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<SimOutcome> simulate_all(const ExperimentConfig& cfg) {
  const Workload w = prepare(cfg);
  std::vector<PolicySpec> specs{cfg.policy};
  specs.insert(specs.end(), cfg.baselines.begin(), cfg.baselines.end());
  std::vector<std::future<SimOutcome>> jobs;
  for (const PolicySpec& s : specs) {
    jobs.push_back(std::async(std::launch::async, [&cfg, &w, s] { return simulate(cfg, w, s); }));
  }
  std::vector<SimOutcome> out;
  for (auto& j : jobs) out.push_back(j.get());
  return out;
}

SweepParam parse_sweep_param(const std::string& s) {
  if (s == "rps_scale") return SweepParam::kRpsScale;
  if (s == "slo_scale") return SweepParam::kSloScale;
  if (s == "window") return SweepParam::kWindow;
  if (s == "pool_size") return SweepParam::kPoolSize;
  throw ValidationError("sweep.param: unknown parameter '" + s + "'");
}

const char* to_string(SweepParam p) {
  switch (p) {
    case SweepParam::kRpsScale: return "rps_scale";
    case SweepParam::kSloScale: return "slo_scale";
    case SweepParam::kWindow: return "window";
    case SweepParam::kPoolSize: return "pool_size";
  }
  return "?";
}

ExperimentConfig with_param(const ExperimentConfig& cfg, SweepParam p, double value) {
  ExperimentConfig c = cfg;
  switch (p) {
    case SweepParam::kRpsScale:
      if (!c.trace.synthetic) throw ValidationError("sweep rps_scale: needs a synthetic trace");
      if (!(value >= 0.0)) throw ValidationError("sweep rps_scale: values must be >= 0");
      for (TierStream& s : c.trace.synthetic->streams) s.rate *= value;
      break;
    case SweepParam::kSloScale:
      if (!(value > 0.0)) throw ValidationError("sweep slo_scale: values must be > 0");
      if (c.derive) c.derive->scale *= value;
      for (SloTier& t : c.tiers) {
        t.ttft_target_ms *= value;
        t.tpot_target_ms *= value;
      }
      break;
    case SweepParam::kWindow:
      if (!(value > 0.0)) throw ValidationError("sweep window: values must be > 0");
      c.window_s = value;
      break;
    case SweepParam::kPoolSize:
      if (value < 1.0 || value != std::floor(value)) {
        throw ValidationError("sweep pool_size: values must be positive integers");
      }
      c.pool_size = static_cast<int>(value);
      break;
  }
  return c;
}

std::vector<SweepPoint> sweep(const ExperimentConfig& cfg, SweepParam p,
                              const std::vector<double>& values) {
  std::vector<ExperimentConfig> cfgs;
  for (double v : values) cfgs.push_back(with_param(cfg, p, v));
  std::vector<std::future<std::vector<SimOutcome>>> jobs;
  for (const ExperimentConfig& c : cfgs) {
    jobs.push_back(std::async(std::launch::async, [&c] { return simulate_all(c); }));
  }
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    std::vector<SimOutcome> runs = jobs[i].get();
    std::vector<MetricsReport> reports;
    for (SimOutcome& o : runs) reports.push_back(std::move(o.report));
    out.push_back({values[i], compare(reports, 0)});
  }
  return out;
}

void write_records(std::ostream& out, std::span<const CompletionRecord> records) {
  for (const CompletionRecord& r : records) {
    json j = {{"id", r.request_id},
              {"tier", r.tier_id},
              {"arrival_s", r.arrival},
              {"first_token_s", r.first_token_time},
              {"completion_s", r.completion_time},
              {"prompt_len", r.prompt_len},
              {"output_len", r.output_len},
              {"feasible", r.feasible},
              {"slo_met", r.slo_met}};
    out << j.dump() << '\n';
  }
}

namespace {

json cluster_json(const ClusterConfig& c) {
  json groups = json::array();
  for (const GpuGroup& g : c.groups) {
    groups.push_back(
        {{"gpus", g.gpu_ids}, {"tier", g.tier_id}, {"stage", to_string(g.stage)}, {"tp", g.tp}});
  }
  return {{"window", c.window_index}, {"isolate_tiers", c.isolate_tiers}, {"groups", groups}};
}

}  // namespace

void write_windows(std::ostream& out, std::span<const WindowLog> windows) {
  for (const WindowLog& w : windows) {
    json demand = json::array();
    for (const TierDemand& d : w.demand) {
      demand.push_back({{"tier", d.tier_id},
                        {"rps", d.rps_observed},
                        {"served_rps", d.served_rps},
                        {"avg_prompt_len", d.avg_prompt_len},
                        {"avg_output_len", d.avg_output_len}});
    }
    json j = {{"window", w.window_index},
              {"start_s", w.start},
              {"end_s", w.end},
              {"demand", demand},
              {"groups_changed", w.groups_changed},
              {"pause_ms", w.pause_ms},
              {"moved_bytes", w.moved_bytes},
              {"config", cluster_json(w.config)}};
    out << j.dump() << '\n';
  }
}

std::string config_to_json(const ClusterConfig& cfg) { return cluster_json(cfg).dump(2); }

std::string plan_to_json(const MigrationPlan& plan) {
  json transfers = json::array();
  for (const Transfer& t : plan.transfers) {
    transfers.push_back({{"src_gpu", t.src_gpu},
                         {"dst_gpu", t.dst_gpu},
                         {"request", t.request_id},
                         {"head_lo", t.head_lo},
                         {"head_hi", t.head_hi},
                         {"bytes", t.bytes}});
  }
  return transfers.dump(2);
}

}  // namespace tpsim
