// tpsim: command-line front end for the simulator.
#include <chrono>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "tpsim/experiment.h"

using nlohmann::json;
using namespace tpsim;

namespace {

constexpr int kExitValidation = 2;

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string policy;
  std::string switch_mode;
};

void apply(ExperimentConfig& cfg, const Overrides& o, const std::string& out) {
  if (o.seed) {
    cfg.seed = *o.seed;
    if (cfg.trace.synthetic) cfg.trace.synthetic->seed = *o.seed;
  }
  if (!o.policy.empty()) {
    cfg.policy.kind = parse_policy_kind(o.policy);
    cfg.policy.name.clear();
  }
  if (!o.switch_mode.empty()) {
    try {
      cfg.switch_mode = parse_switch_mode(o.switch_mode);
    } catch (const std::invalid_argument& e) {
      throw ValidationError(std::string("--switch-mode: ") + e.what());
    }
  }
  if (!out.empty()) cfg.output_dir = out;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  return f;
}

// Filenames stay safe for any policy name.
std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_';
  return out;
}

int cmd_simulate(const std::string& config, const Overrides& o, const std::string& out) {
  ExperimentConfig cfg = load_config(config);
  apply(cfg, o, out);
  const std::vector<SimOutcome> runs = simulate_all(cfg);

  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  std::vector<MetricsReport> reports;
  for (const SimOutcome& r : runs) {
    const std::string base = slug(r.name);
    auto rec = open_out(dir / (base + ".records.jsonl"));
    write_records(rec, r.run.records);
    auto win = open_out(dir / (base + ".windows.jsonl"));
    write_windows(win, r.run.windows);
    auto sum = open_out(dir / (base + ".summary.json"));
    sum << summary_json(r.report) << '\n';
    reports.push_back(r.report);
    std::cout << r.name << ": goodput " << r.report.goodput_rps << " rps, attainment "
              << r.report.attainment << ", migrations " << r.report.migrations << '\n';
  }
  auto csv = open_out(dir / "goodput.csv");
  write_goodput_csv(csv, reports);
  auto cmp = open_out(dir / "comparison.csv");
  const auto rows = compare(reports, 0);
  write_comparison_csv(cmp, rows);
  return 0;
}

std::vector<double> parse_values(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("--values: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ValidationError("--values: at least one value is required");
  return out;
}

int cmd_sweep(const std::string& config, const std::string& param, const std::string& values,
              const Overrides& o, const std::string& out) {
  ExperimentConfig cfg = load_config(config);
  apply(cfg, o, out);
  const SweepParam p = parse_sweep_param(param);
  const std::vector<double> v = parse_values(values);
  const std::vector<SweepPoint> points = sweep(cfg, p, v);

  const std::filesystem::path dir = cfg.output_dir;
  std::filesystem::create_directories(dir);
  auto f = open_out(dir / "sweep.csv");
  f << to_string(p) << ",policy,goodput_rps,throughput_rps,attainment,goodput_ratio\n";
  for (const SweepPoint& pt : points) {
    for (const ComparisonRow& r : pt.rows) {
      f << pt.value << ',' << r.name << ',' << r.goodput_rps << ',' << r.throughput_rps << ','
        << r.attainment << ',' << r.goodput_ratio << '\n';
      std::cout << to_string(p) << '=' << pt.value << ' ' << r.name << ": goodput "
                << r.goodput_rps << " rps\n";
    }
  }
  return 0;
}

std::string read_file(const std::string& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ValidationError(field + ": file '" + path + "' cannot be opened");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& field) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(field + ": " + e.what());
  }
}

// {"tiers": [{id, ttft_ms, tpot_ms, ...}], "demands": [{tier, rps, avg_prompt_len, avg_output_len}]}
int cmd_plan(const std::string& profile_path, const std::string& input, int pool, int repeat,
             double headroom) {
  if (pool < 1) throw ValidationError("--pool: must be >= 1");
  const PerfProfile profile = load_profile(profile_path);
  const json doc = parse_json(read_file(input, "--demands"), "--demands");
  std::vector<SloTier> tiers;
  std::vector<TierDemand> demands;
  try {
    for (const json& t : doc.at("tiers")) {
      SloTier tier;
      tier.id = t.at("id").get<int>();
      tier.name = t.value("name", "tier" + std::to_string(tier.id));
      tier.ttft_target_ms = t.at("ttft_ms").get<double>();
      tier.tpot_target_ms = t.at("tpot_ms").get<double>();
      tier.background = t.value("background", false);
      tiers.push_back(tier);
    }
    for (const json& d : doc.value("demands", json::array())) {
      TierDemand td;
      td.tier_id = d.at("tier").get<int>();
      td.rps_observed = d.at("rps").get<double>();
      td.avg_prompt_len = d.value("avg_prompt_len", 0.0);
      td.avg_output_len = d.value("avg_output_len", 0.0);
      demands.push_back(td);
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("--demands: ") + e.what());
  }
  validate_tiers(tiers);
  PlannerOptions opt;
  opt.headroom = headroom;
  ClusterConfig prev;
  ClusterConfig cfg;
  std::vector<double> ms;
  for (int i = 0; i < std::max(1, repeat); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    cfg = plan_window(profile, tiers, demands, pool, prev, opt);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  std::cout << config_to_json(cfg) << '\n';
  std::cout << "plan_ms_median " << ms[ms.size() / 2] << '\n';
  return 0;
}

// {"total_heads": H, "kv_bytes_per_token_per_head": b,
//  "groups": [{"gpus": [...], "requests": [{"id": i, "context_len": n}]}]}
int cmd_migrate_plan(const std::string& input, int new_tp, const std::string& profile_path,
                     const std::string& out) {
  const json doc = parse_json(read_file(input, "--layout"), "--layout");
  const PerfProfile profile = load_profile(profile_path);
  std::vector<KvLayout> old;
  double kvb = 0.0;
  try {
    const int heads = doc.at("total_heads").get<int>();
    kvb = doc.value("kv_bytes_per_token_per_head", profile.kv_bytes_per_token_per_head);
    for (const json& g : doc.at("groups")) {
      KvLayout l;
      l.total_heads = heads;
      l.gpus = g.at("gpus").get<std::vector<int>>();
      for (const json& r : g.value("requests", json::array())) {
        l.requests.push_back({r.at("id").get<std::int64_t>(), r.at("context_len").get<int>()});
      }
      old.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("--layout: ") + e.what());
  }
  if (new_tp < 1) throw ValidationError("--tp: must be >= 1");

  // New groups are consecutive runs of new_tp GPUs over the old GPU order.
  std::vector<int> all;
  for (const KvLayout& l : old) all.insert(all.end(), l.gpus.begin(), l.gpus.end());
  if (all.size() % new_tp != 0) {
    throw ValidationError("--tp: " + std::to_string(all.size()) + " GPUs do not split into groups of " +
                          std::to_string(new_tp));
  }
  std::vector<KvLayout> target;
  for (std::size_t i = 0; i < all.size(); i += new_tp) {
    KvLayout l;
    l.total_heads = old.empty() ? 0 : old[0].total_heads;
    l.gpus.assign(all.begin() + i, all.begin() + i + new_tp);
    target.push_back(std::move(l));
  }
  // Requests of an old group are spread over the new groups that cover its GPUs.
  for (const KvLayout& l : old) {
    std::vector<std::size_t> dst;
    for (std::size_t t = 0; t < target.size(); ++t) {
      for (int g : target[t].gpus) {
        if (std::find(l.gpus.begin(), l.gpus.end(), g) != l.gpus.end()) {
          dst.push_back(t);
          break;
        }
      }
    }
    for (std::size_t k = 0; k < l.requests.size(); ++k) {
      target[dst[k % dst.size()]].requests.push_back(l.requests[k]);
    }
  }
  MigrationPlan plan;
  try {
    plan = plan_relayout(old, target, kvb);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("--layout: ") + e.what());
  }
  annotate_costs(plan, profile.migration);
  const std::string text = plan_to_json(plan);
  if (out.empty()) {
    std::cout << text << '\n';
  } else {
    auto f = open_out(out);
    f << text << '\n';
  }
  std::cout << "strategy,latency_ms\n"
            << "per_page," << plan.per_page_ms << '\n'
            << "aggregate," << plan.aggregate_ms << '\n'
            << "pipelined," << plan.pipelined_ms << '\n';
  return 0;
}

int cmd_gen_trace(const std::string& config, const Overrides& o, const std::string& out) {
  ExperimentConfig cfg = load_config(config);
  apply(cfg, o, "");
  if (!cfg.trace.synthetic) throw ValidationError("trace.synthetic: gen-trace needs a synthetic trace");
  const std::vector<Request> trace = generate_trace(*cfg.trace.synthetic);
  if (out.empty()) {
    write_trace(std::cout, trace);
  } else {
    write_trace(std::filesystem::path(out), trace);
    std::cout << trace.size() << " requests written to " << out << '\n';
  }
  return 0;
}

int cmd_derive_slos(const std::string& profile_path, const DeriveSlosOptions& opt) {
  const PerfProfile profile = load_profile(profile_path);
  if (!(opt.scale > 0.0)) throw ValidationError("--scale: must be > 0");
  const auto [strict, relaxed] = derive_slos(profile, opt);
  json arr = json::array();
  for (const SloTier& t : {strict, relaxed}) {
    arr.push_back({{"id", t.id},
                   {"name", t.name},
                   {"ttft_ms", t.ttft_target_ms},
                   {"tpot_ms", t.tpot_target_ms},
                   {"nominal_prompt_len", t.nominal_prompt_len},
                   {"nominal_output_len", t.nominal_output_len}});
  }
  std::cout << json{{"tiers", arr}}.dump(2) << '\n';
  return 0;
}

int cmd_export_profile(const std::string& name, const std::string& out) {
  const PerfProfile p = load_profile(name);
  if (out.empty()) {
    write_profile(std::cout, p);
  } else {
    auto f = open_out(out);
    write_profile(f, p);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tensor-parallel LLM serving cluster simulator"};
  app.require_subcommand(1);

  std::string config, out, policy, switch_mode;
  std::uint64_t seed = 0;
  Overrides o;
  std::vector<CLI::Option*> seed_opts;
  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config, "Experiment config (JSON)");
    if (needs_config) c->required();
    sub->add_option("--out", out, "Output directory or file");
    seed_opts.push_back(sub->add_option("--seed", seed, "Override the seed"));
    sub->add_option("--policy", policy, "adaptive | static | split | oracle");
    sub->add_option("--switch-mode", switch_mode, "warm | naive_reload | naive_kernel_init");
  };

  auto* simulate = app.add_subcommand("simulate", "Run the configured policy and baselines");
  common(simulate, true);

  std::string param, values;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run one simulation per parameter value");
  common(sweep_cmd, true);
  sweep_cmd->add_option("--param", param, "rps_scale | slo_scale | window | pool_size")->required();
  sweep_cmd->add_option("--values", values, "Comma-separated values")->required();

  std::string profile_path = "builtin:a100-like", demands;
  int pool = 0, repeat = 1, new_tp = 1;
  double headroom = 1.0;
  auto* plan = app.add_subcommand("plan", "Plan one window for given demands");
  plan->add_option("--profile", profile_path, "Profile path or builtin:<name>");
  plan->add_option("--demands", demands, "Tiers and demands (JSON)")->required();
  plan->add_option("--pool", pool, "GPU pool size")->required();
  plan->add_option("--repeat", repeat, "Repetitions for timing");
  plan->add_option("--headroom", headroom, "Latency headroom factor");

  std::string layout;
  auto* migrate = app.add_subcommand("migrate-plan", "KV transfers for a TP change");
  migrate->add_option("--layout", layout, "Old layout (JSON)")->required();
  migrate->add_option("--tp", new_tp, "New TP level")->required();
  migrate->add_option("--profile", profile_path, "Profile supplying cost parameters");
  migrate->add_option("--out", out, "Write the plan here instead of stdout");

  auto* gen = app.add_subcommand("gen-trace", "Write the synthetic trace of a config");
  common(gen, true);

  DeriveSlosOptions dopt;
  auto* derive = app.add_subcommand("derive-slos", "Strict and relaxed tiers from a profile");
  derive->add_option("--profile", profile_path, "Profile path or builtin:<name>");
  derive->add_option("--scale", dopt.scale, "Multiplier on both targets");
  derive->add_option("--tp-min", dopt.tp_min, "TP level the targets are taken at");
  derive->add_option("--prompt-len", dopt.avg_prompt_len, "Average prompt length");
  derive->add_option("--output-len", dopt.avg_output_len, "Average output length");

  std::string profile_name = "builtin:a100-like";
  auto* exp = app.add_subcommand("export-profile", "Write a profile as JSON");
  exp->add_option("--profile", profile_name, "Profile path or builtin:<name>");
  exp->add_option("--out", out, "Output file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    for (CLI::Option* opt : seed_opts) {
      if (opt->count() > 0) o.seed = seed;
    }
    o.policy = policy;
    o.switch_mode = switch_mode;

    if (*simulate) return cmd_simulate(config, o, out);
    if (*sweep_cmd) return cmd_sweep(config, param, values, o, out);
    if (*plan) return cmd_plan(profile_path, demands, pool, repeat, headroom);
    if (*migrate) return cmd_migrate_plan(layout, new_tp, profile_path, out);
    if (*gen) return cmd_gen_trace(config, o, out);
    if (*derive) return cmd_derive_slos(profile_path, dopt);
    if (*exp) return cmd_export_profile(profile_name, out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
