#include "tpsim/profile.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"

namespace tpsim {

using nlohmann::json;

void CostModelParams::validate() const {
  auto pos = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError(std::string("migration.") + name + ": must be > 0");
    }
  };
  pos(copy_bw_gbps, "copy_bw_gbps");
  pos(link_bw_gbps, "link_bw_gbps");
  pos(per_transfer_overhead_us, "per_transfer_overhead_us");
  pos(page_bytes, "page_bytes");
  pos(chunk_bytes, "chunk_bytes");
  pos(handshake_ms, "handshake_ms");
  pos(reload_ms, "reload_ms");
  pos(kernel_init_ms, "kernel_init_ms");
}

std::string_view to_string(Stage s) { return s == Stage::kPrefill ? "prefill" : "decode"; }

Stage parse_stage(std::string_view s) {
  if (s == "prefill") return Stage::kPrefill;
  if (s == "decode") return Stage::kDecode;
  throw ValidationError("unknown stage '" + std::string(s) + "'");
}

PerfProfile::PerfProfile(std::string gpu, std::string model, std::vector<ProfileEntry> entries)
    : gpu_type(std::move(gpu)), model_name(std::move(model)) {
  struct Cell {
    std::set<int> batches, seqs;
    std::map<std::pair<int, int>, double> values;
  };
  std::map<std::pair<Stage, int>, Cell> cells;
  std::set<int> tps;
  for (const ProfileEntry& e : entries) {
    if (e.tp < 1 || e.batch < 1 || e.seq_len < 1) {
      throw ValidationError("profile entry: tp, batch and seq_len must be >= 1");
    }
    if (!(e.latency_ms > 0.0) || !std::isfinite(e.latency_ms)) {
      throw ValidationError("profile entry: latency_ms must be positive");
    }
    Cell& c = cells[{e.stage, e.tp}];
    c.batches.insert(e.batch);
    c.seqs.insert(e.seq_len);
    if (!c.values.emplace(std::make_pair(e.batch, e.seq_len), e.latency_ms).second) {
      throw ValidationError("profile entry: duplicate key (" + std::string(to_string(e.stage)) +
                            ", tp " + std::to_string(e.tp) + ", batch " +
                            std::to_string(e.batch) + ", seq " + std::to_string(e.seq_len) + ")");
    }
    tps.insert(e.tp);
  }
  tp_levels.assign(tps.begin(), tps.end());

  for (auto& [key, c] : cells) {
    LatencyGrid g;
    g.batches.assign(c.batches.begin(), c.batches.end());
    g.seqs.assign(c.seqs.begin(), c.seqs.end());
    if (c.values.size() != g.batches.size() * g.seqs.size()) {
      throw ValidationError("profile grid (" + std::string(to_string(key.first)) + ", tp " +
                            std::to_string(key.second) +
                            ") is not a complete batch x seq_len rectangle");
    }
    g.latency_ms.reserve(c.values.size());
    for (int b : g.batches) {
      for (int s : g.seqs) g.latency_ms.push_back(c.values.at({b, s}));
    }
    grids_.emplace(key, std::move(g));
  }
}

void PerfProfile::validate() const {
  if (tp_levels.empty()) throw ValidationError("profile: no entries");
  if (total_kv_heads < 1) throw ValidationError("profile.metadata.total_kv_heads: must be >= 1");
  if (!(kv_bytes_per_token_per_head > 0.0)) {
    throw ValidationError("profile.metadata.kv_bytes_per_token_per_head: must be > 0");
  }
  if (!(weight_full_copy_gb > 0.0)) {
    throw ValidationError("profile.metadata.weight_full_copy_gb: must be > 0");
  }
  if (!(gpu_memory_gb > 0.0)) throw ValidationError("profile.metadata.gpu_memory_gb: must be > 0");
  migration.validate();

  for (int tp : tp_levels) {
    if (total_kv_heads % tp != 0) {
      throw ValidationError("profile: total_kv_heads " + std::to_string(total_kv_heads) +
                            " not divisible by tp " + std::to_string(tp));
    }
    for (Stage st : {Stage::kPrefill, Stage::kDecode}) {
      auto it = grids_.find({st, tp});
      if (it == grids_.end()) {
        throw ValidationError("profile: tp " + std::to_string(tp) + " has no " +
                              std::string(to_string(st)) + " entries");
      }
      const LatencyGrid& g = it->second;
      for (std::size_t si = 0; si < g.seqs.size(); ++si) {
        for (std::size_t bi = 1; bi < g.batches.size(); ++bi) {
          if (g.at(bi, si) < g.at(bi - 1, si)) {
            throw ValidationError("profile: " + std::string(to_string(st)) + " latency at tp " +
                                  std::to_string(tp) + ", seq " + std::to_string(g.seqs[si]) +
                                  " decreases from batch " + std::to_string(g.batches[bi - 1]) +
                                  " to " + std::to_string(g.batches[bi]));
          }
        }
      }
    }
  }
}

const LatencyGrid& PerfProfile::grid(Stage stage, int tp) const {
  auto it = grids_.find({stage, tp});
  if (it == grids_.end()) {
    throw std::invalid_argument("profile has no " + std::string(to_string(stage)) +
                                " table for tp " + std::to_string(tp));
  }
  return it->second;
}

bool PerfProfile::supports_tp(int tp) const {
  return std::binary_search(tp_levels.begin(), tp_levels.end(), tp);
}

int PerfProfile::max_batch(Stage stage, int tp) const { return grid(stage, tp).batches.back(); }

std::vector<ProfileEntry> PerfProfile::entries() const {
  std::vector<ProfileEntry> out;
  for (const auto& [key, g] : grids_) {
    for (std::size_t bi = 0; bi < g.batches.size(); ++bi) {
      for (std::size_t si = 0; si < g.seqs.size(); ++si) {
        out.push_back({key.first, key.second, g.batches[bi], g.seqs[si], g.at(bi, si)});
      }
    }
  }
  return out;
}

namespace {

struct Bracket {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double w = 0.0;  // weight of hi
};

Bracket bracket(const std::vector<int>& axis, double x, bool& clamped) {
  if (x <= axis.front()) {
    if (x < axis.front()) clamped = true;
    return {0, 0, 0.0};
  }
  if (x >= axis.back()) {
    if (x > axis.back()) clamped = true;
    return {axis.size() - 1, axis.size() - 1, 0.0};
  }
  auto it = std::upper_bound(axis.begin(), axis.end(), x,
                             [](double v, int a) { return v < static_cast<double>(a); });
  const std::size_t hi = static_cast<std::size_t>(it - axis.begin());
  const std::size_t lo = hi - 1;
  const double l0 = std::log(static_cast<double>(axis[lo]));
  const double l1 = std::log(static_cast<double>(axis[hi]));
  return {lo, hi, (std::log(x) - l0) / (l1 - l0)};
}

}  // namespace

double PerfProfile::lookup_latency(Stage stage, int tp, double batch, double seq_len,
                                   bool* extrapolated) const {
  if (!(batch >= 1.0) || !(seq_len >= 1.0)) {
    throw std::invalid_argument("lookup_latency: batch and seq_len must be >= 1");
  }
  const LatencyGrid& g = grid(stage, tp);
  bool clamped = false;
  const Bracket b = bracket(g.batches, batch, clamped);
  const Bracket s = bracket(g.seqs, seq_len, clamped);
  if (extrapolated) *extrapolated = clamped;

  const double lo = (1.0 - s.w) * g.at(b.lo, s.lo) + s.w * g.at(b.lo, s.hi);
  const double hi = (1.0 - s.w) * g.at(b.hi, s.lo) + s.w * g.at(b.hi, s.hi);
  return (1.0 - b.w) * lo + b.w * hi;
}

PerfProfile parse_profile(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("profile: malformed JSON (") + e.what() + ")");
  }
  if (!doc.is_object() || !doc.contains("metadata") || !doc.contains("entries")) {
    throw ValidationError("profile: expected an object with 'metadata' and 'entries'");
  }
  const json& meta = doc["metadata"];
  const json& rows = doc["entries"];
  if (!rows.is_array()) throw ValidationError("profile.entries: must be an array");

  std::vector<ProfileEntry> entries;
  entries.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const json& r = rows[i];
    const std::string where = "profile.entries[" + std::to_string(i) + "]";
    if (!r.is_array() || r.size() != 5 || !r[0].is_string() || !r[1].is_number_integer() ||
        !r[2].is_number_integer() || !r[3].is_number_integer() || !r[4].is_number()) {
      throw ValidationError(where + ": expected [stage, tp, batch, seq_len, latency_ms]");
    }
    ProfileEntry e;
    try {
      e.stage = parse_stage(r[0].get<std::string>());
    } catch (const ValidationError& err) {
      throw ValidationError(where + ": " + err.what());
    }
    e.tp = r[1].get<int>();
    e.batch = r[2].get<int>();
    e.seq_len = r[3].get<int>();
    e.latency_ms = r[4].get<double>();
    entries.push_back(e);
  }

  auto field = [&](const char* key) -> const json& {
    if (!meta.contains(key)) {
      throw ValidationError(std::string("profile.metadata.") + key + ": missing");
    }
    return meta[key];
  };

  PerfProfile p(meta.value("gpu_type", ""), meta.value("model_name", ""), std::move(entries));
  try {
    p.weight_full_copy_gb = field("weight_full_copy_gb").get<double>();
    p.gpu_memory_gb = field("gpu_memory_gb").get<double>();
    p.kv_bytes_per_token_per_head = field("kv_bytes_per_token_per_head").get<double>();
    p.total_kv_heads = field("total_kv_heads").get<int>();
    if (meta.contains("migration")) {
      const json& m = meta["migration"];
      CostModelParams& c = p.migration;
      c.copy_bw_gbps = m.value("copy_bw_gbps", c.copy_bw_gbps);
      c.link_bw_gbps = m.value("link_bw_gbps", c.link_bw_gbps);
      c.per_transfer_overhead_us = m.value("per_transfer_overhead_us", c.per_transfer_overhead_us);
      c.page_bytes = m.value("page_bytes", c.page_bytes);
      c.chunk_bytes = m.value("chunk_bytes", c.chunk_bytes);
      c.handshake_ms = m.value("handshake_ms", c.handshake_ms);
      c.reload_ms = m.value("reload_ms", c.reload_ms);
      c.kernel_init_ms = m.value("kernel_init_ms", c.kernel_init_ms);
    }
  } catch (const json::type_error& e) {
    throw ValidationError(std::string("profile.metadata: wrong type (") + e.what() + ")");
  }
  if (meta.contains("tp_levels")) {
    std::vector<int> declared = meta["tp_levels"].get<std::vector<int>>();
    std::sort(declared.begin(), declared.end());
    if (declared != p.tp_levels) {
      throw ValidationError("profile.metadata.tp_levels: does not match the tp values in entries");
    }
  }
  p.validate();
  return p;
}

PerfProfile load_profile(const std::string& path) {
  constexpr std::string_view kBuiltin = "builtin:";
  if (path.starts_with(kBuiltin)) return builtin_profile(path.substr(kBuiltin.size()));
  std::ifstream in(path);
  if (!in) throw ValidationError("profile: file '" + path + "' cannot be opened");
  return parse_profile(in);
}

void write_profile(std::ostream& out, const PerfProfile& p) {
  const CostModelParams& c = p.migration;
  json meta = {{"gpu_type", p.gpu_type},
               {"model_name", p.model_name},
               {"tp_levels", p.tp_levels},
               {"weight_full_copy_gb", p.weight_full_copy_gb},
               {"gpu_memory_gb", p.gpu_memory_gb},
               {"kv_bytes_per_token_per_head", p.kv_bytes_per_token_per_head},
               {"total_kv_heads", p.total_kv_heads},
               {"migration",
                {{"copy_bw_gbps", c.copy_bw_gbps},
                 {"link_bw_gbps", c.link_bw_gbps},
                 {"per_transfer_overhead_us", c.per_transfer_overhead_us},
                 {"page_bytes", c.page_bytes},
                 {"chunk_bytes", c.chunk_bytes},
                 {"handshake_ms", c.handshake_ms},
                 {"reload_ms", c.reload_ms},
                 {"kernel_init_ms", c.kernel_init_ms}}}};
  // One entry per line keeps the file diffable.
  out << "{\n\"metadata\": " << meta.dump(2) << ",\n\"entries\": [\n";
  const auto rows = p.entries();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const ProfileEntry& e = rows[i];
    json row = {std::string(to_string(e.stage)), e.tp, e.batch, e.seq_len, e.latency_ms};
    out << "  " << row.dump() << (i + 1 < rows.size() ? ",\n" : "\n");
  }
  out << "]\n}\n";
}

namespace {

// Batch in [1, max_b] with the highest rate b / latency(b) among those whose
// latency fits `budget_ms`; the largest such batch on ties. 0 if none fits.
// Interpolated latencies are not linear in b, so the largest fitting batch
// can be slower than a smaller one; taking the best keeps the rate monotone
// in the target.
template <typename Latency>
int best_fitting_batch(int max_b, double budget_ms, Latency&& latency) {
  int best = 0;
  double best_rate = 0.0;
  for (int b = 1; b <= max_b; ++b) {
    const double ms = latency(b);
    if (ms > budget_ms) break;  // latency is non-decreasing in b
    const double rate = b / ms;
    if (rate >= best_rate * (1.0 - 1e-12)) {
      best = b;
      best_rate = std::max(best_rate, rate);
    }
  }
  return best;
}

}  // namespace

ThroughputEnvelope derive_envelope(const PerfProfile& profile, const SloTier& tier, int tp,
                                   double avg_prompt_len, double avg_output_len,
                                   double headroom) {
  if (tier.background) throw std::invalid_argument("derive_envelope: background tier");
  if (!(avg_prompt_len >= 1.0) || !(avg_output_len >= 1.0)) {
    throw std::invalid_argument("derive_envelope: average lengths must be >= 1");
  }
  ThroughputEnvelope env;
  env.tier_id = tier.id;
  env.tp = tp;

  auto prefill = [&](int b) {
    return profile.lookup_latency(Stage::kPrefill, tp, b, avg_prompt_len);
  };
  env.prefill_batch_cap = best_fitting_batch(profile.max_batch(Stage::kPrefill, tp),
                                                headroom * tier.ttft_target_ms, prefill);
  if (env.prefill_batch_cap > 0) {
    env.thp = env.prefill_batch_cap / (prefill(env.prefill_batch_cap) / 1e3);
  }

  const double ctx = avg_prompt_len + avg_output_len / 2.0;
  auto decode = [&](int b) { return profile.lookup_latency(Stage::kDecode, tp, b, ctx); };
  env.decode_batch_cap = best_fitting_batch(profile.max_batch(Stage::kDecode, tp),
                                               headroom * tier.tpot_target_ms, decode);
  if (env.decode_batch_cap > 0) {
    env.thd = env.decode_batch_cap /
              (avg_output_len * decode(env.decode_batch_cap) / 1e3);
  }
  return env;
}

std::pair<SloTier, SloTier> derive_slos(const PerfProfile& profile, const DeriveSlosOptions& opt) {
  if (!(opt.scale > 0.0)) throw ValidationError("derive_slos.scale: must be > 0");
  if (!profile.supports_tp(opt.tp_min)) {
    throw ValidationError("derive_slos.tp_min: profile has no tp " + std::to_string(opt.tp_min));
  }
  if (!(opt.strict_batch >= 1.0) || !(opt.relaxed_batch >= 1.0)) {
    throw ValidationError("derive_slos: batch sizes must be >= 1");
  }
  const double ctx = opt.avg_prompt_len + opt.avg_output_len / 2.0;
  auto make = [&](int id, const char* name, double batch) {
    SloTier t;
    t.id = id;
    t.name = name;
    t.ttft_target_ms =
        opt.scale * profile.lookup_latency(Stage::kPrefill, opt.tp_min, batch, opt.avg_prompt_len);
    t.tpot_target_ms = opt.scale * profile.lookup_latency(Stage::kDecode, opt.tp_min, batch, ctx);
    t.nominal_prompt_len = opt.avg_prompt_len;
    t.nominal_output_len = opt.avg_output_len;
    return t;
  };
  return {make(0, "strict", opt.strict_batch), make(1, "relaxed", opt.relaxed_batch)};
}

}  // namespace tpsim
