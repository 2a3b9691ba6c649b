#include "tpsim/trace.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tpsim {

using nlohmann::json;

void validate_tiers(std::span<const SloTier> tiers) {
  std::set<int> seen;
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    const SloTier& tier = tiers[i];
    const std::string where = "tiers[" + std::to_string(i) + "]";
    if (!seen.insert(tier.id).second) {
      throw ValidationError(where + ".id: duplicate tier id " + std::to_string(tier.id));
    }
    if (!tier.background) {
      if (!(tier.ttft_target_ms > 0.0)) {
        throw ValidationError(where + ".ttft_ms: must be > 0 for non-background tiers");
      }
      if (!(tier.tpot_target_ms > 0.0)) {
        throw ValidationError(where + ".tpot_ms: must be > 0 for non-background tiers");
      }
    }
    if (!(tier.nominal_prompt_len >= 1.0) || !(tier.nominal_output_len >= 1.0)) {
      throw ValidationError(where + ": nominal lengths must be >= 1");
    }
  }
}

std::optional<std::size_t> tier_index(std::span<const SloTier> tiers, int id) {
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    if (tiers[i].id == id) return i;
  }
  return std::nullopt;
}

double SyntheticSpec::rate_at(int tier_id, double t) const {
  double rate = 0.0;
  for (const TierStream& s : streams) {
    if (s.tier_id == tier_id) rate = s.rate;
  }
  for (const Burst& b : bursts) {
    if (b.tier_id && *b.tier_id != tier_id) continue;
    if (t >= b.start && t < b.end) rate *= b.multiplier;
  }
  return rate;
}

namespace {

void validate_length(const LengthDist& d, const std::string& where) {
  if (!(d.median >= 1.0)) throw ValidationError(where + ".median: must be >= 1");
  if (!(d.sigma >= 0.0)) throw ValidationError(where + ".sigma: must be >= 0");
  if (d.max_len < 1) throw ValidationError(where + ".max_len: must be >= 1");
}

int draw_length(const LengthDist& d, std::mt19937_64& rng) {
  double v = d.median;
  if (d.sigma > 0.0) {
    std::lognormal_distribution<double> dist(std::log(d.median), d.sigma);
    v = dist(rng);
  }
  long rounded = std::lround(v);
  return static_cast<int>(std::clamp<long>(rounded, 1, d.max_len));
}

}  // namespace

void validate(const SyntheticSpec& spec) {
  if (!(spec.duration > 0.0)) throw ValidationError("synthetic.duration: must be > 0");
  std::set<int> seen;
  for (std::size_t i = 0; i < spec.streams.size(); ++i) {
    const TierStream& s = spec.streams[i];
    const std::string where = "synthetic.streams[" + std::to_string(i) + "]";
    if (!seen.insert(s.tier_id).second) {
      throw ValidationError(where + ".tier: duplicate stream for tier " + std::to_string(s.tier_id));
    }
    if (!(s.rate >= 0.0)) throw ValidationError(where + ".rate: must be >= 0");
    validate_length(s.prompt, where + ".prompt");
    validate_length(s.output, where + ".output");
  }
  for (std::size_t i = 0; i < spec.bursts.size(); ++i) {
    const Burst& b = spec.bursts[i];
    const std::string where = "synthetic.bursts[" + std::to_string(i) + "]";
    if (!(b.start >= 0.0) || !(b.end <= spec.duration) || !(b.start < b.end)) {
      throw ValidationError(where + ": interval must satisfy 0 <= start < end <= duration");
    }
    if (!(b.multiplier >= 0.0)) throw ValidationError(where + ".multiplier: must be >= 0");
  }
}

std::vector<Request> generate_trace(const SyntheticSpec& spec) {
  validate(spec);

  struct Tagged {
    Request req;
    std::size_t stream;
    std::size_t seq;
  };
  std::vector<Tagged> all;

  for (std::size_t si = 0; si < spec.streams.size(); ++si) {
    const TierStream& s = spec.streams[si];
    // Upper bound on the modulated rate for thinning.
    double bound = s.rate;
    for (const Burst& b : spec.bursts) {
      if (b.tier_id && *b.tier_id != s.tier_id) continue;
      bound *= std::max(1.0, b.multiplier);
    }
    if (bound <= 0.0) continue;

    std::seed_seq seq{static_cast<std::uint64_t>(spec.seed & 0xffffffffu),
                      static_cast<std::uint64_t>(spec.seed >> 32),
                      static_cast<std::uint64_t>(si),
                      static_cast<std::uint64_t>(static_cast<std::uint32_t>(s.tier_id))};
    std::mt19937_64 rng(seq);
    std::exponential_distribution<double> gap(bound);
    std::uniform_real_distribution<double> accept(0.0, 1.0);

    double t = 0.0;
    std::size_t n = 0;
    while (true) {
      t += gap(rng);
      if (t >= spec.duration) break;
      const double u = accept(rng);
      if (u * bound >= spec.rate_at(s.tier_id, t)) continue;
      Request r;
      r.tier_id = s.tier_id;
      r.arrival_time = t;
      r.prompt_len = draw_length(s.prompt, rng);
      r.output_len = draw_length(s.output, rng);
      all.push_back({r, si, n++});
    }
  }

  std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) {
    if (a.req.arrival_time != b.req.arrival_time) return a.req.arrival_time < b.req.arrival_time;
    if (a.stream != b.stream) return a.stream < b.stream;
    return a.seq < b.seq;
  });

  std::vector<Request> out;
  out.reserve(all.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    Request r = all[i].req;
    r.id = static_cast<std::int64_t>(i);
    out.push_back(r);
  }
  return out;
}

std::vector<Request> parse_trace(std::istream& in, std::span<const SloTier> tiers,
                                 std::vector<std::string>* warnings) {
  std::vector<Request> out;
  std::set<std::int64_t> ids;
  std::string line;
  std::size_t line_no = 0;
  bool sorted = true;

  auto fail = [&](const std::string& msg) {
    throw ValidationError("trace line " + std::to_string(line_no) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(std::string("malformed JSON (") + e.what() + ")");
    }
    if (!rec.is_object()) fail("record must be a JSON object");
    for (const char* key : {"arrival_time_s", "tier", "prompt_len", "output_len"}) {
      if (!rec.contains(key)) fail(std::string("missing key '") + key + "'");
    }
    if (!rec["arrival_time_s"].is_number()) fail("arrival_time_s must be a number");
    for (const char* key : {"tier", "prompt_len", "output_len"}) {
      if (!rec[key].is_number_integer()) fail(std::string(key) + " must be an integer");
    }

    Request r;
    r.arrival_time = rec["arrival_time_s"].get<double>();
    r.tier_id = rec["tier"].get<int>();
    r.prompt_len = rec["prompt_len"].get<int>();
    r.output_len = rec["output_len"].get<int>();
    r.id = rec.contains("id") ? rec["id"].get<std::int64_t>()
                              : static_cast<std::int64_t>(out.size());

    if (!std::isfinite(r.arrival_time) || r.arrival_time < 0.0) {
      fail("arrival_time_s must be finite and >= 0");
    }
    if (r.prompt_len <= 0) fail("prompt_len must be > 0");
    if (r.output_len < 1) fail("output_len must be >= 1");
    if (!tier_index(tiers, r.tier_id)) fail("unknown tier id " + std::to_string(r.tier_id));
    if (!ids.insert(r.id).second) fail("duplicate request id " + std::to_string(r.id));

    if (!out.empty() && r.arrival_time < out.back().arrival_time) sorted = false;
    out.push_back(r);
  }

  if (!sorted) {
    std::stable_sort(out.begin(), out.end(), [](const Request& a, const Request& b) {
      return a.arrival_time < b.arrival_time;
    });
    if (warnings) warnings->push_back("trace timestamps were not monotone; records sorted by arrival time");
  }
  return out;
}

std::vector<Request> load_trace(const std::filesystem::path& path,
                                std::span<const SloTier> tiers,
                                std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw ValidationError("trace file '" + path.string() + "' cannot be opened");
  return parse_trace(in, tiers, warnings);
}

void write_trace(std::ostream& out, std::span<const Request> requests) {
  for (const Request& r : requests) {
    json rec = {{"id", r.id},
                {"arrival_time_s", r.arrival_time},
                {"tier", r.tier_id},
                {"prompt_len", r.prompt_len},
                {"output_len", r.output_len}};
    out << rec.dump() << '\n';
  }
}

void write_trace(const std::filesystem::path& path, std::span<const Request> requests) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file '" + path.string() + "'");
  write_trace(out, requests);
}

std::vector<TierDemand> observe_demand(std::span<const Request> requests, double start,
                                       double end, std::span<const SloTier> tiers) {
  if (!(start < end)) throw std::invalid_argument("observe_demand: start must be < end");

  std::vector<TierDemand> out(tiers.size());
  std::vector<double> prompt_sum(tiers.size(), 0.0);
  std::vector<double> output_sum(tiers.size(), 0.0);
  std::vector<std::size_t> count(tiers.size(), 0);
  for (std::size_t i = 0; i < tiers.size(); ++i) out[i].tier_id = tiers[i].id;

  auto first = std::lower_bound(requests.begin(), requests.end(), start,
                                [](const Request& r, double t) { return r.arrival_time < t; });
  for (auto it = first; it != requests.end() && it->arrival_time < end; ++it) {
    auto idx = tier_index(tiers, it->tier_id);
    if (!idx) continue;
    ++count[*idx];
    prompt_sum[*idx] += it->prompt_len;
    output_sum[*idx] += it->output_len;
  }

  const double span_s = end - start;
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    out[i].rps_observed = static_cast<double>(count[i]) / span_s;
    if (count[i] > 0) {
      out[i].avg_prompt_len = prompt_sum[i] / static_cast<double>(count[i]);
      out[i].avg_output_len = output_sum[i] / static_cast<double>(count[i]);
    }
  }
  return out;
}

}  // namespace tpsim
