// Requests, SLO tiers, trace ingestion and synthetic workload generation.
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tpsim {

/// Raised for malformed user input (trace records, config fields, specs).
/// `what()` names the offending field path or line.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SloTier {
  int id = 0;
  std::string name;
  double ttft_target_ms = 0.0;
  double tpot_target_ms = 0.0;
  bool background = false;
  // Used by the planner before any arrival of this tier has been seen.
  double nominal_prompt_len = 1024.0;
  double nominal_output_len = 128.0;

  /// Both targets met. Background tiers never count toward goodput.
  bool met_by(double ttft_s, double tpot_s) const {
    return !background && ttft_s * 1e3 <= ttft_target_ms &&
           tpot_s * 1e3 <= tpot_target_ms;
  }

  bool operator==(const SloTier&) const = default;
};

void validate_tiers(std::span<const SloTier> tiers);
/// Index of the tier with `id`, or nullopt.
std::optional<std::size_t> tier_index(std::span<const SloTier> tiers, int id);

struct Request {
  std::int64_t id = 0;
  int tier_id = 0;
  double arrival_time = 0.0;  // seconds from trace start
  int prompt_len = 1;
  int output_len = 1;

  bool operator==(const Request&) const = default;
};

struct LengthDist {
  double median = 1024.0;
  double sigma = 0.0;
  int max_len = 32768;

  bool operator==(const LengthDist&) const = default;
};

struct TierStream {
  int tier_id = 0;
  double rate = 0.0;  // requests per second before burst modulation
  LengthDist prompt;
  LengthDist output{128.0, 0.0, 4096};

  bool operator==(const TierStream&) const = default;
};

/// Multiplies the arrival rate on [start, end). Applies to one tier when
/// `tier_id` is set, otherwise to every tier.
struct Burst {
  double start = 0.0;
  double end = 0.0;
  double multiplier = 1.0;
  std::optional<int> tier_id;

  bool operator==(const Burst&) const = default;
};

struct SyntheticSpec {
  double duration = 60.0;
  std::vector<TierStream> streams;
  std::vector<Burst> bursts;
  std::uint64_t seed = 1;

  /// Instantaneous rate of `tier_id` at time t.
  double rate_at(int tier_id, double t) const;
  bool operator==(const SyntheticSpec&) const = default;
};

void validate(const SyntheticSpec& spec);

/// Piecewise-homogeneous Poisson arrivals by thinning; deterministic in spec.
std::vector<Request> generate_trace(const SyntheticSpec& spec);

/// JSON-lines trace: arrival_time_s, tier, prompt_len, output_len (optional id).
/// Out-of-order records are sorted and reported through `warnings`.
std::vector<Request> parse_trace(std::istream& in, std::span<const SloTier> tiers,
                                 std::vector<std::string>* warnings = nullptr);
std::vector<Request> load_trace(const std::filesystem::path& path,
                                std::span<const SloTier> tiers,
                                std::vector<std::string>* warnings = nullptr);
void write_trace(std::ostream& out, std::span<const Request> requests);
void write_trace(const std::filesystem::path& path, std::span<const Request> requests);

struct TierDemand {
  int tier_id = 0;
  double rps_observed = 0.0;
  double served_rps = 0.0;
  // Mean lengths of the window's arrivals; 0 when the window had none.
  double avg_prompt_len = 0.0;
  double avg_output_len = 0.0;

  bool operator==(const TierDemand&) const = default;
};

/// Per-tier arrival rate over [start, end) of a trace sorted by arrival time.
/// One entry per tier, in `tiers` order; served_rps is left at zero.
std::vector<TierDemand> observe_demand(std::span<const Request> requests, double start,
                                       double end, std::span<const SloTier> tiers);

}  // namespace tpsim
