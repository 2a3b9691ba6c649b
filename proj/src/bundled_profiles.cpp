// Synthetic latency tables for an 8B-class model (fp16, 8 KV heads).
//
// Prefill: compute term that shrinks sublinearly with TP, a quadratic
// attention term, and an all-reduce term that grows with TP. Higher TP is
// always faster for prefill but loses per-GPU efficiency.
//
// Decode: a weight-read floor that TP splits almost perfectly, plus per-token
// KV reads and a collective cost that grows superlinearly with batch. Small
// batches get more per-GPU throughput at high TP, large batches less.
#include <cmath>

#include "tpsim/profile.h"

namespace tpsim {

namespace {

struct Shape {
  double scale = 1.0;  // multiplies every latency
  double comm = 1.0;   // multiplies the collective terms only
};

double prefill_ms(int tp, int batch, int seq, const Shape& sh) {
  const double t = tp, b = batch, s = seq;
  double ms = 6.0 + b * s * 0.05 / std::pow(t, 0.8) + b * s * s * 2.5e-5 / t;
  if (tp > 1) ms += sh.comm * (0.4 * std::log2(t) + b * s * 0.02 * (t - 1.0) / t);
  return sh.scale * ms;
}

double decode_ms(int tp, int batch, int seq, const Shape& sh) {
  const double t = tp, b = batch, s = seq;
  double ms = 0.2 + 8.0 / std::pow(t, 1.9) + b * s * 6.55e-5 / t + 0.06 * b / std::pow(t, 0.9);
  if (tp > 1) ms += sh.comm * (0.01 * std::log2(t) + 0.01 * std::pow(b, 1.4) * std::log2(t));
  return sh.scale * ms;
}

PerfProfile build(const std::string& gpu, const Shape& sh, double memory_gb,
                  const CostModelParams& migration) {
  std::vector<ProfileEntry> entries;
  const int tps[] = {1, 2, 4, 8};
  const int seqs[] = {64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384};
  for (int tp : tps) {
    for (int b = 1; b <= 256; b *= 2) {
      for (int s : seqs) {
        entries.push_back({Stage::kPrefill, tp, b, s, prefill_ms(tp, b, s, sh)});
        entries.push_back({Stage::kDecode, tp, b, s, decode_ms(tp, b, s, sh)});
      }
    }
  }
  PerfProfile p(gpu, "llama-8b-fp16", std::move(entries));
  p.weight_full_copy_gb = 16.0;
  p.gpu_memory_gb = memory_gb;
  p.total_kv_heads = 8;
  // 128 KiB per token across 8 KV heads and 32 layers.
  p.kv_bytes_per_token_per_head = 16384.0;
  p.migration = migration;
  p.validate();
  return p;
}

}  // namespace

std::vector<std::string> builtin_profile_names() { return {"a100-like", "h100-like"}; }

PerfProfile builtin_profile(std::string_view name) {
  if (name == "a100-like") return build("a100-like", {1.0, 1.0}, 80.0, CostModelParams{});
  if (name == "h100-like") {
    CostModelParams m;
    m.copy_bw_gbps = 900.0;
    m.link_bw_gbps = 450.0;
    m.chunk_bytes = 256.0 * 1024 * 1024;
    return build("h100-like", {0.55, 0.8}, 80.0, m);
  }
  throw ValidationError("profile: unknown builtin '" + std::string(name) + "'");
}

}  // namespace tpsim
