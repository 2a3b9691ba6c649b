#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fixtures.h"
#include "tpsim/profile.h"

using namespace tpsim;
using tpsim::testing::grid_profile;

TEST_CASE("lookup returns grid values unchanged") {
  auto p = builtin_profile("a100-like");
  for (const auto& e : p.entries()) {
    bool ext = true;
    double v = p.lookup_latency(e.stage, e.tp, e.batch, e.seq_len, &ext);
    CHECK(v == e.latency_ms);
    CHECK_FALSE(ext);
  }
}

TEST_CASE("lookup interpolates in log batch and clamps outside the grid") {
  auto p = grid_profile(
      {1}, {8, 16}, {128, 512}, [](int, int b, int) { return b == 8 ? 10.0 : 20.0; },
      [](int, int b, int) { return static_cast<double>(b); });
  bool ext = true;
  CHECK(p.lookup_latency(Stage::kPrefill, 1, std::sqrt(8.0 * 16.0), 256, &ext) ==
        doctest::Approx(15.0));
  CHECK_FALSE(ext);
  CHECK(p.lookup_latency(Stage::kPrefill, 1, 2, 256, &ext) == 10.0);
  CHECK(ext);
  ext = false;
  CHECK(p.lookup_latency(Stage::kPrefill, 1, 12, 8192, &ext) ==
        doctest::Approx(10.0 + 10.0 * std::log2(12.0 / 8.0)));
  CHECK(ext);
  CHECK_THROWS(p.lookup_latency(Stage::kPrefill, 2, 8, 128));
}

TEST_CASE("bilinear interpolation in log seq_len") {
  // latency = batch + seq/100 at the corners; log-log midpoints average the corners.
  auto p = grid_profile(
      {1}, {1, 4}, {100, 400}, [](int, int b, int s) { return b + s / 100.0; },
      [](int, int, int) { return 1.0; });
  double mid = p.lookup_latency(Stage::kPrefill, 1, 2, 200);
  CHECK(mid == doctest::Approx((2.0 + 5.0 + 5.0 + 8.0) / 4.0));
}

TEST_CASE("profile validation rejects broken invariants") {
  auto dec = [](int, int, int) { return 1.0; };
  CHECK_THROWS_AS(grid_profile({1}, {1, 2}, {128}, [](int, int b, int) { return 10.0 / b; }, dec),
                  ValidationError);
  // 8 heads cannot be split over tp 3.
  CHECK_THROWS_AS(grid_profile({1, 3}, {1}, {128}, dec, dec), ValidationError);
}

TEST_CASE("envelope prefill rule") {
  auto p = grid_profile(
      {1}, {1, 2, 4, 8}, {128, 4096},
      [](int, int b, int) { return b == 8 ? 200.0 : 20.0 * b; },
      [](int, int, int) { return 5.0; });
  SloTier t{0, "t", 100.0, 50.0};
  auto env = derive_envelope(p, t, 1, 1024, 100);
  CHECK(env.prefill_batch_cap == 4);
  CHECK(env.thp == doctest::Approx(50.0));

  SloTier tight{0, "t", 19.0, 4.0};
  auto none = derive_envelope(p, tight, 1, 1024, 100);
  CHECK(none.prefill_batch_cap == 0);
  CHECK(none.thp == 0.0);
  CHECK(none.decode_batch_cap == 0);
  CHECK(none.thd == 0.0);
}

TEST_CASE("envelope decode rule") {
  SloTier t{0, "t", 1000.0, 50.0};
  // Step grid: every batch up to 16 costs 40 ms, 17 and up 60 ms.
  std::vector<int> dense;
  for (int b = 1; b <= 32; ++b) dense.push_back(b);
  auto step = grid_profile(
      {1}, dense, {128, 4096}, [](int, int, int) { return 1.0; },
      [](int, int b, int) { return b <= 16 ? 40.0 : 60.0; });
  auto env = derive_envelope(step, t, 1, 1024, 100);
  CHECK(env.decode_batch_cap == 16);
  CHECK(env.thd == doctest::Approx(4.0));

  // Only 16 and 32 profiled: integer batches between them interpolate,
  // 40 + 20 log2(b/16) <= 50 holds up to b = 22.
  auto sparse = grid_profile(
      {1}, {16, 32}, {128, 4096}, [](int, int, int) { return 1.0; },
      [](int, int b, int) { return b == 16 ? 40.0 : 60.0; });
  int oracle_cap = 0;
  for (int b = 16; b <= 32; ++b)
    if (40.0 + 20.0 * std::log2(b / 16.0) <= 50.0) oracle_cap = b;
  auto env2 = derive_envelope(sparse, t, 1, 1024, 100);
  CHECK(env2.decode_batch_cap == oracle_cap);
  double lat = 40.0 + 20.0 * std::log2(oracle_cap / 16.0);
  CHECK(env2.thd == doctest::Approx(oracle_cap / (100 * lat / 1e3)));
}

TEST_CASE("envelopes are monotone in the targets") {
  auto p = builtin_profile("a100-like");
  for (int tp : p.tp_levels) {
    double last_thp = 0, last_thd = 0;
    for (double scale : {0.5, 1.0, 2.0, 4.0, 8.0}) {
      SloTier t{0, "t", 100.0 * scale, 10.0 * scale};
      auto env = derive_envelope(p, t, tp, 1024, 128);
      CHECK(env.thp >= last_thp);
      CHECK(env.thd >= last_thd);
      CHECK((env.thp == 0) == (env.prefill_batch_cap == 0));
      CHECK((env.thd == 0) == (env.decode_batch_cap == 0));
      last_thp = env.thp;
      last_thd = env.thd;
    }
  }
}

TEST_CASE("bundled profiles show the TP trade-off") {
  for (const auto& name : builtin_profile_names()) {
    auto p = builtin_profile(name);
    for (int b : {1, 16, 128})
      for (int s : {256, 2048})
        for (std::size_t i = 1; i < p.tp_levels.size(); ++i)
          CHECK(p.lookup_latency(Stage::kPrefill, p.tp_levels[i], b, s) <
                p.lookup_latency(Stage::kPrefill, p.tp_levels[i - 1], b, s));
    // per-GPU decode throughput: b / (tp * latency)
    auto per_gpu = [&](int tp, int b) {
      return b / (tp * p.lookup_latency(Stage::kDecode, tp, b, 1024));
    };
    for (int b : {1, 2, 4, 8}) CHECK(per_gpu(8, b) > per_gpu(1, b));
    for (int b : {64, 128, 256}) CHECK(per_gpu(8, b) < per_gpu(1, b));
  }
}

TEST_CASE("derive_slos builds strict and relaxed tiers") {
  auto p = builtin_profile("a100-like");
  DeriveSlosOptions o;
  auto [strict, relaxed] = derive_slos(p, o);
  CHECK(strict.ttft_target_ms == doctest::Approx(p.lookup_latency(Stage::kPrefill, 1, 1, 1024)));
  CHECK(strict.tpot_target_ms == doctest::Approx(p.lookup_latency(Stage::kDecode, 1, 1, 1088)));
  CHECK(strict.ttft_target_ms < relaxed.ttft_target_ms);
  CHECK(strict.tpot_target_ms < relaxed.tpot_target_ms);

  o.scale = 3.0;
  auto [s3, r3] = derive_slos(p, o);
  CHECK(s3.ttft_target_ms == doctest::Approx(3 * strict.ttft_target_ms));
  CHECK(s3.tpot_target_ms == doctest::Approx(3 * strict.tpot_target_ms));
  CHECK(r3.ttft_target_ms == doctest::Approx(3 * relaxed.ttft_target_ms));
  CHECK(r3.tpot_target_ms == doctest::Approx(3 * relaxed.tpot_target_ms));

  o.scale = 1.0;
  o.relaxed_batch = o.strict_batch;
  auto [a, b] = derive_slos(p, o);
  CHECK(a.ttft_target_ms == b.ttft_target_ms);
  CHECK(a.tpot_target_ms == b.tpot_target_ms);

  o.scale = 0.0;
  CHECK_THROWS_AS(derive_slos(p, o), ValidationError);
}

TEST_CASE("profile JSON round-trip") {
  auto p = builtin_profile("h100-like");
  std::stringstream buf;
  write_profile(buf, p);
  auto q = parse_profile(buf);
  CHECK(q.gpu_type == p.gpu_type);
  CHECK(q.tp_levels == p.tp_levels);
  CHECK(q.total_kv_heads == p.total_kv_heads);
  CHECK(q.migration == p.migration);
  auto pe = p.entries(), qe = q.entries();
  REQUIRE(pe.size() == qe.size());
  for (std::size_t i = 0; i < pe.size(); ++i) {
    CHECK(pe[i].latency_ms == qe[i].latency_ms);
    CHECK(pe[i].batch == qe[i].batch);
  }
  CHECK_THROWS_AS(load_profile("/nonexistent/profile.json"), ValidationError);
  CHECK_THROWS_AS(builtin_profile("nope"), ValidationError);
}
