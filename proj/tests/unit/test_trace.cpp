#include <cmath>
#include <sstream>

#include "doctest.h"
#include "tpsim/trace.h"

using namespace tpsim;

namespace {

std::vector<SloTier> two_tiers() {
  return {{0, "a", 100, 10}, {1, "b", 200, 20}};
}

SyntheticSpec flat_spec(double rate, std::uint64_t seed) {
  SyntheticSpec s;
  s.duration = 100.0;
  s.seed = seed;
  s.streams.push_back({0, rate, {512, 0.5, 4096}, {64, 0.5, 1024}});
  return s;
}

}  // namespace

TEST_CASE("poisson arrival counts stay inside three sigma") {
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto reqs = generate_trace(flat_spec(2.0, seed));
    double n = static_cast<double>(reqs.size());
    CHECK(std::abs(n - 200.0) <= 3.0 * std::sqrt(200.0));
  }
}

TEST_CASE("generated traces are a pure function of the spec") {
  auto a = generate_trace(flat_spec(2.0, 9));
  auto b = generate_trace(flat_spec(2.0, 9));
  CHECK(a == b);
  CHECK(generate_trace(flat_spec(0.0, 9)).empty());
  for (std::size_t i = 1; i < a.size(); ++i) CHECK(a[i - 1].arrival_time <= a[i].arrival_time);
  for (const auto& r : a) {
    CHECK(r.prompt_len >= 1);
    CHECK(r.prompt_len <= 4096);
    CHECK(r.output_len >= 1);
    CHECK(r.output_len <= 1024);
  }
}

TEST_CASE("burst multiplier scales the window rate") {
  // Pooled over 50 seeds: inside [50,60) expect 10 x 2 x 10 x 50 = 10000,
  // outside 2 x 90 x 50 = 9000 over 90 s.
  double inside = 0, outside = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    auto spec = flat_spec(2.0, seed);
    spec.bursts.push_back({50.0, 60.0, 10.0, std::nullopt});
    for (const auto& r : generate_trace(spec)) {
      (r.arrival_time >= 50.0 && r.arrival_time < 60.0 ? inside : outside) += 1;
    }
  }
  double in_rate = inside / (10.0 * 50);
  double out_rate = outside / (90.0 * 50);
  CHECK(std::abs(inside - 10000.0) <= 3.0 * std::sqrt(10000.0));
  CHECK(std::abs(outside - 9000.0) <= 3.0 * std::sqrt(9000.0));
  CHECK(in_rate / out_rate == doctest::Approx(10.0).epsilon(0.1));
}

TEST_CASE("spec validation rejects bursts outside the trace") {
  auto spec = flat_spec(1.0, 1);
  spec.bursts.push_back({90.0, 120.0, 2.0, std::nullopt});
  CHECK_THROWS_AS(validate(spec), ValidationError);
  spec.bursts.back() = {10.0, 20.0, -1.0, std::nullopt};
  CHECK_THROWS_AS(validate(spec), ValidationError);
}

TEST_CASE("parse_trace sorts out-of-order records and warns") {
  auto tiers = two_tiers();
  std::istringstream in(
      R"({"arrival_time_s": 2.0, "tier": 1, "prompt_len": 10, "output_len": 2})"
      "\n"
      R"({"arrival_time_s": 0.5, "tier": 0, "prompt_len": 20, "output_len": 3})"
      "\n\n"
      R"({"arrival_time_s": 1.0, "tier": 0, "prompt_len": 30, "output_len": 4})"
      "\n");
  std::vector<std::string> warnings;
  auto reqs = parse_trace(in, tiers, &warnings);
  REQUIRE(reqs.size() == 3);
  CHECK(reqs[0].arrival_time == 0.5);
  CHECK(reqs[1].arrival_time == 1.0);
  CHECK(reqs[2].arrival_time == 2.0);
  CHECK(reqs[2].tier_id == 1);
  CHECK(warnings.size() == 1);
}

TEST_CASE("parse_trace errors name the line") {
  auto tiers = two_tiers();
  auto expect_line = [&](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      parse_trace(in, tiers);
      FAIL("expected a ValidationError");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  std::string ok = R"({"arrival_time_s": 0.0, "tier": 0, "prompt_len": 5, "output_len": 1})";
  expect_line(ok + "\n" + R"({"arrival_time_s": 1.0, "tier": 0, "prompt_len": 0, "output_len": 1})",
              "line 2");
  expect_line(ok + "\n" + ok + "\n" + R"({"arrival_time_s": 1.0, "tier": 7, "prompt_len": 3, "output_len": 1})",
              "line 3");
  expect_line("not json", "line 1");

  std::istringstream empty("");
  CHECK(parse_trace(empty, tiers).empty());
}

TEST_CASE("trace round-trips through the JSON-lines writer") {
  auto reqs = generate_trace(flat_spec(1.0, 3));
  std::stringstream buf;
  write_trace(buf, reqs);
  auto tiers = two_tiers();
  auto back = parse_trace(buf, tiers);
  REQUIRE(back.size() == reqs.size());
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    CHECK(back[i].tier_id == reqs[i].tier_id);
    CHECK(back[i].prompt_len == reqs[i].prompt_len);
    CHECK(back[i].arrival_time == doctest::Approx(reqs[i].arrival_time).epsilon(1e-12));
  }
}

TEST_CASE("observe_demand counts arrivals per tier") {
  auto tiers = two_tiers();
  std::vector<Request> reqs;
  for (int i = 0; i < 10; ++i) reqs.push_back({i, 0, 0.1 + 0.15 * i, 100, 10});
  auto d = observe_demand(reqs, 0.0, 2.0, tiers);
  REQUIRE(d.size() == 2);
  CHECK(d[0].rps_observed == doctest::Approx(5.0));
  CHECK(d[1].rps_observed == 0.0);
  CHECK(d[0].avg_prompt_len == doctest::Approx(100.0));
  CHECK(d[0].served_rps == 0.0);

  std::vector<Request> mixed;
  for (int i = 0; i < 10; ++i) mixed.push_back({i, i < 4 ? 0 : 1, 0.05 + 0.09 * i, 8, 8});
  auto m = observe_demand(mixed, 0.0, 1.0, tiers);
  CHECK(m[0].rps_observed == doctest::Approx(4.0));
  CHECK(m[1].rps_observed == doctest::Approx(6.0));

  auto none = observe_demand(mixed, 5.0, 6.0, tiers);
  CHECK(none[0].rps_observed == 0.0);
  CHECK(none[1].rps_observed == 0.0);
}
