#include <doctest.h>

#include <array>
#include <sstream>

#include "mcsim/kpi.hpp"

using namespace mcsim;

namespace {

PlaybackRecord played(std::int64_t pos, double bitrate, double stall = 0.0, bool episode = false) {
  PlaybackRecord r;
  r.position = pos;
  r.rung = 0;
  r.bitrate_bps = bitrate;
  r.stall_s = stall;
  r.new_episode = episode;
  return r;
}

PlaybackRecord skipped(std::int64_t pos, bool episode) {
  PlaybackRecord r;
  r.position = pos;
  r.new_episode = episode;
  return r;
}

// Brute-force consumption from raw (multicast, unicast, total) triples.
double oracle_consumption(const std::vector<std::vector<std::array<int, 3>>>& cells) {
  double used = 0;
  double total = 0;
  for (const auto& rows : cells) {
    for (const auto& r : rows) {
      used += r[0] + r[1];
      total += r[2];
    }
  }
  return used / total;
}

}  // namespace

TEST_CASE("resource consumption") {
  ResourceLog log;
  log.append({0, 0, 27, 273});
  log.append({1, 0, 55, 273});
  CHECK(avg_resource_consumption(log) == doctest::Approx(82.0 / 546).epsilon(1e-12));
  CHECK(avg_resource_consumption(log) == doctest::Approx(0.15018).epsilon(1e-4));
  ResourceLog idle;
  idle.append({0, 0, 0, 273});
  CHECK(avg_resource_consumption(idle) == 0.0);
  ResourceLog full;
  full.append({0, 100, 173, 273});
  CHECK(avg_resource_consumption(full) == 1.0);
  CHECK_THROWS_AS(avg_resource_consumption(ResourceLog{}), std::domain_error);
}

TEST_CASE("consumption matches a brute-force recomputation") {
  RngStream rng(12, "kpi-test");
  for (int trial = 0; trial < 50; ++trial) {
    const int ttis = 1 + static_cast<int>(rng.below(100));
    std::vector<std::vector<std::array<int, 3>>> raw(3);
    std::vector<ResourceLog> logs(3);
    for (int c = 0; c < 3; ++c) {
      const int mc = static_cast<int>(rng.below(219));
      for (int t = 0; t < ttis; ++t) {
        const int uc = static_cast<int>(rng.below(static_cast<std::uint64_t>(273 - mc + 1)));
        raw[c].push_back({mc, uc, 273});
        logs[c].append({t, mc, uc, 273});
      }
    }
    CHECK(avg_resource_consumption(logs) == doctest::Approx(oracle_consumption(raw)).epsilon(1e-12));
  }
}

TEST_CASE("application-layer spectral efficiency") {
  CHECK(*al_se(20e6, 1.0, 100e6, 0.10) == doctest::Approx(2.0));
  CHECK(*al_se(100e6 * 10, 10.0, 100e6, 1.0) == doctest::Approx(1.0));
  CHECK_FALSE(al_se(1e6, 1.0, 100e6, 0.0).has_value());
  // Source bits count once per receiving UE: two receivers of one multicast double it.
  CHECK(*al_se(2 * 20e6, 1.0, 100e6, 0.10) == doctest::Approx(2.0 * *al_se(20e6, 1.0, 100e6, 0.10)));
  CHECK_THROWS_AS(al_se(1.0, 0.0, 1.0, 0.5), std::invalid_argument);
}

TEST_CASE("MOS examples") {
  const QoeConfig q;
  std::vector<PlaybackRecord> w;
  for (int i = 0; i < 15; ++i) w.push_back(played(i, 20e6));
  CHECK(mos(w, 20e6, 1.0, q) == doctest::Approx(5.0));
  // One 2 s stall episode: 5 - 1.5 - 0.2.
  w[7].stall_s = 2.0;
  w[7].new_episode = true;
  CHECK(mos(w, 20e6, 1.0, q) == doctest::Approx(3.3));
  std::vector<PlaybackRecord> dead;
  for (int i = 0; i < 15; ++i) dead.push_back(skipped(i, i == 0));
  CHECK(mos(dead, 20e6, 1.0, q) == 1.0);
  CHECK_THROWS_AS(mos(std::vector<PlaybackRecord>{}, 20e6, 1.0, q), std::invalid_argument);
  // Half-rate playback, no stalls.
  std::vector<PlaybackRecord> half;
  for (int i = 0; i < 15; ++i) half.push_back(played(i, 10e6));
  CHECK(mos(half, 20e6, 1.0, q) == doctest::Approx(3.0));
}

TEST_CASE("MOS forgets everything outside its window") {
  const QoeConfig q;
  RngStream rng(3, "mos-window");
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<PlaybackRecord> recent;
    for (int i = 0; i < 15; ++i) {
      if (rng.uniform() < 0.1) recent.push_back(skipped(100 + i, rng.uniform() < 0.5));
      else recent.push_back(played(100 + i, 1e6 * static_cast<double>(1 + rng.below(20)), rng.uniform() < 0.2 ? rng.uniform(0, 3) : 0.0, rng.uniform() < 0.1));
    }
    std::vector<PlaybackRecord> a;
    std::vector<PlaybackRecord> b;
    for (int i = 0; i < 30; ++i) {
      a.push_back(played(i, 20e6));
      b.push_back(i % 3 == 0 ? skipped(i, true) : played(i, 1e6, 5.0, true));
    }
    a.insert(a.end(), recent.begin(), recent.end());
    b.insert(b.end(), recent.begin(), recent.end());
    CHECK(mos(a, 20e6, 1.0, q) == mos(b, 20e6, 1.0, q));
    CHECK(mos(a, 20e6, 1.0, q) == mos(recent, 20e6, 1.0, q));
  }
}

TEST_CASE("MOS is non-decreasing in played bitrate for a fixed stall profile") {
  const QoeConfig q;
  RngStream rng(8, "mos-monotone");
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<PlaybackRecord> w;
    for (int i = 0; i < 15; ++i) {
      w.push_back(played(i, 1e6 * static_cast<double>(1 + rng.below(20)), rng.uniform() < 0.1 ? 1.0 : 0.0, rng.uniform() < 0.1));
    }
    const double before = mos(w, 20e6, 1.0, q);
    w[rng.below(15)].bitrate_bps = 20e6;
    CHECK(mos(w, 20e6, 1.0, q) >= before);
  }
}

TEST_CASE("MOS series and run mean") {
  const QoeConfig q;
  std::vector<PlaybackRecord> recs;
  for (int i = 0; i < 20; ++i) {
    recs.push_back(played(i, 20e6));
    recs.back().finished_at = SimTime::from_seconds(i + 1.0);
  }
  const auto series = mos_series(recs, 20e6, 1.0, q);
  REQUIRE(series.size() == 20);
  CHECK(series[19].time == SimTime::from_seconds(20.0));
  CHECK(run_mean_mos(series) == doctest::Approx(5.0));
  CHECK(run_mean_mos(std::vector<MosSample>{}) == 1.0);
}

TEST_CASE("QoE CDF") {
  auto cdf = qoe_cdf({5.0, 1.0, 3.0});
  REQUIRE(cdf.size() == 3);
  CHECK(cdf[0].mos == 1.0);
  CHECK(cdf[0].fraction == doctest::Approx(1.0 / 3));
  CHECK(cdf[1].mos == 3.0);
  CHECK(cdf[1].fraction == doctest::Approx(2.0 / 3));
  CHECK(cdf[2].fraction == doctest::Approx(1.0));
  cdf = qoe_cdf({5.0, 5.0, 5.0});
  REQUIRE(cdf.size() == 1);
  CHECK(cdf[0].fraction == 1.0);
  CHECK_THROWS_AS(qoe_cdf({}), std::invalid_argument);
  const std::vector<double> v{1.0, 4.5, 4.49, 5.0};
  CHECK(fraction_at_least(v, 4.5) == doctest::Approx(0.5));
}

TEST_CASE("KPI report round-trips through its text form") {
  KpiReport r;
  r.preset = "ptm-only";
  r.seed = 3;
  r.duration_s = 60;
  r.num_ues = 30;
  r.num_cells = 3;
  r.avg_resource_consumption = 0.337;
  r.al_se = std::nullopt;
  r.fraction_max_mos = 1.0;
  std::ostringstream out;
  r.write(out);
  std::istringstream in(out.str());
  const auto kv = read_kpi_summary(in);
  CHECK(kv.at("preset") == "ptm-only");
  CHECK(kv.at("avg_resource_consumption") == "0.337");
  CHECK(kv.at("al_se_bps_per_hz") == "undefined");
  CHECK(kv.at("fraction_max_mos") == "1");
}

TEST_CASE("CSV writers") {
  std::ostringstream a;
  write_qoe_cdf_csv(a, {{1.0, 0.5}, {5.0, 1.0}});
  CHECK(a.str() == "mos,cumulative_fraction\n1,0.5\n5,1\n");
  std::ostringstream b;
  write_mos_series_csv(b, {{{SimTime::from_seconds(1.0), 4.2}}});
  CHECK(b.str() == "ue,time,mos\n0,1,4.2\n");
}
