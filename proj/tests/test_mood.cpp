#include <doctest.h>

#include <sstream>

#include "mcsim/mood.hpp"

using namespace mcsim;

namespace {

MoodConfig cfg() {
  MoodConfig c;
  c.activate_threshold = 2;
  c.deactivate_threshold = 1;
  c.evaluation_interval = SimTime::from_seconds(1.0);
  c.switch_latency = SimTime::from_seconds(2.0);
  return c;
}

// Drives a controller with a per-second audience list; every active UE
// reports every 0.5 s. Returns the switch log.
std::vector<SwitchLogEntry> drive(const std::vector<int>& audience_per_second) {
  MoodController m(cfg(), 0);
  for (std::size_t sec = 0; sec < audience_per_second.size(); ++sec) {
    for (int half = 0; half < 2; ++half) {
      const SimTime t = SimTime::from_ms(static_cast<std::int64_t>(sec) * 1000 + half * 500);
      for (int ue = 0; ue < audience_per_second[sec]; ++ue) m.report({ue, 0, t});
      m.complete_pending(t);
      if (half == 0) m.evaluate(t);
    }
  }
  return m.switch_log();
}

}  // namespace

TEST_CASE("thresholds must leave a hysteresis gap") {
  MoodConfig c = cfg();
  CHECK_NOTHROW(c.validate());
  c.deactivate_threshold = 2;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = cfg();
  c.activate_threshold = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = cfg();
  c.evaluation_interval = SimTime(0);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("audience counts only fresh reports") {
  MoodController m(cfg(), 7);
  m.report({0, 7, SimTime::from_ms(0)});
  m.report({1, 7, SimTime::from_ms(600)});
  CHECK(m.audience(SimTime::from_ms(1000)) == 2);
  CHECK(m.audience(SimTime::from_ms(1001)) == 1);
  CHECK(m.audience(SimTime::from_ms(1601)) == 0);
  m.forget(1);
  CHECK(m.audience(SimTime::from_ms(600)) == 1);
  CHECK_THROWS_AS(m.report({0, 8, SimTime(0)}), std::invalid_argument);
}

TEST_CASE("one to two viewers switches to multicast once, after the latency") {
  MoodController m(cfg(), 0);
  m.report({0, 0, SimTime::from_ms(0)});
  CHECK_FALSE(m.evaluate(SimTime::from_ms(0)).has_value());
  m.report({1, 0, SimTime::from_ms(1000)});
  const auto cmd = m.evaluate(SimTime::from_ms(1000));
  REQUIRE(cmd.has_value());
  CHECK(cmd->from == MoodMode::kUnicast);
  CHECK(cmd->to == MoodMode::kMulticast);
  CHECK(cmd->completes_at == SimTime::from_ms(3000));
  // While pending no further command is issued.
  m.report({0, 0, SimTime::from_ms(2000)});
  m.report({1, 0, SimTime::from_ms(2000)});
  CHECK_FALSE(m.evaluate(SimTime::from_ms(2000)).has_value());
  CHECK_FALSE(m.complete_pending(SimTime::from_ms(2999)).has_value());
  CHECK(m.state().mode == MoodMode::kUnicast);
  CHECK(m.complete_pending(SimTime::from_ms(3000)).has_value());
  CHECK(m.state().mode == MoodMode::kMulticast);
  REQUIRE(m.switch_log().size() == 1);
  CHECK(m.switch_log()[0].time == SimTime::from_ms(3000));
}

TEST_CASE("audience script 1,2,3,1 produces exactly two switches") {
  std::vector<int> script;
  for (int a : {1, 2, 3, 1}) script.insert(script.end(), 30, a);
  const auto log = drive(script);
  REQUIRE(log.size() == 2);
  CHECK(log[0].to == MoodMode::kMulticast);
  CHECK(log[1].to == MoodMode::kUnicast);
  CHECK(log[0].time < SimTime::from_seconds(35.0));
  CHECK(log[1].time > SimTime::from_seconds(90.0));
}

TEST_CASE("an audience oscillating inside the hysteresis band never flaps") {
  // An audience that stays at 2 after activation is above the deactivation
  // threshold, so multicast stays on.
  std::vector<int> script(10, 3);
  script.insert(script.end(), 40, 2);
  CHECK(drive(script).size() == 1);
  // Any script yields alternating directions, starting with activation.
  RngStream rng(4, "mood-test");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> s;
    for (int i = 0; i < 120; ++i) s.push_back(static_cast<int>(rng.below(5)));
    const auto log = drive(s);
    for (std::size_t i = 0; i < log.size(); ++i) {
      CHECK(log[i].to == (i % 2 == 0 ? MoodMode::kMulticast : MoodMode::kUnicast));
      if (i > 0) CHECK(log[i].time - log[i - 1].time >= SimTime::from_seconds(2.0));
    }
  }
}

TEST_CASE("switch log CSV") {
  std::ostringstream out;
  write_switch_log_csv(out, {{SimTime::from_ms(32000), 0, MoodMode::kUnicast, MoodMode::kMulticast, 2}});
  CHECK(out.str() == "time,content,from_mode,to_mode,audience\n32.000,0,unicast,multicast,2\n");
}
