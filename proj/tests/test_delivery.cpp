#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "mcsim/delivery.hpp"

using namespace mcsim;

namespace {

DeliveryCore make_core(int num_ues, double share = 0.8) {
  SchedulerConfig cfg;
  cfg.broadcast_share = share;
  return DeliveryCore(cfg, LinkAdaptation(McsTable::standard(), 576.0), num_ues);
}

Packet raw(SessionId s, std::uint64_t seq, std::uint32_t bytes = 1500, LinkTag tag = LinkTag::kUnicastPrimary) {
  return Packet{s, 0, seq, bytes, payload_digest(s, seq, bytes), tag, -1};
}

}  // namespace

TEST_CASE("segment sizing and packetisation") {
  // 20 Mbps for one second is 2.5 MB, i.e. ceil(2'500'000 / 1500) packets.
  CHECK(segment_size_bytes(20e6, 1.0) == 2'500'000);
  CHECK(packets_for(2'500'000, 1500) == 1667);
  CHECK(packets_for(1500, 1500) == 1);
  CHECK(packets_for(1501, 1500) == 2);
  CHECK_THROWS_AS(packets_for(0, 1500), std::invalid_argument);
  const Ladder l = default_ladder();
  REQUIRE(l.size() == 6);
  CHECK(l.front().bits_per_s == 1e6);
  CHECK(l.back().bits_per_s == 20e6);
}

TEST_CASE("sessions emit contiguous sequence numbers") {
  Session s(1, 0, DeliveryMode::kMulticast, default_ladder(), 1.0);
  std::uint64_t expect = 0;
  std::int64_t bytes = 0;
  for (int k = 0; k < 4; ++k) {
    const auto pkts = s.enqueue_segment(k, k % 6, LinkTag::kMulticast);
    bytes = 0;
    for (const auto& p : pkts) {
      CHECK(p.seq == expect++);
      CHECK(p.segment_index == k);
      CHECK(p.digest == payload_digest(1, p.seq, p.payload_bytes));
      bytes += p.payload_bytes;
    }
    CHECK(bytes == segment_size_bytes(default_ladder()[k % 6].bits_per_s, 1.0));
  }
  CHECK(s.next_seq() == expect);
  CHECK(s.last_index() == 3);
  CHECK_THROWS_AS(s.enqueue_segment(5, 0, LinkTag::kMulticast), std::logic_error);
  CHECK_THROWS_AS(s.enqueue_segment(3, 0, LinkTag::kMulticast), std::logic_error);

  const SegmentSpan* sp = s.find_by_seq(expect - 1);
  REQUIRE(sp != nullptr);
  CHECK(sp->index == 3);
  const auto again = s.regenerate(expect - 1, LinkTag::kUnicastRepair);
  REQUIRE(again.has_value());
  CHECK(again->digest == payload_digest(1, expect - 1, again->payload_bytes));
  CHECK_FALSE(s.regenerate(expect, LinkTag::kUnicastRepair).has_value());

  const auto re = s.reissue_last(0, LinkTag::kUnicastPrimary);
  CHECK(re.front().seq == expect);
  CHECK(re.front().segment_index == 3);
}

TEST_CASE("multicast PRB cost") {
  DeliveryCore core = make_core(0);
  // ceil(20000 bits / (0.38 * 576)) and ceil(20000 / (0.88 * 576)).
  CHECK(core.multicast_prbs_for(20e6, 2) == 92);
  CHECK(core.multicast_prbs_for(20e6, 4) == 40);
  CHECK(92.0 / 273 == doctest::Approx(0.337).epsilon(0.002));
  CHECK(40.0 / 273 == doctest::Approx(0.146).epsilon(0.002));
  CHECK(core.broadcast_cap_prbs() == 218);
  CHECK(make_core(0, 0.6).broadcast_cap_prbs() == 163);
}

TEST_CASE("idle grid logs zero usage") {
  DeliveryCore core = make_core(2);
  std::vector<UeLinkView> views{{0, 500.0, true}, {1, 500.0, true}};
  core.schedule_tti(SimTime(0), views);
  for (const auto& log : core.logs()) {
    REQUIRE(log.rows().size() == 1);
    CHECK(log.rows()[0].prbs_multicast == 0);
    CHECK(log.rows()[0].prbs_unicast == 0);
    CHECK(log.rows()[0].prbs_total == 273);
  }
  std::ostringstream csv;
  core.logs()[0].write_csv(csv);
  CHECK(csv.str() == "tti,prbs_multicast,prbs_unicast,prbs_total\n0,0,0,273\n");
}

TEST_CASE("multicast cost does not depend on the number of subscribers") {
  auto run = [](int subscribers) {
    DeliveryCore core = make_core(subscribers);
    Session s(1, 0, DeliveryMode::kMulticast, default_ladder(), 1.0);
    for (int u = 0; u < subscribers; ++u) s.subscribe(u);
    const int b = core.open_bearer(1, 2, 20e6);
    for (const auto& p : s.enqueue_segment(0, 5, LinkTag::kMulticast)) core.push_multicast(b, p);
    std::vector<UeLinkView> views(static_cast<std::size_t>(subscribers), UeLinkView{0, 0.0, true});
    std::int64_t prbs = 0;
    std::size_t delivered = 0;
    for (int t = 0; t < 1200; ++t) {
      delivered += core.schedule_tti(SimTime(t), views).multicast.size();
      prbs += core.logs()[0].rows().back().prbs_multicast;
    }
    CHECK(delivered == 1667);
    return prbs;
  };
  const auto one = run(1);
  CHECK(one == 1200 * 92);
  CHECK(run(10) == one);
  CHECK(run(30) == one);
}

TEST_CASE("multicast delivers in order and closes once drained") {
  DeliveryCore core = make_core(0);
  Session s(1, 0, DeliveryMode::kMulticast, default_ladder(), 1.0);
  const int b = core.open_bearer(1, 2, 20e6);
  for (const auto& p : s.enqueue_segment(0, 5, LinkTag::kMulticast)) core.push_multicast(b, p);
  core.close_bearer_when_drained(b);
  std::uint64_t next = 0;
  int t = 0;
  while (core.bearer_open(b)) {
    for (const auto& [bearer, p] : core.schedule_tti(SimTime(t++), {}).multicast) {
      CHECK(bearer == b);
      CHECK(p.seq == next++);
    }
    REQUIRE(t < 5000);
  }
  CHECK(next == 1667);
  // 20 Mbps at its exact reservation drains one second of content in about one second.
  CHECK(t == doctest::Approx(1000).epsilon(0.01));
  core.schedule_tti(SimTime(t), {});
  CHECK(core.logs()[0].rows().back().prbs_multicast == 0);
  CHECK_THROWS_AS(core.push_multicast(b, raw(1, 0)), std::logic_error);
}

TEST_CASE("bearers beyond the broadcast cap are clipped and flagged") {
  DeliveryCore core = make_core(0, 0.6);
  const int a = core.open_bearer(1, 2, 20e6);
  const int b = core.open_bearer(2, 2, 20e6);
  for (std::uint64_t i = 0; i < 20000; ++i) {
    core.push_multicast(a, raw(1, i));
    core.push_multicast(b, raw(2, i));
  }
  for (int t = 0; t < 10; ++t) core.schedule_tti(SimTime(t), {});
  CHECK(core.logs()[0].rows().back().prbs_multicast == 163);
  CHECK_FALSE(core.warnings().empty());
}

TEST_CASE("unicast usage never exceeds what multicast leaves") {
  RngStream rng(21, "delivery-test");
  const int n = 30;
  DeliveryCore core = make_core(n);
  Session mc(100, 0, DeliveryMode::kMulticast, default_ladder(), 1.0);
  const int b = core.open_bearer(100, 4, 20e6);
  std::int64_t mc_index = 0;
  std::uint64_t seq = 0;
  std::map<UeId, std::int64_t> pushed_bytes;
  std::map<UeId, std::int64_t> got_bytes;
  std::map<UeId, std::uint64_t> last_seq;
  for (int t = 0; t < 3000; ++t) {
    if (t % 1000 == 0) {
      for (const auto& p : mc.enqueue_segment(mc_index++, 5, LinkTag::kMulticast)) core.push_multicast(b, p);
    }
    if (t % 50 == 0) {
      const auto ue = static_cast<UeId>(rng.below(n));
      const auto bytes = static_cast<std::uint32_t>(1 + rng.below(1500));
      core.push_unicast(ue, raw(ue, seq++, bytes));
      pushed_bytes[ue] += bytes;
    }
    std::vector<UeLinkView> views;
    for (int u = 0; u < n; ++u) {
      views.push_back({u % 3, 100.0 + 50.0 * static_cast<double>(rng.below(40)), rng.uniform() < 0.9});
    }
    const auto res = core.schedule_tti(SimTime(t), views);
    for (const auto& [ue, p] : res.unicast) {
      got_bytes[ue] += p.payload_bytes;
      if (last_seq.count(ue)) CHECK(p.seq > last_seq[ue]);  // FIFO per flow
      last_seq[ue] = p.seq;
    }
    for (const auto& log : core.logs()) {
      const auto& row = log.rows().back();
      CHECK(row.used() <= row.prbs_total);
      CHECK(row.prbs_multicast == 40);
    }
  }
  for (const auto& [ue, bytes] : got_bytes) {
    CHECK(bytes + core.unicast_backlog_bytes(ue) == pushed_bytes[ue]);
  }
}

TEST_CASE("backlogged flows in one cell get equal PRB shares") {
  DeliveryCore core = make_core(4);
  for (UeId u = 0; u < 4; ++u) {
    for (std::uint64_t i = 0; i < 2000; ++i) core.push_unicast(u, raw(u, i));
  }
  std::vector<UeLinkView> views(4, UeLinkView{0, 1000.0, true});
  std::map<UeId, std::int64_t> bits;
  for (int t = 0; t < 100; ++t) {
    for (const auto& [ue, p] : core.schedule_tti(SimTime(t), views).unicast) bits[ue] += p.bits();
  }
  for (UeId u = 0; u < 4; ++u) {
    // 273 / 4 PRBs of 1000 bits for 100 TTIs, within one packet.
    CHECK(static_cast<double>(bits[u]) == doctest::Approx(273.0 / 4 * 1000 * 100).epsilon(0.01));
  }
  CHECK(core.logs()[0].rows().back().prbs_unicast == 273);
  CHECK(core.logs()[1].rows().back().prbs_unicast == 0);
}

TEST_CASE("repairs jump the unicast queue and purge removes packets") {
  DeliveryCore core = make_core(1);
  for (std::uint64_t i = 0; i < 10; ++i) core.push_unicast(0, raw(1, i));
  core.push_unicast(0, raw(1, 99, 1500, LinkTag::kUnicastRepair));
  CHECK(core.unicast_backlog_bytes(0, LinkTag::kUnicastRepair) == 1500);
  std::vector<UeLinkView> views{{0, 50.0, true}};
  const auto res = core.schedule_tti(SimTime(0), views);
  REQUIRE_FALSE(res.unicast.empty());
  CHECK(res.unicast.front().second.seq == 99);
  const auto removed = core.purge_unicast(0, [](const Packet& p) { return p.seq >= 5; });
  CHECK(removed == 5);
  CHECK(core.unicast_backlog_bytes(0) == 1500 * (10 - 5 - static_cast<std::int64_t>(res.unicast.size() - 1)));
}

TEST_CASE("alert carousel accumulates across rounds") {
  AlertCarousel c(7, 2'000'000, 3);
  CHECK(c.packets_per_round() == 1334);
  const auto round0 = c.round_packets(0);
  std::int64_t total = 0;
  for (const auto& p : round0) total += p.payload_bytes;
  CHECK(total == 2'000'000);
  CHECK(round0.back().payload_bytes == 2'000'000 - 1333 * 1500);
  c.add_receiver(0);
  // Even seqs in round 0, odd seqs in round 1.
  bool done = false;
  for (const auto& p : round0) {
    if (p.seq % 2 == 0) done |= c.receive(0, p);
  }
  CHECK_FALSE(done);
  CHECK(c.missing(0).size() == 667);
  for (const auto& p : c.round_packets(1)) {
    if (p.seq % 2 == 1) done |= c.receive(0, p);
  }
  CHECK(done);
  CHECK(c.complete(0));
  CHECK(c.missing(0).empty());
  CHECK_FALSE(c.receive(0, round0[0]));  // duplicates do not re-complete
  CHECK_FALSE(c.complete(1));
}
