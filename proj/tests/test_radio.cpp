#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "mcsim/radio.hpp"

using namespace mcsim;

namespace {

RadioModel table1_model(double shadowing_db = 8.0) {
  RadioParams p;
  p.shadowing_std_db = shadowing_db;
  return RadioModel(p, Topology::three_cell_cluster(200.0, 2.0));
}

}  // namespace

TEST_CASE("pathloss intercept and slope") {
  // Hand evaluation: 90.5 + 20 log10(3.5 / 2) at the 100 m reference.
  const double ref = 90.5 + 20.0 * std::log10(1.75);
  CHECK(pathloss_db(100.0, 3.5, 3.76) == doctest::Approx(ref).epsilon(1e-12));
  CHECK(pathloss_reference_db(3.5) == doctest::Approx(95.3607).epsilon(1e-5));
  // At 2 GHz the form reduces to 128.1 + 37.6 log10(d_km).
  CHECK(pathloss_db(1000.0, 2.0, 3.76) == doctest::Approx(128.1).epsilon(1e-12));
  CHECK(pathloss_db(500.0, 2.0, 3.76) == doctest::Approx(128.1 + 37.6 * std::log10(0.5)).epsilon(1e-12));
  CHECK(pathloss_db(0.2, 3.5, 3.76) == doctest::Approx(pathloss_db(1.0, 3.5, 3.76)));
}

TEST_CASE("sector antenna pattern") {
  AntennaConfig a;
  // 5 dBi element + 10 log10(8 elements per TXRU).
  const double gmax = 5.0 + 10.0 * std::log10(8.0);
  CHECK(a.max_gain_dbi() == doctest::Approx(gmax));
  CHECK(antenna_gain_dbi(a, 0.0, 20.0) == doctest::Approx(gmax));
  CHECK(antenna_gain_dbi(a, 32.5, 20.0) == doctest::Approx(gmax - 3.0));
  CHECK(antenna_gain_dbi(a, 0.0, 20.0 + 32.5) == doctest::Approx(gmax - 3.0));
  CHECK(antenna_gain_dbi(a, 180.0, 20.0) == doctest::Approx(gmax - 30.0));
  CHECK(antenna_gain_dbi(a, 360.0 + 10.0, 20.0) == doctest::Approx(antenna_gain_dbi(a, 10.0, 20.0)));
}

TEST_CASE("three-cell cluster layout") {
  const Topology t = Topology::three_cell_cluster(200.0, 2.0);
  CHECK(t.num_simulated() == 3);
  CHECK(t.simulated_ids() == std::vector<int>{0, 1, 2});
  // The simulated sectors face the common point.
  for (int id : t.simulated_ids()) {
    const Cell& c = t.cells[id];
    const double bearing = std::atan2(t.region_center.y - c.site.y, t.region_center.x - c.site.x) * 180.0 /
                           std::numbers::pi;
    CHECK(std::remainder(bearing - c.azimuth_deg, 360.0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(distance(c.site, t.region_center) == doctest::Approx(200.0 / std::sqrt(3.0)));
  }
  // Every ring site contributes three sectors.
  CHECK(t.cells.size() % 3 == 0);
  CHECK(t.cells.size() > 9);
  for (std::size_t i = 3; i < t.cells.size(); ++i) {
    CHECK_FALSE(t.cells[i].simulated);
    CHECK(distance(t.cells[i].site, t.region_center) <= 2.0 * 200.0 + 1e-6);
  }
  for (std::size_t i = 0; i < t.cells.size(); ++i) CHECK(t.cells[i].id == static_cast<int>(i));
}

TEST_CASE("MCS table") {
  const McsTable t = McsTable::standard();
  REQUIRE(t.entries().size() == 29);
  CHECK(t.entries().front().spectral_eff == doctest::Approx(0.15));
  CHECK(t.entries().back().spectral_eff == doctest::Approx(7.4));
  CHECK(t.at(2).spectral_eff == doctest::Approx(0.38));
  CHECK(t.at(2).min_sinr_db == doctest::Approx(-4.0));
  CHECK(t.at(4).min_sinr_db == doctest::Approx(-2.0));
  for (std::size_t i = 1; i < t.entries().size(); ++i) {
    CHECK(t.entries()[i].min_sinr_db - t.entries()[i - 1].min_sinr_db == doctest::Approx(1.0));
  }
  CHECK_FALSE(t.select(-6.01).has_value());
  CHECK(t.select(-6.0)->index == 0);
  CHECK(t.select(4.0)->index == 10);   // closed lower bound
  CHECK(t.select(3.999)->index == 9);
  CHECK(t.decodable(-4.0, 2));
  CHECK_FALSE(t.decodable(-4.001, 2));
}

TEST_CASE("MCS table file matches the built-in table") {
  const McsTable file = McsTable::load(std::string(MCSIM_SOURCE_DIR) + "/data/mcs_table.txt");
  const McsTable builtin = McsTable::standard();
  REQUIRE(file.entries().size() == builtin.entries().size());
  for (std::size_t i = 0; i < file.entries().size(); ++i) {
    CHECK(file.entries()[i].index == builtin.entries()[i].index);
    CHECK(file.entries()[i].spectral_eff == builtin.entries()[i].spectral_eff);
    CHECK(file.entries()[i].min_sinr_db == builtin.entries()[i].min_sinr_db);
  }
}

TEST_CASE("malformed MCS tables are rejected") {
  std::istringstream bad_row("0 0.15 -6\n1 oops\n");
  CHECK_THROWS_AS(McsTable::parse(bad_row), std::invalid_argument);
  std::istringstream not_monotone("0 0.15 -6\n1 0.10 -5\n");
  CHECK_THROWS_AS(McsTable::parse(not_monotone), std::invalid_argument);
  std::istringstream empty("# nothing\n");
  CHECK_THROWS_AS(McsTable::parse(empty), std::invalid_argument);
}

TEST_CASE("link adaptation") {
  const LinkAdaptation la(McsTable::standard(), 576.0);
  CHECK(la.rate_bits_per_prb(-7.0) == 0.0);
  CHECK(la.rate_bits_per_prb(-6.0) == doctest::Approx(0.15 * 576));
  // Multicast: fixed MCS whatever the SINR.
  CHECK(la.rate_bits_per_prb(30.0, 2) == doctest::Approx(0.38 * 576));
  CHECK(la.rate_bits_per_prb(-30.0, 2) == doctest::Approx(0.38 * 576));
  // Non-decreasing step function over a 0.1 dB grid.
  double prev = -1.0;
  for (int i = -100; i <= 300; ++i) {
    const double r = la.rate_bits_per_prb(i * 0.1);
    CHECK(r >= prev);
    prev = r;
  }
  CHECK(prev == doctest::Approx(7.4 * 576));
}

TEST_CASE("shadowing is frozen per UE and cell, shared by co-sited sectors") {
  const RadioModel m = table1_model();
  RngStream ch(5, "channel");
  UeRadio ue = m.make_ue(m.topology().region_center, 0.0, kmph_to_mps(3.0), ch);
  const auto before = ue.shadowing_db;
  RngStream mob(5, "mobility");
  std::vector<UeRadio> ues{ue};
  for (int i = 0; i < 100; ++i) m.mobility_step(ues, SimTime::from_ms(100), mob, 10.0);
  CHECK(ues[0].shadowing_db == before);
  const auto& cells = m.topology().cells;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (distance(cells[i].site, cells[j].site) < 1e-6) CHECK(before[i] == before[j]);
    }
  }
}

TEST_CASE("shadowing statistics follow the configured deviation and site correlation") {
  const RadioModel m = table1_model();
  RngStream ch(9, "channel");
  const auto& cells = m.topology().cells;
  // Two distinct sites.
  const int a = 0;
  int b = 1;
  REQUIRE(distance(cells[a].site, cells[b].site) > 1.0);
  const int n = 20000;
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    const UeRadio ue = m.make_ue(m.topology().region_center, 0.0, 0.0, ch);
    const double x = ue.shadowing_db[a];
    const double y = ue.shadowing_db[b];
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  const double va = saa / n - (sa / n) * (sa / n);
  const double vb = sbb / n - (sb / n) * (sb / n);
  const double cov = sab / n - (sa / n) * (sb / n);
  CHECK(std::sqrt(va) == doctest::Approx(8.0).epsilon(0.03));
  CHECK(std::sqrt(vb) == doctest::Approx(8.0).epsilon(0.03));
  CHECK(cov / std::sqrt(va * vb) == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("received powers partition the full cell set") {
  const RadioModel m = table1_model();
  RngStream ch(2, "channel");
  RngStream pos(2, "placement");
  for (int i = 0; i < 200; ++i) {
    const UeRadio ue = m.make_ue(m.uniform_position(pos, 100.0), 0.0, 0.0, ch);
    const auto p = m.received_powers_mw(ue);
    const UnicastPowers up = m.unicast_powers(ue);
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    const double split = up.ring_mw + std::accumulate(up.simulated_mw.begin(), up.simulated_mw.end(), 0.0);
    CHECK(split == doctest::Approx(total).epsilon(1e-12));
    // Unicast SINR: serving power over everything else.
    const double s = p[ue.serving_cell];
    const double expect = 10.0 * std::log10(s / (total - s + up.noise_mw));
    CHECK(ue.sinr_unicast_db == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("load-weighted SINR") {
  const RadioModel m = table1_model();
  RngStream ch(4, "channel");
  RngStream pos(4, "placement");
  for (int i = 0; i < 200; ++i) {
    const UeRadio ue = m.make_ue(m.uniform_position(pos, 100.0), 0.0, 0.0, ch);
    const UnicastPowers up = m.unicast_powers(ue);
    const int serving = ue.serving_cell;  // ids 0..2 are the simulated cells
    const std::vector<double> full{1.0, 1.0, 1.0};
    const std::vector<double> idle{0.0, 0.0, 0.0};
    const std::vector<double> half{0.5, 0.5, 0.5};
    CHECK(load_weighted_sinr_db(up, serving, full) == doctest::Approx(ue.sinr_unicast_db).epsilon(1e-9));
    const double s_idle = load_weighted_sinr_db(up, serving, idle);
    const double s_half = load_weighted_sinr_db(up, serving, half);
    CHECK(s_idle >= s_half);
    CHECK(s_half >= ue.sinr_unicast_db - 1e-12);
    // Idle neighbours leave only ring and noise.
    const double expect = 10.0 * std::log10(up.simulated_mw[serving] / (up.ring_mw + up.noise_mw));
    CHECK(s_idle == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("MBSFN SINR") {
  const RadioModel m = table1_model();
  RngStream ch(11, "channel");
  RngStream pos(11, "placement");
  SUBCASE("dominates unicast SINR everywhere in the region") {
    for (int i = 0; i < 500; ++i) {
      const UeRadio ue = m.make_ue(m.uniform_position(pos, 100.0), 0.0, 0.0, ch);
      CHECK(ue.sinr_mbsfn_db >= ue.sinr_unicast_db - 1e-9);
    }
  }
  SUBCASE("single-cell area equals unicast SINR") {
    for (int i = 0; i < 100; ++i) {
      const UeRadio ue = m.make_ue(m.uniform_position(pos, 100.0), 0.0, 0.0, ch);
      const int area[] = {ue.serving_cell};
      CHECK(m.mbsfn_sinr_db(ue, area) == doctest::Approx(ue.sinr_unicast_db).epsilon(1e-9));
    }
  }
  SUBCASE("a second in-area cell adds useful power") {
    const RadioModel flat = table1_model(0.0);
    const auto& cells = flat.topology().cells;
    // Midpoint between the sites of cells 0 and 1.
    const Vec2 mid{(cells[0].site.x + cells[1].site.x) / 2, (cells[0].site.y + cells[1].site.y) / 2};
    const UeRadio ue = flat.make_ue(mid, 0.0, 0.0, ch);
    const int one[] = {ue.serving_cell};
    const int two[] = {0, 1};
    CHECK(flat.mbsfn_sinr_db(ue, two) > flat.mbsfn_sinr_db(ue, one));
  }
  SUBCASE("worst-direction SINR falls towards the cluster edge") {
    // Without shadowing: for each radius around the common point, the worst
    // direction gets worse as the ring comes closer.
    const RadioModel flat = table1_model(0.0);
    const Vec2 c = flat.topology().region_center;
    double prev = 1e9;
    for (double r = 20.0; r <= 100.0; r += 10.0) {
      double worst = 1e9;
      for (int a = 0; a < 360; a += 5) {
        const double rad = a * std::numbers::pi / 180.0;
        const UeRadio ue = flat.make_ue({c.x + r * std::cos(rad), c.y + r * std::sin(rad)}, 0.0, 0.0, ch);
        worst = std::min(worst, ue.sinr_mbsfn_db);
      }
      CHECK(worst <= prev);
      prev = worst;
    }
    const UeRadio centre = flat.make_ue(c, 0.0, 0.0, ch);
    CHECK(prev < centre.sinr_mbsfn_db - 10.0);
  }
  SUBCASE("a useful ring raises MBSFN SINR") {
    RadioParams p;
    p.ring_mbsfn_useful = true;
    const RadioModel sfn(p, Topology::three_cell_cluster(200.0, 2.0));
    RngStream c1(12, "channel");
    RngStream c2(12, "channel");
    RngStream p1(12, "placement");
    for (int i = 0; i < 50; ++i) {
      const Vec2 at = m.uniform_position(p1, 100.0);
      CHECK(sfn.make_ue(at, 0, 0, c1).sinr_mbsfn_db > m.make_ue(at, 0, 0, c2).sinr_mbsfn_db);
    }
  }
}

TEST_CASE("mobility") {
  const RadioModel m = table1_model(0.0);
  const Vec2 c = m.topology().region_center;
  RngStream ch(1, "channel");
  SUBCASE("3 km/h for one second moves 0.833 m") {
    std::vector<UeRadio> ues{m.make_ue(c, 0.0, kmph_to_mps(3.0), ch)};
    RngStream mob(1, "mobility");
    m.mobility_step(ues, SimTime::from_seconds(1.0), mob, 0.0);
    CHECK(distance(ues[0].position, c) == doctest::Approx(3.0 / 3.6).epsilon(1e-12));
  }
  SUBCASE("dt must be positive") {
    std::vector<UeRadio> ues{m.make_ue(c, 0.0, 1.0, ch)};
    RngStream mob(1, "mobility");
    CHECK_THROWS_AS(m.mobility_step(ues, SimTime(0), mob, 10.0), std::invalid_argument);
  }
  SUBCASE("two runs with one seed follow identical trajectories") {
    auto run = [&] {
      RngStream place(3, "placement");
      RngStream chan(3, "channel");
      RngStream mob(3, "mobility");
      std::vector<UeRadio> ues;
      for (int i = 0; i < 10; ++i) ues.push_back(m.make_ue(m.uniform_position(place, 100.0), 0.3 * i, 5.0, chan));
      for (int s = 0; s < 500; ++s) m.mobility_step(ues, SimTime::from_ms(100), mob, 10.0);
      std::vector<double> xy;
      for (const auto& u : ues) {
        xy.push_back(u.position.x);
        xy.push_back(u.position.y);
      }
      return xy;
    };
    CHECK(run() == run());
  }
  SUBCASE("long runs stay in bounds and spread over the region") {
    const RadioModel sh = table1_model();
    RngStream place(8, "placement");
    RngStream chan(8, "channel");
    RngStream mob(8, "mobility");
    std::vector<UeRadio> ues;
    while (ues.size() < 20) {
      UeRadio u = sh.make_ue(sh.uniform_position(place, 100.0), place.uniform(-3.14, 3.14), 10.0, chan);
      if (sh.in_coverage(u)) ues.push_back(u);
    }
    int inner = 0;
    int total = 0;
    for (int s = 0; s < 5000; ++s) {
      sh.mobility_step(ues, SimTime::from_ms(100), mob, 10.0);
      for (const auto& u : ues) {
        const double r = distance(u.position, c);
        CHECK(r <= 100.0 + 1e-9);
        CHECK(sh.in_coverage(u));
        inner += r * r <= 0.5 * 100.0 * 100.0;
        ++total;
      }
    }
    // Half the disk area lies inside r = R / sqrt(2).
    const double frac = static_cast<double>(inner) / total;
    CHECK(frac > 0.35);
    CHECK(frac < 0.75);
  }
}
