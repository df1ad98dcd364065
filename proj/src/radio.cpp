#include "mcsim/radio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>

namespace mcsim {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double db_to_mw(double db) { return std::pow(10.0, db / 10.0); }
double mw_to_db(double mw) { return 10.0 * std::log10(mw); }

double wrap_deg(double a) {
  a = std::fmod(a + 180.0, 360.0);
  if (a < 0) a += 360.0;
  return a - 180.0;
}

// Index, spectral efficiency (bits/RE), minimum SINR (dB). Efficiencies span
// QPSK at very low code rate through 256QAM; thresholds step by 1 dB.
constexpr McsEntry kStandardMcs[] = {
    {0, 0.15, -6.0},  {1, 0.23, -5.0},  {2, 0.38, -4.0},  {3, 0.60, -3.0},
    {4, 0.88, -2.0},  {5, 1.18, -1.0},  {6, 1.48, 0.0},   {7, 1.70, 1.0},
    {8, 1.91, 2.0},   {9, 2.16, 3.0},   {10, 2.41, 4.0},  {11, 2.57, 5.0},
    {12, 2.73, 6.0},  {13, 3.03, 7.0},  {14, 3.32, 8.0},  {15, 3.61, 9.0},
    {16, 3.90, 10.0}, {17, 4.21, 11.0}, {18, 4.52, 12.0}, {19, 4.82, 13.0},
    {20, 5.12, 14.0}, {21, 5.33, 15.0}, {22, 5.55, 16.0}, {23, 5.89, 17.0},
    {24, 6.23, 18.0}, {25, 6.57, 19.0}, {26, 6.91, 20.0}, {27, 7.16, 21.0},
    {28, 7.40, 22.0},
};

}  // namespace

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

double kmph_to_mps(double kmph) { return kmph / 3.6; }

double AntennaConfig::max_gain_dbi() const {
  const double per_txru = static_cast<double>(vertical_elements) / txru_vertical;
  return element_gain_dbi + 10.0 * std::log10(per_txru);
}

int Topology::num_simulated() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(),
                                        [](const Cell& c) { return c.simulated; }));
}

std::vector<int> Topology::simulated_ids() const {
  std::vector<int> ids;
  for (const auto& c : cells) {
    if (c.simulated) ids.push_back(c.id);
  }
  return ids;
}

Topology Topology::three_cell_cluster(double isd, double ring_radius_isd) {
  if (!(isd > 0)) throw std::invalid_argument("inter-site distance must be positive");
  Topology t;
  t.inter_site_distance_m = isd;
  // Sites A=(0,0), B=(isd,0), C=(isd/2, isd*sqrt(3)/2). Their 30, 150 and 270
  // degree sectors all point at the triangle centroid, which is the common
  // corner of the three simulated cells.
  const double h = isd * std::sqrt(3.0) / 2.0;
  t.region_center = {isd / 2.0, h / 3.0};
  t.region_radius_m = isd / 2.0;
  const double boresights[3] = {30.0, 150.0, 270.0};
  const Vec2 simulated_sites[3] = {{0.0, 0.0}, {isd, 0.0}, {isd / 2.0, h}};
  const double simulated_az[3] = {30.0, 150.0, 270.0};

  int id = 0;
  for (int k = 0; k < 3; ++k) t.cells.push_back({id++, simulated_sites[k], simulated_az[k], true});

  // Remaining sectors of every lattice site within ring_radius_isd * isd of
  // the centroid interfere.
  const int span = static_cast<int>(std::ceil(ring_radius_isd)) + 2;
  std::vector<Vec2> sites;
  for (int j = -span; j <= span; ++j) {
    for (int i = -span; i <= span; ++i) {
      const Vec2 p{isd * (i + 0.5 * j), h * j};
      if (distance(p, t.region_center) <= ring_radius_isd * isd + 1e-6) sites.push_back(p);
    }
  }
  std::sort(sites.begin(), sites.end(), [&](Vec2 a, Vec2 b) {
    const double da = distance(a, t.region_center);
    const double db = distance(b, t.region_center);
    if (std::abs(da - db) > 1e-6) return da < db;
    return std::atan2(a.y - t.region_center.y, a.x - t.region_center.x) <
           std::atan2(b.y - t.region_center.y, b.x - t.region_center.x);
  });
  for (const Vec2& p : sites) {
    for (double az : boresights) {
      bool is_simulated = false;
      for (int k = 0; k < 3; ++k) {
        if (distance(p, simulated_sites[k]) < 1e-6 && az == simulated_az[k]) is_simulated = true;
      }
      if (!is_simulated) t.cells.push_back({id++, p, az, false});
    }
  }
  return t;
}

double pathloss_reference_db(double carrier_ghz) {
  return 90.5 + 20.0 * std::log10(carrier_ghz / 2.0);
}

double pathloss_db(double distance_3d_m, double carrier_ghz, double exponent) {
  const double d = std::max(distance_3d_m, 1.0);
  return pathloss_reference_db(carrier_ghz) +
         10.0 * exponent * std::log10(d / kPathlossReferenceDistanceM);
}

double antenna_gain_dbi(const AntennaConfig& a, double azimuth_offset_deg, double elevation_deg) {
  const double phi = wrap_deg(azimuth_offset_deg) / a.beamwidth_azimuth_deg;
  const double theta = (elevation_deg - a.electrical_downtilt_deg) / a.beamwidth_elevation_deg;
  const double horizontal = std::min(12.0 * phi * phi, a.max_attenuation_db);
  const double vertical = std::min(12.0 * theta * theta, a.max_attenuation_db);
  return a.max_gain_dbi() - horizontal - vertical;
}

McsTable::McsTable(std::vector<McsEntry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw std::invalid_argument("MCS table is empty");
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    const auto& p = entries_[i - 1];
    const auto& e = entries_[i];
    if (e.index <= p.index || e.spectral_eff <= p.spectral_eff || e.min_sinr_db <= p.min_sinr_db) {
      throw std::invalid_argument("MCS table must be strictly increasing in index, efficiency and "
                                  "min SINR (row " + std::to_string(i) + ")");
    }
  }
  for (const auto& e : entries_) {
    if (!(e.spectral_eff > 0)) throw std::invalid_argument("MCS efficiency must be positive");
  }
}

McsTable McsTable::standard() {
  return McsTable(std::vector<McsEntry>(std::begin(kStandardMcs), std::end(kStandardMcs)));
}

McsTable McsTable::parse(std::istream& in) {
  std::vector<McsEntry> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    McsEntry e;
    if (!(ls >> e.index >> e.spectral_eff >> e.min_sinr_db)) {
      throw std::invalid_argument("MCS table line " + std::to_string(line_no) +
                                  ": expected 'index eff min_sinr'");
    }
    rows.push_back(e);
  }
  return McsTable(std::move(rows));
}

McsTable McsTable::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open MCS table " + path.string());
  return parse(in);
}

std::optional<McsEntry> McsTable::select(double sinr_db) const {
  std::optional<McsEntry> best;
  for (const auto& e : entries_) {
    if (e.min_sinr_db <= sinr_db) best = e;
    else break;
  }
  return best;
}

const McsEntry& McsTable::at(int index) const {
  for (const auto& e : entries_) {
    if (e.index == index) return e;
  }
  throw std::out_of_range("no MCS entry with index " + std::to_string(index));
}

bool McsTable::decodable(double sinr_db, int mcs_index) const {
  return sinr_db >= at(mcs_index).min_sinr_db;
}

LinkAdaptation::LinkAdaptation(McsTable table, double data_res_per_prb)
    : table_(std::move(table)), res_per_prb_(data_res_per_prb) {
  if (!(res_per_prb_ > 0)) throw std::invalid_argument("data REs per PRB must be positive");
}

double LinkAdaptation::rate_bits_per_prb(double sinr_db, std::optional<int> mcs) const {
  if (mcs) return table_.at(*mcs).spectral_eff * res_per_prb_;
  const auto e = table_.select(sinr_db);
  return e ? e->spectral_eff * res_per_prb_ : 0.0;
}

RadioModel::RadioModel(RadioParams params, Topology topology)
    : params_(params), topology_(std::move(topology)), area_(topology_.simulated_ids()) {
  if (area_.empty()) throw std::invalid_argument("topology has no simulated cells");
}

UeRadio RadioModel::make_ue(Vec2 position, double heading_rad, double speed_mps,
                            RngStream& channel) const {
  UeRadio ue;
  ue.position = position;
  ue.heading_rad = heading_rad;
  ue.speed_mps = speed_mps;
  // Co-sited sectors share one propagation path, hence one shadowing value.
  // Sites are correlated through a common component (coefficient
  // shadowing_site_correlation), as in standard macro-layer evaluations.
  ue.shadowing_db.assign(topology_.cells.size(), 0.0);
  const double rho = params_.shadowing_site_correlation;
  const double common = params_.shadowing_std_db > 0 ? channel.normal(0.0, 1.0) : 0.0;
  for (std::size_t i = 0; i < topology_.cells.size(); ++i) {
    const Cell& cell = topology_.cells[i];
    std::size_t first_on_site = i;
    for (std::size_t j = 0; j < i; ++j) {
      if (distance(topology_.cells[j].site, cell.site) < 1e-6) {
        first_on_site = j;
        break;
      }
    }
    if (first_on_site != i) {
      ue.shadowing_db[i] = ue.shadowing_db[first_on_site];
    } else if (params_.shadowing_std_db > 0) {
      const double own = channel.normal(0.0, 1.0);
      ue.shadowing_db[i] =
          params_.shadowing_std_db * (std::sqrt(rho) * common + std::sqrt(1.0 - rho) * own);
    }
  }
  update_link_quality(ue);
  return ue;
}

double RadioModel::noise_dbm() const {
  return -174.0 + 10.0 * std::log10(params_.bandwidth_mhz * 1e6) + params_.ue_noise_figure_db;
}

double RadioModel::total_pathloss_db(const UeRadio& ue, const Cell& cell) const {
  const double d2 = distance(ue.position, cell.site);
  const double dh = params_.site_height_m - params_.ue_height_m;
  const double d3 = std::hypot(d2, dh);
  const double shadow =
      static_cast<std::size_t>(cell.id) < ue.shadowing_db.size() ? ue.shadowing_db[cell.id] : 0.0;
  return pathloss_db(d3, params_.carrier_freq_ghz, params_.pathloss_exponent) + shadow;
}

double RadioModel::received_power_dbm(const UeRadio& ue, const Cell& cell) const {
  const double dx = ue.position.x - cell.site.x;
  const double dy = ue.position.y - cell.site.y;
  const double bearing = std::atan2(dy, dx) / kDeg;
  const double elevation =
      std::atan2(params_.site_height_m - params_.ue_height_m, std::hypot(dx, dy)) / kDeg;
  const double gain = antenna_gain_dbi(params_.antenna, bearing - cell.azimuth_deg, elevation);
  return params_.tx_power_dbm + gain - total_pathloss_db(ue, cell);
}

std::vector<double> RadioModel::received_powers_mw(const UeRadio& ue) const {
  std::vector<double> p;
  p.reserve(topology_.cells.size());
  for (const auto& c : topology_.cells) p.push_back(db_to_mw(received_power_dbm(ue, c)));
  return p;
}

int RadioModel::strongest_simulated_cell(const UeRadio& ue) const {
  int best = area_.front();
  double best_p = -1e300;
  for (int id : area_) {
    const double p = received_power_dbm(ue, topology_.cells[id]);
    if (p > best_p) {
      best_p = p;
      best = id;
    }
  }
  return best;
}

double RadioModel::unicast_sinr_db(const UeRadio& ue, int serving_cell) const {
  const auto p = received_powers_mw(ue);
  double interference = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (static_cast<int>(i) != serving_cell) interference += p[i];
  }
  return mw_to_db(p.at(serving_cell) / (interference + db_to_mw(noise_dbm())));
}

double RadioModel::mbsfn_sinr_db(const UeRadio& ue, std::span<const int> area) const {
  const auto p = received_powers_mw(ue);
  std::vector<bool> useful(p.size(), false);
  for (int id : area) useful.at(id) = true;
  if (params_.ring_mbsfn_useful) {
    for (const auto& c : topology_.cells) {
      if (!c.simulated) useful[c.id] = true;
    }
  }
  double signal = 0.0;
  double interference = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) (useful[i] ? signal : interference) += p[i];
  return mw_to_db(signal / (interference + db_to_mw(noise_dbm())));
}

double RadioModel::mbsfn_sinr_db(const UeRadio& ue) const { return mbsfn_sinr_db(ue, area_); }

void RadioModel::update_link_quality(UeRadio& ue) const {
  ue.serving_cell = strongest_simulated_cell(ue);
  ue.sinr_unicast_db = unicast_sinr_db(ue, ue.serving_cell);
  ue.sinr_mbsfn_db = mbsfn_sinr_db(ue);
}

UnicastPowers RadioModel::unicast_powers(const UeRadio& ue) const {
  const auto p = received_powers_mw(ue);
  UnicastPowers out;
  out.noise_mw = db_to_mw(noise_dbm());
  for (const auto& c : topology_.cells) {
    if (!c.simulated) out.ring_mw += p[c.id];
  }
  for (int id : area_) out.simulated_mw.push_back(p[id]);
  return out;
}

double load_weighted_sinr_db(const UnicastPowers& p, int serving_index, std::span<const double> loads) {
  double interference = p.ring_mw + p.noise_mw;
  for (std::size_t j = 0; j < p.simulated_mw.size(); ++j) {
    if (static_cast<int>(j) != serving_index) interference += loads[j] * p.simulated_mw[j];
  }
  return mw_to_db(p.simulated_mw.at(serving_index) / interference);
}

bool RadioModel::in_coverage(const UeRadio& ue) const {
  int best = 0;
  double best_p = -1e300;
  for (const auto& c : topology_.cells) {
    const double p = received_power_dbm(ue, c);
    if (p > best_p) {
      best_p = p;
      best = c.id;
    }
  }
  return topology_.cells[best].simulated;
}

Vec2 RadioModel::uniform_position(RngStream& rng, double radius_m) const {
  const Vec2 c = topology_.region_center;
  for (;;) {
    const double x = rng.uniform(-radius_m, radius_m);
    const double y = rng.uniform(-radius_m, radius_m);
    if (x * x + y * y <= radius_m * radius_m) return {c.x + x, c.y + y};
  }
}

void RadioModel::mobility_step(std::span<UeRadio> ues, SimTime dt, RngStream& mobility,
                               double turn_interval_s) const {
  if (dt.ticks() <= 0) throw std::invalid_argument("mobility_step: dt must be positive");
  const double dt_s = dt.seconds();
  const double radius = topology_.region_radius_m;
  const Vec2 c = topology_.region_center;
  const double turn_p = turn_interval_s > 0 ? std::min(1.0, dt_s / turn_interval_s) : 0.0;

  for (auto& ue : ues) {
    // One draw per UE per step whether or not it turns, so the stream stays
    // aligned across UEs.
    const double u = mobility.uniform();
    const double new_heading = mobility.uniform(-std::numbers::pi, std::numbers::pi);
    if (u < turn_p) ue.heading_rad = new_heading;

    double remaining = ue.speed_mps * dt_s;
    double px = ue.position.x - c.x;
    double py = ue.position.y - c.y;
    for (int bounce = 0; bounce < 4 && remaining > 0; ++bounce) {
      const double ux = std::cos(ue.heading_rad);
      const double uy = std::sin(ue.heading_rad);
      const double nx = px + ux * remaining;
      const double ny = py + uy * remaining;
      if (nx * nx + ny * ny <= radius * radius) {
        px = nx;
        py = ny;
        remaining = 0;
        break;
      }
      // Distance along u to the circle: solve |p + t u| = R for t >= 0.
      const double b = px * ux + py * uy;
      const double cc = px * px + py * py - radius * radius;
      const double t = std::max(0.0, -b + std::sqrt(std::max(0.0, b * b - cc)));
      px += ux * t;
      py += uy * t;
      remaining -= t;
      const double norm = std::hypot(px, py);
      const double mx = px / norm;
      const double my = py / norm;
      const double dot = ux * mx + uy * my;
      ue.heading_rad = std::atan2(uy - 2 * dot * my, ux - 2 * dot * mx);
    }
    const double r = std::hypot(px, py);
    if (r > radius) {
      px *= radius / r;
      py *= radius / r;
    }
    // The border of the simulated cells' coverage also reflects: a UE that
    // would hand over to a surrounding cell turns back instead.
    const Vec2 before = ue.position;
    const bool was_covered = in_coverage(ue);
    ue.position = {c.x + px, c.y + py};
    if (was_covered && !in_coverage(ue)) {
      ue.position = before;
      ue.heading_rad = std::remainder(ue.heading_rad + std::numbers::pi, 2.0 * std::numbers::pi);
    }
    update_link_quality(ue);
  }
}

}  // namespace mcsim
