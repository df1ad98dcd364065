#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "mcsim/sim_kernel.hpp"

namespace mcsim {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

double distance(Vec2 a, Vec2 b);

struct AntennaConfig {
  double element_gain_dbi = 5.0;
  int vertical_elements = 8;   // M
  int horizontal_elements = 4; // N
  int polarizations = 2;       // P
  // Vertical elements of one polarization are hard-wired to one TXRU, so the
  // effective port sees 10*log10(M / Mp) of array gain.
  int txru_vertical = 1;       // Mp
  int txru_horizontal = 4;     // Np
  double beamwidth_azimuth_deg = 65.0;
  double beamwidth_elevation_deg = 65.0;
  double electrical_downtilt_deg = 20.0;
  double max_attenuation_db = 30.0;

  double max_gain_dbi() const;
};

struct RadioParams {
  double carrier_freq_ghz = 3.5;
  double tx_power_dbm = 51.0;
  double bandwidth_mhz = 100.0;
  double bs_noise_figure_db = 5.0;
  double ue_noise_figure_db = 9.0;
  AntennaConfig antenna;
  double site_height_m = 25.0;
  double ue_height_m = 1.5;
  double pathloss_exponent = 3.76;
  double shadowing_std_db = 8.0;
  double shadowing_site_correlation = 0.5;
  // Whether the surrounding ring carries the MBSFN waveform (useful power) or
  // interferes with it.
  bool ring_mbsfn_useful = false;
};

struct Cell {
  int id = 0;
  Vec2 site;
  double azimuth_deg = 0.0;
  bool simulated = false;
};

struct Topology {
  std::vector<Cell> cells;
  double inter_site_distance_m = 200.0;
  Vec2 region_center;
  double region_radius_m = 100.0;

  int num_simulated() const;
  std::vector<int> simulated_ids() const;

  // Three-sector sites on a hexagonal lattice. The simulated cells are the
  // three sectors of three neighbouring sites that face a common point; every
  // other sector within ring_radius_isd inter-site distances of that point
  // (including the co-sited ones) forms the interfering ring. UEs live in the
  // part of the disk of radius isd/2 around the common point where a
  // simulated cell is the strongest one.
  static Topology three_cell_cluster(double inter_site_distance_m, double ring_radius_isd = 2.0);
};

// Deterministic part of the propagation loss, log-distance urban macro form:
//   PL(d) = PL_ref(fc) + 10 * alpha * log10(d / 100 m)
//   PL_ref(fc) = 90.5 + 20 * log10(fc / 2 GHz)
// which equals 128.1 + 37.6 log10(d_km) at 2 GHz for alpha = 3.76. Distances
// below 1 m are clamped to 1 m.
double pathloss_db(double distance_3d_m, double carrier_ghz, double exponent);
double pathloss_reference_db(double carrier_ghz);
inline constexpr double kPathlossReferenceDistanceM = 100.0;

// Parabolic sector pattern with separate horizontal and vertical cuts.
double antenna_gain_dbi(const AntennaConfig& antenna, double azimuth_offset_deg,
                        double elevation_deg);

struct McsEntry {
  int index = 0;
  double spectral_eff = 0.0;  // bits per resource element
  double min_sinr_db = 0.0;
};

class McsTable {
 public:
  explicit McsTable(std::vector<McsEntry> entries);

  // The 29-entry ladder shipped in data/mcs_table.txt.
  static McsTable standard();
  // Plain text: one "index spectral_eff min_sinr_db" triple per line; blank
  // lines and lines starting with '#' are skipped.
  static McsTable parse(std::istream& in);
  static McsTable load(const std::filesystem::path& path);

  // Highest entry whose min_sinr is <= sinr (closed lower bound), or nullopt
  // when the SINR is below the lowest threshold.
  std::optional<McsEntry> select(double sinr_db) const;
  const McsEntry& at(int index) const;
  // Step error model: the block decodes iff sinr >= min_sinr.
  bool decodable(double sinr_db, int mcs_index) const;

  std::span<const McsEntry> entries() const { return entries_; }

 private:
  std::vector<McsEntry> entries_;
};

// Converts SINR to bits per PRB per TTI.
class LinkAdaptation {
 public:
  LinkAdaptation(McsTable table, double data_res_per_prb);

  // With an MCS (multicast) the rate is fixed by that entry whatever the SINR;
  // decodability is a separate question. Without one (unicast) the best
  // entry for the SINR is chosen, and 0 is returned when none qualifies.
  double rate_bits_per_prb(double sinr_db, std::optional<int> mcs = std::nullopt) const;

  const McsTable& table() const { return table_; }
  double data_res_per_prb() const { return res_per_prb_; }

 private:
  McsTable table_;
  double res_per_prb_;
};

// Received powers split for load-weighted unicast SINR: one entry per
// simulated cell (in simulated_ids() order) plus the ring and noise floor.
struct UnicastPowers {
  std::vector<double> simulated_mw;
  double ring_mw = 0.0;
  double noise_mw = 0.0;
};

// SINR towards simulated cell `serving_index` when simulated cell j transmits
// unicast on a fraction loads[j] of the PRBs. The ring always transmits. With
// every load at 1 this equals RadioModel::unicast_sinr_db.
double load_weighted_sinr_db(const UnicastPowers& p, int serving_index, std::span<const double> loads);

struct UeRadio {
  Vec2 position;
  double heading_rad = 0.0;
  double speed_mps = 0.0;
  std::vector<double> shadowing_db;  // frozen per cell
  int serving_cell = 0;
  double sinr_unicast_db = 0.0;
  double sinr_mbsfn_db = 0.0;
};

class RadioModel {
 public:
  RadioModel(RadioParams params, Topology topology);

  const RadioParams& params() const { return params_; }
  const Topology& topology() const { return topology_; }

  // Shadowing is drawn once per (UE, cell) from `channel` and never redrawn.
  UeRadio make_ue(Vec2 position, double heading_rad, double speed_mps, RngStream& channel) const;

  double noise_dbm() const;
  double total_pathloss_db(const UeRadio& ue, const Cell& cell) const;
  double received_power_dbm(const UeRadio& ue, const Cell& cell) const;
  std::vector<double> received_powers_mw(const UeRadio& ue) const;

  int strongest_simulated_cell(const UeRadio& ue) const;
  double unicast_sinr_db(const UeRadio& ue, int serving_cell) const;
  // Cells in `area` add as useful power; the rest interfere (ring cells only
  // count as useful when ring_mbsfn_useful is set).
  double mbsfn_sinr_db(const UeRadio& ue, std::span<const int> area) const;
  double mbsfn_sinr_db(const UeRadio& ue) const;

  UnicastPowers unicast_powers(const UeRadio& ue) const;

  // True when the strongest of all cells (ring included) is a simulated one.
  bool in_coverage(const UeRadio& ue) const;

  // Re-attaches to the strongest simulated cell and refreshes both SINRs.
  void update_link_quality(UeRadio& ue) const;

  // Advances each UE speed*dt along its heading with specular reflection on
  // the region boundary. With probability dt/turn_interval a UE also draws a
  // fresh heading (random-direction motion). A UE inside the simulated cells'
  // coverage never leaves it: a step that would cross its border is undone
  // and the heading reversed. Link quality is refreshed.
  void mobility_step(std::span<UeRadio> ues, SimTime dt, RngStream& mobility,
                     double turn_interval_s) const;

  Vec2 uniform_position(RngStream& rng, double radius_m) const;

 private:
  RadioParams params_;
  Topology topology_;
  std::vector<int> area_;
};

double kmph_to_mps(double kmph);

}  // namespace mcsim
