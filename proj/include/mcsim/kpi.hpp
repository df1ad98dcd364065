#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcsim/client.hpp"
#include "mcsim/delivery.hpp"

namespace mcsim {

// Summed over every TTI of every log: used PRBs / available PRBs. Throws
// std::domain_error on an empty log, which has no defined consumption.
double avg_resource_consumption(std::span<const ResourceLog> logs);
double avg_resource_consumption(const ResourceLog& log);

inline constexpr const char* kAlSeCaveat =
    "transmission-error and congestion losses are not deducted from the source bits";

// (source_bits / duration) / (bandwidth * consumption) in bit/s/Hz; empty when
// consumption is zero.
std::optional<double> al_se(double source_bits, double duration_s, double bandwidth_hz,
                            double consumption);

struct QoeConfig {
  int window_segments = 15;
  double episode_penalty = 1.5;
  double stall_penalty_per_s = 0.1;
  // A UE counts as "at maximum MOS" when its run-mean MOS reaches this value.
  double max_mos_threshold = 4.5;

  void validate() const;
};

// MOS over the last window_segments records: 1 + 4 * mean played bitrate /
// top bitrate, less 1.5 per stall episode and 0.1 per stall second, clamped to
// [1, 5]. Skipped positions add one segment of stall time and no bitrate.
double mos(std::span<const PlaybackRecord> records, double top_bitrate_bps,
           double segment_duration_s, const QoeConfig& cfg);

struct MosSample {
  SimTime time;
  double mos = 1.0;
};

// One sample per playback record, each over the window ending at it.
std::vector<MosSample> mos_series(std::span<const PlaybackRecord> records, double top_bitrate_bps,
                                  double segment_duration_s, const QoeConfig& cfg);

// Mean of the series; a UE without samples (never played) scores 1.
double run_mean_mos(std::span<const MosSample> series);

struct CdfPoint {
  double mos = 0.0;
  double fraction = 0.0;
};

// Empirical CDF over the per-UE values: one point per distinct value.
std::vector<CdfPoint> qoe_cdf(std::vector<double> per_ue_mos);
double fraction_at_least(std::span<const double> values, double threshold);

struct UeKpi {
  UeId ue = 0;
  double run_mean_mos = 1.0;
  bool quit = false;
  double stall_s = 0.0;
  int stall_episodes = 0;
  int skipped_positions = 0;
  int played_positions = 0;
};

struct KpiReport {
  std::string preset;
  std::uint64_t seed = 0;
  double duration_s = 0.0;
  int num_ues = 0;
  int num_cells = 0;
  std::optional<double> avg_resource_consumption;
  double multicast_prb_share = 0.0;
  double unicast_prb_share = 0.0;
  double source_bits = 0.0;
  std::optional<double> al_se;
  std::optional<double> fraction_max_mos;  // empty without media sessions
  std::optional<double> mean_mos;
  int quit_count = 0;
  std::vector<UeKpi> per_ue;
  // Alert scenarios only.
  std::optional<int> alert_reached;
  std::optional<int> alert_targets;
  std::vector<std::string> warnings;
  std::map<std::string, std::string> extra;

  // "key = value" lines; undefined values print as "undefined".
  void write(std::ostream& out) const;
};

// Parses the key = value lines written by KpiReport::write.
std::map<std::string, std::string> read_kpi_summary(std::istream& in);

void write_mos_series_csv(std::ostream& out, const std::vector<std::vector<MosSample>>& per_ue);
void write_qoe_cdf_csv(std::ostream& out, const std::vector<CdfPoint>& cdf);

}  // namespace mcsim
