#include "mcsim/kpi.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace mcsim {

double avg_resource_consumption(std::span<const ResourceLog> logs) {
  long double used = 0;
  long double total = 0;
  for (const auto& log : logs) {
    for (const auto& r : log.rows()) {
      used += r.used();
      total += r.prbs_total;
    }
  }
  if (total <= 0) throw std::domain_error("avg_resource_consumption: empty resource log");
  return static_cast<double>(used / total);
}

double avg_resource_consumption(const ResourceLog& log) {
  return avg_resource_consumption(std::span<const ResourceLog>(&log, 1));
}

std::optional<double> al_se(double source_bits, double duration_s, double bandwidth_hz,
                            double consumption) {
  if (!(duration_s > 0) || !(bandwidth_hz > 0)) throw std::invalid_argument("al_se: duration and bandwidth must be positive");
  if (!(consumption > 0)) return std::nullopt;
  return (source_bits / duration_s) / (bandwidth_hz * consumption);
}

void QoeConfig::validate() const {
  if (window_segments < 1) throw std::invalid_argument("qoe_window_segments must be >= 1");
  if (episode_penalty < 0 || stall_penalty_per_s < 0) throw std::invalid_argument("qoe penalties must be >= 0");
  if (!(max_mos_threshold >= 1 && max_mos_threshold <= 5)) {
    throw std::invalid_argument("qoe_max_mos_threshold must be in [1, 5]");
  }
}

double mos(std::span<const PlaybackRecord> records, double top_bitrate_bps,
           double segment_duration_s, const QoeConfig& cfg) {
  if (records.empty()) throw std::invalid_argument("mos: window is empty");
  if (!(top_bitrate_bps > 0)) throw std::invalid_argument("mos: top bitrate must be positive");
  const std::size_t w = std::min(records.size(), static_cast<std::size_t>(cfg.window_segments));
  const auto window = records.subspan(records.size() - w);
  double rate_sum = 0.0;
  int played = 0;
  int episodes = 0;
  double stall = 0.0;
  for (const auto& r : window) {
    if (r.rung) {
      rate_sum += r.bitrate_bps / top_bitrate_bps;
      ++played;
    } else {
      stall += segment_duration_s;
    }
    stall += r.stall_s;
    if (r.new_episode) ++episodes;
  }
  const double base = played > 0 ? 1.0 + 4.0 * rate_sum / played : 1.0;
  const double penalty = cfg.episode_penalty * episodes + cfg.stall_penalty_per_s * stall;
  return std::clamp(base - penalty, 1.0, 5.0);
}

std::vector<MosSample> mos_series(std::span<const PlaybackRecord> records, double top_bitrate_bps,
                                  double segment_duration_s, const QoeConfig& cfg) {
  std::vector<MosSample> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    out.push_back(MosSample{records[i].finished_at,
                            mos(records.first(i + 1), top_bitrate_bps, segment_duration_s, cfg)});
  }
  return out;
}

double run_mean_mos(std::span<const MosSample> series) {
  if (series.empty()) return 1.0;
  double s = 0.0;
  for (const auto& m : series) s += m.mos;
  return s / static_cast<double>(series.size());
}

std::vector<CdfPoint> qoe_cdf(std::vector<double> per_ue_mos) {
  if (per_ue_mos.empty()) throw std::invalid_argument("qoe_cdf: no UEs");
  std::sort(per_ue_mos.begin(), per_ue_mos.end());
  std::vector<CdfPoint> out;
  const double n = static_cast<double>(per_ue_mos.size());
  for (std::size_t i = 0; i < per_ue_mos.size(); ++i) {
    if (i + 1 < per_ue_mos.size() && per_ue_mos[i + 1] == per_ue_mos[i]) continue;
    out.push_back(CdfPoint{per_ue_mos[i], static_cast<double>(i + 1) / n});
  }
  return out;
}

double fraction_at_least(std::span<const double> values, double threshold) {
  if (values.empty()) return 0.0;
  const auto n = std::count_if(values.begin(), values.end(), [&](double v) { return v >= threshold; });
  return static_cast<double>(n) / static_cast<double>(values.size());
}

namespace {
std::string fmt(double v) {
  std::ostringstream s;
  s.precision(10);
  s << v;
  return s.str();
}
std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "undefined"; }
}  // namespace

void KpiReport::write(std::ostream& out) const {
  out << "preset = " << preset << '\n';
  out << "seed = " << seed << '\n';
  out << "duration_s = " << fmt(duration_s) << '\n';
  out << "num_cells = " << num_cells << '\n';
  out << "num_ues = " << num_ues << '\n';
  out << "avg_resource_consumption = " << fmt(avg_resource_consumption) << '\n';
  out << "multicast_prb_share = " << fmt(multicast_prb_share) << '\n';
  out << "unicast_prb_share = " << fmt(unicast_prb_share) << '\n';
  out << "source_bits = " << fmt(source_bits) << '\n';
  out << "al_se_bps_per_hz = " << fmt(al_se) << '\n';
  out << "al_se_caveat = " << kAlSeCaveat << '\n';
  out << "fraction_max_mos = " << fmt(fraction_max_mos) << '\n';
  out << "mean_mos = " << fmt(mean_mos) << '\n';
  out << "quit_count = " << quit_count << '\n';
  if (alert_targets) {
    out << "alert_reached = " << alert_reached.value_or(0) << '\n';
    out << "alert_targets = " << *alert_targets << '\n';
  }
  for (const auto& [k, v] : extra) out << k << " = " << v << '\n';
  out << "warnings = " << warnings.size() << '\n';
  for (std::size_t i = 0; i < warnings.size(); ++i) out << "warning_" << i << " = " << warnings[i] << '\n';
  for (const auto& u : per_ue) {
    out << "ue_" << u.ue << " = mos " << fmt(u.run_mean_mos) << " quit " << (u.quit ? 1 : 0)
        << " stall_s " << fmt(u.stall_s) << " episodes " << u.stall_episodes << " played "
        << u.played_positions << " skipped " << u.skipped_positions << '\n';
  }
}

std::map<std::string, std::string> read_kpi_summary(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

void write_mos_series_csv(std::ostream& out, const std::vector<std::vector<MosSample>>& per_ue) {
  out << "ue,time,mos\n";
  for (std::size_t ue = 0; ue < per_ue.size(); ++ue) {
    for (const auto& m : per_ue[ue]) out << ue << ',' << fmt(m.time.seconds()) << ',' << fmt(m.mos) << '\n';
  }
}

void write_qoe_cdf_csv(std::ostream& out, const std::vector<CdfPoint>& cdf) {
  out << "mos,cumulative_fraction\n";
  for (const auto& p : cdf) out << fmt(p.mos) << ',' << fmt(p.fraction) << '\n';
}

}  // namespace mcsim
