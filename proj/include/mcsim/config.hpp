#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mcsim/client.hpp"
#include "mcsim/delivery.hpp"
#include "mcsim/kpi.hpp"
#include "mcsim/mood.hpp"
#include "mcsim/multilink.hpp"
#include "mcsim/radio.hpp"

namespace mcsim {

// How the main content reaches its audience.
enum class ContentDelivery : std::uint8_t { kNone, kUnicast, kMulticast, kMulticastMultiLink, kMood, kObjects };

struct OutageWindow {
  UeId ue = 0;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct ScriptedLoss {
  UeId ue = 0;
  std::uint64_t seq = 0;
};

struct ObjectSpec {
  std::string name;
  double bitrate_bps = 0.0;
  bool personalized = false;
};

// Every knob of a run. JSON keys equal the field names below; a config file
// holds a "preset" plus any overrides.
struct ScenarioConfig {
  std::string preset = "ptp-only";
  std::uint64_t seed = 1;
  double duration_s = 300.0;

  // Topology and radio.
  double inter_site_distance_m = 200.0;
  double ring_radius_isd = 2.0;
  int ues_per_cell = 10;
  std::optional<int> num_ues;
  std::optional<double> ue_drop_radius_m;
  double ue_speed_kmph = 3.0;
  double mobility_step_s = 0.1;
  double turn_interval_s = 10.0;
  double carrier_freq_ghz = 3.5;
  double bandwidth_mhz = 100.0;
  double tx_power_dbm = 51.0;
  double ue_noise_figure_db = 9.0;
  double pathloss_exponent = 3.76;
  double shadowing_std_db = 8.0;
  double shadowing_site_correlation = 0.5;
  bool ring_mbsfn_useful = false;
  // Simulated neighbours interfere with unicast in proportion to their unicast
  // PRB utilisation in the previous TTI; off means full-load interference.
  bool interference_load_coupling = true;
  int prbs_per_tti = 273;
  double data_res_per_prb = 576.0;
  std::string mcs_table_path;  // empty: built-in table

  // Delivery.
  ContentDelivery delivery = ContentDelivery::kUnicast;
  double broadcast_share = 0.8;
  int multicast_mcs = 2;
  std::vector<double> ladder_bps = {1e6, 4e6, 8e6, 12e6, 16e6, 20e6};
  int multicast_rung = 5;
  double segment_duration_s = 1.0;
  int payload_bytes = 1500;

  // MooD.
  int mood_activate_threshold = 2;
  int mood_deactivate_threshold = 1;
  double mood_evaluation_interval_s = 1.0;
  double mood_switch_latency_s = 2.0;
  double report_interval_s = 0.5;
  std::vector<int> audience_script;
  double audience_step_s = 20.0;

  // Multi-link.
  double ml_threshold_db = 5.0;
  double ml_hysteresis_margin_db = 1.0;
  int ml_reorder_window = 256;
  double ml_repair_timeout_s = 0.1;
  double ml_repair_backoff_cap_s = 1.0;
  bool ml_repair_enabled = false;

  // Client.
  double initial_buffer_s = 4.0;
  double max_buffer_s = 30.0;
  double quit_timer_s = 30.0;
  double throughput_ema_alpha = 0.3;
  double abr_safety_factor = 0.8;
  double abr_panic_buffer_s = 2.0;
  double cancel_window_s = 0.25;
  double request_latency_s = 0.02;
  double client_tick_s = 0.01;

  // QoE.
  int qoe_window_segments = 15;
  double qoe_max_mos_threshold = 4.5;

  // Public warning alert.
  std::optional<double> alert_time_s;
  int alert_size_bytes = 2'000'000;
  int alert_rounds = 3;
  int alert_mcs = 2;
  double alert_bitrate_bps = 10e6;
  int non_capable_ues = 0;
  int edge_ues = 0;

  // Object-based media.
  std::vector<ObjectSpec> objects;
  double object_heavy_threshold_bps = 1e6;

  // Scripted impairments.
  std::vector<OutageWindow> outage_script;
  std::vector<ScriptedLoss> scripted_losses;

  bool write_event_log = false;

  int total_ues() const { return num_ues.value_or(3 * ues_per_cell); }

  RadioParams radio_params() const;
  SchedulerConfig scheduler_config() const;
  MoodConfig mood_config() const;
  MlConfig ml_config() const;
  ClientConfig client_config() const;
  QoeConfig qoe_config() const;
  Ladder ladder() const;

  // Throws ConfigError listing every offending field.
  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_string(ContentDelivery d);

std::vector<std::string> preset_names();
std::string preset_description(const std::string& name);
ScenarioConfig preset(const std::string& name);

// Resolves a JSON document: the preset named by "preset" (default ptp-only)
// with every other key applied as an override. Unknown keys are errors.
ScenarioConfig config_from_json_text(const std::string& text);
ScenarioConfig load_config(const std::filesystem::path& path);
// Fully resolved config, every field present.
std::string config_to_json_text(const ScenarioConfig& cfg);

}  // namespace mcsim
