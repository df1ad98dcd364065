#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcsim/config.hpp"

namespace mcsim {

inline constexpr const char* kVersion = "1.0.0";

struct AlertOutcome {
  UeId ue = 0;
  bool capable = true;
  bool edge = false;
  std::optional<SimTime> completed_at;
  std::int64_t multicast_packets = 0;
  std::int64_t unicast_packets = 0;
  // "multicast", "unicast", "multicast+unicast-repair" or "unreached".
  std::string path() const;
};

// Header "ue,capable,edge,completed_at,path".
void write_alert_csv(std::ostream& out, const std::vector<AlertOutcome>& outcomes);

// One simulation: wires radio, delivery, MooD, multi-link and clients on a
// single event loop. Construct, run(), then inspect or write outputs.
class Scenario {
 public:
  explicit Scenario(ScenarioConfig cfg);
  ~Scenario();
  Scenario(const Scenario&) = delete;
  Scenario& operator=(const Scenario&) = delete;

  void run();
  // Runs up to (and including) events at `t`; run() continues from there.
  void run_until(SimTime t);

  const ScenarioConfig& config() const;
  int num_ues() const;
  SimTime now() const;

  std::span<const ResourceLog> resource_logs() const;
  std::vector<SwitchLogEntry> switch_log() const;
  std::vector<MergeStats> merge_stats() const;
  const std::vector<AlertOutcome>& alert_outcomes() const;
  std::vector<TraceRow> trace(UeId ue) const;
  std::vector<PlaybackRecord> records(UeId ue) const;
  std::vector<StallEpisode> stall_episodes(UeId ue) const;
  std::optional<SimTime> quit_at(UeId ue) const;
  const UeRadio& radio(UeId ue) const;
  const RadioModel& radio_model() const;
  std::int64_t repair_requests(UeId ue) const;
  std::int64_t repair_packets(UeId ue) const;
  std::int64_t duplicate_bits(UeId ue) const;
  // Unicast bits delivered to, and reports sent by, a UE after it quit.
  std::int64_t bits_after_quit(UeId ue) const;
  std::int64_t reports_after_quit(UeId ue) const;
  std::int64_t unicast_bits(UeId ue) const;
  // Multicast PRBs per TTI reserved for the main content (0 when closed).
  int content_multicast_prbs() const;
  const std::vector<std::string>& warnings() const;
  std::uint64_t event_digest() const;

  KpiReport kpis() const;
  // Writes every output file into `dir` (created if needed).
  void write_outputs(const std::filesystem::path& dir) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct RunSummary {
  KpiReport report;
  std::filesystem::path out_dir;
  std::uint64_t event_digest = 0;
};

// Validates, writes the manifest, runs, writes outputs and completes the
// manifest with per-file digests.
RunSummary run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir);

struct ComparisonRow {
  std::string dir;
  std::string preset;
  std::map<std::string, std::string> kpis;
};

struct OrderingCheck {
  std::string description;
  bool passed = false;
};

struct Comparison {
  std::vector<ComparisonRow> rows;
  std::vector<OrderingCheck> checks;
};

// Refuses (ConfigError) when the runs differ in topology or content.
Comparison compare_runs(const std::vector<std::filesystem::path>& dirs);
void write_comparison(std::ostream& out, const Comparison& c);

}  // namespace mcsim
