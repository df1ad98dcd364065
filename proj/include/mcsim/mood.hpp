#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcsim/delivery.hpp"
#include "mcsim/sim_kernel.hpp"

namespace mcsim {

struct MoodConfig {
  int activate_threshold = 2;
  int deactivate_threshold = 1;
  SimTime evaluation_interval = SimTime::from_seconds(1.0);
  // Time to establish or tear down the multicast bearer.
  SimTime switch_latency = SimTime::from_seconds(2.0);

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

enum class MoodMode : std::uint8_t { kUnicast, kMulticast };
std::string to_string(MoodMode mode);

struct ConsumptionReport {
  UeId ue = 0;
  int content_id = 0;
  SimTime timestamp;
};

struct SwitchCommand {
  int content_id = 0;
  MoodMode from = MoodMode::kUnicast;
  MoodMode to = MoodMode::kMulticast;
  SimTime issued_at;
  SimTime completes_at;
  int audience = 0;
};

struct MoodState {
  int content_id = 0;
  MoodMode mode = MoodMode::kUnicast;
  int audience = 0;
  std::optional<SwitchCommand> pending_switch;
};

struct SwitchLogEntry {
  SimTime time;
  int content_id = 0;
  MoodMode from = MoodMode::kUnicast;
  MoodMode to = MoodMode::kMulticast;
  int audience = 0;
};

// Header "time,content,from_mode,to_mode,audience"; time in seconds.
void write_switch_log_csv(std::ostream& out, const std::vector<SwitchLogEntry>& log);

// Audience counting and the unicast/multicast decision for one content in one
// area. A UE counts while its latest report is at most one evaluation interval
// old.
class MoodController {
 public:
  MoodController(MoodConfig cfg, int content_id, MoodMode initial = MoodMode::kUnicast);

  const MoodConfig& config() const { return cfg_; }
  const MoodState& state() const { return state_; }

  int report(const ConsumptionReport& r);
  // Drops a UE's reports at once (used when a session quits).
  void forget(UeId ue);
  int audience(SimTime now) const;

  // Issues at most one command; none while a switch is pending.
  std::optional<SwitchCommand> evaluate(SimTime now);
  // Applies the pending switch if it has matured and logs it.
  std::optional<SwitchCommand> complete_pending(SimTime now);

  const std::vector<SwitchLogEntry>& switch_log() const { return log_; }

 private:
  MoodConfig cfg_;
  MoodState state_;
  std::map<UeId, SimTime> last_report_;
  std::vector<SwitchLogEntry> log_;
};

}  // namespace mcsim
