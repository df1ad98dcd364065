#include "mcsim/mood.hpp"

#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace mcsim {

void MoodConfig::validate() const {
  if (activate_threshold < 1) throw std::invalid_argument("mood_activate_threshold must be >= 1");
  if (deactivate_threshold < 0) throw std::invalid_argument("mood_deactivate_threshold must be >= 0");
  if (deactivate_threshold >= activate_threshold) {
    throw std::invalid_argument(
        "mood_deactivate_threshold must be below mood_activate_threshold");
  }
  if (evaluation_interval.ticks() <= 0) {
    throw std::invalid_argument("mood_evaluation_interval_s must be positive");
  }
  if (switch_latency.ticks() < 0) throw std::invalid_argument("mood_switch_latency_s must be >= 0");
}

std::string to_string(MoodMode mode) {
  return mode == MoodMode::kUnicast ? "unicast" : "multicast";
}

void write_switch_log_csv(std::ostream& out, const std::vector<SwitchLogEntry>& log) {
  out << "time,content,from_mode,to_mode,audience\n";
  for (const auto& e : log) {
    out << std::fixed << std::setprecision(3) << e.time.seconds() << ',' << e.content_id << ','
        << to_string(e.from) << ',' << to_string(e.to) << ',' << e.audience << '\n';
  }
}

MoodController::MoodController(MoodConfig cfg, int content_id, MoodMode initial) : cfg_(cfg) {
  cfg_.validate();
  state_.content_id = content_id;
  state_.mode = initial;
}

int MoodController::report(const ConsumptionReport& r) {
  if (r.content_id != state_.content_id) {
    throw std::invalid_argument("MoodController: report for content " +
                                std::to_string(r.content_id) + " sent to controller of content " +
                                std::to_string(state_.content_id));
  }
  auto& last = last_report_[r.ue];
  if (r.timestamp > last) last = r.timestamp;
  return audience(r.timestamp);
}

void MoodController::forget(UeId ue) { last_report_.erase(ue); }

int MoodController::audience(SimTime now) const {
  int n = 0;
  for (const auto& [ue, at] : last_report_) {
    if (at <= now && now - at <= cfg_.evaluation_interval) ++n;
  }
  return n;
}

std::optional<SwitchCommand> MoodController::evaluate(SimTime now) {
  // Lazy expiry: reports older than one interval no longer count.
  for (auto it = last_report_.begin(); it != last_report_.end();) {
    if (now - it->second > cfg_.evaluation_interval) it = last_report_.erase(it);
    else ++it;
  }
  state_.audience = audience(now);
  if (state_.pending_switch) return std::nullopt;

  std::optional<MoodMode> target;
  if (state_.mode == MoodMode::kUnicast && state_.audience >= cfg_.activate_threshold) {
    target = MoodMode::kMulticast;
  } else if (state_.mode == MoodMode::kMulticast &&
             state_.audience <= cfg_.deactivate_threshold) {
    target = MoodMode::kUnicast;
  }
  if (!target) return std::nullopt;

  SwitchCommand cmd{state_.content_id, state_.mode, *target, now, now + cfg_.switch_latency,
                    state_.audience};
  state_.pending_switch = cmd;
  return cmd;
}

std::optional<SwitchCommand> MoodController::complete_pending(SimTime now) {
  if (!state_.pending_switch || now < state_.pending_switch->completes_at) return std::nullopt;
  SwitchCommand cmd = *state_.pending_switch;
  state_.pending_switch.reset();
  state_.mode = cmd.to;
  log_.push_back(SwitchLogEntry{now, cmd.content_id, cmd.from, cmd.to, audience(now)});
  return cmd;
}

}  // namespace mcsim
