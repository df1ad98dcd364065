#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcsim/delivery.hpp"
#include "mcsim/sim_kernel.hpp"

namespace mcsim {

struct ClientConfig {
  double initial_buffer_target_s = 4.0;
  double max_buffer_s = 30.0;
  double quit_timer_s = 30.0;
  double throughput_ema_alpha = 0.3;
  double safety_factor = 0.8;
  double panic_buffer_s = 2.0;
  // Goodput for the cancel rule is measured over this trailing window, and
  // only once the download is at least this old.
  double cancel_window_s = 0.25;
  // A cancel must precede the quit check by at least this long.
  double cancel_before_quit_s = 10.0;
  SimTime request_latency = SimTime::from_ms(20);

  void validate() const;
};

struct AbrState {
  double buffer_s = 0.0;
  double throughput_estimate_bps = 0.0;
  int current_rung = 0;
};

// Highest rung with bits_per_s <= safety * estimate (rung 0 when none fits),
// at most one rung above the current one, and one rung below the current one
// when the buffer is under the panic level.
int select_bitrate(const AbrState& abr, const Ladder& ladder, const ClientConfig& cfg);

struct DownloadProgress {
  int rung = 0;
  std::int64_t bytes_total = 0;
  std::int64_t bytes_received = 0;
  double recent_goodput_bps = 0.0;
  double attempt_age_s = 0.0;
  bool cancelled_at_this_position = false;
};

enum class CancelDecision : std::uint8_t { kContinue, kCancelAndRedownloadLower };

struct CancelResult {
  CancelDecision decision = CancelDecision::kContinue;
  int replacement_rung = 0;
};

double projected_completion_s(const DownloadProgress& d);

// Cancels when the projected completion exceeds the buffer and a lower rung
// exists. The replacement rung is what select_bitrate picks, forced below the
// cancelled one. One cancel per playback position.
CancelResult maybe_cancel(const DownloadProgress& d, const AbrState& abr, const Ladder& ladder,
                          const ClientConfig& cfg);

enum class QuitDecision : std::uint8_t { kContinue, kQuit };

// `download_age_s` counts from the original request of the stuck position;
// `since_cancel_s` is empty when no cancel fired for it.
QuitDecision check_quit(double download_age_s, std::optional<double> since_cancel_s,
                        bool replacement_projected_to_miss, const ClientConfig& cfg);

// One playback position, appended when the playhead leaves it.
struct PlaybackRecord {
  std::int64_t position = 0;
  std::optional<int> rung;  // empty: skipped (lost or incomplete)
  double bitrate_bps = 0.0;
  double stall_s = 0.0;     // wall-clock stall spent waiting for this position
  bool new_episode = false; // a stall episode began at this position
  SimTime finished_at;
};

struct StallEpisode {
  SimTime start;
  double duration_s = 0.0;
};

enum class TraceEvent : std::uint8_t {
  kSegmentStart,
  kSegmentComplete,
  kCancel,
  kStallStart,
  kStallEnd,
  kQuit,
  kSwitch,
};
std::string to_string(TraceEvent e);

struct TraceRow {
  SimTime time;
  TraceEvent event = TraceEvent::kSegmentStart;
  int rung = -1;
  double buffer_s = 0.0;
};

// Header "time,event,rung,buffer_s".
void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);

// Segment-granular playout buffer. Playback starts once the initial target is
// buffered; a missing position stalls the playhead until it is ready (one full
// segment buffered) or declared lost, in which case it is skipped.
class Playback {
 public:
  Playback(ClientConfig cfg, double segment_duration_s, std::int64_t first_position = 0);

  void segment_ready(std::int64_t position, int rung, double bitrate_bps, SimTime now);
  void segment_lost(std::int64_t position, SimTime now);
  // Advances the playhead by dt. Returns stall start/end transitions.
  std::vector<TraceRow> tick(SimTime now, SimTime dt);

  double buffer_s() const;
  bool started() const { return started_; }
  bool stalled() const { return stalled_; }
  std::int64_t playhead() const { return playhead_; }
  bool is_ready(std::int64_t position) const;
  bool is_known(std::int64_t position) const { return state_.count(position) != 0; }
  const std::vector<PlaybackRecord>& records() const { return records_; }
  const std::vector<StallEpisode>& episodes() const { return episodes_; }
  double total_stall_s() const;
  // Closes an open stall (end of run or quit).
  void close(SimTime now);

 private:
  struct Pos {
    bool ready = false;
    bool lost = false;
    int rung = 0;
    double bitrate_bps = 0.0;
  };

  void finish_position(SimTime now, bool skipped);
  void enforce_max_buffer(SimTime now);

  ClientConfig cfg_;
  double seg_dur_;
  std::map<std::int64_t, Pos> state_;
  std::int64_t playhead_;
  double progress_s_ = 0.0;
  bool started_ = false;
  bool stalled_ = false;
  double pending_stall_s_ = 0.0;
  bool pending_new_episode_ = false;
  std::vector<PlaybackRecord> records_;
  std::vector<StallEpisode> episodes_;
};

struct FetchRequest {
  std::int64_t download_id = 0;
  std::int64_t position = 0;
  int rung = 0;
  SimTime requested_at;
};

struct ClientTickResult {
  std::vector<TraceRow> trace;
  // Cancelled download and its replacement.
  std::optional<std::pair<std::int64_t, FetchRequest>> cancel;
  bool quit = false;
};

// One UE's media consumer: playback, DASH fetching over unicast, and the
// cancel/quit rules. Multicast-delivered positions are handed in by the
// caller through segment_ready / segment_lost.
class Client {
 public:
  Client(UeId ue, ClientConfig cfg, Ladder ladder, double segment_duration_s,
         std::int64_t first_position = 0);

  UeId id() const { return ue_; }
  const ClientConfig& config() const { return cfg_; }
  const Ladder& ladder() const { return ladder_; }
  const AbrState& abr() const { return abr_; }
  Playback& playback() { return playback_; }
  const Playback& playback() const { return playback_; }
  bool quit() const { return quit_at_.has_value(); }
  std::optional<SimTime> quit_at() const { return quit_at_; }
  const std::vector<TraceRow>& trace() const { return trace_; }

  // Unicast fetching of positions in [from, until).
  void start_unicast(std::int64_t from, std::optional<double> initial_estimate_bps,
                     std::optional<int> initial_rung);
  void limit_unicast(std::int64_t until);
  bool unicast_active() const { return unicast_on_; }
  std::int64_t next_fetch() const { return next_fetch_; }

  // Returns a request when idle, the next position is published (<= live
  // edge) and the buffer has room.
  std::optional<FetchRequest> next_request(SimTime now, std::int64_t live_edge);
  // Returns true when the bytes complete the current download.
  bool on_unicast_bytes(std::int64_t download_id, std::int64_t bytes, SimTime now);
  std::optional<std::int64_t> current_download() const;

  void segment_ready(std::int64_t position, int rung, SimTime now);
  void segment_lost(std::int64_t position, SimTime now);
  void note(SimTime now, TraceEvent e, int rung);

  ClientTickResult tick(SimTime now, SimTime dt);

 private:
  struct Download {
    FetchRequest req;
    SimTime original_request;
    SimTime attempt_start;
    std::int64_t bytes_total = 0;
    std::int64_t bytes_received = 0;
    std::deque<std::pair<SimTime, std::int64_t>> arrivals;
    std::optional<SimTime> cancelled_at;
  };

  DownloadProgress progress(const Download& d, SimTime now) const;
  void do_quit(SimTime now, ClientTickResult& out);

  UeId ue_;
  ClientConfig cfg_;
  Ladder ladder_;
  double seg_dur_;
  Playback playback_;
  AbrState abr_;
  bool has_estimate_ = false;
  bool unicast_on_ = false;
  std::int64_t next_fetch_ = 0;
  std::int64_t fetch_until_ = INT64_MAX;
  std::optional<Download> dl_;
  std::int64_t next_download_id_ = 0;
  std::optional<SimTime> quit_at_;
  std::vector<TraceRow> trace_;
};

enum class Popularity : std::uint8_t { kShared, kPersonalized };

struct MediaObject {
  int object_id = 0;
  std::string name;
  double bitrate_bps = 0.0;
  Popularity popularity = Popularity::kShared;
};

struct ObjectSet {
  std::vector<MediaObject> objects;
};

// Shared objects at or above the threshold go multicast; personalized and
// light shared objects stay unicast. `audience` below 2 keeps everything on
// unicast, since a single viewer gains nothing from multicast.
std::vector<DeliveryMode> assign_object_modes(const ObjectSet& set, double heavy_threshold_bps,
                                              int audience);

// Per-position composition gate: a position renders only when every object's
// segment for it is present.
class ObjectComposer {
 public:
  explicit ObjectComposer(int num_objects);
  // Returns true when this arrival completes the position.
  bool object_ready(std::int64_t position, int object_index);
  bool complete(std::int64_t position) const;
  void forget_before(std::int64_t position);

 private:
  int num_objects_;
  std::map<std::int64_t, std::vector<bool>> have_;
};

}  // namespace mcsim
