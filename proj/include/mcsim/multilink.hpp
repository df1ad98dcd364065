#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

#include "mcsim/delivery.hpp"
#include "mcsim/sim_kernel.hpp"

namespace mcsim {

enum class MlPolicy : std::uint8_t { kDuplicate, kSplit };

struct MlConfig {
  double sinr_threshold_db = 5.0;
  // Duplication switches off only once the SINR is back above threshold+margin.
  double hysteresis_margin_db = 1.0;
  int reorder_window = 256;  // packets
  SimTime repair_timeout = SimTime::from_ms(100);
  bool repair_enabled = false;
  // Retry interval doubles per attempt up to this cap.
  SimTime repair_backoff_cap = SimTime::from_seconds(1.0);
  MlPolicy policy = MlPolicy::kDuplicate;

  void validate() const;
};

// Duplication on when SINR < threshold; off again at SINR >= threshold+margin.
bool ml_decide(bool currently_on, double mbsfn_sinr_db, const MlConfig& cfg);

struct GwEmission {
  Packet multicast;
  std::vector<std::pair<UeId, Packet>> unicast;  // tagged kUnicastDuplicate
};

// Server-side half: keeps the per-UE duplication flags and fans multicast
// packets out to duplicate unicast sessions.
class MlGateway {
 public:
  MlGateway(MlConfig cfg, int num_ues);

  const MlConfig& config() const { return cfg_; }

  // Re-evaluates one UE; returns true when its flag changed.
  bool update(UeId ue, double mbsfn_sinr_db);
  void set_duplication(UeId ue, bool on);
  bool duplicating(UeId ue) const { return flags_.at(ue); }
  // Handle of the UE's duplicate unicast session, present iff duplicating.
  std::optional<int> duplicate_session(UeId ue) const { return dup_session_.at(ue); }
  int flagged_count() const;

  GwEmission gw_process(const Packet& p);

  std::int64_t duplicate_bits(UeId ue) const { return dup_bits_.at(ue); }
  std::int64_t toggles(UeId ue) const { return toggles_.at(ue); }

 private:
  MlConfig cfg_;
  std::vector<bool> flags_;
  std::vector<std::optional<int>> dup_session_;
  std::vector<std::int64_t> dup_bits_;
  std::vector<std::int64_t> toggles_;
  int next_handle_ = 0;
};

struct MergeStats {
  std::int64_t received = 0;
  std::int64_t duplicates_discarded = 0;
  std::int64_t repaired = 0;
  std::int64_t declared_lost = 0;
  std::int64_t stale_dropped = 0;
};

// Header "ue,received,duplicates_discarded,repaired,declared_lost".
void write_merge_stats_csv(std::ostream& out, const std::vector<MergeStats>& stats);

// Half-open seq range [first, end) to fetch again over unicast.
struct RepairRequest {
  std::uint64_t first = 0;
  std::uint64_t end = 0;
  int attempt = 1;
};

struct MergeOutput {
  std::vector<Packet> delivered;   // strictly increasing seq
  std::vector<std::uint64_t> lost; // seqs given up on, increasing
};

// Client-side half: reorders, deduplicates and merges both links into one
// in-order stream. At most `reorder_window` packets are held; a packet that
// would not fit slides the window, and gaps pushed out of it are lost.
class MergeBuffer {
 public:
  explicit MergeBuffer(MlConfig cfg, std::uint64_t start_seq = 0);

  std::uint64_t next_expected() const { return next_expected_; }
  std::size_t held() const { return held_count_; }
  const MergeStats& stats() const { return stats_; }

  MergeOutput ingest(const Packet& p, SimTime now);
  // Gaps whose timer has expired, merged into ranges. Each returned range is
  // re-armed with exponential backoff, so one gap has one request in flight.
  std::vector<RepairRequest> due_repairs(SimTime now);
  // Releases or gives up on everything below `end` (end of a delivery path).
  MergeOutput flush_through(std::uint64_t end);
  // Moves the start of an idle buffer forward (a late joiner).
  void restart_at(std::uint64_t seq);

 private:
  struct Slot {
    bool present = false;
    bool missing = false;  // a higher seq has arrived
    Packet packet;
    SimTime retry_at;
    int attempts = 0;
  };

  Slot& slot(std::uint64_t seq) { return ring_[seq % ring_.size()]; }
  void release_prefix(MergeOutput& out);
  void give_up_oldest(MergeOutput& out);
  void mark_missing(std::uint64_t from, std::uint64_t to, SimTime now);

  MlConfig cfg_;
  std::vector<Slot> ring_;
  std::uint64_t next_expected_;
  std::uint64_t highest_end_;  // one past the highest seq seen in the window
  std::size_t held_count_ = 0;
  std::deque<std::uint64_t> recent_lost_;  // for telling late arrivals from duplicates
  MergeStats stats_;
};

}  // namespace mcsim
