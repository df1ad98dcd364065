#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mcsim/radio.hpp"
#include "mcsim/sim_kernel.hpp"

namespace mcsim {

using UeId = int;
using SessionId = int;

enum class DeliveryMode : std::uint8_t { kUnicast, kMulticast, kMulticastWithMultiLink };
enum class LinkTag : std::uint8_t { kMulticast, kUnicastDuplicate, kUnicastRepair, kUnicastPrimary };

std::string to_string(DeliveryMode mode);
std::string to_string(LinkTag tag);

struct Rung {
  double bits_per_s = 0.0;
  std::string label;
};
using Ladder = std::vector<Rung>;

// 1 Mbps 480p up to 20 Mbps 4K.
Ladder default_ladder();

inline constexpr std::uint32_t kDefaultPayloadBytes = 1500;

std::int64_t segment_size_bytes(double bits_per_s, double duration_s);
std::uint64_t packets_for(std::int64_t size_bytes, std::uint32_t payload_bytes);

// Synthetic payload identity: what a byte-exact copy of (session, seq) hashes to.
std::uint32_t payload_digest(SessionId session, std::uint64_t seq, std::uint32_t size);

struct Packet {
  SessionId session = 0;
  std::int64_t segment_index = 0;
  std::uint64_t seq = 0;
  std::uint32_t payload_bytes = 0;
  std::uint32_t digest = 0;
  LinkTag tag = LinkTag::kMulticast;
  std::int64_t download_id = -1;  // unicast fetches only

  std::int64_t bits() const { return static_cast<std::int64_t>(payload_bytes) * 8; }
};

struct SegmentSpan {
  std::int64_t index = 0;
  int rung = 0;
  std::int64_t size_bytes = 0;
  std::uint64_t first_seq = 0;
  std::uint64_t packet_count = 0;

  std::uint64_t end_seq() const { return first_seq + packet_count; }
};

// A media session: a gapless run of segments split into packets with one
// per-session sequence space.
class Session {
 public:
  Session(SessionId id, int content_id, DeliveryMode mode, Ladder ladder,
          double segment_duration_s, std::uint32_t payload_bytes = kDefaultPayloadBytes);

  SessionId id() const { return id_; }
  int content_id() const { return content_id_; }
  DeliveryMode mode() const { return mode_; }
  void set_mode(DeliveryMode mode) { mode_ = mode; }
  const Ladder& ladder() const { return ladder_; }
  double segment_duration_s() const { return segment_duration_s_; }
  std::uint32_t payload_bytes() const { return payload_bytes_; }

  // Splits segment `index` at `rung` into ceil(size/payload) packets with
  // contiguous seqs. The first call fixes the starting index; later calls must
  // be gapless (index == last + 1) or throw std::logic_error.
  std::vector<Packet> enqueue_segment(std::int64_t index, int rung, LinkTag tag);
  // Re-issues the most recent segment (e.g. a cancelled download refetched at
  // another rung) under fresh seqs.
  std::vector<Packet> reissue_last(int rung, LinkTag tag);

  std::optional<std::int64_t> last_index() const;
  std::uint64_t next_seq() const { return next_seq_; }

  const SegmentSpan* find_by_seq(std::uint64_t seq) const;
  const SegmentSpan* find_segment(std::int64_t index) const;
  std::optional<Packet> regenerate(std::uint64_t seq, LinkTag tag) const;

  void subscribe(UeId ue) { subscribers_.insert(ue); }
  void unsubscribe(UeId ue) { subscribers_.erase(ue); }
  const std::set<UeId>& subscribers() const { return subscribers_; }

 private:
  std::vector<Packet> emit(const SegmentSpan& span, LinkTag tag) const;

  SessionId id_;
  int content_id_;
  DeliveryMode mode_;
  Ladder ladder_;
  double segment_duration_s_;
  std::uint32_t payload_bytes_;
  std::uint64_t next_seq_ = 0;
  std::vector<SegmentSpan> segments_;  // ascending seq
  std::set<UeId> subscribers_;
};

struct ResourceRow {
  std::int64_t tti = 0;
  int prbs_multicast = 0;
  int prbs_unicast = 0;
  int prbs_total = 0;

  int used() const { return prbs_multicast + prbs_unicast; }
};

class ResourceLog {
 public:
  void append(const ResourceRow& row);
  std::span<const ResourceRow> rows() const { return rows_; }
  bool empty() const { return rows_.empty(); }
  // Header "tti,prbs_multicast,prbs_unicast,prbs_total".
  void write_csv(std::ostream& out) const;

 private:
  std::vector<ResourceRow> rows_;
};

struct SchedulerConfig {
  int num_cells = 3;
  int prbs_per_tti = 273;
  double broadcast_share = 0.8;
  // Multicast backlog above this many bytes flags the bearer as overloaded.
  std::int64_t multicast_watermark_bytes = 4 * 2'500'000;
};

// What the scheduler needs to know about a UE each TTI.
struct UeLinkView {
  int cell = 0;
  double unicast_bits_per_prb = 0.0;  // 0 when unservable
  bool active = true;
};

struct TtiResult {
  std::vector<std::pair<int, Packet>> multicast;  // (bearer id, packet)
  std::vector<std::pair<UeId, Packet>> unicast;
};

// Shared PRB grid of every simulated cell. Multicast bearers are MBSFN: they
// occupy the same PRBs in every cell of the area. Unicast flows (one per UE)
// share what is left, round-robin with equal PRB shares among backlogged flows
// of a cell, redistributing shares a flow cannot use.
class DeliveryCore {
 public:
  DeliveryCore(SchedulerConfig cfg, LinkAdaptation link, int num_ues);

  const SchedulerConfig& config() const { return cfg_; }
  const LinkAdaptation& link() const { return link_; }
  int broadcast_cap_prbs() const;

  // PRBs per TTI needed to carry `stream_bps` at the given multicast MCS.
  int multicast_prbs_for(double stream_bps, int mcs) const;

  int open_bearer(SessionId session, int mcs, double stream_bps);
  // The bearer keeps its reservation until its queue drains, then closes.
  void close_bearer_when_drained(int bearer);
  bool bearer_open(int bearer) const;
  int bearer_mcs(int bearer) const;
  void push_multicast(int bearer, Packet p);
  std::int64_t multicast_backlog_bytes(int bearer) const;

  void push_unicast(UeId ue, Packet p);
  std::size_t purge_unicast(UeId ue, const std::function<bool(const Packet&)>& pred);
  std::int64_t unicast_backlog_bytes(UeId ue) const;
  std::int64_t unicast_backlog_bytes(UeId ue, LinkTag tag) const;

  TtiResult schedule_tti(SimTime now, std::span<const UeLinkView> ues);

  std::span<const ResourceLog> logs() const { return logs_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  struct Bearer {
    SessionId session;
    int mcs;
    int reserved_prbs;
    std::deque<Packet> queue;
    std::int64_t queued_bytes = 0;
    double credit_bits = 0.0;
    bool open = true;
    bool closing = false;
    bool warned = false;
  };
  struct Flow {
    std::deque<Packet> priority;  // repairs
    std::deque<Packet> normal;
    std::int64_t queued_bytes = 0;
    double credit_bits = 0.0;
  };

  std::int64_t drain_bits(const Flow& f) const;

  SchedulerConfig cfg_;
  LinkAdaptation link_;
  std::vector<Bearer> bearers_;
  std::vector<Flow> flows_;
  std::vector<int> rotor_;
  std::vector<ResourceLog> logs_;
  std::vector<std::string> warnings_;
};

// Cyclic broadcast of one file. Every round carries the same packets (seq =
// position in the file, segment_index = round); receivers accumulate packets
// across rounds.
class AlertCarousel {
 public:
  AlertCarousel(SessionId session, std::int64_t size_bytes, int rounds,
                std::uint32_t payload_bytes = kDefaultPayloadBytes);

  std::uint64_t packets_per_round() const { return per_round_; }
  int rounds() const { return rounds_; }
  std::int64_t size_bytes() const { return size_bytes_; }
  std::vector<Packet> round_packets(int round) const;
  Packet packet(std::uint64_t seq, LinkTag tag) const;

  void add_receiver(UeId ue);
  // Returns true when this packet completes the receiver's copy.
  bool receive(UeId ue, const Packet& p);
  bool complete(UeId ue) const;
  std::vector<std::uint64_t> missing(UeId ue) const;

 private:
  SessionId session_;
  std::int64_t size_bytes_;
  int rounds_;
  std::uint32_t payload_bytes_;
  std::uint64_t per_round_;
  std::vector<std::vector<bool>> have_;
  std::vector<std::uint64_t> have_count_;
};

}  // namespace mcsim
