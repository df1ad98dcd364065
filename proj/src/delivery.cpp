#include "mcsim/delivery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace mcsim {

std::string to_string(DeliveryMode mode) {
  switch (mode) {
    case DeliveryMode::kUnicast: return "unicast";
    case DeliveryMode::kMulticast: return "multicast";
    case DeliveryMode::kMulticastWithMultiLink: return "multicast+multilink";
  }
  return "unknown";
}

std::string to_string(LinkTag tag) {
  switch (tag) {
    case LinkTag::kMulticast: return "multicast";
    case LinkTag::kUnicastDuplicate: return "unicast-duplicate";
    case LinkTag::kUnicastRepair: return "unicast-repair";
    case LinkTag::kUnicastPrimary: return "unicast";
  }
  return "unknown";
}

Ladder default_ladder() {
  return {{1e6, "1Mbps@480p"},  {4e6, "4Mbps@1080p"}, {8e6, "8Mbps@1080p"},
          {12e6, "12Mbps@2K"},  {16e6, "16Mbps@4K"},  {20e6, "20Mbps@4K"}};
}

std::int64_t segment_size_bytes(double bits_per_s, double duration_s) {
  return std::llround(bits_per_s * duration_s / 8.0);
}

std::uint64_t packets_for(std::int64_t size_bytes, std::uint32_t payload_bytes) {
  if (size_bytes <= 0 || payload_bytes == 0) throw std::invalid_argument("packets_for: bad sizes");
  const auto s = static_cast<std::uint64_t>(size_bytes);
  return (s + payload_bytes - 1) / payload_bytes;
}

std::uint32_t payload_digest(SessionId session, std::uint64_t seq, std::uint32_t size) {
  std::uint64_t h = 0x9e3779b97f4a7c15ull ^ static_cast<std::uint64_t>(session);
  h = (h ^ seq) * 0xbf58476d1ce4e5b9ull;
  h = (h ^ size) * 0x94d049bb133111ebull;
  return static_cast<std::uint32_t>(h ^ (h >> 32));
}

Session::Session(SessionId id, int content_id, DeliveryMode mode, Ladder ladder,
                 double segment_duration_s, std::uint32_t payload_bytes)
    : id_(id),
      content_id_(content_id),
      mode_(mode),
      ladder_(std::move(ladder)),
      segment_duration_s_(segment_duration_s),
      payload_bytes_(payload_bytes) {
  if (ladder_.empty()) throw std::invalid_argument("Session: empty ladder");
  if (!(segment_duration_s_ > 0)) throw std::invalid_argument("Session: segment duration <= 0");
  if (payload_bytes_ == 0) throw std::invalid_argument("Session: payload must be positive");
}

std::vector<Packet> Session::emit(const SegmentSpan& span, LinkTag tag) const {
  std::vector<Packet> out;
  out.reserve(span.packet_count);
  std::int64_t left = span.size_bytes;
  for (std::uint64_t i = 0; i < span.packet_count; ++i) {
    const auto size = static_cast<std::uint32_t>(std::min<std::int64_t>(left, payload_bytes_));
    left -= size;
    const std::uint64_t seq = span.first_seq + i;
    out.push_back(Packet{id_, span.index, seq, size, payload_digest(id_, seq, size), tag, -1});
  }
  return out;
}

std::vector<Packet> Session::enqueue_segment(std::int64_t index, int rung, LinkTag tag) {
  if (!segments_.empty() && index != segments_.back().index + 1) {
    throw std::logic_error("Session " + std::to_string(id_) + ": segment index gap (got " +
                           std::to_string(index) + ", expected " +
                           std::to_string(segments_.back().index + 1) + ")");
  }
  if (rung < 0 || rung >= static_cast<int>(ladder_.size())) {
    throw std::out_of_range("Session: rung outside ladder");
  }
  SegmentSpan span;
  span.index = index;
  span.rung = rung;
  span.size_bytes = segment_size_bytes(ladder_[rung].bits_per_s, segment_duration_s_);
  span.first_seq = next_seq_;
  span.packet_count = packets_for(span.size_bytes, payload_bytes_);
  next_seq_ += span.packet_count;
  segments_.push_back(span);
  return emit(span, tag);
}

std::vector<Packet> Session::reissue_last(int rung, LinkTag tag) {
  if (segments_.empty()) throw std::logic_error("Session::reissue_last: nothing to reissue");
  const std::int64_t index = segments_.back().index;
  SegmentSpan span;
  span.index = index;
  span.rung = rung;
  span.size_bytes = segment_size_bytes(ladder_.at(rung).bits_per_s, segment_duration_s_);
  span.first_seq = next_seq_;
  span.packet_count = packets_for(span.size_bytes, payload_bytes_);
  next_seq_ += span.packet_count;
  segments_.push_back(span);
  return emit(span, tag);
}

std::optional<std::int64_t> Session::last_index() const {
  if (segments_.empty()) return std::nullopt;
  return segments_.back().index;
}

const SegmentSpan* Session::find_by_seq(std::uint64_t seq) const {
  auto it = std::upper_bound(segments_.begin(), segments_.end(), seq,
                             [](std::uint64_t s, const SegmentSpan& sp) { return s < sp.first_seq; });
  if (it == segments_.begin()) return nullptr;
  --it;
  return seq < it->end_seq() ? &*it : nullptr;
}

const SegmentSpan* Session::find_segment(std::int64_t index) const {
  // Latest issue wins when a segment was reissued.
  for (auto it = segments_.rbegin(); it != segments_.rend(); ++it) {
    if (it->index == index) return &*it;
    if (it->index < index) break;
  }
  return nullptr;
}

std::optional<Packet> Session::regenerate(std::uint64_t seq, LinkTag tag) const {
  const SegmentSpan* span = find_by_seq(seq);
  if (span == nullptr) return std::nullopt;
  const std::uint64_t offset = seq - span->first_seq;
  const std::int64_t before = static_cast<std::int64_t>(offset) * payload_bytes_;
  const auto size =
      static_cast<std::uint32_t>(std::min<std::int64_t>(payload_bytes_, span->size_bytes - before));
  return Packet{id_, span->index, seq, size, payload_digest(id_, seq, size), tag, -1};
}

void ResourceLog::append(const ResourceRow& row) {
  if (row.used() > row.prbs_total) {
    throw std::logic_error("ResourceLog: TTI " + std::to_string(row.tti) + " uses " +
                           std::to_string(row.used()) + " of " + std::to_string(row.prbs_total));
  }
  rows_.push_back(row);
}

void ResourceLog::write_csv(std::ostream& out) const {
  out << "tti,prbs_multicast,prbs_unicast,prbs_total\n";
  for (const auto& r : rows_) {
    out << r.tti << ',' << r.prbs_multicast << ',' << r.prbs_unicast << ',' << r.prbs_total << '\n';
  }
}

DeliveryCore::DeliveryCore(SchedulerConfig cfg, LinkAdaptation link, int num_ues)
    : cfg_(cfg),
      link_(std::move(link)),
      flows_(static_cast<std::size_t>(num_ues)),
      rotor_(static_cast<std::size_t>(cfg.num_cells), 0),
      logs_(static_cast<std::size_t>(cfg.num_cells)) {
  if (cfg_.num_cells <= 0 || cfg_.prbs_per_tti <= 0) {
    throw std::invalid_argument("DeliveryCore: cells and PRBs must be positive");
  }
  if (!(cfg_.broadcast_share >= 0 && cfg_.broadcast_share <= 1)) {
    throw std::invalid_argument("DeliveryCore: broadcast share outside [0, 1]");
  }
}

int DeliveryCore::broadcast_cap_prbs() const {
  // A small epsilon keeps 0.6 * 273 = 163.8 from flooring to 163 - 1 ulp.
  return static_cast<int>(std::floor(cfg_.broadcast_share * cfg_.prbs_per_tti + 1e-9));
}

int DeliveryCore::multicast_prbs_for(double stream_bps, int mcs) const {
  const double bits_per_tti = stream_bps * kTti.seconds();
  const double per_prb = link_.rate_bits_per_prb(0.0, mcs);
  return static_cast<int>(std::ceil(bits_per_tti / per_prb - 1e-9));
}

int DeliveryCore::open_bearer(SessionId session, int mcs, double stream_bps) {
  Bearer b{session, mcs, multicast_prbs_for(stream_bps, mcs), {}, 0, 0.0, true, false, false};
  bearers_.push_back(std::move(b));
  return static_cast<int>(bearers_.size()) - 1;
}

void DeliveryCore::close_bearer_when_drained(int bearer) {
  Bearer& b = bearers_.at(bearer);
  b.closing = true;
  if (b.queue.empty()) b.open = false;
}

bool DeliveryCore::bearer_open(int bearer) const { return bearers_.at(bearer).open; }
int DeliveryCore::bearer_mcs(int bearer) const { return bearers_.at(bearer).mcs; }

void DeliveryCore::push_multicast(int bearer, Packet p) {
  Bearer& b = bearers_.at(bearer);
  if (!b.open) throw std::logic_error("push_multicast: bearer is closed");
  b.queued_bytes += p.payload_bytes;
  b.queue.push_back(p);
}

std::int64_t DeliveryCore::multicast_backlog_bytes(int bearer) const {
  return bearers_.at(bearer).queued_bytes;
}

void DeliveryCore::push_unicast(UeId ue, Packet p) {
  Flow& f = flows_.at(ue);
  f.queued_bytes += p.payload_bytes;
  if (p.tag == LinkTag::kUnicastRepair) f.priority.push_back(p);
  else f.normal.push_back(p);
}

std::size_t DeliveryCore::purge_unicast(UeId ue, const std::function<bool(const Packet&)>& pred) {
  Flow& f = flows_.at(ue);
  std::size_t removed = 0;
  for (auto* q : {&f.priority, &f.normal}) {
    for (auto it = q->begin(); it != q->end();) {
      if (pred(*it)) {
        f.queued_bytes -= it->payload_bytes;
        it = q->erase(it);
        ++removed;
      } else {
        ++it;
      }
    }
  }
  if (f.queued_bytes == 0) f.credit_bits = 0.0;
  return removed;
}

std::int64_t DeliveryCore::unicast_backlog_bytes(UeId ue) const { return flows_.at(ue).queued_bytes; }

std::int64_t DeliveryCore::unicast_backlog_bytes(UeId ue, LinkTag tag) const {
  std::int64_t total = 0;
  const Flow& f = flows_.at(ue);
  for (const auto* q : {&f.priority, &f.normal}) {
    for (const auto& p : *q) {
      if (p.tag == tag) total += p.payload_bytes;
    }
  }
  return total;
}

std::int64_t DeliveryCore::drain_bits(const Flow& f) const {
  return f.queued_bytes * 8 - static_cast<std::int64_t>(std::floor(f.credit_bits));
}

TtiResult DeliveryCore::schedule_tti(SimTime now, std::span<const UeLinkView> ues) {
  TtiResult out;

  // Multicast first: fixed reservations in bearer order, capped in total.
  int cap_left = broadcast_cap_prbs();
  int multicast_prbs = 0;
  for (std::size_t id = 0; id < bearers_.size(); ++id) {
    Bearer& b = bearers_[id];
    if (!b.open) continue;
    const int prbs = std::min(b.reserved_prbs, cap_left);
    cap_left -= prbs;
    multicast_prbs += prbs;
    b.credit_bits += prbs * link_.rate_bits_per_prb(0.0, b.mcs);
    while (!b.queue.empty() && b.credit_bits >= static_cast<double>(b.queue.front().bits())) {
      b.credit_bits -= static_cast<double>(b.queue.front().bits());
      b.queued_bytes -= b.queue.front().payload_bytes;
      out.multicast.emplace_back(static_cast<int>(id), b.queue.front());
      b.queue.pop_front();
    }
    if (b.queue.empty()) {
      b.credit_bits = 0.0;
      if (b.closing) b.open = false;
    }
    if (b.queued_bytes > cfg_.multicast_watermark_bytes && !b.warned) {
      b.warned = true;
      warnings_.push_back("multicast bearer " + std::to_string(id) + " backlog exceeded " +
                          std::to_string(cfg_.multicast_watermark_bytes) + " bytes at tti " +
                          std::to_string(now.ticks()) +
                          ": stream demand exceeds the broadcast share");
    }
  }

  // Unicast: per-cell max-min fair split of the remaining PRBs.
  std::vector<std::vector<UeId>> by_cell(static_cast<std::size_t>(cfg_.num_cells));
  for (std::size_t ue = 0; ue < ues.size() && ue < flows_.size(); ++ue) {
    const auto& v = ues[ue];
    if (!v.active || v.unicast_bits_per_prb <= 0 || flows_[ue].queued_bytes == 0) continue;
    by_cell.at(static_cast<std::size_t>(v.cell)).push_back(static_cast<UeId>(ue));
  }

  for (int cell = 0; cell < cfg_.num_cells; ++cell) {
    auto& backlogged = by_cell[static_cast<std::size_t>(cell)];
    int unicast_prbs = 0;
    const int available = cfg_.prbs_per_tti - multicast_prbs;
    const std::size_t n = backlogged.size();
    if (n > 0 && available > 0) {
      // Round-robin order starting at this cell's rotor.
      const std::size_t start = static_cast<std::size_t>(rotor_[cell]) % n;
      std::rotate(backlogged.begin(), backlogged.begin() + static_cast<std::ptrdiff_t>(start),
                  backlogged.end());
      rotor_[cell] = (rotor_[cell] + 1) % 1'000'003;

      std::vector<std::int64_t> need(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double rate = ues[backlogged[i]].unicast_bits_per_prb;
        const auto bits = static_cast<double>(std::max<std::int64_t>(0, drain_bits(flows_[backlogged[i]])));
        need[i] = static_cast<std::int64_t>(std::ceil(bits / rate - 1e-9));
      }
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return need[a] < need[b]; });
      std::vector<std::int64_t> alloc(n, 0);
      std::int64_t remaining = available;
      for (std::size_t pos = 0; pos < n; ++pos) {
        const std::size_t i = order[pos];
        const std::int64_t left = static_cast<std::int64_t>(n - pos);
        const std::int64_t share = remaining / left;
        if (need[i] <= share) {
          alloc[i] = need[i];
          remaining -= need[i];
          continue;
        }
        // Every remaining flow wants more than an equal share: split evenly and
        // hand the remainder out in round-robin order.
        std::vector<std::size_t> rest(order.begin() + static_cast<std::ptrdiff_t>(pos), order.end());
        std::sort(rest.begin(), rest.end());
        std::int64_t extra = remaining - share * left;
        for (std::size_t r : rest) {
          alloc[r] = share + (extra > 0 ? 1 : 0);
          if (extra > 0) --extra;
        }
        remaining = 0;
        break;
      }

      for (std::size_t i = 0; i < n; ++i) {
        if (alloc[i] == 0) continue;
        const UeId ue = backlogged[i];
        Flow& f = flows_[ue];
        unicast_prbs += static_cast<int>(alloc[i]);
        f.credit_bits += static_cast<double>(alloc[i]) * ues[ue].unicast_bits_per_prb;
        for (auto* q : {&f.priority, &f.normal}) {
          while (!q->empty() && f.credit_bits >= static_cast<double>(q->front().bits())) {
            f.credit_bits -= static_cast<double>(q->front().bits());
            f.queued_bytes -= q->front().payload_bytes;
            out.unicast.emplace_back(ue, q->front());
            q->pop_front();
          }
          if (!q->empty()) break;
        }
        if (f.queued_bytes == 0) f.credit_bits = 0.0;
      }
    }
    logs_[static_cast<std::size_t>(cell)].append(
        ResourceRow{now.ticks(), multicast_prbs, unicast_prbs, cfg_.prbs_per_tti});
  }
  return out;
}

AlertCarousel::AlertCarousel(SessionId session, std::int64_t size_bytes, int rounds,
                             std::uint32_t payload_bytes)
    : session_(session),
      size_bytes_(size_bytes),
      rounds_(rounds),
      payload_bytes_(payload_bytes),
      per_round_(packets_for(size_bytes, payload_bytes)) {
  if (rounds_ <= 0) throw std::invalid_argument("AlertCarousel: rounds must be positive");
}

Packet AlertCarousel::packet(std::uint64_t seq, LinkTag tag) const {
  const std::int64_t before = static_cast<std::int64_t>(seq) * payload_bytes_;
  const auto size =
      static_cast<std::uint32_t>(std::min<std::int64_t>(payload_bytes_, size_bytes_ - before));
  return Packet{session_, 0, seq, size, payload_digest(session_, seq, size), tag, -1};
}

std::vector<Packet> AlertCarousel::round_packets(int round) const {
  std::vector<Packet> out;
  out.reserve(per_round_);
  for (std::uint64_t s = 0; s < per_round_; ++s) {
    Packet p = packet(s, LinkTag::kMulticast);
    p.segment_index = round;
    out.push_back(p);
  }
  return out;
}

void AlertCarousel::add_receiver(UeId ue) {
  if (ue < 0) throw std::invalid_argument("AlertCarousel: negative UE id");
  if (static_cast<std::size_t>(ue) >= have_.size()) {
    have_.resize(static_cast<std::size_t>(ue) + 1);
    have_count_.resize(static_cast<std::size_t>(ue) + 1, 0);
  }
  have_[ue].assign(per_round_, false);
  have_count_[ue] = 0;
}

bool AlertCarousel::receive(UeId ue, const Packet& p) {
  auto& have = have_.at(ue);
  if (p.seq >= per_round_ || have[p.seq]) return false;
  have[p.seq] = true;
  return ++have_count_[ue] == per_round_;
}

bool AlertCarousel::complete(UeId ue) const {
  return static_cast<std::size_t>(ue) < have_count_.size() && have_count_[ue] == per_round_;
}

std::vector<std::uint64_t> AlertCarousel::missing(UeId ue) const {
  std::vector<std::uint64_t> out;
  const auto& have = have_.at(ue);
  for (std::uint64_t s = 0; s < per_round_; ++s) {
    if (!have[s]) out.push_back(s);
  }
  return out;
}

}  // namespace mcsim
