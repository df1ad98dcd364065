#include "mcsim/multilink.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

namespace mcsim {

void MlConfig::validate() const {
  if (!std::isfinite(sinr_threshold_db)) throw std::invalid_argument("ml_threshold_db must be finite");
  if (!(hysteresis_margin_db >= 0)) throw std::invalid_argument("ml_hysteresis_margin_db must be >= 0");
  if (reorder_window < 1) throw std::invalid_argument("ml_reorder_window must be >= 1");
  if (repair_timeout.ticks() <= 0) throw std::invalid_argument("ml_repair_timeout_s must be positive");
  if (repair_backoff_cap < repair_timeout) {
    throw std::invalid_argument("ml_repair_backoff_cap_s must be >= ml_repair_timeout_s");
  }
  if (policy != MlPolicy::kDuplicate) {
    throw std::invalid_argument("ml policy: only duplicate mode is implemented");
  }
}

bool ml_decide(bool currently_on, double mbsfn_sinr_db, const MlConfig& cfg) {
  if (currently_on) return mbsfn_sinr_db < cfg.sinr_threshold_db + cfg.hysteresis_margin_db;
  return mbsfn_sinr_db < cfg.sinr_threshold_db;
}

MlGateway::MlGateway(MlConfig cfg, int num_ues)
    : cfg_(cfg),
      flags_(static_cast<std::size_t>(num_ues), false),
      dup_session_(static_cast<std::size_t>(num_ues)),
      dup_bits_(static_cast<std::size_t>(num_ues), 0),
      toggles_(static_cast<std::size_t>(num_ues), 0) {
  cfg_.validate();
}

bool MlGateway::update(UeId ue, double mbsfn_sinr_db) {
  const bool on = ml_decide(flags_.at(ue), mbsfn_sinr_db, cfg_);
  if (on == flags_[ue]) return false;
  set_duplication(ue, on);
  return true;
}

void MlGateway::set_duplication(UeId ue, bool on) {
  if (flags_.at(ue) == on) return;
  flags_[ue] = on;
  dup_session_[ue] = on ? std::optional<int>(next_handle_++) : std::nullopt;
  ++toggles_[ue];
}

int MlGateway::flagged_count() const {
  return static_cast<int>(std::count(flags_.begin(), flags_.end(), true));
}

GwEmission MlGateway::gw_process(const Packet& p) {
  GwEmission out{p, {}};
  out.multicast.tag = LinkTag::kMulticast;
  for (std::size_t ue = 0; ue < flags_.size(); ++ue) {
    if (!flags_[ue]) continue;
    Packet copy = p;
    copy.tag = LinkTag::kUnicastDuplicate;
    dup_bits_[ue] += copy.bits();
    out.unicast.emplace_back(static_cast<UeId>(ue), copy);
  }
  return out;
}

void write_merge_stats_csv(std::ostream& out, const std::vector<MergeStats>& stats) {
  out << "ue,received,duplicates_discarded,repaired,declared_lost\n";
  for (std::size_t ue = 0; ue < stats.size(); ++ue) {
    const auto& s = stats[ue];
    out << ue << ',' << s.received << ',' << s.duplicates_discarded << ',' << s.repaired << ','
        << s.declared_lost << '\n';
  }
}

MergeBuffer::MergeBuffer(MlConfig cfg, std::uint64_t start_seq)
    : cfg_(cfg),
      ring_(static_cast<std::size_t>(cfg.reorder_window)),
      next_expected_(start_seq),
      highest_end_(start_seq) {
  if (cfg_.reorder_window < 1) throw std::invalid_argument("MergeBuffer: window must be >= 1");
}

void MergeBuffer::release_prefix(MergeOutput& out) {
  while (true) {
    Slot& s = slot(next_expected_);
    if (!s.present || s.packet.seq != next_expected_) break;
    out.delivered.push_back(s.packet);
    s = Slot{};
    --held_count_;
    ++next_expected_;
  }
  highest_end_ = std::max(highest_end_, next_expected_);
}

void MergeBuffer::give_up_oldest(MergeOutput& out) {
  Slot& s = slot(next_expected_);
  if (s.present && s.packet.seq == next_expected_) {
    out.delivered.push_back(s.packet);
    --held_count_;
  } else {
    out.lost.push_back(next_expected_);
    recent_lost_.push_back(next_expected_);
    while (recent_lost_.size() > 4 * ring_.size()) recent_lost_.pop_front();
    ++stats_.declared_lost;
  }
  s = Slot{};
  ++next_expected_;
  highest_end_ = std::max(highest_end_, next_expected_);
}

void MergeBuffer::mark_missing(std::uint64_t from, std::uint64_t to, SimTime now) {
  for (std::uint64_t q = from; q < to; ++q) {
    Slot& s = slot(q);
    if (s.present) continue;
    s.missing = true;
    s.retry_at = now + cfg_.repair_timeout;
    s.attempts = 0;
  }
}

MergeOutput MergeBuffer::ingest(const Packet& p, SimTime now) {
  MergeOutput out;
  ++stats_.received;
  if (p.seq < next_expected_) {
    if (std::binary_search(recent_lost_.begin(), recent_lost_.end(), p.seq)) ++stats_.stale_dropped;
    else ++stats_.duplicates_discarded;
    return out;
  }
  const auto window = static_cast<std::uint64_t>(ring_.size());
  if (p.seq >= next_expected_ + window) {
    // Jumps far past the window need no per-seq walk for the part that was
    // never seen at all.
    if (held_count_ == 0 && p.seq >= highest_end_ + window && next_expected_ == highest_end_) {
      const std::uint64_t new_start = p.seq + 1 - window;
      for (std::uint64_t q = next_expected_; q < new_start; ++q) out.lost.push_back(q);
      stats_.declared_lost += static_cast<std::int64_t>(new_start - next_expected_);
      for (std::uint64_t q = std::max(next_expected_, new_start - std::min(new_start, 4 * window));
           q < new_start; ++q) {
        recent_lost_.push_back(q);
      }
      while (recent_lost_.size() > 4 * ring_.size()) recent_lost_.pop_front();
      next_expected_ = highest_end_ = new_start;
    }
    while (p.seq >= next_expected_ + window) give_up_oldest(out);
  }
  Slot& s = slot(p.seq);
  if (s.present) {
    ++stats_.duplicates_discarded;
    release_prefix(out);
    return out;
  }
  if (p.tag == LinkTag::kUnicastRepair && s.missing) ++stats_.repaired;
  s.present = true;
  s.missing = false;
  s.packet = p;
  ++held_count_;
  if (p.seq >= highest_end_) {
    mark_missing(highest_end_, p.seq, now);
    highest_end_ = p.seq + 1;
  }
  release_prefix(out);
  return out;
}

std::vector<RepairRequest> MergeBuffer::due_repairs(SimTime now) {
  std::vector<RepairRequest> out;
  if (!cfg_.repair_enabled) return out;
  for (std::uint64_t q = next_expected_; q < highest_end_; ++q) {
    Slot& s = slot(q);
    if (s.present || !s.missing || s.retry_at > now) continue;
    ++s.attempts;
    const std::int64_t factor = std::int64_t{1} << std::min(s.attempts, 20);
    const std::int64_t wait = std::min(cfg_.repair_timeout.ticks() * factor, cfg_.repair_backoff_cap.ticks());
    s.retry_at = now + SimTime(wait);
    if (!out.empty() && out.back().end == q) {
      out.back().end = q + 1;
      out.back().attempt = std::max(out.back().attempt, s.attempts);
    } else {
      out.push_back(RepairRequest{q, q + 1, s.attempts});
    }
  }
  return out;
}

MergeOutput MergeBuffer::flush_through(std::uint64_t end) {
  MergeOutput out;
  while (next_expected_ < end) {
    if (held_count_ == 0 && next_expected_ >= highest_end_) {
      for (std::uint64_t q = next_expected_; q < end; ++q) out.lost.push_back(q);
      stats_.declared_lost += static_cast<std::int64_t>(end - next_expected_);
      next_expected_ = highest_end_ = end;
      break;
    }
    give_up_oldest(out);
  }
  release_prefix(out);
  return out;
}

void MergeBuffer::restart_at(std::uint64_t seq) {
  if (held_count_ != 0) throw std::logic_error("MergeBuffer::restart_at: packets still held");
  if (seq < next_expected_) throw std::logic_error("MergeBuffer::restart_at: cannot move backwards");
  std::fill(ring_.begin(), ring_.end(), Slot{});
  next_expected_ = highest_end_ = seq;
}

}  // namespace mcsim
