#include "mcsim/client.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace mcsim {

void ClientConfig::validate() const {
  if (!(initial_buffer_target_s > 0)) throw std::invalid_argument("initial_buffer_target_s must be positive");
  if (!(max_buffer_s >= initial_buffer_target_s)) {
    throw std::invalid_argument("max_buffer_s must be >= initial_buffer_target_s");
  }
  if (!(quit_timer_s > 0)) throw std::invalid_argument("quit_timer_s must be positive");
  if (!(throughput_ema_alpha > 0 && throughput_ema_alpha <= 1)) {
    throw std::invalid_argument("throughput_ema_alpha must be in (0, 1]");
  }
  if (!(safety_factor > 0 && safety_factor <= 1)) throw std::invalid_argument("abr_safety_factor must be in (0, 1]");
  if (!(panic_buffer_s >= 0)) throw std::invalid_argument("abr_panic_buffer_s must be >= 0");
  if (!(cancel_window_s > 0)) throw std::invalid_argument("cancel_window_s must be positive");
  if (request_latency.ticks() < 0) throw std::invalid_argument("request_latency_s must be >= 0");
}

int select_bitrate(const AbrState& abr, const Ladder& ladder, const ClientConfig& cfg) {
  if (ladder.empty()) throw std::invalid_argument("select_bitrate: empty ladder");
  const int top = static_cast<int>(ladder.size()) - 1;
  const int current = std::clamp(abr.current_rung, 0, top);
  int best = 0;
  for (int r = 0; r <= top; ++r) {
    if (ladder[r].bits_per_s <= cfg.safety_factor * abr.throughput_estimate_bps) best = r;
  }
  best = std::min(best, current + 1);
  if (abr.buffer_s < cfg.panic_buffer_s) best = std::min(best, std::max(current - 1, 0));
  return best;
}

double projected_completion_s(const DownloadProgress& d) {
  const double remaining_bits = 8.0 * static_cast<double>(std::max<std::int64_t>(0, d.bytes_total - d.bytes_received));
  if (remaining_bits == 0) return 0.0;
  if (d.recent_goodput_bps <= 0) return std::numeric_limits<double>::infinity();
  return remaining_bits / d.recent_goodput_bps;
}

CancelResult maybe_cancel(const DownloadProgress& d, const AbrState& abr, const Ladder& ladder,
                          const ClientConfig& cfg) {
  CancelResult keep;
  if (d.rung <= 0 || d.cancelled_at_this_position) return keep;
  if (d.attempt_age_s + 1e-9 < cfg.cancel_window_s) return keep;
  if (!(projected_completion_s(d) > abr.buffer_s)) return keep;
  AbrState at{abr.buffer_s, abr.throughput_estimate_bps, d.rung};
  const int pick = std::min(select_bitrate(at, ladder, cfg), d.rung - 1);
  return CancelResult{CancelDecision::kCancelAndRedownloadLower, std::max(pick, 0)};
}

QuitDecision check_quit(double download_age_s, std::optional<double> since_cancel_s,
                        bool replacement_projected_to_miss, const ClientConfig& cfg) {
  if (download_age_s + 1e-9 < cfg.quit_timer_s) return QuitDecision::kContinue;
  if (!since_cancel_s || *since_cancel_s + 1e-9 < cfg.cancel_before_quit_s) return QuitDecision::kContinue;
  return replacement_projected_to_miss ? QuitDecision::kQuit : QuitDecision::kContinue;
}

std::string to_string(TraceEvent e) {
  switch (e) {
    case TraceEvent::kSegmentStart: return "segment_start";
    case TraceEvent::kSegmentComplete: return "segment_complete";
    case TraceEvent::kCancel: return "cancel";
    case TraceEvent::kStallStart: return "stall_start";
    case TraceEvent::kStallEnd: return "stall_end";
    case TraceEvent::kQuit: return "quit";
    case TraceEvent::kSwitch: return "switch";
  }
  return "unknown";
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "time,event,rung,buffer_s\n";
  for (const auto& r : rows) {
    out << std::fixed << std::setprecision(3) << r.time.seconds() << ',' << to_string(r.event)
        << ',' << r.rung << ',' << r.buffer_s << '\n';
  }
}

Playback::Playback(ClientConfig cfg, double segment_duration_s, std::int64_t first_position)
    : cfg_(cfg), seg_dur_(segment_duration_s), playhead_(first_position) {
  if (!(seg_dur_ > 0)) throw std::invalid_argument("Playback: segment duration must be positive");
}

bool Playback::is_ready(std::int64_t position) const {
  auto it = state_.find(position);
  return it != state_.end() && it->second.ready;
}

double Playback::buffer_s() const {
  double total = 0.0;
  std::int64_t p = playhead_;
  for (auto it = state_.find(p); it != state_.end() && it->first == p; ++it, ++p) {
    if (it->second.ready) total += seg_dur_;
    else if (!it->second.lost) break;
  }
  if (is_ready(playhead_)) total -= progress_s_;
  return std::max(total, 0.0);
}

double Playback::total_stall_s() const {
  double s = 0.0;
  for (const auto& e : episodes_) s += e.duration_s;
  return s;
}

void Playback::segment_ready(std::int64_t position, int rung, double bitrate_bps, SimTime now) {
  if (position < playhead_) return;
  Pos& p = state_[position];
  p.ready = true;
  p.lost = false;
  p.rung = rung;
  p.bitrate_bps = bitrate_bps;
  enforce_max_buffer(now);
}

void Playback::segment_lost(std::int64_t position, SimTime) {
  if (position < playhead_) return;
  Pos& p = state_[position];
  if (!p.ready) p.lost = true;
}

void Playback::enforce_max_buffer(SimTime now) {
  // Only pushed deliveries can overrun the buffer; the playhead then jumps
  // forward to stay within max_buffer of the live edge.
  while (buffer_s() > cfg_.max_buffer_s + 1e-9) finish_position(now, true);
}

void Playback::finish_position(SimTime now, bool skipped) {
  PlaybackRecord rec;
  rec.position = playhead_;
  rec.finished_at = now;
  rec.stall_s = pending_stall_s_;
  if (skipped) {
    const bool prev_skipped = !records_.empty() && !records_.back().rung &&
                              records_.back().position == playhead_ - 1;
    rec.new_episode = pending_new_episode_ || (!stalled_ && !prev_skipped);
  } else {
    auto it = state_.find(playhead_);
    rec.rung = it->second.rung;
    rec.bitrate_bps = it->second.bitrate_bps;
    rec.new_episode = pending_new_episode_;
  }
  records_.push_back(rec);
  pending_stall_s_ = 0.0;
  pending_new_episode_ = false;
  state_.erase(playhead_);
  ++playhead_;
  progress_s_ = 0.0;
}

std::vector<TraceRow> Playback::tick(SimTime now, SimTime dt) {
  if (dt.ticks() <= 0) throw std::invalid_argument("Playback::tick: dt must be positive");
  std::vector<TraceRow> out;
  auto state_at = [&](std::int64_t p) -> const Pos* {
    auto it = state_.find(p);
    return it == state_.end() ? nullptr : &it->second;
  };

  if (!started_) {
    while (const Pos* s = state_at(playhead_)) {
      if (!s->lost) break;
      finish_position(now, true);
    }
    if (buffer_s() + 1e-9 < cfg_.initial_buffer_target_s) return out;
    started_ = true;
  }

  double remaining = dt.seconds();
  while (remaining > 1e-12) {
    const Pos* s = state_at(playhead_);
    if (s != nullptr && s->lost) {
      finish_position(now, true);
      continue;
    }
    if (s != nullptr && s->ready) {
      if (stalled_) {
        stalled_ = false;
        out.push_back(TraceRow{now - SimTime::from_seconds(remaining), TraceEvent::kStallEnd,
                               s->rung, buffer_s()});
      }
      const double take = std::min(remaining, seg_dur_ - progress_s_);
      progress_s_ += take;
      remaining -= take;
      if (progress_s_ >= seg_dur_ - 1e-9) finish_position(now - SimTime::from_seconds(remaining), false);
      continue;
    }
    if (!stalled_) {
      stalled_ = true;
      pending_new_episode_ = true;
      const SimTime start = now - SimTime::from_seconds(remaining);
      episodes_.push_back(StallEpisode{start, 0.0});
      out.push_back(TraceRow{start, TraceEvent::kStallStart, -1, 0.0});
    }
    pending_stall_s_ += remaining;
    episodes_.back().duration_s += remaining;
    remaining = 0.0;
  }
  return out;
}

void Playback::close(SimTime) { stalled_ = false; }

Client::Client(UeId ue, ClientConfig cfg, Ladder ladder, double segment_duration_s,
               std::int64_t first_position)
    : ue_(ue),
      cfg_(cfg),
      ladder_(std::move(ladder)),
      seg_dur_(segment_duration_s),
      playback_(cfg, segment_duration_s, first_position),
      next_fetch_(first_position) {
  cfg_.validate();
  if (ladder_.empty()) throw std::invalid_argument("Client: empty ladder");
}

void Client::start_unicast(std::int64_t from, std::optional<double> initial_estimate_bps,
                           std::optional<int> initial_rung) {
  unicast_on_ = true;
  next_fetch_ = std::max(next_fetch_, from);
  fetch_until_ = INT64_MAX;
  if (initial_estimate_bps) {
    abr_.throughput_estimate_bps = *initial_estimate_bps;
    has_estimate_ = true;
  }
  if (initial_rung) abr_.current_rung = *initial_rung;
}

void Client::limit_unicast(std::int64_t until) { fetch_until_ = until; }

std::optional<std::int64_t> Client::current_download() const {
  if (!dl_) return std::nullopt;
  return dl_->req.download_id;
}

std::optional<FetchRequest> Client::next_request(SimTime now, std::int64_t live_edge) {
  if (quit() || !unicast_on_ || dl_) return std::nullopt;
  next_fetch_ = std::max(next_fetch_, playback_.playhead());
  while (next_fetch_ < fetch_until_ && playback_.is_ready(next_fetch_)) ++next_fetch_;
  if (next_fetch_ >= fetch_until_ || next_fetch_ > live_edge) return std::nullopt;
  const double buffered = playback_.buffer_s();
  if (buffered + seg_dur_ > cfg_.max_buffer_s + 1e-9) return std::nullopt;

  abr_.buffer_s = buffered;
  const int rung = select_bitrate(abr_, ladder_, cfg_);
  Download d;
  d.req = FetchRequest{next_download_id_++, next_fetch_, rung, now};
  d.original_request = now;
  d.attempt_start = now;
  d.bytes_total = segment_size_bytes(ladder_[rung].bits_per_s, seg_dur_);
  dl_ = d;
  note(now, TraceEvent::kSegmentStart, rung);
  return d.req;
}

bool Client::on_unicast_bytes(std::int64_t download_id, std::int64_t bytes, SimTime now) {
  if (!dl_ || dl_->req.download_id != download_id) return false;
  Download& d = *dl_;
  d.bytes_received += bytes;
  d.arrivals.emplace_back(now, bytes);
  const SimTime window = SimTime::from_seconds(cfg_.cancel_window_s);
  while (!d.arrivals.empty() && now - d.arrivals.front().first >= window) d.arrivals.pop_front();
  if (d.bytes_received < d.bytes_total) return false;

  const double elapsed = std::max((now - d.attempt_start).seconds(), kTti.seconds());
  const double sample = 8.0 * static_cast<double>(d.bytes_total) / elapsed;
  abr_.throughput_estimate_bps =
      has_estimate_ ? cfg_.throughput_ema_alpha * sample +
                          (1.0 - cfg_.throughput_ema_alpha) * abr_.throughput_estimate_bps
                    : sample;
  has_estimate_ = true;
  abr_.current_rung = d.req.rung;
  const FetchRequest req = d.req;
  dl_.reset();
  next_fetch_ = req.position + 1;
  playback_.segment_ready(req.position, req.rung, ladder_[req.rung].bits_per_s, now);
  note(now, TraceEvent::kSegmentComplete, req.rung);
  return true;
}

void Client::segment_ready(std::int64_t position, int rung, SimTime now) {
  if (quit()) return;
  const bool fresh = !playback_.is_ready(position) && position >= playback_.playhead();
  playback_.segment_ready(position, rung, ladder_.at(rung).bits_per_s, now);
  if (fresh) note(now, TraceEvent::kSegmentComplete, rung);
}

void Client::segment_lost(std::int64_t position, SimTime now) {
  if (quit()) return;
  playback_.segment_lost(position, now);
}

void Client::note(SimTime now, TraceEvent e, int rung) {
  trace_.push_back(TraceRow{now, e, rung, playback_.buffer_s()});
}

DownloadProgress Client::progress(const Download& d, SimTime now) const {
  DownloadProgress p;
  p.rung = d.req.rung;
  p.bytes_total = d.bytes_total;
  p.bytes_received = d.bytes_received;
  const SimTime window = SimTime::from_seconds(cfg_.cancel_window_s);
  std::int64_t recent = 0;
  for (const auto& [at, bytes] : d.arrivals) {
    if (now - at < window) recent += bytes;
  }
  p.recent_goodput_bps = 8.0 * static_cast<double>(recent) / cfg_.cancel_window_s;
  p.attempt_age_s = (now - d.attempt_start).seconds();
  p.cancelled_at_this_position = d.cancelled_at.has_value();
  return p;
}

void Client::do_quit(SimTime now, ClientTickResult& out) {
  quit_at_ = now;
  dl_.reset();
  unicast_on_ = false;
  playback_.close(now);
  note(now, TraceEvent::kQuit, -1);
  out.trace.push_back(trace_.back());
  out.quit = true;
}

ClientTickResult Client::tick(SimTime now, SimTime dt) {
  ClientTickResult out;
  if (quit()) return out;
  out.trace = playback_.tick(now, dt);
  trace_.insert(trace_.end(), out.trace.begin(), out.trace.end());
  abr_.buffer_s = playback_.buffer_s();

  if (!dl_ || !playback_.started()) return out;
  if (playback_.is_ready(dl_->req.position) || dl_->req.position < playback_.playhead()) {
    // Another path filled the position or it was skipped; the fetch is moot.
    return out;
  }
  const DownloadProgress p = progress(*dl_, now);
  const CancelResult c = maybe_cancel(p, abr_, ladder_, cfg_);
  if (c.decision == CancelDecision::kCancelAndRedownloadLower) {
    const std::int64_t old_id = dl_->req.download_id;
    note(now, TraceEvent::kCancel, dl_->req.rung);
    dl_->req = FetchRequest{next_download_id_++, dl_->req.position, c.replacement_rung, now};
    dl_->attempt_start = now;
    dl_->bytes_total = segment_size_bytes(ladder_[c.replacement_rung].bits_per_s, seg_dur_);
    dl_->bytes_received = 0;
    dl_->arrivals.clear();
    dl_->cancelled_at = now;
    note(now, TraceEvent::kSegmentStart, c.replacement_rung);
    out.trace.push_back(trace_[trace_.size() - 2]);
    out.trace.push_back(trace_.back());
    out.cancel = std::make_pair(old_id, dl_->req);
    return out;
  }
  const double age = (now - dl_->original_request).seconds();
  std::optional<double> since_cancel;
  if (dl_->cancelled_at) since_cancel = (now - *dl_->cancelled_at).seconds();
  const bool miss = projected_completion_s(p) > abr_.buffer_s;
  if (check_quit(age, since_cancel, miss, cfg_) == QuitDecision::kQuit) do_quit(now, out);
  return out;
}

std::vector<DeliveryMode> assign_object_modes(const ObjectSet& set, double heavy_threshold_bps,
                                              int audience) {
  if (set.objects.empty()) throw std::invalid_argument("assign_object_modes: empty object set");
  std::vector<DeliveryMode> out;
  out.reserve(set.objects.size());
  for (const auto& o : set.objects) {
    const bool heavy_shared = o.popularity == Popularity::kShared && o.bitrate_bps >= heavy_threshold_bps;
    out.push_back(heavy_shared && audience >= 2 ? DeliveryMode::kMulticast : DeliveryMode::kUnicast);
  }
  return out;
}

ObjectComposer::ObjectComposer(int num_objects) : num_objects_(num_objects) {
  if (num_objects_ < 1) throw std::invalid_argument("ObjectComposer: need at least one object");
}

bool ObjectComposer::object_ready(std::int64_t position, int object_index) {
  auto& have = have_[position];
  if (have.empty()) have.assign(static_cast<std::size_t>(num_objects_), false);
  if (have.at(object_index)) return false;
  have[object_index] = true;
  return std::all_of(have.begin(), have.end(), [](bool b) { return b; });
}

bool ObjectComposer::complete(std::int64_t position) const {
  auto it = have_.find(position);
  return it != have_.end() && std::all_of(it->second.begin(), it->second.end(), [](bool b) { return b; });
}

void ObjectComposer::forget_before(std::int64_t position) {
  have_.erase(have_.begin(), have_.lower_bound(position));
}

}  // namespace mcsim
