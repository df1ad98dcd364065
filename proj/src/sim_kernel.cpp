#include "mcsim/sim_kernel.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <string>

namespace mcsim {

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kSegmentEnqueue: return "segment-enqueue";
    case EventKind::kPacketArrival: return "packet-arrival";
    case EventKind::kMoodEvaluate: return "mood-evaluate";
    case EventKind::kMobilityStep: return "mobility-step";
    case EventKind::kClientTick: return "client-tick";
    case EventKind::kAlertTrigger: return "alert-trigger";
    case EventKind::kSchedulerTick: return "scheduler-tick";
    case EventKind::kAudienceChange: return "audience-change";
  }
  return "unknown";
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

EventHandle Simulator::schedule(SimTime at, EventKind kind, Action action) {
  if (at < now_) {
    throw std::logic_error("Simulator::schedule: event at tick " + std::to_string(at.ticks()) +
                           " is before now=" + std::to_string(now_.ticks()));
  }
  const std::uint64_t seq = next_seq_++;
  queue_.push(Entry{at, seq, kind, std::move(action)});
  return EventHandle{seq};
}

std::size_t Simulator::run_until(SimTime t_end) {
  if (t_end < now_) {
    throw std::logic_error("Simulator::run_until: t_end is before now");
  }
  std::size_t count = 0;
  while (!queue_.empty() && queue_.top().fire_at <= t_end) {
    // priority_queue::top is const; the entry is popped before running so
    // handlers may schedule freely.
    Entry e = std::move(const_cast<Entry&>(queue_.top()));
    queue_.pop();
    now_ = e.fire_at;
    record(e);
    ++count;
    ++dispatched_;
    if (e.action) e.action();
  }
  now_ = t_end;
  return count;
}

void Simulator::record(const Entry& e) {
  const std::int64_t words[3] = {e.fire_at.ticks(), static_cast<std::int64_t>(e.seq),
                                 static_cast<std::int64_t>(e.kind)};
  digest_ = fnv1a64(std::string_view(reinterpret_cast<const char*>(words), sizeof(words)), digest_);
  if (sink_ != nullptr) {
    *sink_ << e.fire_at.ticks() << ' ' << e.seq << ' ' << to_string(e.kind) << '\n';
  }
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view stream_id)
    : engine_(splitmix64(seed ^ fnv1a64(stream_id))) {}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double RngStream::normal(double mean, double stddev) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

std::uint64_t RngStream::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("RngStream::below: n must be positive");
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

}  // namespace mcsim
