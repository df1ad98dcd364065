#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <queue>
#include <random>
#include <string_view>
#include <vector>

namespace mcsim {

// Simulation time in scheduler intervals. One tick is one 1 ms TTI.
class SimTime {
 public:
  constexpr SimTime() = default;
  constexpr explicit SimTime(std::int64_t ticks) : ticks_(ticks) {}

  static constexpr SimTime from_ms(std::int64_t ms) { return SimTime(ms); }
  static constexpr SimTime from_seconds(double s) {
    // Round to the nearest tick; config values are given in seconds.
    return SimTime(static_cast<std::int64_t>(s * 1000.0 + (s >= 0 ? 0.5 : -0.5)));
  }

  constexpr std::int64_t ticks() const { return ticks_; }
  constexpr double seconds() const { return static_cast<double>(ticks_) / 1000.0; }

  constexpr SimTime operator+(SimTime o) const { return SimTime(ticks_ + o.ticks_); }
  constexpr SimTime operator-(SimTime o) const { return SimTime(ticks_ - o.ticks_); }
  constexpr SimTime& operator+=(SimTime o) {
    ticks_ += o.ticks_;
    return *this;
  }
  constexpr auto operator<=>(const SimTime&) const = default;

 private:
  std::int64_t ticks_ = 0;
};

inline constexpr SimTime kTti{1};

enum class EventKind : std::uint8_t {
  kSegmentEnqueue,
  kPacketArrival,
  kMoodEvaluate,
  kMobilityStep,
  kClientTick,
  kAlertTrigger,
  kSchedulerTick,
  kAudienceChange,
};

std::string_view to_string(EventKind kind);

struct EventHandle {
  std::uint64_t seq = 0;
};

// Single-threaded discrete-event loop. Events are ordered by (fire_at, seq);
// seq is the insertion counter, so equal-time events fire in FIFO order.
class Simulator {
 public:
  using Action = std::function<void()>;

  SimTime now() const { return now_; }

  // Throws std::logic_error when `at` lies in the past.
  EventHandle schedule(SimTime at, EventKind kind, Action action);
  EventHandle schedule_in(SimTime delay, EventKind kind, Action action) {
    return schedule(now_ + delay, kind, std::move(action));
  }

  // Dispatches every event with fire_at <= t_end, including events scheduled
  // during dispatch, and leaves now() == t_end.
  std::size_t run_until(SimTime t_end);

  std::size_t pending() const { return queue_.size(); }
  std::uint64_t dispatched() const { return dispatched_; }

  // Running FNV-1a digest over (fire_at, seq, kind) of every dispatched event.
  std::uint64_t log_digest() const { return digest_; }

  // When set, one line per dispatched event is written: "<tick> <seq> <kind>".
  void set_log_sink(std::ostream* sink) { sink_ = sink; }

 private:
  struct Entry {
    SimTime fire_at;
    std::uint64_t seq;
    EventKind kind;
    Action action;
  };
  struct Later {
    bool operator()(const Entry& a, const Entry& b) const {
      if (a.fire_at != b.fire_at) return a.fire_at > b.fire_at;
      return a.seq > b.seq;
    }
  };

  void record(const Entry& e);

  SimTime now_{0};
  std::uint64_t next_seq_ = 0;
  std::uint64_t dispatched_ = 0;
  std::uint64_t digest_ = 14695981039346656037ull;
  std::ostream* sink_ = nullptr;
  std::priority_queue<Entry, std::vector<Entry>, Later> queue_;
};

// Named random stream. Identical (seed, stream_id) pairs produce identical
// sequences on every platform: mt19937_64 is fully specified by the standard,
// and the distributions are implemented here because <random> distributions
// are implementation-defined.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view stream_id);

  std::uint64_t next_u64();
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);   // [lo, hi)
  double normal(double mean, double stddev);
  std::uint64_t below(std::uint64_t n);  // [0, n)

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 14695981039346656037ull);

}  // namespace mcsim
