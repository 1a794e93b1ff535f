#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <vector>

namespace asyncsteer {

/// Point-to-point link characteristics. Bandwidth is in bytes per second;
/// jitter is the half-width of a uniform perturbation added to each delivery.
struct LinkModel {
  double latency = 0.0;
  double bandwidth = std::numeric_limits<double>::infinity();
  double jitter = 0.0;
  double loss_probability = 0.0;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument when a field is out of range.
  void validate() const;
  bool operator==(const LinkModel&) const = default;
};

/// Decimal megabits per second to bytes per second (100 Mbps = 12.5e6 B/s).
constexpr double mbps_to_bytes_per_second(double mbps) { return mbps * 1.0e6 / 8.0; }

/// Closed-form cost of one message: latency + payload / bandwidth.
double transfer_time(double payload_bytes, const LinkModel& link);

/// Fixed per-sweep stall on one worker, standing in for its duty to talk to
/// a remote visualization machine.
struct InjectedDelay {
  std::size_t worker = 0;
  double seconds = 0.0;
  bool operator==(const InjectedDelay&) const = default;
};

enum class HaloDirection { North, South };  // direction of travel

/// One boundary-adjacent row sent to a neighbor. The sender iteration is
/// stored at both ends of the record so a torn copy is detectable.
struct HaloMessage {
  std::size_t sender = 0;
  HaloDirection direction = HaloDirection::North;
  std::uint64_t sender_iteration = 0;
  std::vector<double> strip;
  std::uint64_t tail_iteration = 0;

  static HaloMessage make(std::size_t sender, HaloDirection direction, std::uint64_t iteration,
                          std::vector<double> strip);
  bool intact() const noexcept { return sender_iteration == tail_iteration; }
  std::size_t payload_bytes() const noexcept { return strip.size() * sizeof(double); }
};

class Clock {
 public:
  virtual ~Clock() = default;
  /// Seconds since the clock's epoch.
  virtual double now() const = 0;
  virtual bool is_virtual() const noexcept = 0;
};

class WallClock final : public Clock {
 public:
  WallClock() : epoch_(std::chrono::steady_clock::now()) {}
  double now() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_).count();
  }
  bool is_virtual() const noexcept override { return false; }

 private:
  std::chrono::steady_clock::time_point epoch_;
};

class VirtualClock final : public Clock {
 public:
  double now() const override { return now_.load(std::memory_order_acquire); }
  bool is_virtual() const noexcept override { return true; }
  /// Moves time forward; going backwards is a logic error.
  void set(double t);
  void advance(double duration) { set(now() + duration); }

 private:
  std::atomic<double> now_{0.0};
};

struct DeliveryEvent {
  std::size_t link = 0;
  std::uint64_t sequence = 0;
  double delivery_time = 0.0;
  bool operator==(const DeliveryEvent&) const = default;
};

struct TraceEntry {
  std::size_t link = 0;
  std::uint64_t sequence = 0;
  std::size_t sender = 0;
  std::uint64_t sender_iteration = 0;
  double send_time = 0.0;
  double delivery_time = 0.0;  // NaN when lost
  bool lost = false;
  bool operator==(const TraceEntry& o) const {
    return link == o.link && sequence == o.sequence && sender == o.sender &&
           sender_iteration == o.sender_iteration && send_time == o.send_time && lost == o.lost &&
           (lost || delivery_time == o.delivery_time);
  }
};

/// In-process network of one-directional links. Messages become visible to
/// poll() at send time + latency + size/bandwidth + jitter draw, never
/// before an earlier message on the same link. Safe for concurrent use once
/// all links have been added.
class SimNetwork {
 public:
  explicit SimNetwork(std::shared_ptr<Clock> clock);

  SimNetwork(const SimNetwork&) = delete;
  SimNetwork& operator=(const SimNetwork&) = delete;

  std::size_t add_link(const LinkModel& model);
  std::size_t link_count() const noexcept { return links_.size(); }
  const LinkModel& model(std::size_t link) const { return links_.at(link)->model; }

  /// Enqueues without blocking. Throws LinkDownError on a closed link.
  void send(std::size_t link, HaloMessage message);
  /// Oldest message whose delivery time has passed, or nothing.
  std::optional<HaloMessage> poll(std::size_t link);
  /// Delivery time of the oldest in-flight message, if any.
  std::optional<double> next_delivery_time(std::size_t link) const;
  std::size_t in_flight(std::size_t link) const;

  void close(std::size_t link);
  bool is_closed(std::size_t link) const;

  /// Virtual clock only: advances time by `duration` and returns the
  /// deliveries that became due in (now, now + duration], ordered by
  /// (delivery time, sequence number).
  std::vector<DeliveryEvent> advance(double duration);

  void enable_trace(bool on) { tracing_.store(on); }
  std::vector<TraceEntry> trace() const;

  Clock& clock() noexcept { return *clock_; }
  const std::shared_ptr<Clock>& clock_ptr() const noexcept { return clock_; }

 private:
  struct InFlight {
    double delivery_time;
    std::uint64_t sequence;
    HaloMessage message;
  };
  struct Link {
    LinkModel model;
    mutable std::mutex mutex;
    std::deque<InFlight> queue;
    std::mt19937_64 rng;
    double last_delivery = 0.0;
    bool closed = false;
  };

  std::shared_ptr<Clock> clock_;
  std::vector<std::unique_ptr<Link>> links_;
  std::atomic<std::uint64_t> next_sequence_{1};
  std::atomic<bool> tracing_{false};
  mutable std::mutex trace_mutex_;
  std::vector<TraceEntry> trace_;
};

}  // namespace asyncsteer
