#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "asyncsteer/config.hpp"
#include "asyncsteer/engine.hpp"
#include "asyncsteer/protocol.hpp"

namespace asyncsteer {

/// A live steering session: one engine segment at a time, a single control
/// queue that applies commands in arrival order, and a broadcaster that
/// emits a snapshot every snapshot period. Nothing here waits on clients.
class Session {
 public:
  /// Receives every broadcast snapshot, already encoded. Called from the
  /// broadcaster thread; must not block.
  using SnapshotSink = std::function<void(const std::string& frame, const Snapshot& snapshot)>;
  /// Receives the encoded ACK or REJECT for a submitted command.
  using Reply = std::function<void(std::string frame)>;

  explicit Session(RunConfig config);
  ~Session();

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  void start();
  void stop();

  void set_sink(SnapshotSink sink);

  /// Queues a decoded COMMAND frame. Malformed commands (no `command`) are
  /// rejected with `frame.reason` in queue order like any other.
  void submit(CommandFrame frame, Reply reply);

  /// Applies a command through the control queue and waits for the outcome.
  /// Returns the rejection reason, or nothing when acknowledged.
  std::optional<std::string> apply(const SteeringCommand& command);

  std::string hello() const;
  /// Builds (but does not broadcast) a snapshot of the current segment.
  Snapshot snapshot();

  std::uint64_t segment() const;
  RunConfig config() const;
  /// Message of the last engine abort, if any.
  std::optional<std::string> last_error() const;

 private:
  struct Task {
    CommandFrame frame;
    Reply reply;
  };

  void control_loop();
  void broadcast_loop();
  std::optional<std::string> execute(const SteeringCommand& command);
  void begin_segment(std::optional<Field2D> field);
  void retire_engine();
  std::pair<Snapshot, std::string> build_snapshot();

  const double epoch_;
  mutable std::mutex state_mutex_;  // guards config_, engine_, segment_, paused_
  RunConfig config_;
  std::unique_ptr<Engine> engine_;
  std::uint64_t segment_ = 0;
  bool paused_ = false;
  std::optional<std::string> last_error_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<Task> queue_;

  std::mutex sink_mutex_;
  SnapshotSink sink_;
  std::uint64_t sequence_ = 0;
  std::size_t min_factor_ = 1;

  std::mutex run_mutex_;
  std::condition_variable run_cv_;
  bool running_ = false;
  bool stopping_ = false;
  std::thread control_thread_;
  std::thread broadcast_thread_;
};

}  // namespace asyncsteer
