#include "asyncsteer/session.hpp"

#include <chrono>
#include <future>
#include <iostream>

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};

double steady_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

Session::Session(RunConfig config) : epoch_(steady_seconds()), config_(std::move(config)) {
  config_.validate();
  min_factor_ = config_.downsample;
}

Session::~Session() { stop(); }

void Session::start() {
  {
    std::lock_guard lock(run_mutex_);
    if (running_) return;
    running_ = true;
    stopping_ = false;
  }
  {
    std::lock_guard lock(state_mutex_);
    begin_segment(std::nullopt);
  }
  control_thread_ = std::thread([this] { control_loop(); });
  broadcast_thread_ = std::thread([this] { broadcast_loop(); });
}

void Session::stop() {
  {
    std::lock_guard lock(run_mutex_);
    if (!running_) return;
    stopping_ = true;
  }
  run_cv_.notify_all();
  queue_cv_.notify_all();
  if (control_thread_.joinable()) control_thread_.join();
  if (broadcast_thread_.joinable()) broadcast_thread_.join();
  {
    std::lock_guard lock(state_mutex_);
    retire_engine();
  }
  std::lock_guard lock(run_mutex_);
  running_ = false;
}

void Session::set_sink(SnapshotSink sink) {
  std::lock_guard lock(sink_mutex_);
  sink_ = std::move(sink);
}

void Session::submit(CommandFrame frame, Reply reply) {
  {
    std::lock_guard lock(queue_mutex_);
    queue_.push_back({std::move(frame), std::move(reply)});
  }
  queue_cv_.notify_one();
}

std::optional<std::string> Session::apply(const SteeringCommand& command) {
  auto promise = std::make_shared<std::promise<std::optional<std::string>>>();
  auto outcome = promise->get_future();
  CommandFrame frame;
  frame.id = "local";
  frame.command = command;
  submit(std::move(frame), [promise](std::string reply) {
    const auto decoded = decode(reply);
    if (const auto* r = std::get_if<Reject>(&decoded)) {
      promise->set_value(r->reason);
    } else {
      promise->set_value(std::nullopt);
    }
  });
  return outcome.get();
}

std::string Session::hello() const {
  std::lock_guard lock(state_mutex_);
  return encode(make_hello(segment_, config_));
}

Snapshot Session::snapshot() { return build_snapshot().first; }

std::uint64_t Session::segment() const {
  std::lock_guard lock(state_mutex_);
  return segment_;
}

RunConfig Session::config() const {
  std::lock_guard lock(state_mutex_);
  return config_;
}

std::optional<std::string> Session::last_error() const {
  std::lock_guard lock(state_mutex_);
  return last_error_;
}

void Session::control_loop() {
  const auto tick = std::chrono::duration<double>(std::min(0.02, config_.snapshot_period / 4));
  for (;;) {
    std::optional<Task> task;
    {
      std::unique_lock lock(queue_mutex_);
      queue_cv_.wait_for(lock, tick, [&] { return !queue_.empty() || stopping_; });
      if (stopping_) break;
      if (!queue_.empty()) {
        task = std::move(queue_.front());
        queue_.pop_front();
      }
    }
    if (task) {
      std::optional<std::string> reason;
      if (!task->frame.command) {
        reason = task->frame.reason.empty() ? "malformed_command" : task->frame.reason;
      } else {
        try {
          reason = execute(*task->frame.command);
        } catch (const std::exception& e) {
          reason = std::string("internal_error: ") + e.what();
        }
      }
      if (task->reply) {
        task->reply(reason ? encode(Reject{task->frame.id, *reason}) : encode(Ack{task->frame.id}));
      }
    }

    // An edit that raced with convergence never reached the workers; carry
    // the field into a new segment so it takes effect.
    std::lock_guard lock(state_mutex_);
    if (engine_ && engine_->finished() && engine_->applied_params_version() < engine_->params_version()) {
      begin_segment(engine_->pause_and_snapshot(false).field);
    }
  }
}

void Session::broadcast_loop() {
  const auto period = std::chrono::duration<double>(config_.snapshot_period);
  auto next = std::chrono::steady_clock::now();
  for (;;) {
    auto [snap, frame] = build_snapshot();
    {
      std::lock_guard lock(sink_mutex_);
      if (sink_) sink_(frame, snap);
    }
    next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
    std::unique_lock lock(run_mutex_);
    if (run_cv_.wait_until(lock, next, [&] { return stopping_; })) break;
  }
}

std::optional<std::string> Session::execute(const SteeringCommand& command) {
  std::lock_guard lock(state_mutex_);
  if (auto reason = validate_command(command, config_.width, config_.height)) return reason;

  // Parameter edits go straight to a live engine; a finished one is
  // continued in a new segment from its final field.
  auto edit = [&](auto&& on_engine) {
    if (engine_->finished()) {
      begin_segment(engine_->pause_and_snapshot(false).field);
    } else {
      on_engine(*engine_);
    }
  };

  return std::visit(
      overloaded{
          [&](const SetBoundary& c) -> std::optional<std::string> {
            config_.boundary[c.edge] = c.value;
            edit([&](Engine& e) { e.set_boundary(c.edge, c.value); });
            return std::nullopt;
          },
          [&](const SetSource& c) -> std::optional<std::string> {
            const auto x = static_cast<std::size_t>(c.x);
            const auto y = static_cast<std::size_t>(c.y);
            config_.sources.set(x, y, c.value);
            edit([&](Engine& e) { e.set_source(x, y, c.value); });
            return std::nullopt;
          },
          [&](const ClearSource& c) -> std::optional<std::string> {
            const auto x = static_cast<std::size_t>(c.x);
            const auto y = static_cast<std::size_t>(c.y);
            if (!config_.sources.clear(x, y)) return std::string("no_source");
            edit([&](Engine& e) { e.clear_source(x, y); });
            return std::nullopt;
          },
          [&](const SetTolerance& c) -> std::optional<std::string> {
            config_.tolerance = c.value;
            edit([&](Engine& e) { e.set_tolerance(c.value); });
            return std::nullopt;
          },
          [&](const SetMode& c) -> std::optional<std::string> {
            config_.mode = c.mode;
            begin_segment(engine_->pause_and_snapshot(false).field);
            return std::nullopt;
          },
          [&](const Pause&) -> std::optional<std::string> {
            if (!paused_) {
              paused_ = true;
              engine_->pause();
            }
            return std::nullopt;
          },
          [&](const Resume&) -> std::optional<std::string> {
            if (paused_) {
              paused_ = false;
              engine_->resume();
            }
            return std::nullopt;
          },
          [&](const Restart& c) -> std::optional<std::string> {
            std::optional<Field2D> field;
            if (c.keep_field) field = engine_->pause_and_snapshot(false).field;
            begin_segment(std::move(field));
            return std::nullopt;
          },
      },
      command);
}

void Session::retire_engine() {
  if (!engine_) return;
  engine_->request_stop();
  try {
    engine_->wait();
  } catch (const std::exception& e) {
    last_error_ = e.what();
    std::cerr << "segment " << segment_ << " aborted: " << e.what() << "\n";
  }
  engine_.reset();
}

void Session::begin_segment(std::optional<Field2D> field) {
  const bool first = !engine_;
  retire_engine();
  if (!first) ++segment_;
  if (field) {
    apply_boundary(*field, config_.boundary);
    apply_sources(*field, config_.sources);
  }
  engine_ = std::make_unique<Engine>(config_, std::move(field));
  if (paused_) engine_->pause();
  engine_->start();
}

std::pair<Snapshot, std::string> Session::build_snapshot() {
  Snapshot s;
  Field2D field;
  {
    std::lock_guard lock(state_mutex_);
    s.segment = segment_;
    s.mode = config_.mode;
    s.paused = paused_;
    s.boundary = config_.boundary;
    s.tolerance = config_.tolerance;
    s.source_count = config_.sources.cells().size();
    s.grid_width = config_.width;
    s.grid_height = config_.height;
    if (engine_) {
      auto live = engine_->live_snapshot();
      field = std::move(live.field);
      s.iterations = std::move(live.iterations);
      s.residual = live.residual;
      s.residual_verified = live.residual_verified;
      s.live = !live.consistent;
      s.finished = live.finished;
      s.phase = engine_->phase();
      if (s.finished && !last_error_) {
        try {
          engine_->wait();
        } catch (const std::exception& e) {
          last_error_ = e.what();
        }
      }
    }
  }
  s.timestamp = steady_seconds() - epoch_;
  std::lock_guard lock(sink_mutex_);
  s.sequence = sequence_++;
  if (field.empty()) field = Field2D(config_.width, config_.height);
  auto frame = encode_within_budget(s, field, min_factor_, config_.snapshot_budget);
  // Keep the factor steady between frames instead of searching each time.
  min_factor_ = std::max(min_factor_, s.tile.factor);
  return {std::move(s), std::move(frame)};
}

}  // namespace asyncsteer
