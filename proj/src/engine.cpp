#include "asyncsteer/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>
#include <string>

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

namespace {

using Seconds = std::chrono::duration<double>;

void sleep_seconds(double s) {
  if (s > 0.0) std::this_thread::sleep_for(Seconds(s));
}

/// Thrown out of a halo wait when the barrier has been torn down.
struct Interrupted {};

RunConfig validated(RunConfig config) {
  config.validate();
  return config;
}

}  // namespace

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::Converged: return "converged";
    case RunStatus::NotConverged: return "not_converged";
    case RunStatus::Completed: return "completed";
    case RunStatus::Stopped: return "stopped";
  }
  return "stopped";
}

struct Engine::Worker {
  Worker(std::size_t id, RowRange rows, const Field2D& init) : sub(id, rows, init) {
    stats.worker = id;
    published.resize(rows.size() * init.width());
  }

  std::size_t id() const noexcept { return sub.owner_id(); }

  Subdomain sub;
  SourceTerm sources;
  BoundaryValues boundary;
  std::uint64_t params_version = 0;
  double delay = 0.0;
  double sweep_cost = 0.0;  // virtual clock only

  std::optional<std::size_t> out_north, out_south, in_north, in_south;

  WorkerStats stats;
  double pending_residual = 0.0;

  std::mutex slot_mutex;
  double slot_residual = std::numeric_limits<double>::infinity();
  std::uint64_t slot_iteration = 0;
  bool slot_fresh = false;
  bool slot_seen = false;

  mutable std::mutex publish_mutex;
  std::vector<double> published;
  std::uint64_t published_iteration = 0;
  double last_publish = -std::numeric_limits<double>::infinity();

  // Virtual-clock bookkeeping.
  double barrier_arrival = 0.0;
  double ready_time = 0.0;
  bool done = false;
};

/// Counting barrier whose completion step runs in the last arriving thread
/// while every other participant is blocked. abort() releases all waiters.
class Engine::Barrier {
 public:
  Barrier(std::size_t participants, std::function<void()> completion)
      : participants_(participants), completion_(std::move(completion)) {}

  /// Returns false if the barrier was aborted before this generation completed.
  bool arrive_and_wait() {
    std::unique_lock lock(mutex_);
    if (aborted_) return false;
    const auto generation = generation_;
    if (++arrived_ == participants_) {
      try {
        completion_();
      } catch (...) {
        aborted_ = true;
        cv_.notify_all();
        throw;
      }
      arrived_ = 0;
      ++generation_;
      cv_.notify_all();
      return true;
    }
    cv_.wait(lock, [&] { return generation_ != generation || aborted_; });
    return generation_ != generation;
  }

  void abort() {
    std::lock_guard lock(mutex_);
    aborted_ = true;
    cv_.notify_all();
  }

  bool aborted() const {
    std::lock_guard lock(mutex_);
    return aborted_;
  }

 private:
  std::size_t participants_;
  std::function<void()> completion_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::size_t arrived_ = 0;
  std::uint64_t generation_ = 0;
  bool aborted_ = false;
};

Engine::Engine(RunConfig config, std::optional<Field2D> initial)
    : config_(validated(std::move(config))),
      initial_(initial ? std::move(*initial) : config_.initial_field()),
      monitor_(config_.workers, config_.tolerance) {
  if (initial_.width() != config_.width || initial_.height() != config_.height) {
    throw SizingError("initial field shape does not match the configured grid");
  }
  apply_boundary(initial_, config_.boundary);
  apply_sources(initial_, config_.sources);

  params_.boundary = config_.boundary;
  params_.sources = config_.sources;
  params_.tolerance = config_.tolerance;
  sync_params_ = params_;

  if (config_.clock == ClockMode::Virtual) {
    clock_ = std::make_shared<VirtualClock>();
  } else {
    clock_ = std::make_shared<WallClock>();
  }
  network_ = std::make_unique<SimNetwork>(clock_);

  const auto ranges = config_.ranges();
  const double interior_width = static_cast<double>(config_.width - 2);
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    auto w = std::make_unique<Worker>(i, ranges[i], initial_);
    w->sources = params_.sources;
    w->boundary = params_.boundary;
    w->delay = config_.delay_for(i);
    w->sweep_cost = static_cast<double>(ranges[i].size()) * interior_width * config_.virtual_cell_cost;
    std::ranges::copy(w->sub.local_values().subspan(config_.width, w->published.size()), w->published.begin());
    workers_.push_back(std::move(w));
  }
  for (std::size_t i = 0; i < workers_.size(); ++i) {
    if (i > 0) workers_[i]->out_north = network_->add_link(config_.link);
    if (i + 1 < workers_.size()) workers_[i]->out_south = network_->add_link(config_.link);
  }
  for (std::size_t i = 0; i < workers_.size(); ++i) {
    if (i > 0) workers_[i]->in_north = workers_[i - 1]->out_south;
    if (i + 1 < workers_.size()) workers_[i]->in_south = workers_[i + 1]->out_north;
  }
  sync_residuals_.assign(workers_.size(), 0.0);
}

Engine::~Engine() {
  if (started_ && !joined_) {
    request_stop();
    {
      std::lock_guard lock(control_mutex_);
      pause_depth_ = 0;
    }
    if (barrier_) barrier_->abort();
    control_cv_.notify_all();
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
  }
}

void Engine::set_sync_observer(SyncObserver observer) {
  if (started_) throw std::logic_error("set the sync observer before start()");
  sync_observer_ = std::move(observer);
}

void Engine::start() {
  if (started_) throw std::logic_error("engine already started");
  started_ = true;
  start_time_ = now();
  record_phase(ConvergencePhase::Running, std::nullopt);

  if (config_.clock == ClockMode::Virtual) {
    threads_.emplace_back([this] { run_virtual(); });
    return;
  }
  if (config_.mode == IterationMode::Sync) {
    barrier_ = std::make_unique<Barrier>(workers_.size(), [this] { sync_barrier_complete(); });
    for (auto& w : workers_) threads_.emplace_back([this, &w] { run_sync_worker(*w); });
  } else {
    for (auto& w : workers_) threads_.emplace_back([this, &w] { run_async_worker(*w); });
    if (!config_.forced_iterations) threads_.emplace_back([this] { run_monitor(); });
  }
}

RunResult Engine::wait() {
  if (!started_) throw std::logic_error("engine not started");
  if (!joined_) {
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
    joined_ = true;
    finished_ = true;
  }
  if (error_) std::rethrow_exception(error_);
  return collect();
}

void Engine::request_stop() {
  external_stop_ = true;
  {
    std::lock_guard lock(control_mutex_);
    stop_ = true;
  }
  control_cv_.notify_all();
}

void Engine::pause() {
  std::unique_lock lock(control_mutex_);
  ++pause_depth_;
  if (!started_) return;
  control_cv_.wait(lock, [&] { return parked_ + exited_ == workers_.size() || error_; });
}

void Engine::resume() {
  {
    std::lock_guard lock(control_mutex_);
    if (pause_depth_ > 0) --pause_depth_;
  }
  control_cv_.notify_all();
}

EngineSnapshot Engine::pause_and_snapshot(bool resume_after) {
  pause();
  EngineSnapshot snap;
  {
    std::lock_guard lock(control_mutex_);
    snap.field = assemble();
    for (const auto& w : workers_) snap.iterations.push_back(w->sub.iteration());
    snap.finished = exited_ == workers_.size();
  }
  snap.consistent = true;
  const auto live = live_snapshot();
  snap.residual = live.residual;
  snap.residual_verified = live.residual_verified;
  if (resume_after) resume();
  return snap;
}

EngineSnapshot Engine::live_snapshot() const {
  EngineSnapshot snap;
  snap.field = Field2D(config_.width, config_.height);
  {
    std::lock_guard lock(params_mutex_);
    apply_boundary(snap.field, params_.boundary);
  }
  for (const auto& w : workers_) {
    std::lock_guard lock(w->publish_mutex);
    const auto rows = w->sub.rows();
    std::ranges::copy(w->published, snap.field.row(rows.begin).begin());
    snap.iterations.push_back(w->published_iteration);
  }
  snap.finished = finished_.load();
  snap.consistent = snap.finished || config_.mode == IterationMode::Sync;

  if (config_.mode == IterationMode::Sync) {
    const double g = last_sync_global_.load();
    if (g >= 0.0) {
      snap.residual = g;
      snap.residual_verified = true;
    }
  } else {
    {
      std::lock_guard lock(monitor_mutex_);
      if (verified_residual_ && converged_field_) {
        snap.residual = verified_residual_;
        snap.residual_verified = true;
        return snap;
      }
    }
    double sum = 0.0;
    bool all_seen = true;
    for (const auto& w : workers_) {
      std::lock_guard lock(w->slot_mutex);
      all_seen = all_seen && w->slot_seen;
      sum += w->slot_residual * w->slot_residual;
    }
    if (all_seen) snap.residual = std::sqrt(sum);
  }
  return snap;
}

void Engine::set_boundary(Edge edge, double value) {
  std::lock_guard lock(params_mutex_);
  params_.boundary[edge] = value;
  params_.version = ++params_version_;
}

void Engine::set_source(std::size_t x, std::size_t y, double value) {
  if (x < 1 || y < 1 || x + 1 >= config_.width || y + 1 >= config_.height) {
    throw std::out_of_range("source cell must lie strictly inside the boundary ring");
  }
  std::lock_guard lock(params_mutex_);
  params_.sources.set(x, y, value);
  params_.version = ++params_version_;
}

bool Engine::clear_source(std::size_t x, std::size_t y) {
  std::lock_guard lock(params_mutex_);
  const bool removed = params_.sources.clear(x, y);
  if (removed) params_.version = ++params_version_;
  return removed;
}

void Engine::set_tolerance(double tolerance) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be > 0");
  {
    std::lock_guard lock(params_mutex_);
    params_.tolerance = tolerance;
    params_.version = ++params_version_;
  }
  std::lock_guard lock(monitor_mutex_);
  if (monitor_.phase != ConvergencePhase::Converged) monitor_.tolerance = tolerance;
}

BoundaryValues Engine::boundary() const {
  std::lock_guard lock(params_mutex_);
  return params_.boundary;
}

SourceTerm Engine::sources() const {
  std::lock_guard lock(params_mutex_);
  return params_.sources;
}

double Engine::tolerance() const {
  std::lock_guard lock(params_mutex_);
  return params_.tolerance;
}

std::uint64_t Engine::applied_params_version() const {
  std::lock_guard lock(control_mutex_);
  std::uint64_t v = std::numeric_limits<std::uint64_t>::max();
  for (const auto& w : workers_) v = std::min(v, w->params_version);
  return v;
}

ConvergencePhase Engine::phase() const {
  std::lock_guard lock(monitor_mutex_);
  if (config_.mode == IterationMode::Sync) {
    return status_ == RunStatus::Converged ? ConvergencePhase::Converged : ConvergencePhase::Running;
  }
  return monitor_.phase;
}

// ---------------------------------------------------------------------------
// Shared worker steps

void Engine::refresh_params(Worker& w, const Params& source) {
  if (w.params_version == source.version) return;
  w.sources = source.sources;
  w.boundary = source.boundary;
  w.params_version = source.version;
  w.sub.apply_boundary(w.boundary);
}

bool Engine::receive_async(Worker& w) {
  // Drain everything deliverable; FIFO links mean the last one is the newest.
  bool any = false;
  auto drain = [&](std::optional<std::size_t> link, bool into_north) {
    if (!link) return;
    while (auto msg = network_->poll(*link)) {
      any = true;
      if (!msg->intact()) throw std::logic_error("torn halo message");
      if (into_north) {
        w.sub.set_north_halo(msg->strip, msg->sender_iteration);
      } else {
        w.sub.set_south_halo(msg->strip, msg->sender_iteration);
      }
    }
  };
  drain(w.in_north, true);
  drain(w.in_south, false);
  return any;
}

void Engine::receive_sync(Worker& w, std::uint64_t tag) {
  const double t0 = now();
  auto await = [&](std::optional<std::size_t> link, bool into_north) {
    if (!link) return;
    const double deadline = t0 + config_.stall_timeout;
    for (;;) {
      const std::uint64_t have = into_north ? w.sub.north_tag() : w.sub.south_tag();
      if (have >= tag) return;
      if (auto msg = network_->poll(*link)) {
        if (!msg->intact()) throw std::logic_error("torn halo message");
        if (into_north) {
          w.sub.set_north_halo(msg->strip, msg->sender_iteration);
        } else {
          w.sub.set_south_halo(msg->strip, msg->sender_iteration);
        }
        continue;
      }
      if (barrier_ && barrier_->aborted()) throw Interrupted{};
      const double t = now();
      const auto next = network_->next_delivery_time(*link);
      if (!next && t >= deadline) {
        const std::size_t from = into_north ? w.id() - 1 : w.id() + 1;
        throw StallError("sync stall: worker " + std::to_string(w.id()) + " waited " +
                         std::to_string(config_.stall_timeout) + " s for the halo of worker " +
                         std::to_string(from) + " from iteration " + std::to_string(tag) +
                         "; the message was lost or never sent");
      }
      if (next) {
        sleep_seconds(std::min(*next - t, config_.stall_timeout));
      } else {
        sleep_seconds(std::min(1e-3, deadline - t));
      }
    }
  };
  await(w.in_north, true);
  await(w.in_south, false);
  const double waited = now() - t0;
  w.stats.halo_wait_time += waited;
  w.stats.wait_time += waited;
}

void Engine::send_halos(Worker& w) {
  const auto k = w.sub.iteration();
  if (w.out_north) {
    auto row = w.sub.first_owned_row();
    network_->send(*w.out_north, HaloMessage::make(w.id(), HaloDirection::North, k, std::vector<double>(row.begin(), row.end())));
  }
  if (w.out_south) {
    auto row = w.sub.last_owned_row();
    network_->send(*w.out_south, HaloMessage::make(w.id(), HaloDirection::South, k, std::vector<double>(row.begin(), row.end())));
  }
}

void Engine::publish(Worker& w, bool force) {
  const double t = now();
  if (!force && t - w.last_publish < config_.snapshot_period / 2) return;
  w.last_publish = t;
  std::lock_guard lock(w.publish_mutex);
  const auto owned = w.sub.local_values().subspan(config_.width, w.published.size());
  std::ranges::copy(owned, w.published.begin());
  w.published_iteration = w.sub.iteration();
}

void Engine::report(Worker& w, double residual) {
  std::lock_guard lock(w.slot_mutex);
  w.slot_residual = residual;
  w.slot_iteration = w.sub.iteration();
  w.slot_fresh = true;
  w.slot_seen = true;
}

void Engine::park(Worker& w) {
  publish(w, true);
  std::unique_lock lock(control_mutex_);
  if (pause_depth_ == 0) return;
  ++parked_;
  control_cv_.notify_all();
  control_cv_.wait(lock, [&] { return pause_depth_ == 0 || stop_; });
  --parked_;
}

void Engine::fail(std::exception_ptr error) {
  {
    std::lock_guard lock(control_mutex_);
    if (!error_) error_ = error;
    stop_ = true;
  }
  if (barrier_) barrier_->abort();
  control_cv_.notify_all();
}

void Engine::worker_exited(Worker& w, double started) {
  w.stats.wall_time = now() - started;
  w.stats.iterations = w.sub.iteration();
  publish(w, true);
  std::lock_guard lock(control_mutex_);
  ++exited_;
  if (exited_ == workers_.size()) {
    end_time_ = now();
    finished_ = true;
  }
  control_cv_.notify_all();
}

bool Engine::forced_done(const Worker& w) const {
  const auto k = w.sub.iteration();
  return config_.forced_iterations ? k >= *config_.forced_iterations : k >= config_.max_iterations;
}

void Engine::record_phase(ConvergencePhase phase, std::optional<double> residual) {
  phase_trace_.push_back({now() - start_time_, phase, residual});
}

Field2D Engine::assemble() const {
  Field2D field(config_.width, config_.height);
  {
    std::lock_guard lock(params_mutex_);
    apply_boundary(field, params_.boundary);
  }
  for (const auto& w : workers_) w->sub.write_into(field);
  return field;
}

RunResult Engine::collect() {
  RunResult result;
  result.mode = config_.mode;
  result.field = converged_field_ ? *converged_field_ : assemble();
  for (const auto& w : workers_) {
    auto stats = w->stats;
    stats.iterations = w->sub.iteration();
    result.stats.push_back(stats);
    result.iterations.push_back(stats.iterations);
    result.halo_tags.push_back({w->sub.north_tag(), w->sub.south_tag()});
  }
  result.verified_residual = verified_residual_;
  result.convergence_trace = phase_trace_;
  result.elapsed = end_time_ - start_time_;

  const bool all_forced = config_.forced_iterations &&
                          std::ranges::all_of(result.iterations, [&](auto k) { return k >= *config_.forced_iterations; });
  if (status_ == RunStatus::Converged) {
    result.status = RunStatus::Converged;
  } else if (all_forced) {
    result.status = RunStatus::Completed;
  } else if (external_stop_) {
    result.status = RunStatus::Stopped;
  } else {
    result.status = RunStatus::NotConverged;
  }
  return result;
}

// ---------------------------------------------------------------------------
// SYNC, wall clock

bool Engine::sync_barrier_complete() {
  ++sync_iteration_;
  const double global = global_residual(sync_residuals_);
  last_sync_global_ = global;

  if (sync_observer_) sync_observer_(sync_iteration_, assemble());

  double tolerance = 0.0;
  bool edit_pending = false;
  {
    std::lock_guard lock(params_mutex_);
    tolerance = params_.tolerance;
    edit_pending = sync_params_.version != params_.version;
    if (edit_pending) sync_params_ = params_;
  }

  bool done = false;
  if (config_.forced_iterations) {
    done = sync_iteration_ >= *config_.forced_iterations;
  } else if (global <= tolerance && !edit_pending) {
    std::lock_guard lock(monitor_mutex_);
    status_ = RunStatus::Converged;
    verified_residual_ = global;
    record_phase(ConvergencePhase::Converged, global);
    done = true;
  } else if (sync_iteration_ >= config_.max_iterations) {
    done = true;
  }
  if (stop_) done = true;

  sync_stop_ = done;
  sync_pause_ = !done && pause_depth_ > 0;
  // Every worker sits in the barrier, so all rows belong to one iteration;
  // publish all of them or none.
  const double t = now();
  if (done || sync_pause_ || t - last_sync_publish_ >= config_.snapshot_period / 2) {
    last_sync_publish_ = t;
    for (auto& w : workers_) publish(*w, true);
  }
  return done;
}

void Engine::run_sync_worker(Worker& w) {
  const double started = now();
  try {
    for (;;) {
      const auto k = w.sub.iteration();
      if (k > 0) receive_sync(w, k);
      refresh_params(w, sync_params_);
      const double r = jacobi_sweep(w.sub, w.sources);

      const double c0 = now();
      if (w.delay > 0.0) std::this_thread::sleep_until(std::chrono::steady_clock::now() + Seconds(w.delay));
      send_halos(w);
      w.stats.comm_time += now() - c0;
      report(w, r);
      sync_residuals_[w.id()] = r;

      const double b0 = now();
      const bool ok = barrier_->arrive_and_wait();
      w.stats.wait_time += now() - b0;
      if (!ok || sync_stop_) break;
      if (sync_pause_) park(w);
    }
  } catch (const Interrupted&) {
  } catch (...) {
    fail(std::current_exception());
  }
  worker_exited(w, started);
}

// ---------------------------------------------------------------------------
// ASYNC, wall clock

void Engine::run_async_worker(Worker& w) {
  const double started = now();
  try {
    while (!stop_) {
      if (pause_depth_ > 0) {
        park(w);
        continue;
      }
      if (w.params_version != params_version_.load()) {
        std::lock_guard lock(params_mutex_);
        refresh_params(w, params_);
      }
      const bool fresh = receive_async(w);
      const double r = jacobi_sweep(w.sub, w.sources);
      // Nothing new in and nothing changed: the next sweep would repeat this one.
      if (!fresh && r == 0.0) std::this_thread::yield();

      const double c0 = now();
      if (w.delay > 0.0) std::this_thread::sleep_until(std::chrono::steady_clock::now() + Seconds(w.delay));
      send_halos(w);
      w.stats.comm_time += now() - c0;
      report(w, r);
      publish(w, false);
      if (forced_done(w)) break;
    }
  } catch (...) {
    fail(std::current_exception());
  }
  worker_exited(w, started);
}

void Engine::run_monitor() {
  std::vector<ResidualReport> reports;
  try {
    for (;;) {
      {
        std::unique_lock lock(control_mutex_);
        control_cv_.wait_for(lock, Seconds(config_.monitor_interval),
                             [&] { return exited_ == workers_.size() || stop_.load(); });
        if (exited_ == workers_.size() || stop_) break;
      }
      reports.clear();
      for (auto& w : workers_) {
        std::lock_guard lock(w->slot_mutex);
        if (w->slot_fresh) {
          reports.push_back({w->id(), w->slot_residual, w->slot_iteration});
          w->slot_fresh = false;
        }
      }
      ConvergencePhase phase;
      {
        std::lock_guard lock(monitor_mutex_);
        const auto before = monitor_.phase;
        monitor_ = detect_convergence(std::move(monitor_), reports);
        if (monitor_.phase == ConvergencePhase::Tentative) {
          record_phase(ConvergencePhase::Tentative, std::nullopt);
          monitor_ = detect_convergence(std::move(monitor_), {});
        }
        if (monitor_.phase != before && monitor_.phase == ConvergencePhase::Running) {
          record_phase(ConvergencePhase::Running, std::nullopt);
        }
        phase = monitor_.phase;
      }
      if (phase == ConvergencePhase::Verifying && verify_async()) break;
    }
  } catch (...) {
    fail(std::current_exception());
  }
}

bool Engine::verify_async() {
  pause();
  bool converged = false;
  try {
    converged = verify_frozen();
  } catch (...) {
    resume();
    throw;
  }
  if (converged) {
    std::lock_guard lock(control_mutex_);
    stop_ = true;
  }
  resume();
  return converged;
}

bool Engine::verify_frozen() {
  // Caller guarantees no worker is mid-sweep.
  const Field2D frozen = assemble();
  Params params;
  {
    std::lock_guard lock(params_mutex_);
    params = params_;
  }
  const double frozen_residual = frozen_field_residual(frozen, params.sources);

  // A worker that has not swept with the latest edit yet cannot be converged.
  const bool edit_pending =
      std::ranges::any_of(workers_, [&](const auto& w) { return w->params_version != params.version; });
  std::vector<ResidualReport> fresh;
  fresh.reserve(workers_.size());
  for (const auto& w : workers_) {
    if (edit_pending) {
      fresh.push_back({w->id(), std::numeric_limits<double>::infinity(), w->sub.iteration()});
      continue;
    }
    Subdomain probe = w->sub;
    probe.load_from(frozen);
    fresh.push_back({w->id(), jacobi_sweep(probe, params.sources), w->sub.iteration()});
  }

  std::lock_guard lock(monitor_mutex_);
  record_phase(ConvergencePhase::Verifying, frozen_residual);
  monitor_.frozen_residual = frozen_residual;
  monitor_ = detect_convergence(std::move(monitor_), fresh);
  if (monitor_.phase == ConvergencePhase::Converged) {
    status_ = RunStatus::Converged;
    verified_residual_ = monitor_.verified_residual;
    converged_field_ = frozen;
    record_phase(ConvergencePhase::Converged, verified_residual_);
    return true;
  }
  record_phase(ConvergencePhase::Running, monitor_.verified_residual);
  return false;
}

// ---------------------------------------------------------------------------
// Virtual clock: deterministic discrete-event simulation on one thread.

namespace {
struct Event {
  double time;
  std::uint64_t sequence;
  std::size_t worker;
  bool start;  // sweep start, otherwise sweep end
};
struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    return a.time != b.time ? a.time > b.time : a.sequence > b.sequence;
  }
};
using EventQueue = std::priority_queue<Event, std::vector<Event>, EventLater>;
}  // namespace

void Engine::run_virtual() {
  try {
    if (config_.mode == IterationMode::Sync) {
      run_virtual_sync();
    } else {
      run_virtual_async();
    }
  } catch (...) {
    fail(std::current_exception());
  }
  std::lock_guard lock(control_mutex_);
  exited_ = workers_.size();
  end_time_ = now();
  finished_ = true;
  control_cv_.notify_all();
}

void Engine::run_virtual_async() {
  auto& clock = static_cast<VirtualClock&>(*clock_);
  EventQueue events;
  std::uint64_t seq = 0;
  for (auto& w : workers_) events.push({0.0, seq++, w->id(), true});
  const bool monitoring = !config_.forced_iterations;

  while (!events.empty() && !stop_) {
    if (pause_depth_ > 0) {
      std::unique_lock lock(control_mutex_);
      parked_ = workers_.size();
      control_cv_.notify_all();
      control_cv_.wait(lock, [&] { return pause_depth_ == 0 || stop_; });
      parked_ = 0;
      continue;
    }
    const Event ev = events.top();
    events.pop();
    clock.set(ev.time);
    Worker& w = *workers_[ev.worker];
    if (ev.start) {
      if (w.params_version != params_version_.load()) {
        std::lock_guard lock(params_mutex_);
        refresh_params(w, params_);
      }
      receive_async(w);
      w.pending_residual = jacobi_sweep(w.sub, w.sources);
      w.stats.comm_time += w.delay;
      events.push({ev.time + w.sweep_cost + w.delay, seq++, w.id(), false});
      continue;
    }

    send_halos(w);
    report(w, w.pending_residual);
    publish(w, true);
    if (monitoring) {
      ConvergencePhase phase;
      {
        std::lock_guard lock(monitor_mutex_);
        std::vector<ResidualReport> one{{w.id(), w.pending_residual, w.sub.iteration()}};
        monitor_ = detect_convergence(std::move(monitor_), one);
        if (monitor_.phase == ConvergencePhase::Tentative) {
          record_phase(ConvergencePhase::Tentative, std::nullopt);
          monitor_ = detect_convergence(std::move(monitor_), {});
        }
        phase = monitor_.phase;
      }
      if (phase == ConvergencePhase::Verifying && verify_frozen()) {
        for (auto& other : workers_) {
          if (!other->done) other->stats.wall_time = ev.time;
        }
        return;
      }
    }
    if (forced_done(w)) {
      w.done = true;
      w.stats.wall_time = ev.time;
    } else {
      events.push({ev.time, seq++, w.id(), true});
    }
  }
  for (auto& w : workers_) {
    if (!w->done) w->stats.wall_time = clock.now();
  }
}

void Engine::run_virtual_sync() {
  auto& clock = static_cast<VirtualClock&>(*clock_);
  EventQueue events;
  std::uint64_t seq = 0;
  for (auto& w : workers_) events.push({0.0, seq++, w->id(), true});
  std::size_t arrived = 0;

  while (!events.empty()) {
    const Event ev = events.top();
    events.pop();
    clock.set(ev.time);
    Worker& w = *workers_[ev.worker];

    if (ev.start) {
      const auto k = w.sub.iteration();
      if (k > 0) {
        // Install whatever has arrived; if a needed halo is still in flight,
        // come back when it lands.
        std::optional<double> retry;
        bool stalled = false;
        std::size_t stalled_from = 0;
        auto take = [&](std::optional<std::size_t> link, bool into_north) {
          if (!link) return;
          while ((into_north ? w.sub.north_tag() : w.sub.south_tag()) < k) {
            if (auto msg = network_->poll(*link)) {
              if (into_north) {
                w.sub.set_north_halo(msg->strip, msg->sender_iteration);
              } else {
                w.sub.set_south_halo(msg->strip, msg->sender_iteration);
              }
              continue;
            }
            if (auto next = network_->next_delivery_time(*link)) {
              retry = std::max(retry.value_or(ev.time), *next);
            } else {
              stalled = true;
              stalled_from = into_north ? w.id() - 1 : w.id() + 1;
            }
            return;
          }
        };
        take(w.in_north, true);
        take(w.in_south, false);
        if (stalled) {
          throw StallError("sync stall: worker " + std::to_string(w.id()) + " can never receive the halo of worker " +
                           std::to_string(stalled_from) + " from iteration " + std::to_string(k) +
                           "; the message was lost");
        }
        if (retry) {
          w.stats.halo_wait_time += *retry - ev.time;
          w.stats.wait_time += *retry - ev.time;
          events.push({*retry, seq++, w.id(), true});
          continue;
        }
      }
      refresh_params(w, sync_params_);
      w.pending_residual = jacobi_sweep(w.sub, w.sources);
      w.stats.comm_time += w.delay;
      events.push({ev.time + w.sweep_cost + w.delay, seq++, w.id(), false});
      continue;
    }

    send_halos(w);
    report(w, w.pending_residual);
    sync_residuals_[w.id()] = w.pending_residual;
    w.barrier_arrival = ev.time;
    if (++arrived < workers_.size()) continue;

    arrived = 0;
    const bool done = sync_barrier_complete();
    for (auto& other : workers_) other->stats.wait_time += ev.time - other->barrier_arrival;
    if (done) {
      for (auto& other : workers_) other->stats.wall_time = ev.time;
      return;
    }
    for (auto& other : workers_) events.push({ev.time, seq++, other->id(), true});
  }
}

// ---------------------------------------------------------------------------

RunResult run_sync(RunConfig config, Engine::SyncObserver observer) {
  config.mode = IterationMode::Sync;
  Engine engine(std::move(config));
  if (observer) engine.set_sync_observer(std::move(observer));
  engine.start();
  return engine.wait();
}

RunResult run_async(RunConfig config) {
  config.mode = IterationMode::Async;
  Engine engine(std::move(config));
  engine.start();
  return engine.wait();
}

RunResult run(const RunConfig& config) {
  return config.mode == IterationMode::Sync ? run_sync(config) : run_async(config);
}

}  // namespace asyncsteer
