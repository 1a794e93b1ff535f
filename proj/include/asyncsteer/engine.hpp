#pragma once

#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "asyncsteer/config.hpp"
#include "asyncsteer/convergence.hpp"
#include "asyncsteer/field.hpp"
#include "asyncsteer/transport.hpp"

namespace asyncsteer {

/// Per-worker timing. wait_time covers barrier and halo waits; halo_wait_time
/// is the halo-receive share alone (always zero in ASYNC). comm_time covers
/// injected delays and sends. Virtual-clock runs report virtual seconds.
struct WorkerStats {
  std::size_t worker = 0;
  std::uint64_t iterations = 0;
  double wall_time = 0.0;
  double wait_time = 0.0;
  double halo_wait_time = 0.0;
  double comm_time = 0.0;
};

enum class RunStatus { Converged, NotConverged, Completed, Stopped };

std::string_view to_string(RunStatus status);

struct PhaseChange {
  double time = 0.0;
  ConvergencePhase phase = ConvergencePhase::Running;
  std::optional<double> global_residual;
};

struct RunResult {
  IterationMode mode = IterationMode::Sync;
  RunStatus status = RunStatus::Stopped;
  Field2D field;
  std::vector<WorkerStats> stats;
  std::vector<std::uint64_t> iterations;
  /// Global residual confirmed on a consistent field (sync: last barrier
  /// residual; async: verification pass).
  std::optional<double> verified_residual;
  std::vector<PhaseChange> convergence_trace;
  /// Final {north, south} halo source-iteration tags per worker.
  std::vector<std::array<std::uint64_t, 2>> halo_tags;
  double elapsed = 0.0;

  bool converged() const noexcept { return status == RunStatus::Converged; }
};

struct EngineSnapshot {
  Field2D field;
  std::vector<std::uint64_t> iterations;
  /// False when rows were captured at different sweeps (ASYNC live capture).
  bool consistent = true;
  bool finished = false;
  std::optional<double> residual;
  bool residual_verified = false;
};

/// Drives one run segment: N workers over strips of the grid, in SYNC
/// (barrier + fresh halos each iteration) or ASYNC (latest halos, never
/// blocking) mode. Wall-clock runs use one thread per worker; virtual-clock
/// runs are a deterministic discrete-event simulation on one thread.
class Engine {
 public:
  using SyncObserver = std::function<void(std::uint64_t iteration, const Field2D& field)>;

  explicit Engine(RunConfig config, std::optional<Field2D> initial = std::nullopt);
  ~Engine();

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  const RunConfig& config() const noexcept { return config_; }
  SimNetwork& network() noexcept { return *network_; }

  /// Called at every SYNC barrier with the assembled field. Set before start().
  void set_sync_observer(SyncObserver observer);

  void start();
  /// Blocks until the segment ends. Rethrows StallError / NonFiniteError.
  RunResult wait();
  bool finished() const noexcept { return finished_.load(); }
  void request_stop();

  /// Quiesce every worker at a sweep boundary (SYNC: at a barrier). Nestable.
  void pause();
  void resume();
  bool paused() const noexcept { return pause_depth_.load() > 0; }

  /// Consistent capture: quiesces, assembles, and resumes unless told not to.
  EngineSnapshot pause_and_snapshot(bool resume_after = true);
  /// Capture without quiescing; rows may come from different sweeps in ASYNC.
  EngineSnapshot live_snapshot() const;

  void set_boundary(Edge edge, double value);
  void set_source(std::size_t x, std::size_t y, double value);
  bool clear_source(std::size_t x, std::size_t y);
  void set_tolerance(double tolerance);

  BoundaryValues boundary() const;
  SourceTerm sources() const;
  double tolerance() const;
  ConvergencePhase phase() const;

  /// Bumped by every set_* / clear_source call.
  std::uint64_t params_version() const noexcept { return params_version_.load(); }
  /// Oldest parameter version any worker has swept with. Once finished(), a
  /// value below params_version() means the last edits never took effect.
  std::uint64_t applied_params_version() const;

 private:
  struct Worker;
  struct Params {
    BoundaryValues boundary;
    SourceTerm sources;
    double tolerance = 1e-6;
    std::uint64_t version = 0;
  };

  class Barrier;

  void run_sync_worker(Worker& w);
  void run_async_worker(Worker& w);
  void run_monitor();
  void run_virtual();
  bool sync_barrier_complete();

  void refresh_params(Worker& w, const Params& source);
  bool receive_async(Worker& w);
  void receive_sync(Worker& w, std::uint64_t tag);
  void send_halos(Worker& w);
  void publish(Worker& w, bool force);
  void report(Worker& w, double residual);
  void park(Worker& w);
  void fail(std::exception_ptr error);
  bool verify_async();
  bool verify_frozen();
  void worker_exited(Worker& w, double started);
  void run_virtual_async();
  void run_virtual_sync();

  Field2D assemble() const;
  RunResult collect();
  double now() const { return clock_->now(); }
  bool forced_done(const Worker& w) const;
  void record_phase(ConvergencePhase phase, std::optional<double> residual);

  RunConfig config_;
  Field2D initial_;
  std::shared_ptr<Clock> clock_;
  std::unique_ptr<SimNetwork> network_;
  std::vector<std::unique_ptr<Worker>> workers_;
  SyncObserver sync_observer_;

  mutable std::mutex params_mutex_;
  Params params_;
  std::atomic<std::uint64_t> params_version_{0};

  mutable std::mutex control_mutex_;
  std::condition_variable control_cv_;
  std::atomic<int> pause_depth_{0};
  std::size_t parked_ = 0;
  std::size_t exited_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<bool> finished_{false};
  std::exception_ptr error_;

  // SYNC bookkeeping, touched only inside the barrier completion.
  std::unique_ptr<Barrier> barrier_;
  std::vector<double> sync_residuals_;
  std::uint64_t sync_iteration_ = 0;
  Params sync_params_;
  bool sync_pause_ = false;
  bool sync_stop_ = false;
  std::atomic<double> last_sync_global_{-1.0};
  double last_sync_publish_ = -std::numeric_limits<double>::infinity();

  // ASYNC convergence detection.
  mutable std::mutex monitor_mutex_;
  ConvergenceState monitor_;
  std::vector<PhaseChange> phase_trace_;
  RunStatus status_ = RunStatus::Stopped;
  std::optional<double> verified_residual_;
  std::optional<Field2D> converged_field_;
  std::atomic<bool> external_stop_{false};

  double start_time_ = 0.0;
  double end_time_ = 0.0;
  std::vector<std::thread> threads_;
  bool started_ = false;
  bool joined_ = false;
};

/// Convenience wrappers: build an engine for `config` in the given mode, run
/// it to completion, and return the result.
RunResult run_sync(RunConfig config, Engine::SyncObserver observer = {});
RunResult run_async(RunConfig config);
RunResult run(const RunConfig& config);

}  // namespace asyncsteer
