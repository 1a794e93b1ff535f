#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <limits>
#include <random>
#include <thread>

#include "asyncsteer/engine.hpp"
#include "asyncsteer/errors.hpp"
#include "oracle/sequential_jacobi.hpp"

using namespace asyncsteer;
using namespace std::chrono_literals;

namespace {

RunConfig small(std::size_t w, std::size_t h, std::size_t workers, IterationMode mode) {
  RunConfig c;
  c.width = w;
  c.height = h;
  c.workers = workers;
  c.mode = mode;
  return c;
}

double max_diff(const Field2D& f, const oracle::Grid& g) { return max_abs_difference(f, oracle::to_field(g)); }

}  // namespace

TEST(Sync, SingleCellConvergesInTwoSweeps) {
  auto c = small(3, 3, 1, IterationMode::Sync);
  c.boundary.north = 100;
  c.tolerance = 1e-9;
  const auto r = run_sync(c);
  ASSERT_TRUE(r.converged());
  EXPECT_EQ(r.field.at(1, 1), 25.0);
  EXPECT_LE(r.iterations[0], 2u);
  ASSERT_TRUE(r.verified_residual);
  EXPECT_EQ(*r.verified_residual, 0.0);
}

TEST(Sync, SnapshotAfterConvergence) {
  auto c = small(3, 3, 1, IterationMode::Sync);
  c.boundary.north = 100;
  c.tolerance = 1e-9;
  Engine e(c);
  e.start();
  e.wait();
  const auto snap = e.pause_and_snapshot();
  EXPECT_EQ(snap.field.at(1, 1), 25.0);
  EXPECT_TRUE(snap.finished);
  EXPECT_EQ(e.phase(), ConvergencePhase::Converged);
}

TEST(Sync, LockstepBitIdenticalToSequentialOracle) {
  auto c = small(4, 4, 2, IterationMode::Sync);
  c.boundary.west = 1;
  c.tolerance = 1e-12;
  auto g = oracle::make_grid(4, 4, 0, 0, 0, 1);
  std::uint64_t seen = 0;
  bool identical = true;
  const auto r = run_sync(c, [&](std::uint64_t k, const Field2D& f) {
    oracle::sweep(g);
    identical = identical && k == seen + 1 && f.bit_equal(oracle::to_field(g));
    seen = k;
  });
  EXPECT_TRUE(identical);
  ASSERT_TRUE(r.converged());
  EXPECT_TRUE(r.field.bit_equal(oracle::to_field(g)));
  EXPECT_EQ(seen, r.iterations[0]);
  EXPECT_EQ(r.iterations[0], r.iterations[1]);
  // Perfect freshness: the last sweep used halos from the one before it.
  EXPECT_EQ(r.halo_tags[0][1], seen - 1);
  EXPECT_EQ(r.halo_tags[1][0], seen - 1);
}

TEST(Sync, RandomGridsAnyPartitionMatchOracleEverySweep) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> value(-50, 150);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t w = std::uniform_int_distribution<std::size_t>(5, 12)(rng);
    const std::size_t h = std::uniform_int_distribution<std::size_t>(5, 12)(rng);
    auto c = small(w, h, std::uniform_int_distribution<std::size_t>(1, 4)(rng), IterationMode::Sync);
    c.boundary = {value(rng), value(rng), value(rng), value(rng)};
    c.sources.set(w / 2, h / 2, value(rng));
    c.forced_iterations = 40;
    auto g = oracle::make_grid(w, h, c.boundary.north, c.boundary.south, c.boundary.east, c.boundary.west);
    const auto pins = oracle::to_pins(c.sources);
    oracle::pin(g, pins);
    bool identical = true;
    const auto r = run_sync(c, [&](std::uint64_t, const Field2D& f) {
      oracle::sweep(g, pins);
      identical = identical && f.bit_equal(oracle::to_field(g));
    });
    EXPECT_TRUE(identical) << "trial " << trial << " " << w << "x" << h << " workers " << c.workers;
    EXPECT_EQ(r.status, RunStatus::Completed);
    for (auto k : r.iterations) EXPECT_EQ(k, 40u);
  }
}

TEST(Sync, MaxIterationsWithoutConvergence) {
  auto c = small(20, 20, 2, IterationMode::Sync);
  c.boundary.north = 1;
  c.tolerance = 1e-14;
  c.max_iterations = 10;
  const auto r = run_sync(c);
  EXPECT_EQ(r.status, RunStatus::NotConverged);
  EXPECT_EQ(r.iterations, (std::vector<std::uint64_t>{10, 10}));
}

TEST(Sync, MidRunSnapshotHasEqualCountsAndOracleField) {
  auto c = small(40, 40, 4, IterationMode::Sync);
  c.boundary.north = 10;
  c.tolerance = 1e-300;
  c.max_iterations = std::numeric_limits<std::uint64_t>::max();
  Engine e(c);
  e.start();
  std::this_thread::sleep_for(30ms);
  const auto snap = e.pause_and_snapshot(false);
  ASSERT_FALSE(snap.iterations.empty());
  EXPECT_TRUE(std::ranges::all_of(snap.iterations, [&](auto k) { return k == snap.iterations[0]; }));
  auto g = oracle::make_grid(40, 40, 10, 0, 0, 0);
  for (std::uint64_t k = 0; k < snap.iterations[0]; ++k) oracle::sweep(g);
  EXPECT_TRUE(snap.field.bit_equal(oracle::to_field(g)));

  std::this_thread::sleep_for(20ms);
  EXPECT_EQ(e.live_snapshot().iterations, snap.iterations) << "paused engine must not advance";
  e.resume();
  std::this_thread::sleep_for(20ms);
  EXPECT_GT(e.pause_and_snapshot().iterations[0], snap.iterations[0]);
  e.request_stop();
  const auto r = e.wait();
  EXPECT_EQ(r.status, RunStatus::Stopped);
}

TEST(Sync, InjectedDelayAccountedWithinBudget) {
  auto c = small(12, 12, 2, IterationMode::Sync);
  c.forced_iterations = 40;
  c.delays = {{0, 0.005}};
  const auto r = run_sync(c);
  const double floor = 40 * 0.005;
  EXPECT_GE(r.stats[0].comm_time, floor);
  EXPECT_LE(r.stats[0].comm_time, floor * (1 + c.delay_budget));
  EXPECT_LT(r.stats[1].comm_time, floor / 2);
  // The undelayed worker spends the delay waiting for its neighbor.
  EXPECT_GE(r.stats[1].wait_time, floor * 0.9);
  for (const auto& s : r.stats) EXPECT_GE(s.wall_time, floor);
}

TEST(Sync, TotalLossStallsWithDiagnosis) {
  for (auto clock : {ClockMode::Wall, ClockMode::Virtual}) {
    auto c = small(8, 8, 2, IterationMode::Sync);
    c.clock = clock;
    c.link.loss_probability = 1.0;
    c.forced_iterations = 100;
    c.stall_timeout = 0.2;
    Engine e(c);
    e.start();
    try {
      e.wait();
      ADD_FAILURE() << "sync run over a dead link must stall";
    } catch (const StallError& err) {
      EXPECT_NE(std::string(err.what()).find("halo of worker"), std::string::npos) << err.what();
    }
  }
}

TEST(Sync, NonFiniteBoundaryAborts) {
  auto c = small(6, 6, 2, IterationMode::Sync);
  c.boundary.north = std::numeric_limits<double>::infinity();
  EXPECT_THROW(run_sync(c), NonFiniteError);
  c.mode = IterationMode::Async;
  EXPECT_THROW(run_async(c), NonFiniteError);
}

TEST(Async, TotalLossNeverBlocksAndCompletes) {
  for (auto clock : {ClockMode::Wall, ClockMode::Virtual}) {
    auto c = small(10, 10, 3, IterationMode::Async);
    c.clock = clock;
    c.link.loss_probability = 1.0;
    c.forced_iterations = 300;
    const auto r = run_async(c);
    EXPECT_EQ(r.status, RunStatus::Completed);
    for (const auto& s : r.stats) {
      EXPECT_EQ(s.halo_wait_time, 0.0);
      EXPECT_EQ(s.iterations, 300u);
    }
    for (const auto& tags : r.halo_tags) EXPECT_EQ(tags, (std::array<std::uint64_t, 2>{0, 0}));
  }
}

TEST(Async, RandomMessageDelaysConvergeToOracleFixedPoint) {
  auto base = small(4, 4, 2, IterationMode::Async);
  base.boundary.west = 1;
  base.tolerance = 1e-10;
  base.max_iterations = std::numeric_limits<std::uint64_t>::max();
  base.link.latency = 0.0025;
  base.link.jitter = 0.0025;
  const auto fixed = oracle::solve_fixed_point(oracle::make_grid(4, 4, 0, 0, 0, 1));
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto c = base;
    c.link.seed = seed;
    const auto r = run_async(c);
    ASSERT_TRUE(r.converged()) << "seed " << seed;
    ASSERT_TRUE(r.verified_residual);
    EXPECT_LE(*r.verified_residual, 1e-10);
    EXPECT_LE(max_diff(r.field, fixed), 1e-9) << "seed " << seed;
    for (const auto& s : r.stats) EXPECT_EQ(s.halo_wait_time, 0.0);
  }
}

TEST(Async, ConvergenceTraceGoesThroughVerification) {
  auto c = small(12, 12, 3, IterationMode::Async);
  c.boundary.north = 100;
  c.tolerance = 1e-8;
  c.max_iterations = std::numeric_limits<std::uint64_t>::max();
  const auto r = run_async(c);
  ASSERT_TRUE(r.converged());
  ASSERT_GE(r.convergence_trace.size(), 4u);
  EXPECT_EQ(r.convergence_trace.front().phase, ConvergencePhase::Running);
  EXPECT_EQ(r.convergence_trace.back().phase, ConvergencePhase::Converged);
  const auto verifying = std::ranges::find(r.convergence_trace, ConvergencePhase::Verifying, &PhaseChange::phase);
  ASSERT_NE(verifying, r.convergence_trace.end());
  ASSERT_TRUE(verifying->global_residual);
  EXPECT_LE(*r.verified_residual, 1e-8);
  EXPECT_LE(frozen_field_residual(r.field, c.sources), 1e-8);
}

TEST(Async, BothModesReachTheSameFixedPoint) {
  auto c = small(10, 10, 3, IterationMode::Sync);
  c.boundary = {100, 0, 25, 50};
  c.sources.set(4, 5, 80);
  c.tolerance = 1e-12;
  c.max_iterations = std::numeric_limits<std::uint64_t>::max();
  const auto s = run_sync(c);
  const auto a = run_async(c);
  ASSERT_TRUE(s.converged());
  ASSERT_TRUE(a.converged());
  auto g = oracle::make_grid(10, 10, 100, 0, 25, 50);
  const auto pins = oracle::to_pins(c.sources);
  oracle::pin(g, pins);
  const auto fixed = oracle::solve_fixed_point(g, pins);
  EXPECT_LE(max_diff(s.field, fixed), 1e-9);
  EXPECT_LE(max_diff(a.field, fixed), 1e-9);
  EXPECT_LE(max_abs_difference(s.field, a.field), 1e-9);
}

TEST(Async, MaxIterationsWithoutConvergenceReturnsField) {
  auto c = small(30, 30, 2, IterationMode::Async);
  c.boundary.north = 1;
  c.tolerance = 1e-14;
  c.max_iterations = 20;
  const auto r = run_async(c);
  EXPECT_EQ(r.status, RunStatus::NotConverged);
  EXPECT_EQ(r.iterations, (std::vector<std::uint64_t>{20, 20}));
  EXPECT_GT(r.field.at(15, 1), 0.0);
}

TEST(SingleWorker, ModesCoincide) {
  for (auto clock : {ClockMode::Wall, ClockMode::Virtual}) {
    auto c = small(9, 7, 1, IterationMode::Sync);
    c.clock = clock;
    c.boundary = {3, -1, 7, 2};
    c.forced_iterations = 60;
    const auto s = run_sync(c);
    const auto a = run_async(c);
    EXPECT_TRUE(s.field.bit_equal(a.field));
    EXPECT_EQ(s.iterations, a.iterations);
  }
  // With convergence detection the virtual-clock async run stops on the same sweep.
  auto c = small(9, 7, 1, IterationMode::Sync);
  c.clock = ClockMode::Virtual;
  c.boundary = {3, -1, 7, 2};
  c.tolerance = 1e-9;
  const auto s = run_sync(c);
  const auto a = run_async(c);
  ASSERT_TRUE(s.converged());
  ASSERT_TRUE(a.converged());
  EXPECT_EQ(s.iterations, a.iterations);
  EXPECT_TRUE(s.field.bit_equal(a.field));
}

TEST(Virtual, SeededRunsAreDeterministic) {
  auto run_once = [](std::uint64_t seed) {
    auto c = small(12, 12, 4, IterationMode::Async);
    c.clock = ClockMode::Virtual;
    c.virtual_cell_cost = 1e-5;
    c.delays = {{0, 0.0003}};
    c.link = {0.001, mbps_to_bytes_per_second(100), 0.0008, 0.1, seed};
    c.forced_iterations = 200;
    Engine e(c);
    e.network().enable_trace(true);
    e.start();
    auto r = e.wait();
    return std::pair{r.iterations, e.network().trace()};
  };
  for (std::uint64_t seed : {5u, 6u}) {
    const auto a = run_once(seed);
    const auto b = run_once(seed);
    EXPECT_EQ(a.first, b.first);
    EXPECT_EQ(a.second, b.second);
    EXPECT_FALSE(a.second.empty());
  }
  EXPECT_NE(run_once(5).second, run_once(6).second);
}

TEST(Virtual, SyncTimingIsAnalytic) {
  auto c = small(10, 10, 2, IterationMode::Sync);
  c.clock = ClockMode::Virtual;
  c.virtual_cell_cost = 1e-3;  // 4 rows x 8 cells = 32 ms per sweep
  c.delays = {{0, 0.012}};
  c.forced_iterations = 100;
  const auto r = run_sync(c);
  for (const auto& s : r.stats) EXPECT_NEAR(s.wall_time, 100 * 0.044, 1e-9);
  EXPECT_NEAR(r.stats[1].wait_time, 100 * 0.012, 1e-9);
  EXPECT_NEAR(r.stats[0].comm_time, 100 * 0.012, 1e-9);

  c.mode = IterationMode::Async;
  const auto a = run_async(c);
  EXPECT_NEAR(a.stats[0].wall_time, 100 * 0.044, 1e-9);
  EXPECT_NEAR(a.stats[1].wall_time, 100 * 0.032, 1e-9);
  EXPECT_EQ(a.stats[1].wait_time, 0.0);
}

TEST(Virtual, HaloTagsKeepGrowingUnderDelivery) {
  std::vector<std::uint64_t> previous;
  for (std::uint64_t forced : {100u, 200u, 400u}) {
    auto c = small(12, 14, 3, IterationMode::Async);
    c.clock = ClockMode::Virtual;
    c.virtual_cell_cost = 1e-5;
    c.link = {0.002, mbps_to_bytes_per_second(10), 0.001, 0.3, 9};
    c.forced_iterations = forced;
    const auto r = run_async(c);
    std::vector<std::uint64_t> tags{r.halo_tags[0][1], r.halo_tags[1][0], r.halo_tags[1][1], r.halo_tags[2][0]};
    for (std::size_t i = 0; i < tags.size(); ++i) {
      EXPECT_GT(tags[i], 0u);
      if (!previous.empty()) EXPECT_GT(tags[i], previous[i]);
    }
    previous = tags;
  }
}

TEST(Async, PausedSnapshotIsQuiesced) {
  auto c = small(30, 30, 2, IterationMode::Async);
  c.boundary.north = 5;
  c.tolerance = 1e-300;
  c.max_iterations = std::numeric_limits<std::uint64_t>::max();
  c.delays = {{1, 0.001}};
  Engine e(c);
  e.start();
  std::this_thread::sleep_for(30ms);
  const auto first = e.pause_and_snapshot(false);
  std::this_thread::sleep_for(10ms);
  const auto second = e.pause_and_snapshot(false);
  EXPECT_TRUE(first.consistent);
  EXPECT_EQ(first.iterations, second.iterations);
  EXPECT_TRUE(first.field.bit_equal(second.field));
  EXPECT_GT(first.iterations[0], first.iterations[1]) << "the delayed worker lags";
  e.resume();
  e.resume();
  EXPECT_FALSE(e.paused());
  std::this_thread::sleep_for(20ms);
  const auto later = e.pause_and_snapshot();
  EXPECT_GT(later.iterations[0], first.iterations[0]);
  EXPECT_GT(later.iterations[1], first.iterations[1]);
  e.request_stop();
  EXPECT_EQ(e.wait().status, RunStatus::Stopped);
}

TEST(Steering, BoundaryEditMidRunReachesNewFixedPoint) {
  for (auto mode : {IterationMode::Sync, IterationMode::Async}) {
    auto c = small(8, 8, 2, mode);
    c.tolerance = 1e-13;
    c.max_iterations = std::numeric_limits<std::uint64_t>::max();
    c.boundary.south = 1;
    Engine e(c);
    e.start();
    e.set_boundary(Edge::North, 100);
    e.set_source(3, 4, 40);
    const auto r = e.wait();
    ASSERT_TRUE(r.converged());
    auto g = oracle::make_grid(8, 8, 100, 1, 0, 0);
    const std::vector<oracle::Pin> pins{{3, 4, 40}};
    const auto fixed = oracle::solve_fixed_point(g, pins);
    EXPECT_LE(max_diff(r.field, fixed), 1e-10) << to_string(mode);
    EXPECT_EQ(r.field.at(3, 0), 100.0);
  }
}

TEST(Steering, InvalidEditsRejected) {
  auto c = small(6, 6, 2, IterationMode::Async);
  Engine e(c);
  EXPECT_THROW(e.set_source(0, 0, 5), std::out_of_range);
  EXPECT_THROW(e.set_source(5, 2, 5), std::out_of_range);
  EXPECT_THROW(e.set_tolerance(0.0), std::invalid_argument);
  EXPECT_THROW(e.set_tolerance(-1.0), std::invalid_argument);
  EXPECT_FALSE(e.clear_source(2, 2));
  e.set_source(2, 2, 5);
  EXPECT_TRUE(e.clear_source(2, 2));
  EXPECT_TRUE(e.sources().empty());
}

TEST(Engine, RejectsBadConfig) {
  auto c = small(6, 6, 5, IterationMode::Sync);
  EXPECT_THROW(Engine{c}, SizingError);
  c.workers = 2;
  c.delays = {{2, 0.01}};
  EXPECT_THROW(Engine{c}, std::invalid_argument);
  c.delays.clear();
  EXPECT_THROW(Engine(c, Field2D(5, 6)), SizingError);
}
