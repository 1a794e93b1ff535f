#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "asyncsteer/engine.hpp"
#include "asyncsteer/errors.hpp"
#include "asyncsteer/report.hpp"
#include "asyncsteer/scenario.hpp"
#include "asyncsteer/transport.hpp"

using namespace asyncsteer;

namespace {

struct EstimateArgs {
  double doubles = 0;
  double mbps = 100;
  double latency_ms = 1;
  std::uint64_t iters = 10000;
  std::optional<double> compute_s;
};

int print_estimate(const EstimateArgs& a) {
  LinkModel link;
  link.latency = a.latency_ms / 1e3;
  link.bandwidth = mbps_to_bytes_per_second(a.mbps);
  const double bytes = a.doubles * static_cast<double>(sizeof(double));
  const double per = transfer_time(bytes, link);
  const double total = per * static_cast<double>(a.iters);
  std::printf("payload          %.0f bytes (%.0f doubles)\n", bytes, a.doubles);
  std::printf("link             %g Mbps, latency %g ms\n", a.mbps, a.latency_ms);
  std::printf("per transfer     %.6g s\n", per);
  std::printf("%-16s %.6g s\n", ("x " + std::to_string(a.iters)).c_str(), total);
  if (a.compute_s) {
    std::printf("compute          %.6g s\n", *a.compute_s);
    if (*a.compute_s > 0) std::printf("transfer/compute %.3g\n", total / *a.compute_s);
  }
  return 0;
}

struct Checks {
  std::optional<double> sync_min_wall;
  std::optional<double> async_max_wall;
  bool failed = false;

  void expect(bool ok, const std::string& what) {
    std::cout << "check " << (ok ? "ok   " : "FAIL ") << what << "\n";
    failed = failed || !ok;
  }
};

void run_checks(Checks& checks, const RunConfig& config, const std::vector<TimingReport>& reports) {
  for (const auto& r : reports) {
    const bool finished = r.status == RunStatus::Converged || r.status == RunStatus::Completed;
    checks.expect(finished, std::string(to_string(r.mode)) + " rep " + std::to_string(r.repetition) + " ended " +
                                std::string(to_string(r.status)));
    if (r.mode == IterationMode::Sync) {
      const bool equal = std::ranges::all_of(r.iterations, [&](auto n) { return n == r.iterations.front(); });
      checks.expect(equal, "SYNC rep " + std::to_string(r.repetition) + " equal iteration counts");
      if (checks.sync_min_wall) {
        for (const auto& w : r.workers) {
          checks.expect(w.wall_time > *checks.sync_min_wall, "SYNC worker " + std::to_string(w.worker) + " wall " +
                                                                 std::to_string(w.wall_time) + " s > " +
                                                                 std::to_string(*checks.sync_min_wall) + " s");
        }
      }
    } else if (checks.async_max_wall) {
      for (const auto& w : r.workers) {
        if (config.delay_for(w.worker) > 0) continue;
        checks.expect(w.wall_time < *checks.async_max_wall, "ASYNC worker " + std::to_string(w.worker) + " wall " +
                                                                std::to_string(w.wall_time) + " s < " +
                                                                std::to_string(*checks.async_max_wall) + " s");
      }
    }
  }
  const auto sync = total_times(reports, IterationMode::Sync);
  const auto async = total_times(reports, IterationMode::Async);
  if (!sync.empty() && !async.empty()) {
    const double s = summarize(sync).mean;
    const double a = summarize(async).mean;
    if (config.workers == 1) {
      const double gap = std::abs(a - s) / std::max(a, s);
      checks.expect(gap <= 0.10, "one worker: mean ASYNC " + std::to_string(a) + " s within 10% of mean SYNC " +
                                     std::to_string(s) + " s");
    } else {
      checks.expect(a <= s, "mean ASYNC " + std::to_string(a) + " s <= mean SYNC " + std::to_string(s) + " s");
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run a scenario in SYNC and/or ASYNC mode and report per-worker timings."};
  std::string scenario;
  std::string mode = "both";
  std::size_t reps = 1;
  std::string out;
  bool check = false;
  bool no_warmup = false;
  bool estimate = false;
  EstimateArgs est;
  Checks checks;

  app.add_option("scenario", scenario, "Scenario file");
  app.add_option("--mode", mode, "sync, async or both")->check(CLI::IsMember({"sync", "async", "both"}));
  app.add_option("--reps", reps, "Repetitions per mode")->check(CLI::PositiveNumber);
  app.add_option("--out", out, "Write JSON-lines reports here instead of stdout");
  app.add_flag("--check", check, "Exit nonzero when a run fails an acceptance check");
  app.add_option("--sync-min-wall", checks.sync_min_wall, "With --check: every SYNC worker must exceed this (s)");
  app.add_option("--async-max-wall", checks.async_max_wall,
                 "With --check: every undelayed ASYNC worker must stay under this (s)");
  app.add_flag("--no-warmup", no_warmup, "Skip the discarded warm-up repetition");
  app.add_flag("--estimate", estimate, "Print the link transfer-time model instead of running");
  app.add_option("--doubles", est.doubles, "Payload size in doubles")->check(CLI::NonNegativeNumber);
  app.add_option("--mbps", est.mbps, "Link bandwidth in Mbit/s")->check(CLI::PositiveNumber);
  app.add_option("--latency-ms", est.latency_ms, "Link latency in ms")->check(CLI::NonNegativeNumber);
  app.add_option("--iters", est.iters, "Transfers to total over");
  app.add_option("--compute-s", est.compute_s, "Compute-time estimate to compare against (s)");
  CLI11_PARSE(app, argc, argv);

  if (estimate) return print_estimate(est);
  if (scenario.empty()) {
    std::cerr << "a scenario file is required (or --estimate)\n";
    return 2;
  }

  RunConfig base;
  try {
    base = load_scenario(scenario);
  } catch (const std::exception& e) {
    std::cerr << scenario << ": " << e.what() << "\n";
    return 2;
  }

  std::vector<IterationMode> modes;
  if (mode != "async") modes.push_back(IterationMode::Sync);
  if (mode != "sync") modes.push_back(IterationMode::Async);
  const bool warmup = base.warmup && !no_warmup;

  std::vector<TimingReport> reports;
  try {
    for (const auto m : modes) {
      auto config = base;
      config.mode = m;
      if (warmup) {
        std::cerr << "warm-up " << to_string(m) << "\n";
        run(config);
      }
      for (std::size_t r = 0; r < reps; ++r) {
        std::cerr << to_string(m) << " rep " << r + 1 << "/" << reps << "\n";
        reports.push_back(make_report(config, run(config), r));
      }
    }
  } catch (const StallError& e) {
    std::cerr << "aborted, halo stall: " << e.what() << "\n";
    return 2;
  } catch (const NonFiniteError& e) {
    std::cerr << "aborted, field diverged: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 2;
  }

  if (out.empty()) {
    for (const auto& r : reports) std::cout << to_json_line(r) << "\n";
  } else {
    std::ofstream file(out);
    for (const auto& r : reports) file << to_json_line(r) << "\n";
    if (!file) {
      std::cerr << "cannot write " << out << "\n";
      return 2;
    }
  }
  std::cout << format_table(reports);

  if (check) {
    run_checks(checks, base, reports);
    if (checks.failed) return 3;
  }
  return 0;
}
