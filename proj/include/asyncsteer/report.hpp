#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "asyncsteer/config.hpp"
#include "asyncsteer/engine.hpp"

namespace asyncsteer {

/// One benchmark repetition.
struct TimingReport {
  std::string scenario;
  IterationMode mode = IterationMode::Sync;
  std::size_t repetition = 0;
  std::string config_hash;
  std::string timestamp;  // UTC, ISO 8601
  std::vector<WorkerStats> workers;
  std::vector<std::uint64_t> iterations;
  double total_wall_time = 0.0;
  RunStatus status = RunStatus::Stopped;
  bool converged = false;
  std::optional<double> verified_residual;

  bool operator==(const TimingReport&) const;
};

TimingReport make_report(const RunConfig& config, const RunResult& result, std::size_t repetition);

/// Single-line JSON record.
std::string to_json_line(const TimingReport& report);
/// Inverse of to_json_line; throws ProtocolError on malformed input.
TimingReport report_from_json(std::string_view line);

struct Summary {
  double min = 0.0;
  double mean = 0.0;
  double max = 0.0;
  std::size_t count = 0;
};

Summary summarize(const std::vector<double>& values);

/// Total wall time of every report in `mode`.
std::vector<double> total_times(const std::vector<TimingReport>& reports, IterationMode mode);

/// Per-repetition, per-worker aligned table followed by a min/mean/max block
/// for each mode present.
std::string format_table(const std::vector<TimingReport>& reports);

}  // namespace asyncsteer
