#include "asyncsteer/report.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "asyncsteer/errors.hpp"
#include "asyncsteer/scenario.hpp"

namespace asyncsteer {

namespace {

using nlohmann::json;

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

RunStatus status_from_string(std::string_view s) {
  for (auto st : {RunStatus::Converged, RunStatus::NotConverged, RunStatus::Completed, RunStatus::Stopped}) {
    if (to_string(st) == s) return st;
  }
  throw ProtocolError("unknown run status '" + std::string(s) + "'");
}

}  // namespace

bool TimingReport::operator==(const TimingReport& o) const {
  auto same_stats = [](const WorkerStats& a, const WorkerStats& b) {
    return a.worker == b.worker && a.iterations == b.iterations && a.wall_time == b.wall_time &&
           a.wait_time == b.wait_time && a.halo_wait_time == b.halo_wait_time && a.comm_time == b.comm_time;
  };
  return scenario == o.scenario && mode == o.mode && repetition == o.repetition && config_hash == o.config_hash &&
         timestamp == o.timestamp && iterations == o.iterations && total_wall_time == o.total_wall_time &&
         status == o.status && converged == o.converged && verified_residual == o.verified_residual &&
         std::ranges::equal(workers, o.workers, same_stats);
}

TimingReport make_report(const RunConfig& config, const RunResult& result, std::size_t repetition) {
  TimingReport r;
  r.scenario = config.name;
  r.mode = result.mode;
  r.repetition = repetition;
  r.config_hash = config_hash(config);
  r.timestamp = utc_now();
  r.workers = result.stats;
  r.iterations = result.iterations;
  r.total_wall_time = result.elapsed;
  r.status = result.status;
  r.converged = result.converged();
  r.verified_residual = result.verified_residual;
  return r;
}

std::string to_json_line(const TimingReport& r) {
  json workers = json::array();
  for (const auto& w : r.workers) {
    workers.push_back({{"worker", w.worker},
                       {"iterations", w.iterations},
                       {"wall_time", w.wall_time},
                       {"wait_time", w.wait_time},
                       {"halo_wait_time", w.halo_wait_time},
                       {"comm_time", w.comm_time}});
  }
  json j = {{"scenario", r.scenario},
            {"mode", to_string(r.mode)},
            {"repetition", r.repetition},
            {"config_hash", r.config_hash},
            {"timestamp", r.timestamp},
            {"workers", workers},
            {"iterations", r.iterations},
            {"total_wall_time", r.total_wall_time},
            {"status", to_string(r.status)},
            {"converged", r.converged},
            {"verified_residual", r.verified_residual ? json(*r.verified_residual) : json(nullptr)}};
  return j.dump();
}

TimingReport report_from_json(std::string_view line) {
  try {
    const json j = json::parse(line);
    TimingReport r;
    r.scenario = j.at("scenario").get<std::string>();
    const auto mode = mode_from_string(j.at("mode").get<std::string>());
    if (!mode) throw ProtocolError("unknown mode");
    r.mode = *mode;
    r.repetition = j.at("repetition").get<std::size_t>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    for (const auto& w : j.at("workers")) {
      r.workers.push_back({w.at("worker").get<std::size_t>(), w.at("iterations").get<std::uint64_t>(),
                           w.at("wall_time").get<double>(), w.at("wait_time").get<double>(),
                           w.at("halo_wait_time").get<double>(), w.at("comm_time").get<double>()});
    }
    r.iterations = j.at("iterations").get<std::vector<std::uint64_t>>();
    r.total_wall_time = j.at("total_wall_time").get<double>();
    r.status = status_from_string(j.at("status").get<std::string>());
    r.converged = j.at("converged").get<bool>();
    if (!j.at("verified_residual").is_null()) r.verified_residual = j.at("verified_residual").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed report: ") + e.what());
  }
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  const auto [lo, hi] = std::ranges::minmax_element(values);
  s.min = *lo;
  s.max = *hi;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  return s;
}

std::vector<double> total_times(const std::vector<TimingReport>& reports, IterationMode mode) {
  std::vector<double> out;
  for (const auto& r : reports) {
    if (r.mode == mode) out.push_back(r.total_wall_time);
  }
  return out;
}

std::string format_table(const std::vector<TimingReport>& reports) {
  std::ostringstream out;
  out << std::fixed;
  out << std::left << std::setw(7) << "mode" << std::right << std::setw(5) << "rep" << std::setw(8) << "worker"
      << std::setw(12) << "iterations" << std::setw(11) << "wall s" << std::setw(11) << "wait s" << std::setw(11)
      << "halo s" << std::setw(11) << "comm s" << "\n";
  for (const auto& r : reports) {
    for (const auto& w : r.workers) {
      out << std::left << std::setw(7) << to_string(r.mode) << std::right << std::setw(5) << r.repetition
          << std::setw(8) << w.worker << std::setw(12) << w.iterations << std::setprecision(3) << std::setw(11)
          << w.wall_time << std::setw(11) << w.wait_time << std::setw(11) << w.halo_wait_time << std::setw(11)
          << w.comm_time << "\n";
    }
    out << std::left << std::setw(7) << to_string(r.mode) << std::right << std::setw(5) << r.repetition
        << std::setw(8) << "total" << std::setw(12) << "" << std::setprecision(3) << std::setw(11)
        << r.total_wall_time << "   " << to_string(r.status);
    if (r.verified_residual) out << " residual " << std::scientific << std::setprecision(2) << *r.verified_residual
                                 << std::fixed;
    out << "\n";
  }
  for (auto mode : {IterationMode::Sync, IterationMode::Async}) {
    const auto s = summarize(total_times(reports, mode));
    if (s.count == 0) continue;
    out << "\n" << to_string(mode) << " total wall time over " << s.count << " run(s): min " << std::setprecision(3)
        << s.min << " s, mean " << s.mean << " s, max " << s.max << " s\n";
  }
  return out.str();
}

}  // namespace asyncsteer
