#include "asyncsteer/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <string>

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

namespace {
std::string lower(std::string_view s) {
  std::string out(s);
  std::ranges::transform(out, out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}
}  // namespace

std::string_view to_string(IterationMode mode) { return mode == IterationMode::Sync ? "SYNC" : "ASYNC"; }

std::optional<IterationMode> mode_from_string(std::string_view name) {
  const auto s = lower(name);
  if (s == "sync") return IterationMode::Sync;
  if (s == "async") return IterationMode::Async;
  return std::nullopt;
}

std::string_view to_string(ClockMode mode) { return mode == ClockMode::Wall ? "wall" : "virtual"; }

std::optional<ClockMode> clock_from_string(std::string_view name) {
  const auto s = lower(name);
  if (s == "wall") return ClockMode::Wall;
  if (s == "virtual") return ClockMode::Virtual;
  return std::nullopt;
}

void RunConfig::validate() const {
  if (width < 3 || height < 3) throw SizingError("grid must be at least 3x3");
  if (skew.empty()) {
    (void)partition_rows(height, workers);
  } else {
    (void)partition_rows(height, workers, skew);
  }
  if (!sources.fits(width, height)) throw std::invalid_argument("source outside the grid interior");
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be > 0");
  if (max_iterations == 0) throw std::invalid_argument("max_iterations must be >= 1");
  if (forced_iterations && *forced_iterations == 0) throw std::invalid_argument("forced_iterations must be >= 1");
  for (const auto& d : delays) {
    if (d.worker >= workers) {
      throw std::invalid_argument("delay references worker " + std::to_string(d.worker) + " but only " +
                                  std::to_string(workers) + " exist");
    }
    if (!(d.seconds >= 0.0)) throw std::invalid_argument("injected delay must be >= 0");
  }
  link.validate();
  if (!(virtual_cell_cost >= 0.0)) throw std::invalid_argument("virtual_cell_cost must be >= 0");
  if (!(stall_timeout > 0.0)) throw std::invalid_argument("stall_timeout must be > 0");
  if (!(monitor_interval > 0.0)) throw std::invalid_argument("monitor_interval must be > 0");
  if (!(snapshot_period > 0.0)) throw std::invalid_argument("snapshot period must be > 0");
  if (downsample == 0) throw std::invalid_argument("downsample factor must be >= 1");
  if (snapshot_budget < 4096) throw std::invalid_argument("snapshot budget must be at least 4096 bytes");
  if (!std::isfinite(initial_interior)) throw std::invalid_argument("initial interior value must be finite");
}

std::vector<RowRange> RunConfig::ranges() const {
  return skew.empty() ? partition_rows(height, workers) : partition_rows(height, workers, skew);
}

double RunConfig::delay_for(std::size_t worker) const noexcept {
  double total = 0.0;
  for (const auto& d : delays) {
    if (d.worker == worker) total += d.seconds;
  }
  return total;
}

Field2D RunConfig::initial_field() const {
  return make_initial_field(width, height, boundary, sources, initial_interior);
}

}  // namespace asyncsteer
