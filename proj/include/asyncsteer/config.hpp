#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "asyncsteer/field.hpp"
#include "asyncsteer/transport.hpp"

namespace asyncsteer {

enum class IterationMode { Sync, Async };
enum class ClockMode { Wall, Virtual };

std::string_view to_string(IterationMode mode);
std::optional<IterationMode> mode_from_string(std::string_view name);  // case-insensitive
std::string_view to_string(ClockMode mode);
std::optional<ClockMode> clock_from_string(std::string_view name);

/// Everything needed to run one scenario. Grid dimensions include the
/// boundary ring, so a 200x200-cell interior is width = height = 202.
struct RunConfig {
  std::string name = "scenario";

  std::size_t width = 202;
  std::size_t height = 202;
  BoundaryValues boundary;
  double initial_interior = 0.0;
  SourceTerm sources;

  std::size_t workers = 1;
  std::vector<double> skew;  // empty: equal split

  IterationMode mode = IterationMode::Sync;
  double tolerance = 1e-6;
  std::uint64_t max_iterations = 100000;
  /// Run exactly this many sweeps per worker and ignore residuals.
  std::optional<std::uint64_t> forced_iterations;

  std::vector<InjectedDelay> delays;
  LinkModel link;  // every halo link

  ClockMode clock = ClockMode::Wall;
  double virtual_cell_cost = 1e-9;  // virtual seconds per cell update
  double stall_timeout = 5.0;       // sync halo wait before declaring a stall
  double monitor_interval = 5e-4;   // async convergence polling period
  double delay_budget = 0.10;       // allowed scheduling overhead on injected delays

  double snapshot_period = 0.1;
  std::size_t downsample = 1;
  std::size_t snapshot_budget = 256 * 1024;

  bool warmup = true;

  /// Throws std::invalid_argument (or SizingError) describing the first problem.
  void validate() const;
  std::vector<RowRange> ranges() const;
  double delay_for(std::size_t worker) const noexcept;
  Field2D initial_field() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace asyncsteer
