#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "asyncsteer/config.hpp"

namespace asyncsteer {

/// Scenario files are flat `key = value` text grouped under `[section]`
/// headers; `#` starts a comment. Recognised keys:
///
///   name = <text>                        (before any section)
///   [grid]    width, height              cells including the boundary ring
///             north, south, east, west   Dirichlet values
///             initial                    starting interior value
///   [sources] cell = <x>, <y>, <value>   repeatable
///   [workers] count, skew = w0, w1, ...
///   [delays]  <worker id> = <duration>   e.g. `0 = 12ms`
///   [link]    latency, jitter (durations), loss, seed,
///             bandwidth_mbps or bandwidth (bytes/s; a number or inf)
///   [run]     mode (sync|async), tolerance, max_iterations,
///             forced_iterations, clock (wall|virtual), virtual_cell_cost,
///             stall_timeout, monitor_interval, delay_budget, warmup
///   [steer]   snapshot_period, downsample, snapshot_budget (bytes)
///
/// Durations take an optional unit suffix (s, ms, us); bare numbers are
/// seconds. Worker ids start at 0. Any problem raises ParseError with the
/// offending line number, or line 0 for whole-file checks.
RunConfig parse_scenario(std::string_view text, std::string_view default_name = "scenario");
RunConfig load_scenario(const std::filesystem::path& path);

/// Canonical text form: every key written in a fixed order with
/// round-trippable numbers. parse_scenario(to_scenario_text(c)) == c.
std::string to_scenario_text(const RunConfig& config);

/// FNV-1a 64-bit over the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace asyncsteer
