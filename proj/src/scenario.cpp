#include "asyncsteer/scenario.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  for (;;) {
    const auto pos = s.find(sep);
    out.push_back(trim(s.substr(0, pos)));
    if (pos == std::string_view::npos) return out;
    s.remove_prefix(pos + 1);
  }
}

std::string format(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

class Parser {
 public:
  Parser(std::string_view text, std::string_view default_name) : text_(text) { config_.name = default_name; }

  RunConfig run() {
    std::size_t line_no = 0;
    std::string_view rest = text_;
    while (!rest.empty()) {
      const auto nl = rest.find('\n');
      std::string_view line = rest.substr(0, nl);
      rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
      ++line_no;
      line_ = line_no;
      if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;

      if (line.front() == '[') {
        if (line.back() != ']') fail("unterminated section header");
        section_ = lower(trim(line.substr(1, line.size() - 2)));
        static const std::set<std::string> known{"grid", "sources", "workers", "delays", "link", "run", "steer"};
        if (!known.contains(section_)) fail("unknown section [" + section_ + "]");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) fail("expected key = value");
      const std::string key = lower(trim(line.substr(0, eq)));
      const std::string_view value = trim(line.substr(eq + 1));
      if (key.empty()) fail("missing key");
      if (value.empty()) fail("missing value for '" + key + "'");

      const bool repeatable = section_ == "sources" && key == "cell";
      const std::string slot = section_ + "." + (key == "bandwidth_mbps" ? "bandwidth" : key);
      if (!repeatable && !seen_.insert(slot).second) fail("duplicate key '" + key + "'");
      assign(key, value);
    }
    line_ = 0;
    if (skew_line_ != 0 && config_.skew.size() != config_.workers) {
      line_ = skew_line_;
      fail("skew lists " + std::to_string(config_.skew.size()) + " weights for " + std::to_string(config_.workers) +
           " workers");
    }
    for (const auto& [worker, line] : delay_lines_) {
      if (worker >= config_.workers) {
        line_ = line;
        fail("delay for worker " + std::to_string(worker) + " but only " + std::to_string(config_.workers) +
             " workers (ids start at 0)");
      }
    }
    line_ = 0;
    try {
      config_.validate();
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    return config_;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const { throw ParseError(line_, what); }

  double number(std::string_view v) const {
    const auto s = lower(v);
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    double out = 0.0;
    const char* first = s.data();
    if (!s.empty() && s.front() == '+') ++first;
    const auto res = std::from_chars(first, s.data() + s.size(), out);
    if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) fail("not a number: '" + std::string(v) + "'");
    return out;
  }

  double finite(std::string_view v) const {
    const double d = number(v);
    if (!std::isfinite(d)) fail("value must be finite: '" + std::string(v) + "'");
    return d;
  }

  std::uint64_t count(std::string_view v) const {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
      fail("not a non-negative integer: '" + std::string(v) + "'");
    }
    return out;
  }

  double duration(std::string_view v) const {
    const auto s = lower(v);
    static const std::array<std::pair<std::string_view, double>, 3> units{{{"us", 1e6}, {"ms", 1e3}, {"s", 1.0}}};
    for (const auto& [suffix, per_second] : units) {
      if (s.size() > suffix.size() && s.ends_with(suffix)) {
        return finite(trim(std::string_view(s).substr(0, s.size() - suffix.size()))) / per_second;
      }
    }
    return finite(s);
  }

  bool boolean(std::string_view v) const {
    const auto s = lower(v);
    if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
    if (s == "false" || s == "no" || s == "off" || s == "0") return false;
    fail("not a boolean: '" + std::string(v) + "'");
  }

  void assign(const std::string& key, std::string_view value) {
    auto& c = config_;
    if (section_.empty()) {
      if (key == "name") return void(c.name = std::string(value));
    } else if (section_ == "grid") {
      if (key == "width") return void(c.width = count(value));
      if (key == "height") return void(c.height = count(value));
      if (const auto edge = edge_from_string(key)) return void(c.boundary[*edge] = finite(value));
      if (key == "initial") return void(c.initial_interior = finite(value));
    } else if (section_ == "sources") {
      if (key == "cell") {
        const auto parts = split(value, ',');
        if (parts.size() != 3) fail("cell needs x, y, value");
        c.sources.set(count(parts[0]), count(parts[1]), finite(parts[2]));
        return;
      }
    } else if (section_ == "workers") {
      if (key == "count") return void(c.workers = count(value));
      if (key == "skew") {
        skew_line_ = line_;
        for (auto part : split(value, ',')) {
          const double w = finite(part);
          if (!(w > 0.0)) fail("skew weights must be > 0");
          c.skew.push_back(w);
        }
        return;
      }
    } else if (section_ == "delays") {
      const std::size_t worker = count(key);
      const double d = duration(value);
      if (d < 0.0) fail("delay must be >= 0");
      c.delays.push_back({worker, d});
      delay_lines_.emplace_back(worker, line_);
      return;
    } else if (section_ == "link") {
      if (key == "latency") return void(c.link.latency = duration(value));
      if (key == "jitter") return void(c.link.jitter = duration(value));
      if (key == "bandwidth") {
        const double bps = number(value);
        if (!(bps > 0.0)) fail("bandwidth must be > 0");
        c.link.bandwidth = bps;
        return;
      }
      if (key == "bandwidth_mbps") {
        const double mbps = number(value);
        if (!(mbps > 0.0)) fail("bandwidth must be > 0");
        c.link.bandwidth = mbps_to_bytes_per_second(mbps);
        return;
      }
      if (key == "loss") return void(c.link.loss_probability = finite(value));
      if (key == "seed") return void(c.link.seed = count(value));
    } else if (section_ == "run") {
      if (key == "mode") {
        const auto m = mode_from_string(value);
        if (!m) fail("mode must be sync or async");
        return void(c.mode = *m);
      }
      if (key == "tolerance") return void(c.tolerance = finite(value));
      if (key == "max_iterations") return void(c.max_iterations = count(value));
      if (key == "forced_iterations") return void(c.forced_iterations = count(value));
      if (key == "clock") {
        const auto m = clock_from_string(value);
        if (!m) fail("clock must be wall or virtual");
        return void(c.clock = *m);
      }
      if (key == "virtual_cell_cost") return void(c.virtual_cell_cost = duration(value));
      if (key == "stall_timeout") return void(c.stall_timeout = duration(value));
      if (key == "monitor_interval") return void(c.monitor_interval = duration(value));
      if (key == "delay_budget") return void(c.delay_budget = finite(value));
      if (key == "warmup") return void(c.warmup = boolean(value));
    } else if (section_ == "steer") {
      if (key == "snapshot_period") return void(c.snapshot_period = duration(value));
      if (key == "downsample") return void(c.downsample = count(value));
      if (key == "snapshot_budget") return void(c.snapshot_budget = count(value));
    }
    fail("unknown key '" + key + "'" + (section_.empty() ? std::string{} : " in [" + section_ + "]"));
  }

  std::string_view text_;
  RunConfig config_;
  std::string section_;
  std::size_t line_ = 0;
  std::size_t skew_line_ = 0;
  std::set<std::string> seen_;
  std::vector<std::pair<std::size_t, std::size_t>> delay_lines_;
};

}  // namespace

RunConfig parse_scenario(std::string_view text, std::string_view default_name) {
  return Parser(text, default_name).run();
}

RunConfig load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(0, "cannot open scenario file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str(), path.stem().string());
}

std::string to_scenario_text(const RunConfig& c) {
  std::ostringstream out;
  out << "name = " << c.name << "\n\n[grid]\n"
      << "width = " << c.width << "\nheight = " << c.height << "\n"
      << "north = " << format(c.boundary.north) << "\nsouth = " << format(c.boundary.south) << "\n"
      << "east = " << format(c.boundary.east) << "\nwest = " << format(c.boundary.west) << "\n"
      << "initial = " << format(c.initial_interior) << "\n\n[sources]\n";
  for (const auto& p : c.sources.cells()) out << "cell = " << p.x << ", " << p.y << ", " << format(p.value) << "\n";
  out << "\n[workers]\ncount = " << c.workers << "\n";
  if (!c.skew.empty()) {
    out << "skew = ";
    for (std::size_t i = 0; i < c.skew.size(); ++i) out << (i ? ", " : "") << format(c.skew[i]);
    out << "\n";
  }
  out << "\n[delays]\n";
  for (const auto& d : c.delays) out << d.worker << " = " << format(d.seconds) << "\n";
  out << "\n[link]\nlatency = " << format(c.link.latency) << "\njitter = " << format(c.link.jitter) << "\n"
      << "bandwidth = " << format(c.link.bandwidth) << "\n"
      << "loss = " << format(c.link.loss_probability) << "\nseed = " << c.link.seed << "\n\n[run]\n"
      << "mode = " << lower(to_string(c.mode)) << "\ntolerance = " << format(c.tolerance) << "\n"
      << "max_iterations = " << c.max_iterations << "\n";
  if (c.forced_iterations) out << "forced_iterations = " << *c.forced_iterations << "\n";
  out << "clock = " << to_string(c.clock) << "\nvirtual_cell_cost = " << format(c.virtual_cell_cost) << "\n"
      << "stall_timeout = " << format(c.stall_timeout) << "\nmonitor_interval = " << format(c.monitor_interval)
      << "\ndelay_budget = " << format(c.delay_budget) << "\nwarmup = " << (c.warmup ? "true" : "false") << "\n\n"
      << "[steer]\nsnapshot_period = " << format(c.snapshot_period) << "\ndownsample = " << c.downsample << "\n"
      << "snapshot_budget = " << c.snapshot_budget << "\n";
  return out.str();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_scenario_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace asyncsteer
