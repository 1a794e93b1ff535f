#include "asyncsteer/protocol.hpp"

#include <cmath>
#include <json.hpp>

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

namespace {

using nlohmann::json;

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};

json number_or_null(std::optional<double> v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

json boundary_json(const BoundaryValues& b) {
  return {{"north", b.north}, {"south", b.south}, {"east", b.east}, {"west", b.west}};
}

BoundaryValues boundary_from(const json& j) {
  return {j.at("north").get<double>(), j.at("south").get<double>(), j.at("east").get<double>(),
          j.at("west").get<double>()};
}

IterationMode mode_from(const json& j) {
  const auto m = mode_from_string(j.get<std::string>());
  if (!m) throw ProtocolError("unknown mode " + j.dump());
  return *m;
}

ConvergencePhase phase_from(const std::string& s) {
  for (auto p : {ConvergencePhase::Running, ConvergencePhase::Tentative, ConvergencePhase::Verifying,
                 ConvergencePhase::Converged}) {
    if (to_string(p) == s) return p;
  }
  throw ProtocolError("unknown phase " + s);
}

bool inside(std::int64_t x, std::int64_t y, std::size_t width, std::size_t height) {
  return x >= 1 && y >= 1 && static_cast<std::size_t>(x) + 1 < width && static_cast<std::size_t>(y) + 1 < height;
}

std::string id_from(const json& j) {
  const auto it = j.find("id");
  if (it == j.end()) throw ProtocolError("COMMAND without id");
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return std::to_string(it->get<std::int64_t>());
  throw ProtocolError("COMMAND id must be a string or an integer");
}

/// Parses the "command" object; returns the reason on failure.
std::variant<SteeringCommand, std::string> command_from(const json& c) {
  if (!c.is_object() || !c.contains("kind") || !c.at("kind").is_string()) return std::string("malformed_command");
  const auto kind = c.at("kind").get<std::string>();
  try {
    if (kind == "SET_BOUNDARY") {
      const auto edge = edge_from_string(c.at("edge").get<std::string>());
      if (!edge) return std::string("invalid_value");
      return SteeringCommand{SetBoundary{*edge, c.at("value").get<double>()}};
    }
    if (kind == "SET_SOURCE") {
      return SteeringCommand{
          SetSource{c.at("x").get<std::int64_t>(), c.at("y").get<std::int64_t>(), c.at("value").get<double>()}};
    }
    if (kind == "CLEAR_SOURCE") {
      return SteeringCommand{ClearSource{c.at("x").get<std::int64_t>(), c.at("y").get<std::int64_t>()}};
    }
    if (kind == "SET_MODE") {
      const auto m = mode_from_string(c.at("mode").get<std::string>());
      if (!m) return std::string("invalid_value");
      return SteeringCommand{SetMode{*m}};
    }
    if (kind == "PAUSE") return SteeringCommand{Pause{}};
    if (kind == "RESUME") return SteeringCommand{Resume{}};
    if (kind == "RESTART") return SteeringCommand{Restart{c.value("keep_field", false)}};
    if (kind == "SET_TOLERANCE") return SteeringCommand{SetTolerance{c.at("value").get<double>()}};
  } catch (const json::exception&) {
    return std::string("malformed_command");
  }
  return std::string("unknown_command");
}

json tile_json(const Tile& t) {
  return {{"width", t.width}, {"height", t.height}, {"factor", t.factor}, {"values", t.values}};
}

}  // namespace

std::string_view command_name(const SteeringCommand& command) {
  return std::visit(overloaded{
                        [](const SetBoundary&) { return std::string_view("SET_BOUNDARY"); },
                        [](const SetSource&) { return std::string_view("SET_SOURCE"); },
                        [](const ClearSource&) { return std::string_view("CLEAR_SOURCE"); },
                        [](const SetMode&) { return std::string_view("SET_MODE"); },
                        [](const Pause&) { return std::string_view("PAUSE"); },
                        [](const Resume&) { return std::string_view("RESUME"); },
                        [](const Restart&) { return std::string_view("RESTART"); },
                        [](const SetTolerance&) { return std::string_view("SET_TOLERANCE"); },
                    },
                    command);
}

std::optional<std::string> validate_command(const SteeringCommand& command, std::size_t width, std::size_t height) {
  using R = std::optional<std::string>;
  return std::visit(overloaded{
                        [](const SetBoundary& c) -> R {
                          if (!std::isfinite(c.value)) return "invalid_value";
                          return std::nullopt;
                        },
                        [&](const SetSource& c) -> R {
                          if (!inside(c.x, c.y, width, height)) return "out_of_bounds";
                          if (!std::isfinite(c.value)) return "invalid_value";
                          return std::nullopt;
                        },
                        [&](const ClearSource& c) -> R {
                          if (!inside(c.x, c.y, width, height)) return "out_of_bounds";
                          return std::nullopt;
                        },
                        [](const SetTolerance& c) -> R {
                          if (!std::isfinite(c.value) || !(c.value > 0.0)) return "invalid_value";
                          return std::nullopt;
                        },
                        [](const auto&) -> R { return std::nullopt; },
                    },
                    command);
}

Tile downsample(const Field2D& field, std::size_t factor) {
  if (factor == 0) throw std::invalid_argument("downsample factor must be >= 1");
  Tile t;
  t.factor = factor;
  t.width = (field.width() + factor - 1) / factor;
  t.height = (field.height() + factor - 1) / factor;
  if (factor == 1) {
    t.values = field.values();
    return t;
  }
  t.values.assign(t.width * t.height, 0.0);
  for (std::size_t ty = 0; ty < t.height; ++ty) {
    const std::size_t y0 = ty * factor;
    const std::size_t y1 = std::min(y0 + factor, field.height());
    for (std::size_t tx = 0; tx < t.width; ++tx) {
      const std::size_t x0 = tx * factor;
      const std::size_t x1 = std::min(x0 + factor, field.width());
      double sum = 0.0;
      for (std::size_t y = y0; y < y1; ++y) {
        for (std::size_t x = x0; x < x1; ++x) sum += field.at(x, y);
      }
      t.values[ty * t.width + tx] = sum / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  }
  return t;
}

Hello make_hello(std::uint64_t segment, const RunConfig& config) {
  Hello h;
  h.segment = segment;
  h.scenario = config.name;
  h.width = config.width;
  h.height = config.height;
  h.workers = config.workers;
  h.mode = config.mode;
  h.tolerance = config.tolerance;
  h.boundary = config.boundary;
  h.snapshot_period = config.snapshot_period;
  return h;
}

std::string encode(const Hello& h) {
  return json{{"type", "HELLO"},
              {"protocol", h.protocol},
              {"segment", h.segment},
              {"config",
               {{"scenario", h.scenario},
                {"width", h.width},
                {"height", h.height},
                {"workers", h.workers},
                {"mode", to_string(h.mode)},
                {"tolerance", h.tolerance},
                {"boundary", boundary_json(h.boundary)},
                {"snapshot_period", h.snapshot_period}}}}
      .dump();
}

std::string encode(const Snapshot& s) {
  return json{{"type", "SNAPSHOT"},
              {"segment", s.segment},
              {"sequence", s.sequence},
              {"timestamp", s.timestamp},
              {"mode", to_string(s.mode)},
              {"iterations", s.iterations},
              {"residual", number_or_null(s.residual)},
              {"residual_kind", s.residual ? (s.residual_verified ? "verified" : "tentative") : "none"},
              {"live", s.live},
              {"paused", s.paused},
              {"finished", s.finished},
              {"phase", to_string(s.phase)},
              {"boundary", boundary_json(s.boundary)},
              {"tolerance", s.tolerance},
              {"sources", s.source_count},
              {"grid", {{"width", s.grid_width}, {"height", s.grid_height}}},
              {"tile", tile_json(s.tile)}}
      .dump();
}

std::string encode(const Ack& a) { return json{{"type", "ACK"}, {"id", a.id}}.dump(); }

std::string encode(const Reject& r) { return json{{"type", "REJECT"}, {"id", r.id}, {"reason", r.reason}}.dump(); }

std::string encode_command(std::string_view id, const SteeringCommand& command) {
  json c = {{"kind", command_name(command)}};
  std::visit(overloaded{
                 [&](const SetBoundary& x) {
                   c["edge"] = to_string(x.edge);
                   c["value"] = x.value;
                 },
                 [&](const SetSource& x) {
                   c["x"] = x.x;
                   c["y"] = x.y;
                   c["value"] = x.value;
                 },
                 [&](const ClearSource& x) {
                   c["x"] = x.x;
                   c["y"] = x.y;
                 },
                 [&](const SetMode& x) { c["mode"] = to_string(x.mode); },
                 [&](const Restart& x) { c["keep_field"] = x.keep_field; },
                 [&](const SetTolerance& x) { c["value"] = x.value; },
                 [](const auto&) {},
             },
             command);
  return json{{"type", "COMMAND"}, {"id", id}, {"command", c}}.dump();
}

Frame decode(std::string_view payload) {
  json j;
  try {
    j = json::parse(payload);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("frame is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    throw ProtocolError("frame has no type");
  }
  const auto type = j.at("type").get<std::string>();
  try {
    if (type == "COMMAND") {
      CommandFrame f;
      f.id = id_from(j);
      auto parsed = command_from(j.contains("command") ? j.at("command") : json());
      if (auto* cmd = std::get_if<SteeringCommand>(&parsed)) {
        f.command = *cmd;
      } else {
        f.reason = std::get<std::string>(parsed);
      }
      return f;
    }
    if (type == "ACK") return Ack{j.at("id").get<std::string>()};
    if (type == "REJECT") return Reject{j.at("id").get<std::string>(), j.at("reason").get<std::string>()};
    if (type == "HELLO") {
      Hello h;
      h.protocol = j.at("protocol").get<int>();
      h.segment = j.at("segment").get<std::uint64_t>();
      const auto& c = j.at("config");
      h.scenario = c.at("scenario").get<std::string>();
      h.width = c.at("width").get<std::size_t>();
      h.height = c.at("height").get<std::size_t>();
      h.workers = c.at("workers").get<std::size_t>();
      h.mode = mode_from(c.at("mode"));
      h.tolerance = c.at("tolerance").get<double>();
      h.boundary = boundary_from(c.at("boundary"));
      h.snapshot_period = c.at("snapshot_period").get<double>();
      return h;
    }
    if (type == "SNAPSHOT") {
      Snapshot s;
      s.segment = j.at("segment").get<std::uint64_t>();
      s.sequence = j.at("sequence").get<std::uint64_t>();
      s.timestamp = j.at("timestamp").get<double>();
      s.mode = mode_from(j.at("mode"));
      s.iterations = j.at("iterations").get<std::vector<std::uint64_t>>();
      if (!j.at("residual").is_null()) s.residual = j.at("residual").get<double>();
      s.residual_verified = j.at("residual_kind").get<std::string>() == "verified";
      s.live = j.at("live").get<bool>();
      s.paused = j.at("paused").get<bool>();
      s.finished = j.at("finished").get<bool>();
      s.phase = phase_from(j.at("phase").get<std::string>());
      s.boundary = boundary_from(j.at("boundary"));
      s.tolerance = j.at("tolerance").get<double>();
      s.source_count = j.at("sources").get<std::size_t>();
      s.grid_width = j.at("grid").at("width").get<std::size_t>();
      s.grid_height = j.at("grid").at("height").get<std::size_t>();
      const auto& t = j.at("tile");
      s.tile.width = t.at("width").get<std::size_t>();
      s.tile.height = t.at("height").get<std::size_t>();
      s.tile.factor = t.at("factor").get<std::size_t>();
      s.tile.values = t.at("values").get<std::vector<double>>();
      if (s.tile.values.size() != s.tile.width * s.tile.height) throw ProtocolError("tile size mismatch");
      return s;
    }
  } catch (const json::exception& e) {
    throw ProtocolError("malformed " + type + " frame: " + e.what());
  }
  throw ProtocolError("unknown frame type '" + type + "'");
}

std::string encode_within_budget(Snapshot& snapshot, const Field2D& field, std::size_t min_factor,
                                 std::size_t budget) {
  const std::size_t side = std::max(field.width(), field.height());
  std::size_t factor = std::max<std::size_t>({min_factor, 1, (side + kMaxTileSide - 1) / kMaxTileSide});
  for (;;) {
    snapshot.tile = downsample(field, factor);
    auto encoded = encode(snapshot);
    if (encoded.size() <= budget || factor >= side) return encoded;
    // Size scales with the cell count, so jump close to the answer first.
    const double ratio = std::sqrt(static_cast<double>(encoded.size()) / static_cast<double>(budget));
    factor = std::min(side, std::max(factor + 1, static_cast<std::size_t>(std::floor(factor * ratio))));
  }
}

}  // namespace asyncsteer
