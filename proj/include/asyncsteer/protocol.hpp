#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "asyncsteer/config.hpp"
#include "asyncsteer/convergence.hpp"
#include "asyncsteer/field.hpp"

namespace asyncsteer {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxTileSide = 200;

struct SetBoundary {
  Edge edge = Edge::North;
  double value = 0.0;
};
struct SetSource {
  std::int64_t x = 0;
  std::int64_t y = 0;
  double value = 0.0;
};
struct ClearSource {
  std::int64_t x = 0;
  std::int64_t y = 0;
};
struct SetMode {
  IterationMode mode = IterationMode::Sync;
};
struct Pause {};
struct Resume {};
struct Restart {
  bool keep_field = false;
};
struct SetTolerance {
  double value = 0.0;
};

using SteeringCommand =
    std::variant<SetBoundary, SetSource, ClearSource, SetMode, Pause, Resume, Restart, SetTolerance>;

/// Wire name, e.g. "SET_BOUNDARY".
std::string_view command_name(const SteeringCommand& command);

/// Rejection reason, or nothing if the command is acceptable for a grid of
/// this shape: "out_of_bounds" for source cells on or outside the boundary
/// ring, "invalid_value" for non-finite values or a tolerance <= 0.
std::optional<std::string> validate_command(const SteeringCommand& command, std::size_t width, std::size_t height);

/// Downsampled field: each cell is the mean of a factor x factor block
/// (blocks on the far edges may be smaller).
struct Tile {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t factor = 1;
  std::vector<double> values;  // row-major
};

Tile downsample(const Field2D& field, std::size_t factor);

struct Snapshot {
  std::uint64_t segment = 0;
  std::uint64_t sequence = 0;
  double timestamp = 0.0;  // seconds since the session started
  IterationMode mode = IterationMode::Sync;
  std::vector<std::uint64_t> iterations;
  std::optional<double> residual;
  bool residual_verified = false;
  bool live = false;  // rows may come from different sweeps
  bool paused = false;
  bool finished = false;
  ConvergencePhase phase = ConvergencePhase::Running;
  BoundaryValues boundary;
  double tolerance = 0.0;
  std::size_t source_count = 0;
  std::size_t grid_width = 0;
  std::size_t grid_height = 0;
  Tile tile;
};

struct Hello {
  int protocol = kProtocolVersion;
  std::uint64_t segment = 0;
  std::string scenario;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t workers = 0;
  IterationMode mode = IterationMode::Sync;
  double tolerance = 0.0;
  BoundaryValues boundary;
  double snapshot_period = 0.0;
};

struct Ack {
  std::string id;
};
struct Reject {
  std::string id;
  std::string reason;
};

/// A COMMAND frame as received. `command` is empty when the frame named an
/// unknown command or had bad arguments; `reason` then says why.
struct CommandFrame {
  std::string id;
  std::optional<SteeringCommand> command;
  std::string reason;
};

using Frame = std::variant<Hello, Snapshot, Ack, Reject, CommandFrame>;

Hello make_hello(std::uint64_t segment, const RunConfig& config);

std::string encode(const Hello& hello);
std::string encode(const Snapshot& snapshot);
std::string encode(const Ack& ack);
std::string encode(const Reject& reject);
std::string encode_command(std::string_view id, const SteeringCommand& command);

/// Parses one JSON frame payload. Throws ProtocolError when the payload is
/// not JSON, has no known "type", or (for COMMAND) has no usable id.
/// Command ids may be strings or integers; integers come back as decimal text.
Frame decode(std::string_view payload);

/// Picks the smallest factor >= min_factor that keeps the tile within
/// kMaxTileSide on each side and the encoded frame within `budget` bytes,
/// fills `snapshot.tile`, and returns the encoded frame.
std::string encode_within_budget(Snapshot& snapshot, const Field2D& field, std::size_t min_factor,
                                 std::size_t budget);

}  // namespace asyncsteer
