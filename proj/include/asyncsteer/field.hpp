#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace asyncsteer {

enum class Edge { North, South, East, West };

std::string_view to_string(Edge edge);
std::optional<Edge> edge_from_string(std::string_view name);

/// Dirichlet values for the outer ring. North and south rows own the corners.
struct BoundaryValues {
  double north = 0.0;
  double south = 0.0;
  double east = 0.0;
  double west = 0.0;

  double& operator[](Edge edge);
  double operator[](Edge edge) const;
  bool operator==(const BoundaryValues&) const = default;
};

/// Dense row-major temperature grid. Row 0 is the north boundary, row
/// height-1 the south boundary; columns 0 and width-1 are west/east.
class Field2D {
 public:
  Field2D() = default;
  Field2D(std::size_t width, std::size_t height, double fill = 0.0);

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  bool empty() const noexcept { return values_.empty(); }

  double& at(std::size_t x, std::size_t y) { return values_[y * width_ + x]; }
  double at(std::size_t x, std::size_t y) const { return values_[y * width_ + x]; }

  std::span<double> row(std::size_t y) { return {values_.data() + y * width_, width_}; }
  std::span<const double> row(std::size_t y) const { return {values_.data() + y * width_, width_}; }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool is_boundary(std::size_t x, std::size_t y) const noexcept {
    return x == 0 || y == 0 || x + 1 == width_ || y + 1 == height_;
  }

  /// Bitwise comparison (distinguishes -0.0 from 0.0, NaN payloads compare equal to themselves).
  bool bit_equal(const Field2D& other) const noexcept;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> values_;
};

/// Largest |a - b| over all cells; the fields must have the same shape.
double max_abs_difference(const Field2D& a, const Field2D& b);

void apply_boundary(Field2D& field, const BoundaryValues& boundary);

/// Interior cell held at a constant temperature ("heat source").
struct PinnedCell {
  std::size_t x = 0;
  std::size_t y = 0;
  double value = 0.0;
  bool operator==(const PinnedCell&) const = default;
};

class SourceTerm {
 public:
  SourceTerm() = default;
  explicit SourceTerm(std::vector<PinnedCell> cells);

  /// Adds or replaces the pin at (x, y).
  void set(std::size_t x, std::size_t y, double value);
  /// Returns false when no pin existed at (x, y).
  bool clear(std::size_t x, std::size_t y);

  const std::vector<PinnedCell>& cells() const noexcept { return cells_; }
  bool empty() const noexcept { return cells_.empty(); }

  /// True when every pin lies strictly inside the boundary ring.
  bool fits(std::size_t width, std::size_t height) const noexcept;

  bool operator==(const SourceTerm&) const = default;

 private:
  std::vector<PinnedCell> cells_;  // sorted by (y, x)
};

void apply_sources(Field2D& field, const SourceTerm& sources);

/// Interior grid with the given boundary ring and pins applied.
Field2D make_initial_field(std::size_t width, std::size_t height, const BoundaryValues& boundary,
                           const SourceTerm& sources, double interior = 0.0);

/// Half-open range [begin, end) of global interior rows.
struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t y) const noexcept { return y >= begin && y < end; }
  bool operator==(const RowRange&) const = default;
};

/// Splits the interior rows [1, height-1) into `workers` contiguous strips
/// whose sizes differ by at most one row.
std::vector<RowRange> partition_rows(std::size_t height, std::size_t workers);

/// Splits the interior rows proportionally to `skew` (one positive weight per
/// worker), rounding by largest remainder while keeping every strip non-empty.
std::vector<RowRange> partition_rows(std::size_t height, std::size_t workers, std::span<const double> skew);

/// One worker's strip: its owned rows plus one halo row above and below.
/// Local row 0 is the north halo, local row rows().size()+1 the south halo.
class Subdomain {
 public:
  Subdomain(std::size_t owner_id, RowRange rows, const Field2D& global);

  std::size_t owner_id() const noexcept { return owner_id_; }
  RowRange rows() const noexcept { return rows_; }
  std::size_t width() const noexcept { return width_; }
  std::uint64_t iteration() const noexcept { return iteration_; }

  /// True when the north (south) halo is the fixed boundary row, not a neighbor.
  bool north_is_boundary() const noexcept { return rows_.begin == 1; }
  bool south_is_boundary() const noexcept { return rows_.end + 1 == global_height_; }

  std::uint64_t north_tag() const noexcept { return north_tag_; }
  std::uint64_t south_tag() const noexcept { return south_tag_; }

  /// Installs a neighbor strip. Strips older than the current tag are ignored
  /// and the call returns false.
  bool set_north_halo(std::span<const double> strip, std::uint64_t sender_iteration);
  bool set_south_halo(std::span<const double> strip, std::uint64_t sender_iteration);

  /// First and last owned rows, which are what the neighbors need.
  std::span<const double> first_owned_row() const;
  std::span<const double> last_owned_row() const;

  std::span<const double> owned_row(std::size_t global_y) const;
  std::span<const double> local_values() const noexcept { return values_; }

  /// Rewrites the boundary cells this strip can see (its west/east columns,
  /// and its north/south halo when that halo is the outer ring).
  void apply_boundary(const BoundaryValues& boundary);

  /// Copies owned rows into the matching rows of `global`.
  void write_into(Field2D& global) const;

  /// Replaces owned rows and halos from `global` without touching the counter or tags.
  void load_from(const Field2D& global);

  void reset_iteration(std::uint64_t iteration = 0) noexcept;

 private:
  friend double jacobi_sweep(Subdomain& sub, const SourceTerm& sources);

  double* local_row(std::size_t local_y) noexcept { return values_.data() + local_y * width_; }

  std::size_t owner_id_;
  RowRange rows_;
  std::size_t width_;
  std::size_t global_height_;
  std::uint64_t iteration_ = 0;
  std::uint64_t north_tag_ = 0;
  std::uint64_t south_tag_ = 0;
  std::vector<double> values_;
  std::vector<double> scratch_;
};

/// One Jacobi relaxation step over the owned interior cells: each non-pinned
/// cell becomes the mean of its four neighbors' previous values, pinned cells
/// take their fixed value. Advances the iteration counter and returns the L2
/// norm of the change over owned cells. Throws NonFiniteError on NaN/Inf.
double jacobi_sweep(Subdomain& sub, const SourceTerm& sources);

/// sqrt(sum r_i^2) over the per-worker local residuals.
double global_residual(std::span<const double> local_residuals);

/// Residual of one sequential sweep over a whole field (no state change).
double frozen_field_residual(const Field2D& field, const SourceTerm& sources);

}  // namespace asyncsteer
