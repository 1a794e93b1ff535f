#include "asyncsteer/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>

#include "asyncsteer/errors.hpp"

namespace asyncsteer {

std::string_view to_string(Edge edge) {
  switch (edge) {
    case Edge::North: return "north";
    case Edge::South: return "south";
    case Edge::East: return "east";
    case Edge::West: return "west";
  }
  return "north";
}

std::optional<Edge> edge_from_string(std::string_view name) {
  if (name == "north") return Edge::North;
  if (name == "south") return Edge::South;
  if (name == "east") return Edge::East;
  if (name == "west") return Edge::West;
  return std::nullopt;
}

double& BoundaryValues::operator[](Edge edge) {
  switch (edge) {
    case Edge::North: return north;
    case Edge::South: return south;
    case Edge::East: return east;
    case Edge::West: return west;
  }
  return north;
}

double BoundaryValues::operator[](Edge edge) const {
  return const_cast<BoundaryValues&>(*this)[edge];
}

Field2D::Field2D(std::size_t width, std::size_t height, double fill)
    : width_(width), height_(height) {
  if (width < 3 || height < 3) {
    throw SizingError("grid must be at least 3x3, got " + std::to_string(width) + "x" +
                      std::to_string(height));
  }
  values_.assign(width * height, fill);
}

bool Field2D::bit_equal(const Field2D& other) const noexcept {
  return width_ == other.width_ && height_ == other.height_ &&
         std::memcmp(values_.data(), other.values_.data(), values_.size() * sizeof(double)) == 0;
}

double max_abs_difference(const Field2D& a, const Field2D& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw SizingError("field shapes differ");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
  }
  return worst;
}

void apply_boundary(Field2D& field, const BoundaryValues& boundary) {
  const std::size_t w = field.width();
  const std::size_t h = field.height();
  for (std::size_t y = 1; y + 1 < h; ++y) {
    field.at(0, y) = boundary.west;
    field.at(w - 1, y) = boundary.east;
  }
  std::ranges::fill(field.row(0), boundary.north);
  std::ranges::fill(field.row(h - 1), boundary.south);
}

SourceTerm::SourceTerm(std::vector<PinnedCell> cells) {
  for (const auto& c : cells) set(c.x, c.y, c.value);
}

void SourceTerm::set(std::size_t x, std::size_t y, double value) {
  auto it = std::ranges::lower_bound(cells_, std::pair{y, x}, {},
                                     [](const PinnedCell& c) { return std::pair{c.y, c.x}; });
  if (it != cells_.end() && it->x == x && it->y == y) {
    it->value = value;
  } else {
    cells_.insert(it, PinnedCell{x, y, value});
  }
}

bool SourceTerm::clear(std::size_t x, std::size_t y) {
  auto it = std::ranges::find_if(cells_, [&](const PinnedCell& c) { return c.x == x && c.y == y; });
  if (it == cells_.end()) return false;
  cells_.erase(it);
  return true;
}

bool SourceTerm::fits(std::size_t width, std::size_t height) const noexcept {
  return std::ranges::all_of(cells_, [&](const PinnedCell& c) {
    return c.x >= 1 && c.y >= 1 && c.x + 1 < width && c.y + 1 < height;
  });
}

void apply_sources(Field2D& field, const SourceTerm& sources) {
  for (const auto& c : sources.cells()) field.at(c.x, c.y) = c.value;
}

Field2D make_initial_field(std::size_t width, std::size_t height, const BoundaryValues& boundary,
                           const SourceTerm& sources, double interior) {
  if (!sources.fits(width, height)) {
    throw std::invalid_argument("source cell lies on or outside the boundary ring");
  }
  Field2D field(width, height, interior);
  apply_boundary(field, boundary);
  apply_sources(field, sources);
  return field;
}

namespace {

void check_interior(std::size_t height, std::size_t workers) {
  if (workers == 0) throw SizingError("at least one worker is required");
  if (height < 3) throw SizingError("grid height must be at least 3");
  const std::size_t interior = height - 2;
  if (workers > interior) {
    throw SizingError(std::to_string(workers) + " workers exceed " + std::to_string(interior) +
                      " interior rows");
  }
}

std::vector<RowRange> ranges_from_sizes(const std::vector<std::size_t>& sizes) {
  std::vector<RowRange> out;
  out.reserve(sizes.size());
  std::size_t begin = 1;
  for (auto s : sizes) {
    out.push_back({begin, begin + s});
    begin += s;
  }
  return out;
}

}  // namespace

std::vector<RowRange> partition_rows(std::size_t height, std::size_t workers) {
  check_interior(height, workers);
  const std::size_t interior = height - 2;
  std::vector<std::size_t> sizes(workers, interior / workers);
  for (std::size_t i = 0; i < interior % workers; ++i) ++sizes[i];
  return ranges_from_sizes(sizes);
}

std::vector<RowRange> partition_rows(std::size_t height, std::size_t workers, std::span<const double> skew) {
  check_interior(height, workers);
  if (skew.size() != workers) {
    throw SizingError("skew has " + std::to_string(skew.size()) + " entries for " +
                      std::to_string(workers) + " workers");
  }
  for (double s : skew) {
    if (!(s > 0.0) || !std::isfinite(s)) throw SizingError("skew entries must be positive");
  }
  const std::size_t interior = height - 2;
  const double total = std::accumulate(skew.begin(), skew.end(), 0.0);

  std::vector<std::size_t> sizes(workers);
  std::vector<double> remainder(workers);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < workers; ++i) {
    const double ideal = static_cast<double>(interior) * skew[i] / total;
    sizes[i] = static_cast<std::size_t>(std::floor(ideal));
    remainder[i] = ideal - static_cast<double>(sizes[i]);
    if (sizes[i] == 0) {
      sizes[i] = 1;
      remainder[i] = -1.0;
    }
    assigned += sizes[i];
  }

  std::vector<std::size_t> order(workers);
  std::iota(order.begin(), order.end(), 0);
  // Stable so ties go to the lower worker id.
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < interior; k = (k + 1) % workers) {
    ++sizes[order[k]];
    ++assigned;
  }
  // Minimum-one bumps can overshoot; take rows back from the largest strips.
  while (assigned > interior) {
    auto largest = std::ranges::max_element(sizes);
    --*largest;
    --assigned;
  }
  return ranges_from_sizes(sizes);
}

Subdomain::Subdomain(std::size_t owner_id, RowRange rows, const Field2D& global)
    : owner_id_(owner_id),
      rows_(rows),
      width_(global.width()),
      global_height_(global.height()) {
  if (rows.begin < 1 || rows.end > global.height() - 1 || rows.begin >= rows.end) {
    throw SizingError("row range [" + std::to_string(rows.begin) + ", " + std::to_string(rows.end) +
                      ") is not a non-empty interior range");
  }
  values_.resize((rows.size() + 2) * width_);
  load_from(global);
  scratch_ = values_;
}

void Subdomain::load_from(const Field2D& global) {
  for (std::size_t local = 0; local < rows_.size() + 2; ++local) {
    auto src = global.row(rows_.begin - 1 + local);
    std::ranges::copy(src, local_row(local));
  }
}

bool Subdomain::set_north_halo(std::span<const double> strip, std::uint64_t sender_iteration) {
  if (strip.size() != width_) throw SizingError("halo strip width mismatch");
  if (sender_iteration < north_tag_) return false;
  std::ranges::copy(strip, local_row(0));
  north_tag_ = sender_iteration;
  return true;
}

bool Subdomain::set_south_halo(std::span<const double> strip, std::uint64_t sender_iteration) {
  if (strip.size() != width_) throw SizingError("halo strip width mismatch");
  if (sender_iteration < south_tag_) return false;
  std::ranges::copy(strip, local_row(rows_.size() + 1));
  south_tag_ = sender_iteration;
  return true;
}

std::span<const double> Subdomain::first_owned_row() const {
  return {values_.data() + width_, width_};
}

std::span<const double> Subdomain::last_owned_row() const {
  return {values_.data() + rows_.size() * width_, width_};
}

std::span<const double> Subdomain::owned_row(std::size_t global_y) const {
  if (!rows_.contains(global_y)) throw std::out_of_range("row not owned by this subdomain");
  return {values_.data() + (global_y - rows_.begin + 1) * width_, width_};
}

void Subdomain::apply_boundary(const BoundaryValues& boundary) {
  const std::size_t local_rows = rows_.size() + 2;
  for (std::size_t local = 0; local < local_rows; ++local) {
    local_row(local)[0] = boundary.west;
    local_row(local)[width_ - 1] = boundary.east;
  }
  if (north_is_boundary()) std::fill_n(local_row(0), width_, boundary.north);
  if (south_is_boundary()) std::fill_n(local_row(local_rows - 1), width_, boundary.south);
}

void Subdomain::write_into(Field2D& global) const {
  for (std::size_t y = rows_.begin; y < rows_.end; ++y) {
    std::ranges::copy(owned_row(y), global.row(y).begin());
  }
}

void Subdomain::reset_iteration(std::uint64_t iteration) noexcept {
  iteration_ = iteration;
  north_tag_ = 0;
  south_tag_ = 0;
}

double jacobi_sweep(Subdomain& sub, const SourceTerm& sources) {
  const std::size_t w = sub.width_;
  const std::size_t n = sub.rows_.size();
  const double* old = sub.values_.data();
  double* next = sub.scratch_.data();

  for (std::size_t r = 1; r <= n; ++r) {
    const double* up = old + (r - 1) * w;
    const double* mid = old + r * w;
    const double* down = old + (r + 1) * w;
    double* out = next + r * w;
    for (std::size_t x = 1; x + 1 < w; ++x) {
      out[x] = (up[x] + down[x] + mid[x - 1] + mid[x + 1]) * 0.25;
    }
  }
  for (const auto& pin : sources.cells()) {
    if (sub.rows_.contains(pin.y)) next[(pin.y - sub.rows_.begin + 1) * w + pin.x] = pin.value;
  }

  double sum = 0.0;
  for (std::size_t r = 1; r <= n; ++r) {
    double* cur = sub.values_.data() + r * w;
    const double* out = next + r * w;
    for (std::size_t x = 1; x + 1 < w; ++x) {
      const double d = out[x] - cur[x];
      sum += d * d;
      cur[x] = out[x];
    }
  }
  ++sub.iteration_;
  const double residual = std::sqrt(sum);
  if (!std::isfinite(residual)) {
    throw NonFiniteError("non-finite value in subdomain of worker " + std::to_string(sub.owner_id_) +
                         " at iteration " + std::to_string(sub.iteration_));
  }
  return residual;
}

double global_residual(std::span<const double> local_residuals) {
  if (local_residuals.empty()) throw std::invalid_argument("global_residual of no workers");
  double sum = 0.0;
  for (double r : local_residuals) sum += r * r;
  return std::sqrt(sum);
}

double frozen_field_residual(const Field2D& field, const SourceTerm& sources) {
  Subdomain whole(0, RowRange{1, field.height() - 1}, field);
  return jacobi_sweep(whole, sources);
}

}  // namespace asyncsteer
