#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace patrolsim {

/// Feet per degree of latitude (one nautical mile per arc-minute).
inline constexpr double kFeetPerDegree = 364567.2;

struct LatLon {
  double lat = 0.0;  // degrees north
  double lon = 0.0;  // degrees east

  friend bool operator==(const LatLon&, const LatLon&) = default;
};

inline bool is_valid(const LatLon& p) {
  return std::isfinite(p.lat) && std::isfinite(p.lon) && p.lat >= -90.0 && p.lat <= 90.0 &&
         p.lon >= -180.0 && p.lon <= 180.0;
}

struct BoundingBox {
  double lat_min = 0.0;
  double lat_max = 0.0;
  double lon_min = 0.0;
  double lon_max = 0.0;

  bool valid() const { return lat_min < lat_max && lon_min < lon_max; }

  bool contains(const LatLon& p) const {
    return p.lat >= lat_min && p.lat <= lat_max && p.lon >= lon_min && p.lon <= lon_max;
  }

  LatLon center() const { return {(lat_min + lat_max) / 2.0, (lon_min + lon_max) / 2.0}; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// 39.197-39.372 N, 76.529-76.712 W.
inline constexpr BoundingBox kBaltimoreBox{39.197, 39.372, -76.712, -76.529};

inline double to_radians(double deg) { return deg * std::numbers::pi / 180.0; }

/// Equirectangular distance in feet. Accurate to well under 0.05% for spans
/// below ~0.2 degrees.
inline double distance_feet(const LatLon& a, const LatLon& b) {
  const double dlat = b.lat - a.lat;
  const double dlon = (b.lon - a.lon) * std::cos(to_radians((a.lat + b.lat) / 2.0));
  return kFeetPerDegree * std::sqrt(dlat * dlat + dlon * dlon);
}

using Ring = std::vector<LatLon>;

/// Exterior ring plus holes. Rings may be open or closed.
struct Polygon {
  Ring exterior;
  std::vector<Ring> holes;
};

namespace detail {

// Half-open crossing rule on the (lon, lat) plane: an edge counts when it
// straddles the horizontal through p with one endpoint strictly above.
inline bool ring_parity(const LatLon& p, const Ring& ring) {
  bool inside = false;
  const std::size_t n = ring.size();
  if (n < 3) return false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const LatLon& a = ring[i];
    const LatLon& b = ring[j];
    if ((a.lat > p.lat) != (b.lat > p.lat)) {
      const double x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
      if (p.lon < x) inside = !inside;
    }
  }
  return inside;
}

}  // namespace detail

/// Ray-casting parity over all rings; points in holes are outside.
inline bool point_in_polygon(const LatLon& p, const Polygon& poly) {
  bool inside = detail::ring_parity(p, poly.exterior);
  for (const Ring& hole : poly.holes) {
    if (detail::ring_parity(p, hole)) inside = !inside;
  }
  return inside;
}

/// Uniform grid over local equirectangular feet, anchored at a frame origin.
/// Cells are unbounded, so points outside the frame are still indexed.
class GridIndex {
 public:
  GridIndex(std::vector<LatLon> points, double cell_size_ft, const BoundingBox& frame)
      : points_(std::move(points)), cell_size_ft_(cell_size_ft), origin_(frame.center()) {
    if (!(cell_size_ft > 0.0)) throw std::invalid_argument("grid cell size must be positive");
    cos_origin_ = std::cos(to_radians(origin_.lat));
    cell_dlat_ = cell_size_ft_ / kFeetPerDegree;
    cell_dlon_ = cell_size_ft_ / (kFeetPerDegree * cos_origin_);
    for (std::size_t id = 0; id < points_.size(); ++id) {
      cells_[cell_of(points_[id])].push_back(id);
    }
  }

  double cell_size_ft() const { return cell_size_ft_; }
  const LatLon& origin() const { return origin_; }
  std::size_t size() const { return points_.size(); }
  std::size_t occupied_cells() const { return cells_.size(); }
  const std::vector<LatLon>& points() const { return points_; }

  /// Ids of indexed points with distance_feet(center, p) <= radius, ascending.
  std::vector<std::size_t> radius_query(const LatLon& center, double radius_ft) const {
    std::vector<std::size_t> out;
    if (points_.empty() || !(radius_ft >= 0.0)) return out;
    visit_candidates(center, radius_ft, [&](std::size_t id) {
      if (distance_feet(center, points_[id]) <= radius_ft) out.push_back(id);
    });
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t count_within(const LatLon& center, double radius_ft) const {
    std::size_t k = 0;
    if (points_.empty() || !(radius_ft >= 0.0)) return 0;
    visit_candidates(center, radius_ft, [&](std::size_t id) {
      if (distance_feet(center, points_[id]) <= radius_ft) ++k;
    });
    return k;
  }

 private:
  struct Cell {
    std::int64_t row = 0;
    std::int64_t col = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
  };
  struct CellHash {
    std::size_t operator()(const Cell& c) const {
      return static_cast<std::size_t>(static_cast<std::uint64_t>(c.row) * 0x9e3779b97f4a7c15ULL ^
                                      static_cast<std::uint64_t>(c.col));
    }
  };

  std::int64_t row_of(double lat) const {
    return static_cast<std::int64_t>(std::floor((lat - origin_.lat) / cell_dlat_));
  }
  std::int64_t col_of(double lon) const {
    return static_cast<std::int64_t>(std::floor((lon - origin_.lon) / cell_dlon_));
  }
  Cell cell_of(const LatLon& p) const { return {row_of(p.lat), col_of(p.lon)}; }

  // The longitude half-width uses the smallest cosine over the latitude band
  // the ball can reach, so the scanned rectangle always covers the ball.
  template <typename Visit>
  void visit_candidates(const LatLon& center, double radius_ft, Visit&& visit) const {
    const double slack = 1.0 + 1e-9;
    const double half_lat = radius_ft / kFeetPerDegree * slack;
    const double lat_lo = center.lat - half_lat;
    const double lat_hi = center.lat + half_lat;
    const double min_cos = std::max(
        1e-12, std::min(std::cos(to_radians(std::clamp(lat_lo, -90.0, 90.0))),
                        std::cos(to_radians(std::clamp(lat_hi, -90.0, 90.0)))));
    // The band may straddle the equator, where cos peaks; the minimum is at an end.
    const double half_lon = radius_ft / (kFeetPerDegree * min_cos) * slack;

    const std::int64_t r0 = row_of(lat_lo), r1 = row_of(lat_hi);
    const std::int64_t c0 = col_of(center.lon - half_lon), c1 = col_of(center.lon + half_lon);
    const double span = static_cast<double>(r1 - r0 + 1) * static_cast<double>(c1 - c0 + 1);

    if (span > static_cast<double>(cells_.size())) {
      for (const auto& [cell, ids] : cells_) {
        if (cell.row < r0 || cell.row > r1 || cell.col < c0 || cell.col > c1) continue;
        for (std::size_t id : ids) visit(id);
      }
      return;
    }
    for (std::int64_t r = r0; r <= r1; ++r) {
      for (std::int64_t c = c0; c <= c1; ++c) {
        auto it = cells_.find(Cell{r, c});
        if (it == cells_.end()) continue;
        for (std::size_t id : it->second) visit(id);
      }
    }
  }

  std::vector<LatLon> points_;
  double cell_size_ft_;
  LatLon origin_;
  double cos_origin_ = 1.0;
  double cell_dlat_ = 0.0;
  double cell_dlon_ = 0.0;
  std::unordered_map<Cell, std::vector<std::size_t>, CellHash> cells_;
};

/// Smallest box around the points, padded; a unit box around the origin when empty.
inline BoundingBox points_box(const std::vector<LatLon>& points, double pad_deg = 1e-3) {
  if (points.empty()) return {-1.0, 1.0, -1.0, 1.0};
  BoundingBox b{points[0].lat, points[0].lat, points[0].lon, points[0].lon};
  for (const auto& p : points) {
    b.lat_min = std::min(b.lat_min, p.lat);
    b.lat_max = std::max(b.lat_max, p.lat);
    b.lon_min = std::min(b.lon_min, p.lon);
    b.lon_max = std::max(b.lon_max, p.lon);
  }
  b.lat_min -= pad_deg;
  b.lat_max += pad_deg;
  b.lon_min -= pad_deg;
  b.lon_max += pad_deg;
  return b;
}

inline GridIndex build_grid_index(std::vector<LatLon> points, double cell_size_ft,
                                  const BoundingBox& frame) {
  return GridIndex(std::move(points), cell_size_ft, frame);
}

}  // namespace patrolsim
