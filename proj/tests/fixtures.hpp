#pragma once

#include <string>
#include <vector>

#include "patrolsim/gan.hpp"
#include "patrolsim/geodata.hpp"
#include "patrolsim/ingest.hpp"
#include "patrolsim/rng.hpp"

namespace fixtures {

using namespace patrolsim;

inline Polygon rect(double lat0, double lat1, double lon0, double lon1) {
  return {{{lat0, lon0}, {lat0, lon1}, {lat1, lon1}, {lat1, lon0}}, {}};
}

inline Neighborhood hood(std::string id, const Polygon& poly, double black, double white, double neither,
                         double income = 50000.0, double poverty = 0.2) {
  return {id, id, {poly}, black, white, neither, income, poverty};
}

inline CrimeIncident incident(std::string id, LatLon at, int month = 3, std::string hood_id = "",
                              City city = City::Baltimore, int year = 2019) {
  CrimeIncident c;
  c.id = std::move(id);
  c.location = at;
  c.timestamp = {year, month, 15, 12, 0, 0};
  c.city = city;
  c.crime_type = "LARCENY";
  if (!hood_id.empty()) c.neighborhood_id = std::move(hood_id);
  return c;
}

inline LatLon from_normalized(double u, double v, const BoundingBox& box) { return denormalize_coords(u, v, box); }

/// n points around a normalized center with isotropic normalized sigma,
/// kept inside the box.
inline std::vector<LatLon> gaussian_points(std::size_t n, double u, double v, double sigma, const BoundingBox& box,
                                           Rng& rng) {
  std::vector<LatLon> out;
  while (out.size() < n) {
    const double a = u + sigma * standard_normal(rng);
    const double b = v + sigma * standard_normal(rng);
    if (a <= -1.0 || a >= 1.0 || b <= -1.0 || b >= 1.0) continue;
    out.push_back(from_normalized(a, b, box));
  }
  return out;
}

/// Two neighborhoods splitting the box at the longitude midpoint: "W" in the
/// west is mostly Black, "E" in the east mostly White.
struct TwoClusterCity {
  BoundingBox bbox = kBaltimoreBox;
  std::vector<Neighborhood> neighborhoods;
  MonthSlice slice;
};

/// Crimes drawn around normalized (-0.5, 0) (west) and (+0.5, 0) (east); the
/// west share is `west_share`. The cluster sits on the latitude axis (u), so
/// "first coordinate" means u for labeled fixtures in normalized space.
inline TwoClusterCity two_cluster_city(std::size_t n, double west_share, double sigma, std::uint64_t seed,
                                       double black_west = 0.9, double black_east = 0.05, int month = 3) {
  TwoClusterCity c;
  const BoundingBox& b = c.bbox;
  const double mid = 0.5 * (b.lon_min + b.lon_max);
  c.neighborhoods.push_back(hood("W", rect(b.lat_min, b.lat_max, b.lon_min, mid), black_west,
                                 1.0 - black_west - 0.05, 0.05, 35000.0, 0.3));
  c.neighborhoods.push_back(hood("E", rect(b.lat_min, b.lat_max, mid, b.lon_max), black_east,
                                 1.0 - black_east - 0.05, 0.05, 85000.0, 0.08));
  Rng rng(seed);
  c.slice.city = City::Baltimore;
  c.slice.year = 2019;
  c.slice.month = month;
  for (std::size_t i = 0; i < n; ++i) {
    const bool west = uniform01(rng) < west_share;
    LatLon p;
    do {
      const double u = sigma * standard_normal(rng);
      const double v = (west ? -0.5 : 0.5) + sigma * standard_normal(rng);
      p = from_normalized(u, v, b);
    } while (!b.contains(p) || (west ? p.lon >= mid : p.lon < mid));
    c.slice.incidents.push_back(incident("c" + std::to_string(i), p, month, west ? "W" : "E"));
  }
  return c;
}

}  // namespace fixtures
