#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "patrolsim/csv.hpp"
#include "patrolsim/geodata.hpp"
#include "patrolsim/ingest.hpp"
#include "patrolsim/rng.hpp"

namespace patrolsim {

/// Parameters of the bundled synthetic city: a rows x cols grid of
/// rectangular neighborhoods whose Black share falls from west to east, with
/// crime drawn around hotspots in each half.
struct SyntheticCityConfig {
  City city = City::Baltimore;
  int year = 2019;
  BoundingBox bbox = kBaltimoreBox;
  int grid_rows = 4;
  int grid_cols = 4;
  int incidents_per_month = 300;
  /// Share of crime placed in the western (Black-majority) half.
  double black_crime_share = 0.5;
  int hotspots_per_half = 2;
  double hotspot_sigma_deg = 0.008;
  /// Share of rows generated with an unusable coordinate or outside the box.
  double invalid_share = 0.01;
  std::uint64_t seed = 1;
};

inline constexpr BoundingBox kChicagoSyntheticBox{41.644, 42.023, -87.940, -87.524};

struct SyntheticCity {
  BoundingBox bbox;
  std::vector<Neighborhood> neighborhoods;
  /// Raw rows for January..December, before filtering; some fall outside the box.
  std::vector<CrimeIncident> incidents;
};

namespace detail {

inline Polygon rect(double lat0, double lat1, double lon0, double lon1) {
  return {{{lat0, lon0}, {lat0, lon1}, {lat1, lon1}, {lat1, lon0}, {lat0, lon0}}, {}};
}

}  // namespace detail

inline SyntheticCity make_synthetic_city(const SyntheticCityConfig& cfg) {
  SyntheticCity out;
  out.bbox = cfg.bbox;
  const BoundingBox& b = cfg.bbox;
  Rng rng(derive_seed(cfg.seed, std::string(to_string(cfg.city)) + "/" + std::to_string(cfg.year) + "/synthetic"));

  const double dlat = (b.lat_max - b.lat_min) / cfg.grid_rows;
  const double dlon = (b.lon_max - b.lon_min) / cfg.grid_cols;
  for (int r = 0; r < cfg.grid_rows; ++r) {
    for (int c = 0; c < cfg.grid_cols; ++c) {
      const double t = cfg.grid_cols > 1 ? static_cast<double>(c) / (cfg.grid_cols - 1) : 0.5;
      Neighborhood h;
      h.id = "N" + std::to_string(r) + std::to_string(c);
      h.name = "Tract " + std::to_string(r * cfg.grid_cols + c + 1);
      h.boundary.push_back(detail::rect(b.lat_min + r * dlat, b.lat_min + (r + 1) * dlat, b.lon_min + c * dlon,
                                        b.lon_min + (c + 1) * dlon));
      const double jitter = uniform(rng, -0.03, 0.03);
      h.pct_black = std::clamp(0.88 - 0.8 * t + jitter, 0.0, 0.95);
      h.pct_neither = 0.05;
      h.pct_white = 1.0 - h.pct_black - h.pct_neither;
      h.median_income = std::round(32000.0 + 58000.0 * t + 4000.0 * (r - (cfg.grid_rows - 1) / 2.0) +
                                   uniform(rng, -1500.0, 1500.0));
      h.poverty_rate = std::clamp(0.34 - 0.24 * t + 0.03 * (r % 2) + uniform(rng, -0.01, 0.01), 0.0, 1.0);
      out.neighborhoods.push_back(std::move(h));
    }
  }

  // hotspot centers: western half first, then eastern
  std::vector<LatLon> west, east;
  for (int i = 0; i < cfg.hotspots_per_half; ++i) {
    west.push_back({uniform(rng, b.lat_min + 0.2 * (b.lat_max - b.lat_min), b.lat_max - 0.2 * (b.lat_max - b.lat_min)),
                    uniform(rng, b.lon_min + 0.1 * (b.lon_max - b.lon_min), b.lon_min + 0.4 * (b.lon_max - b.lon_min))});
    east.push_back({uniform(rng, b.lat_min + 0.2 * (b.lat_max - b.lat_min), b.lat_max - 0.2 * (b.lat_max - b.lat_min)),
                    uniform(rng, b.lon_min + 0.6 * (b.lon_max - b.lon_min), b.lon_min + 0.9 * (b.lon_max - b.lon_min))});
  }

  int serial = 0;
  for (int month = 1; month <= 12; ++month) {
    for (int i = 0; i < cfg.incidents_per_month; ++i) {
      const bool western = bernoulli(rng, cfg.black_crime_share);
      const auto& spots = western ? west : east;
      const LatLon& center = spots[uniform_index(rng, spots.size())];
      LatLon p;
      do {
        p = {center.lat + cfg.hotspot_sigma_deg * standard_normal(rng),
             center.lon + cfg.hotspot_sigma_deg * standard_normal(rng)};
      } while (!b.contains(p));
      if (bernoulli(rng, cfg.invalid_share)) p.lat = b.lat_max + 0.1;  // lands outside the box
      CrimeIncident inc;
      inc.id = std::to_string(cfg.year) + "-" + std::to_string(++serial);
      inc.location = p;
      inc.timestamp = {cfg.year, month, 1 + static_cast<int>(uniform_index(rng, 28)),
                       static_cast<int>(uniform_index(rng, 24)), static_cast<int>(uniform_index(rng, 60)), 0};
      inc.city = cfg.city;
      inc.crime_type = bernoulli(rng, 0.5) ? "LARCENY" : "BURGLARY";
      out.incidents.push_back(std::move(inc));
    }
  }
  return out;
}

// --- export in the ingest file formats ----------------------------------------

inline std::string format_datetime(const DateTime& t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02d %02d:%02d:%02d", t.year, t.month, t.day, t.hour, t.minute, t.second);
  return buf;
}

inline std::string synthetic_crimes_csv(const SyntheticCity& city) {
  std::string out = "id,lat,lon,date,type\n";
  for (const auto& inc : city.incidents) {
    out += csv::row({inc.id, csv::num(inc.location.lat), csv::num(inc.location.lon), format_datetime(inc.timestamp),
                     inc.crime_type});
  }
  return out;
}

inline std::string neighborhoods_geojson(const std::vector<Neighborhood>& hoods) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& h : hoods) {
    nlohmann::json polys = nlohmann::json::array();
    for (const auto& poly : h.boundary) {
      nlohmann::json rings = nlohmann::json::array();
      auto ring_json = [](const Ring& ring) {
        nlohmann::json r = nlohmann::json::array();
        for (const auto& v : ring) r.push_back({v.lon, v.lat});
        return r;
      };
      rings.push_back(ring_json(poly.exterior));
      for (const auto& hole : poly.holes) rings.push_back(ring_json(hole));
      polys.push_back(rings);
    }
    features.push_back({{"type", "Feature"},
                        {"properties", {{"id", h.id}, {"name", h.name}}},
                        {"geometry", {{"type", "MultiPolygon"}, {"coordinates", polys}}}});
  }
  return nlohmann::json{{"type", "FeatureCollection"}, {"features", features}}.dump(1) + "\n";
}

inline std::string demographics_csv(const std::vector<Neighborhood>& hoods) {
  std::string out = "id,pct_black,pct_white,pct_neither,median_income,poverty_rate\n";
  for (const auto& h : hoods) {
    out += csv::row({h.id, csv::num(h.pct_black * 100.0), csv::num(h.pct_white * 100.0),
                     csv::num(h.pct_neither * 100.0), csv::num(h.median_income), csv::num(h.poverty_rate * 100.0)});
  }
  return out;
}

}  // namespace patrolsim
