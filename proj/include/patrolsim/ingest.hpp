#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "patrolsim/csv.hpp"
#include "patrolsim/error.hpp"
#include "patrolsim/geodata.hpp"

namespace patrolsim {

enum class City { Baltimore, Chicago };

inline std::string_view to_string(City c) { return c == City::Baltimore ? "Baltimore" : "Chicago"; }

inline std::optional<City> parse_city(std::string_view s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char ch) { return std::tolower(ch); });
  if (lower == "baltimore") return City::Baltimore;
  if (lower == "chicago") return City::Chicago;
  return std::nullopt;
}

struct DateTime {
  int year = 1970;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;

  friend auto operator<=>(const DateTime&, const DateTime&) = default;
};

namespace detail {

inline bool read_int(std::string_view& s, int digits_min, int digits_max, int& out) {
  int n = 0;
  while (n < static_cast<int>(s.size()) && n < digits_max && s[n] >= '0' && s[n] <= '9') ++n;
  if (n < digits_min) return false;
  std::from_chars(s.data(), s.data() + n, out);
  s.remove_prefix(n);
  return true;
}

inline bool eat(std::string_view& s, char c) {
  if (s.empty() || s.front() != c) return false;
  s.remove_prefix(1);
  return true;
}

inline bool valid_date(int y, int m, int d) {
  using namespace std::chrono;
  return year_month_day{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}}.ok();
}

// "HH:MM[:SS][.fff][ AM|PM]"; trailing zone suffixes are ignored.
inline bool read_time(std::string_view s, DateTime& dt) {
  if (!read_int(s, 1, 2, dt.hour) || !eat(s, ':') || !read_int(s, 2, 2, dt.minute)) return false;
  if (eat(s, ':') && !read_int(s, 2, 2, dt.second)) return false;
  if (eat(s, '.')) {
    int frac = 0;
    read_int(s, 1, 9, frac);
  }
  s = csv::trim(s);
  if (s.size() >= 2) {
    const char a = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    const char m = static_cast<char>(std::toupper(static_cast<unsigned char>(s[1])));
    if ((a == 'A' || a == 'P') && m == 'M') {
      if (dt.hour < 1 || dt.hour > 12) return false;
      dt.hour = (dt.hour % 12) + (a == 'P' ? 12 : 0);
    }
  }
  return dt.hour <= 23 && dt.minute <= 59 && dt.second <= 60;
}

}  // namespace detail

/// Accepts "YYYY-MM-DD[ |T]HH:MM[:SS]" (also with '/' separators) and
/// "MM/DD/YYYY HH:MM[:SS][ AM|PM]". A bare date means midnight.
inline std::optional<DateTime> parse_datetime(std::string_view text) {
  using detail::eat;
  using detail::read_int;
  std::string_view s = csv::trim(text);
  DateTime dt;
  std::string_view probe = s;
  int first = 0;
  if (!read_int(probe, 1, 4, first)) return std::nullopt;
  const std::size_t first_len = s.size() - probe.size();
  if (first_len == 4) {
    dt.year = first;
    s = probe;
    const char sep = s.empty() ? '\0' : s.front();
    if (sep != '-' && sep != '/') return std::nullopt;
    s.remove_prefix(1);
    if (!read_int(s, 1, 2, dt.month) || !eat(s, sep) || !read_int(s, 1, 2, dt.day)) return std::nullopt;
  } else {
    dt.month = first;
    s = probe;
    if (!eat(s, '/') || !read_int(s, 1, 2, dt.day) || !eat(s, '/') || !read_int(s, 4, 4, dt.year)) {
      return std::nullopt;
    }
  }
  if (!detail::valid_date(dt.year, dt.month, dt.day)) return std::nullopt;
  if (s.empty()) return dt;
  if (s.front() != ' ' && s.front() != 'T') return std::nullopt;
  s.remove_prefix(1);
  s = csv::trim(s);
  if (s.empty()) return dt;
  if (!detail::read_time(s, dt)) return std::nullopt;
  return dt;
}

struct CrimeIncident {
  std::string id;
  LatLon location;
  DateTime timestamp;
  City city = City::Baltimore;
  std::string crime_type;
  std::optional<std::string> neighborhood_id;
};

/// Names of the source columns for one portal schema.
struct ColumnMapping {
  City city = City::Baltimore;
  std::string id;
  std::string lat;
  std::string lon;
  std::string date;
  std::string type;
};

inline std::map<std::string, ColumnMapping> default_column_presets() {
  return {
      {"baltimore-part1",
       {City::Baltimore, "RowID", "Latitude", "Longitude", "CrimeDateTime", "Description"}},
      {"chicago-portal", {City::Chicago, "ID", "Latitude", "Longitude", "Date", "Primary Type"}},
      {"patrolsim", {City::Baltimore, "id", "lat", "lon", "date", "type"}},
  };
}

struct CrimeParseResult {
  std::vector<CrimeIncident> incidents;
  std::size_t rows_read = 0;
  std::size_t dropped = 0;
};

inline CrimeParseResult parse_crime_table(const csv::Table& table, const ColumnMapping& m,
                                          const std::string& source = "<memory>") {
  auto require = [&](const std::string& name) {
    auto idx = table.column(name);
    if (!idx) throw DataError(source + ": missing mapped column '" + name + "'");
    return *idx;
  };
  const std::size_t c_id = require(m.id);
  const std::size_t c_lat = require(m.lat);
  const std::size_t c_lon = require(m.lon);
  const std::size_t c_date = require(m.date);
  const std::size_t c_type = require(m.type);
  const std::size_t width = std::max({c_id, c_lat, c_lon, c_date, c_type}) + 1;

  CrimeParseResult out;
  out.rows_read = table.rows.size();
  out.incidents.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    if (row.size() < width) {
      ++out.dropped;
      continue;
    }
    const auto lat = csv::to_double(row[c_lat]);
    const auto lon = csv::to_double(row[c_lon]);
    const auto when = parse_datetime(row[c_date]);
    if (!lat || !lon || !when || !is_valid(LatLon{*lat, *lon})) {
      ++out.dropped;
      continue;
    }
    out.incidents.push_back({row[c_id], {*lat, *lon}, *when, m.city, row[c_type], std::nullopt});
  }
  return out;
}

/// One incident per parseable row; rows with bad coordinates or dates are
/// counted in `dropped`.
inline CrimeParseResult parse_crime_csv(const std::string& path, const ColumnMapping& mapping) {
  return parse_crime_table(csv::read(path), mapping, path);
}

/// Keeps incidents inside the box and outside the January holdout.
inline std::vector<CrimeIncident> filter_valid(const std::vector<CrimeIncident>& incidents,
                                               const BoundingBox& bbox) {
  std::vector<CrimeIncident> out;
  out.reserve(incidents.size());
  for (const auto& inc : incidents) {
    if (bbox.contains(inc.location) && inc.timestamp.month >= 2) out.push_back(inc);
  }
  return out;
}

struct Neighborhood {
  std::string id;
  std::string name;
  std::vector<Polygon> boundary;  // MultiPolygon parts
  double pct_black = 0.0;
  double pct_white = 0.0;
  double pct_neither = 0.0;
  double median_income = 0.0;
  double poverty_rate = 0.0;

  bool contains(const LatLon& p) const {
    return std::any_of(boundary.begin(), boundary.end(),
                       [&](const Polygon& poly) { return point_in_polygon(p, poly); });
  }
};

/// Bounding box of every boundary vertex, padded on all sides.
inline BoundingBox hull_box(const std::vector<Neighborhood>& hoods, double pad_deg = 0.01) {
  BoundingBox b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& h : hoods) {
    for (const auto& poly : h.boundary) {
      for (const auto& v : poly.exterior) {
        b.lat_min = std::min(b.lat_min, v.lat);
        b.lat_max = std::max(b.lat_max, v.lat);
        b.lon_min = std::min(b.lon_min, v.lon);
        b.lon_max = std::max(b.lon_max, v.lon);
      }
    }
  }
  if (!b.valid()) throw DataError("cannot derive a bounding box from empty boundaries");
  b.lat_min -= pad_deg;
  b.lat_max += pad_deg;
  b.lon_min -= pad_deg;
  b.lon_max += pad_deg;
  return b;
}

struct BoundaryFeature {
  std::string id;
  std::string name;
  std::vector<Polygon> parts;
};

namespace detail {

inline std::string json_scalar_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return csv::num(v.get<double>());
  return v.dump();
}

inline Ring parse_ring(const nlohmann::json& coords, const std::string& where) {
  if (!coords.is_array() || coords.size() < 3) throw DataError(where + ": ring needs >= 3 positions");
  Ring ring;
  ring.reserve(coords.size());
  for (const auto& pos : coords) {
    if (!pos.is_array() || pos.size() < 2 || !pos[0].is_number() || !pos[1].is_number()) {
      throw DataError(where + ": malformed position");
    }
    ring.push_back({pos[1].get<double>(), pos[0].get<double>()});
  }
  return ring;
}

inline Polygon parse_polygon(const nlohmann::json& rings, const std::string& where) {
  if (!rings.is_array() || rings.empty()) throw DataError(where + ": empty polygon");
  Polygon poly;
  poly.exterior = parse_ring(rings[0], where);
  for (std::size_t i = 1; i < rings.size(); ++i) poly.holes.push_back(parse_ring(rings[i], where));
  return poly;
}

}  // namespace detail

/// Reads a GeoJSON FeatureCollection of Polygon / MultiPolygon features.
inline std::vector<BoundaryFeature> parse_boundaries(const std::string& text, const std::string& id_property,
                                                     const std::string& name_property = "name",
                                                     const std::string& source = "<memory>") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(source + ": invalid GeoJSON: " + e.what());
  }
  if (doc.value("type", "") != "FeatureCollection" || !doc.contains("features")) {
    throw DataError(source + ": expected a GeoJSON FeatureCollection");
  }
  std::vector<BoundaryFeature> out;
  for (const auto& f : doc["features"]) {
    const auto& props = f.contains("properties") && f["properties"].is_object() ? f["properties"]
                                                                                 : nlohmann::json::object();
    if (!props.contains(id_property)) throw DataError(source + ": feature without '" + id_property + "'");
    BoundaryFeature feat;
    feat.id = detail::json_scalar_string(props[id_property]);
    feat.name = props.contains(name_property) ? detail::json_scalar_string(props[name_property]) : feat.id;
    const std::string where = source + " feature " + feat.id;
    if (!f.contains("geometry") || !f["geometry"].is_object()) throw DataError(where + ": missing geometry");
    const auto& geom = f["geometry"];
    const std::string type = geom.value("type", "");
    if (type == "Polygon") {
      feat.parts.push_back(detail::parse_polygon(geom["coordinates"], where));
    } else if (type == "MultiPolygon") {
      for (const auto& p : geom["coordinates"]) feat.parts.push_back(detail::parse_polygon(p, where));
    } else {
      throw DataError(where + ": unsupported geometry type '" + type + "'");
    }
    out.push_back(std::move(feat));
  }
  return out;
}

struct Demographics {
  double pct_black = 0.0;
  double pct_white = 0.0;
  double pct_neither = 0.0;
  double median_income = 0.0;
  double poverty_rate = 0.0;
};

/// Parses the demographics table keyed by id. Percentage columns use a 0-100
/// scale if any of their values exceeds 1.5, otherwise 0-1.
inline std::map<std::string, Demographics> parse_demographics(const csv::Table& table,
                                                              const std::string& source = "<memory>") {
  auto require = [&](const char* name) {
    auto idx = table.column(name);
    if (!idx) throw DataError(source + ": missing column '" + std::string(name) + "'");
    return *idx;
  };
  const std::size_t c_id = require("id");
  const std::size_t c_black = require("pct_black");
  const std::size_t c_white = require("pct_white");
  const auto c_neither = table.column("pct_neither");
  const std::size_t c_income = require("median_income");
  const std::size_t c_poverty = require("poverty_rate");

  struct Raw {
    std::string id;
    double black, white, income, poverty;
    std::optional<double> neither;
  };
  std::vector<Raw> raws;
  bool percent_scale = false;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::string where = source + " line " + std::to_string(table.line_numbers[r]);
    auto field = [&](std::size_t c) -> double {
      if (c >= row.size()) throw DataError(where + ": short row");
      auto v = csv::to_double(row[c]);
      if (!v) throw DataError(where + ": non-numeric value '" + row[c] + "'");
      return *v;
    };
    auto pct = [&](std::size_t c) {
      const double v = field(c);
      if (v < 0.0 || v > 100.0) throw DataError(where + ": percentage outside [0, 100]");
      if (v > 1.5) percent_scale = true;
      return v;
    };
    Raw raw{std::string(csv::trim(row.at(c_id))), pct(c_black), pct(c_white), field(c_income), pct(c_poverty),
            std::nullopt};
    if (c_neither && *c_neither < row.size() && !csv::trim(row[*c_neither]).empty()) raw.neither = pct(*c_neither);
    if (raw.income < 0.0) throw DataError(where + ": negative median income");
    raws.push_back(std::move(raw));
  }

  const double scale = percent_scale ? 0.01 : 1.0;
  std::map<std::string, Demographics> out;
  for (const auto& raw : raws) {
    Demographics d;
    d.pct_black = raw.black * scale;
    d.pct_white = raw.white * scale;
    d.poverty_rate = raw.poverty * scale;
    d.median_income = raw.income;
    if (raw.neither) {
      d.pct_neither = *raw.neither * scale;
    } else {
      d.pct_neither = 1.0 - d.pct_black - d.pct_white;
      if (d.pct_neither < 0.0 && d.pct_neither > -1e-9) d.pct_neither = 0.0;
    }
    const double sum = d.pct_black + d.pct_white + d.pct_neither;
    if (d.pct_neither < 0.0 || std::abs(sum - 1.0) > 0.02) {
      throw DataError(source + ": racial shares for '" + raw.id + "' do not sum to 1");
    }
    // ACS shares are published rounded; renormalize within the tolerance.
    d.pct_black /= sum;
    d.pct_white /= sum;
    d.pct_neither /= sum;
    out[raw.id] = d;
  }
  return out;
}

struct NeighborhoodLoadResult {
  std::vector<Neighborhood> neighborhoods;
  std::vector<std::string> warnings;
};

/// Joins boundaries to demographics by id. Ids present in only one source are
/// dropped with a warning; boundary file order is preserved.
inline NeighborhoodLoadResult join_neighborhoods(std::vector<BoundaryFeature> features,
                                                 const std::map<std::string, Demographics>& demo) {
  NeighborhoodLoadResult out;
  std::map<std::string, bool> used;
  for (auto& f : features) {
    auto it = demo.find(f.id);
    if (it == demo.end()) {
      out.warnings.push_back("boundary '" + f.id + "' has no demographics row; dropped");
      continue;
    }
    used[f.id] = true;
    const Demographics& d = it->second;
    out.neighborhoods.push_back({f.id, f.name, std::move(f.parts), d.pct_black, d.pct_white, d.pct_neither,
                                 d.median_income, d.poverty_rate});
  }
  for (const auto& [id, d] : demo) {
    if (!used.count(id)) out.warnings.push_back("demographics row '" + id + "' has no boundary; dropped");
  }
  return out;
}

inline NeighborhoodLoadResult load_neighborhoods(const std::string& boundary_path, const std::string& demographics_path,
                                                 const std::string& id_property = "id",
                                                 const std::string& name_property = "name") {
  auto features = parse_boundaries(csv::read_file(boundary_path), id_property, name_property, boundary_path);
  auto demo = parse_demographics(csv::read(demographics_path), demographics_path);
  return join_neighborhoods(std::move(features), demo);
}

struct AssignResult {
  std::vector<CrimeIncident> incidents;
  std::size_t dropped = 0;
};

/// Tags each incident with the first containing neighborhood in input order;
/// incidents outside every polygon are dropped.
inline AssignResult assign_neighborhoods(const std::vector<CrimeIncident>& incidents,
                                         const std::vector<Neighborhood>& hoods) {
  if (hoods.empty()) throw DataError("assign_neighborhoods: no neighborhoods loaded");
  std::vector<BoundingBox> boxes;
  boxes.reserve(hoods.size());
  for (const auto& h : hoods) boxes.push_back(hull_box({h}, 0.0));

  AssignResult out;
  out.incidents.reserve(incidents.size());
  for (const auto& inc : incidents) {
    bool placed = false;
    for (std::size_t i = 0; i < hoods.size() && !placed; ++i) {
      if (!boxes[i].contains(inc.location) || !hoods[i].contains(inc.location)) continue;
      CrimeIncident tagged = inc;
      tagged.neighborhood_id = hoods[i].id;
      out.incidents.push_back(std::move(tagged));
      placed = true;
    }
    if (!placed) ++out.dropped;
  }
  return out;
}

struct MonthSlice {
  City city = City::Baltimore;
  int year = 0;
  int month = 0;
  std::vector<CrimeIncident> incidents;

  std::vector<LatLon> locations() const {
    std::vector<LatLon> out;
    out.reserve(incidents.size());
    for (const auto& inc : incidents) out.push_back(inc.location);
    return out;
  }
};

/// Splits one city-year into February..December slices; empty months are
/// omitted and January incidents are ignored.
inline std::vector<MonthSlice> partition_by_month(const std::vector<CrimeIncident>& incidents) {
  std::vector<MonthSlice> out;
  if (incidents.empty()) return out;
  const City city = incidents.front().city;
  const int year = incidents.front().timestamp.year;
  std::array<std::vector<CrimeIncident>, 13> by_month;
  for (const auto& inc : incidents) {
    if (inc.city != city || inc.timestamp.year != year) {
      throw DataError("partition_by_month: incidents span more than one city-year");
    }
    if (inc.timestamp.month >= 2 && inc.timestamp.month <= 12) by_month[inc.timestamp.month].push_back(inc);
  }
  for (int m = 2; m <= 12; ++m) {
    if (by_month[m].empty()) continue;
    out.push_back({city, year, m, std::move(by_month[m])});
  }
  return out;
}

/// Incidents of one calendar year, input order preserved.
inline std::vector<CrimeIncident> select_year(const std::vector<CrimeIncident>& incidents, int year) {
  std::vector<CrimeIncident> out;
  for (const auto& inc : incidents) {
    if (inc.timestamp.year == year) out.push_back(inc);
  }
  return out;
}

}  // namespace patrolsim
