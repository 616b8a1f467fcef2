#pragma once

// Web-Mercator ground resolution and city-to-cell partitioning on a spherical
// earth of radius 6378137 m.

#include <cstdint>
#include <string>
#include <vector>

#include "prefmap/common.hpp"

namespace prefmap::geo {

struct EarthModel {
  static constexpr double kRadiusM = 6378137.0;
  static constexpr double kCircumferenceM = 2.0 * std::numbers::pi * kRadiusM;
  static constexpr double kMetersPerDegree = kCircumferenceM / 360.0;
};

/// City centers beyond this latitude are rejected (Mercator blow-up).
constexpr double kMaxCityLatitude = 85.0;

class GeoPoint {
 public:
  /// Throws ValidationError when lat is outside [-90, 90] or lon outside [-180, 180).
  GeoPoint(double lat_deg, double lon_deg);

  double lat_deg() const { return lat_; }
  double lon_deg() const { return lon_; }

 private:
  double lat_;
  double lon_;
};

struct TileSpec {
  int zoom = 18;
  std::uint32_t tile_px = 256;

  /// tile_px * 2^zoom, computed in integers.
  std::uint64_t map_width() const;
};

struct PlaceCell {
  std::string city_id;
  int row = 0;
  int col = 0;
  GeoPoint center{0.0, 0.0};
  double cell_m = 200.0;
  std::string geokey;
};

std::string make_geokey(const std::string& city_id, int row, int col);

double ground_resolution(const GeoPoint& p, const TileSpec& t);
double scale_correction(const GeoPoint& p);
double cell_pixel_extent(const GeoPoint& p, const TileSpec& t, double cell_m);

/// Side of the square grid; throws ValidationError unless extent_m / cell_m is a positive integer.
int grid_side(double extent_m, double cell_m);

/// Row-major cells of a square city of side extent_m. Row 0 is the northern edge.
std::vector<PlaceCell> partition_city(const std::string& city_id, const GeoPoint& center, double extent_m,
                                      double cell_m);

}  // namespace prefmap::geo
