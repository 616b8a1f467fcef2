#include "prefmap/geokit.hpp"

#include <cmath>

namespace prefmap::geo {

GeoPoint::GeoPoint(double lat_deg, double lon_deg) : lat_(lat_deg), lon_(lon_deg) {
  if (!std::isfinite(lat_deg) || lat_deg < -90.0 || lat_deg > 90.0)
    throw ValidationError("latitude out of range [-90, 90]: " + std::to_string(lat_deg));
  if (!std::isfinite(lon_deg) || lon_deg < -180.0 || lon_deg >= 180.0)
    throw ValidationError("longitude out of range [-180, 180): " + std::to_string(lon_deg));
}

std::uint64_t TileSpec::map_width() const {
  if (zoom < 0 || zoom > 40) throw ValidationError("zoom out of supported range [0, 40]");
  return static_cast<std::uint64_t>(tile_px) << zoom;
}

std::string make_geokey(const std::string& city_id, int row, int col) {
  return city_id + "/" + std::to_string(row) + "/" + std::to_string(col);
}

namespace {
void require_nondegenerate(const GeoPoint& p) {
  if (std::abs(p.lat_deg()) >= 90.0)
    throw ValidationError("degenerate latitude " + std::to_string(p.lat_deg()) + ": ground resolution would be <= 0");
}
}  // namespace

double ground_resolution(const GeoPoint& p, const TileSpec& t) {
  require_nondegenerate(p);
  return std::cos(deg_to_rad(p.lat_deg())) * EarthModel::kCircumferenceM / static_cast<double>(t.map_width());
}

double scale_correction(const GeoPoint& p) {
  require_nondegenerate(p);
  return 1.0 / std::cos(deg_to_rad(p.lat_deg()));
}

double cell_pixel_extent(const GeoPoint& p, const TileSpec& t, double cell_m) {
  return cell_m / ground_resolution(p, t);
}

int grid_side(double extent_m, double cell_m) {
  if (!(cell_m > 0.0) || !(extent_m > 0.0)) throw ValidationError("extent and cell size must be positive");
  const double ratio = extent_m / cell_m;
  const double side = std::round(ratio);
  if (side < 1.0 || std::abs(ratio - side) > 1e-9 * side)
    throw ValidationError("extent " + std::to_string(extent_m) + " m is not divisible by cell size " +
                          std::to_string(cell_m) + " m");
  return static_cast<int>(side);
}

std::vector<PlaceCell> partition_city(const std::string& city_id, const GeoPoint& center, double extent_m,
                                      double cell_m) {
  if (std::abs(center.lat_deg()) >= kMaxCityLatitude)
    throw ValidationError("city center latitude beyond +/-85 degrees: " + city_id);
  const int side = grid_side(extent_m, cell_m);

  // Local tangent plane: constant meters-per-degree taken at the city center.
  const double m_per_deg_lat = EarthModel::kMetersPerDegree;
  const double m_per_deg_lon = EarthModel::kMetersPerDegree * std::cos(deg_to_rad(center.lat_deg()));
  const double half = 0.5 * static_cast<double>(side - 1);

  std::vector<PlaceCell> cells;
  cells.reserve(static_cast<std::size_t>(side) * static_cast<std::size_t>(side));
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      const double north_m = (half - r) * cell_m;
      const double east_m = (c - half) * cell_m;
      double lon = center.lon_deg() + east_m / m_per_deg_lon;
      if (lon >= 180.0) lon -= 360.0;
      if (lon < -180.0) lon += 360.0;
      PlaceCell cell{city_id, r, c, GeoPoint(center.lat_deg() + north_m / m_per_deg_lat, lon), cell_m,
                     make_geokey(city_id, r, c)};
      cells.push_back(std::move(cell));
    }
  }
  return cells;
}

}  // namespace prefmap::geo
