#include <cmath>

#include "doctest.h"
#include "prefmap/geokit.hpp"

using namespace prefmap;
using namespace prefmap::geo;

namespace {
// Reference values evaluated at 40 significant digits.
constexpr double kRes0Z18 = 0.5971642834779394589837911391466909255774;
constexpr double kPx200Z18 = 334.916212394990687416979469333262915482;
constexpr double kDeg200 = 0.001796630568239042870255002512931445979677;

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::abs(b); }
}  // namespace

TEST_SUITE("geokit") {

TEST_CASE("ground resolution at the equator") {
  CHECK(rel_close(ground_resolution(GeoPoint(0, 0), TileSpec{18, 256}), kRes0Z18, 1e-14));
}

TEST_CASE("ground resolution halves at 60 degrees and per zoom level") {
  const double r0 = ground_resolution(GeoPoint(0, 0), TileSpec{18, 256});
  CHECK(rel_close(ground_resolution(GeoPoint(60, 0), TileSpec{18, 256}), 0.5 * r0, 1e-15));
  CHECK(ground_resolution(GeoPoint(0, 0), TileSpec{19, 256}) == 0.5 * r0);
  CHECK(ground_resolution(GeoPoint(0, 0), TileSpec{18, 512}) == 0.5 * r0);
}

TEST_CASE("scale correction") {
  CHECK(scale_correction(GeoPoint(0, 0)) == 1.0);
  CHECK(scale_correction(GeoPoint(60, 0)) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(scale_correction(GeoPoint(45, 0)) == doctest::Approx(1.41421356237309504880).epsilon(1e-14));
  CHECK(scale_correction(GeoPoint(-60, 0)) == doctest::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("degenerate latitudes are rejected") {
  CHECK_THROWS_AS(ground_resolution(GeoPoint(90, 0), TileSpec{}), ValidationError);
  CHECK_THROWS_AS(scale_correction(GeoPoint(-90, 0)), ValidationError);
  CHECK_THROWS_AS(GeoPoint(91, 0), ValidationError);
  CHECK_THROWS_AS(GeoPoint(0, 180), ValidationError);
}

TEST_CASE("map width is an exact integer") {
  CHECK(TileSpec{18, 256}.map_width() == 67108864ULL);
  CHECK(TileSpec{0, 256}.map_width() == 256ULL);
  CHECK_THROWS_AS(TileSpec({41, 256}).map_width(), ValidationError);
}

TEST_CASE("cell pixel extent") {
  CHECK(rel_close(cell_pixel_extent(GeoPoint(0, 0), TileSpec{18, 256}, 200.0), kPx200Z18, 1e-13));
  CHECK(rel_close(cell_pixel_extent(GeoPoint(60, 0), TileSpec{18, 256}, 200.0), 2.0 * kPx200Z18, 1e-13));
  CHECK(cell_pixel_extent(GeoPoint(0, 0), TileSpec{18, 256}, 0.0) == 0.0);
}

TEST_CASE("grid side") {
  CHECK(grid_side(10000, 200) == 50);
  CHECK(grid_side(4000, 200) == 20);
  CHECK_THROWS_AS(grid_side(4100, 300), ValidationError);
  CHECK_THROWS_AS(grid_side(0, 200), ValidationError);
}

TEST_CASE("partition of a 10 km city") {
  const auto cells = partition_city("x", GeoPoint(0, 0), 10000, 200);
  REQUIRE(cells.size() == 2500);
  CHECK(cells.front().geokey == "x/0/0");
  CHECK(cells.back().geokey == "x/49/49");
  CHECK(cells[1].col == 1);
  CHECK(cells[50].row == 1);
  // Row 0 is north.
  CHECK(cells[0].center.lat_deg() > cells[50].center.lat_deg());
  const double dlon = cells[1].center.lon_deg() - cells[0].center.lon_deg();
  CHECK(dlon == doctest::Approx(kDeg200).epsilon(1e-12));
  const double dlat = cells[0].center.lat_deg() - cells[50].center.lat_deg();
  CHECK(dlat == doctest::Approx(kDeg200).epsilon(1e-12));
}

TEST_CASE("partition is symmetric about the center") {
  const auto cells = partition_city("x", GeoPoint(47.0, 8.0), 4000, 200);
  REQUIRE(cells.size() == 400);
  double lat = 0, lon = 0;
  for (const auto& c : cells) {
    lat += c.center.lat_deg();
    lon += c.center.lon_deg();
  }
  CHECK(lat / 400 == doctest::Approx(47.0).epsilon(1e-12));
  CHECK(lon / 400 == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("cities near the poles are refused") {
  CHECK_THROWS_AS(partition_city("p", GeoPoint(86, 0), 1000, 200), ValidationError);
}

TEST_CASE("geokey format") { CHECK(make_geokey("zurich", 3, 14) == "zurich/3/14"); }

}
