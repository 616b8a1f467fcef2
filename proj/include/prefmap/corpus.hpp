#pragma once

// Place manifests, synthetic city imagery with ground truth, and the importer
// for externally supplied tiles.

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "prefmap/geokit.hpp"
#include "prefmap/image.hpp"

namespace prefmap::corpus {

enum class LandUse { kGreen = 0, kBuiltLow, kBuiltHigh, kWater, kRoad };
constexpr int kLandUseCount = 5;
const char* landuse_name(LandUse u);

using LandUseMix = std::array<double, kLandUseCount>;

/// Parses "green:0.5,built_low:0.5"; unnamed classes get 0. Must sum to 1.
LandUseMix parse_mix(const std::string& text);
std::string format_mix(const LandUseMix& mix);

struct CitySpec {
  std::string city_id;
  geo::GeoPoint center{0.0, 0.0};
  double extent_m = 4000.0;
  double cell_m = 200.0;
  std::uint64_t texture_seed = 0;
  LandUseMix landuse_mix{0.2, 0.2, 0.2, 0.2, 0.2};

  void validate() const;
};

struct GroundTruth {
  double green_fraction = 0.0;
  double built_fraction = 0.0;
  double water_fraction = 0.0;
};

struct PlaceRecord {
  geo::PlaceCell cell;
  std::string sat_path;  // relative to the manifest root
  std::optional<std::string> sv_path;
  std::optional<GroundTruth> truth;
};

struct PlaceManifest {
  std::vector<PlaceRecord> records;
  std::string fingerprint;
  std::uint64_t seed = 0;

  /// Throws ValidationError on duplicate geokeys.
  void validate() const;
  const PlaceRecord* find(const std::string& geokey) const;
};

struct CorpusOptions {
  int image_px = 224;
  double sv_fraction = 0.64;
  geo::TileSpec tile{18, 256};
};

enum class ImageKind { kSatellite, kStreetView };
const char* kind_name(ImageKind k);

std::string image_rel_path(ImageKind kind, const std::string& geokey);

/// Number of cells of a city that receive a street-level image: ceil(fraction * cells).
std::size_t sv_count(std::size_t cells, double fraction);

/// Cells plus image paths, without rendering anything. Street-level coverage
/// is chosen by ranking cells on hash(seed, geokey).
std::vector<PlaceRecord> plan_city(const CitySpec& spec, std::uint64_t seed, const CorpusOptions& opts);

struct SynthPlace {
  Image sat;
  std::optional<Image> sv;
  GroundTruth truth;
};

/// Render one cell. Pure in (spec, cell, with_sv, seed, opts).
SynthPlace render_place(const CitySpec& spec, const geo::PlaceCell& cell, bool with_sv, std::uint64_t seed,
                        const CorpusOptions& opts);

using ImageSink = std::function<void(const std::string& rel_path, const Image& img)>;

/// Plans and renders a whole city. Images go to `sink` when provided.
std::vector<PlaceRecord> synth_city(const CitySpec& spec, std::uint64_t seed, const CorpusOptions& opts,
                                    const ImageSink& sink = {});

struct ImportReport {
  PlaceManifest manifest;
  std::vector<std::string> warnings;
};

/// Loads `<dir>/sat/<geokey>.png` (required) and `<dir>/sv/<geokey>.png`
/// (optional) for every planned cell. Each satellite tile is brought to the
/// pixel extent that covers cell_m at zoom (scale correction), center-cropped,
/// and resized to image_px. Normalized tiles go to `sink`.
ImportReport import_tiles(const std::filesystem::path& dir, const std::vector<geo::PlaceCell>& cells,
                          const CorpusOptions& opts, const ImageSink& sink = {});

/// Expected tile edge (px) covering cell_m ground meters at the cell latitude.
int expected_tile_px(const geo::PlaceCell& cell, const CorpusOptions& opts);

struct CityCounts {
  std::size_t sat = 0;
  std::size_t sv = 0;
};

struct DatasetCounts {
  std::map<std::string, CityCounts> per_city;
  CityCounts total;
};

DatasetCounts build_dataset_counts(const PlaceManifest& manifest);

// places.jsonl
void write_manifest(const std::filesystem::path& path, const PlaceManifest& manifest);
PlaceManifest read_manifest(const std::filesystem::path& path);

}  // namespace prefmap::corpus
