#pragma once

// Pixel maps: every city cell coloured by the alphabet character of its
// satellite image, the joint structure x preference embedding behind the
// specific alphabet, and the t-SNE layout of whole cities.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefmap/classifier.hpp"
#include "prefmap/corpus.hpp"
#include "prefmap/featex.hpp"
#include "prefmap/som.hpp"

namespace prefmap::atlas {

enum class MapMode { kGeneric, kSpecific };
const char* mode_name(MapMode m);
/// Throws ValidationError for anything but "generic" or "specific".
MapMode parse_mode(const std::string& s);

struct PixelMap {
  std::string city_id;
  MapMode mode = MapMode::kGeneric;
  int rows = 0;
  int cols = 0;
  std::vector<int> code;  // alphabet character (SOM cell index), row-major
  std::vector<Rgb> color;
  std::vector<std::string> geokey;
  std::vector<double> p_like;  // specific maps only

  std::size_t cells() const { return code.size(); }
  std::size_t index(int r, int c) const { return static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c); }
};

/// Places every record of `city_id` at its (row, col) and colours it with the
/// character of its image. Records without a character are reported together.
PixelMap pixel_map(const std::string& city_id, std::span<const corpus::PlaceRecord> records,
                   const std::map<std::string, std::size_t>& character, const som::AlphabetMap& alphabet, MapMode mode,
                   const std::map<std::string, double>* p_like = nullptr);

/// One block of `block` x `block` pixels per cell.
Image render_map(const PixelMap& m, int block = 8);
/// All alphabet characters as swatches in grid order.
Image render_spectrum(const som::AlphabetMap& a, int block = 8);

struct JointEmbedding {
  featex::FeatureMatrix vectors;  // dim 2: (structure, preference), each in [0, 1]
  som::SomGrid structure_som;
  som::SomGrid preference_som;
};

struct JointOptions {
  int cells = 1000;
  std::uint32_t iters = 20000;
  std::uint64_t seed = 0;
};

/// Structure numbers from a linear SOM over `structure_input`, preference
/// numbers from a linear SOM over p_like (oriented so they grow with p_like),
/// paired per image.
JointEmbedding joint_contextual_embedding(const featex::FeatureMatrix& structure_input,
                                          std::span<const classifier::SatPrediction> predictions,
                                          const JointOptions& opts);

struct SpecificAlphabet {
  som::SomGrid grid;
  som::AlphabetMap alphabet;
};

/// 2-D SOM over the joint vectors; cells coloured on the warm -> cold ramp by
/// their preference weight component.
SpecificAlphabet specific_alphabet(const featex::FeatureMatrix& joint, const som::TrainOptions& opts);

/// Ramp indices at or above this count as cold (liked).
constexpr int kColdFrom = 128;
/// Fraction of map cells whose colour sits on the cold half of the ramp.
double cold_fraction(const PixelMap& m);

struct CityLayout {
  std::vector<std::string> cities;
  std::vector<std::array<double, 2>> coords;
  std::vector<std::vector<std::string>> neighbors;          // by embedded distance
  std::vector<std::vector<std::string>> feature_neighbors;  // by descriptor distance
  double perplexity = 0.0;
};

struct SimilarityOptions {
  std::uint64_t seed = 0;
  int block = 8;
  int iters = 1000;
};

/// Renders each map, extracts its descriptor and lays the cities out with
/// t-SNE at perplexity min(5, N - 1). Needs at least 3 maps.
CityLayout city_similarity(std::span<const PixelMap> maps, const SimilarityOptions& opts,
                           const featex::Extractor& extractor = featex::default_extractor());

void write_map_json(const std::filesystem::path& path, const PixelMap& m, const std::string& fingerprint);
PixelMap read_map_json(const std::filesystem::path& path);
void write_layout(const std::filesystem::path& path, const std::map<std::string, CityLayout>& by_mode,
                  const std::string& fingerprint);

}  // namespace prefmap::atlas
