#pragma once

// Kohonen self-organizing maps: online training, BMU search, linear maps for
// contextual numbers, SOM -> k-means two-level clustering and the colour
// alphabets attached to a trained grid.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefmap/featex.hpp"
#include "prefmap/image.hpp"

namespace prefmap::som {

struct SomGrid {
  int rows = 0;
  int cols = 0;
  std::size_t dim = 0;
  std::vector<float> weights;  // rows*cols x dim, row-major over (r, c)
  std::uint64_t seed = 0;
  std::uint32_t iters = 0;

  std::size_t cells() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
  std::span<const float> weight(std::size_t cell) const { return {weights.data() + cell * dim, dim}; }
  std::span<float> weight(std::size_t cell) { return {weights.data() + cell * dim, dim}; }
  int row_of(std::size_t cell) const { return static_cast<int>(cell / static_cast<std::size_t>(cols)); }
  int col_of(std::size_t cell) const { return static_cast<int>(cell % static_cast<std::size_t>(cols)); }
  bool operator==(const SomGrid&) const = default;
};

struct TrainOptions {
  int rows = 80;
  int cols = 80;
  std::uint32_t iters = 100000;
  std::uint64_t seed = 0;
  double alpha0 = 0.5;
  double alpha_final = 0.01;
  double sigma0 = 0.0;  // 0 -> max(rows, cols) / 2
  double sigma_final = 1.0;
  int checkpoints = 10;  // quantization error recorded at k * iters / checkpoints
};

struct TrainHistory {
  std::vector<std::uint32_t> iteration;
  std::vector<double> quantization_error;
};

struct TrainResult {
  SomGrid grid;
  TrainHistory history;
};

/// Online training: one seeded sample per iteration, Gaussian neighbourhood,
/// exponential decay of learning rate and radius. Weights start as seeded
/// uniform draws inside the per-dimension data range.
TrainResult train_som(const featex::FeatureMatrix& x, const TrainOptions& opts);

/// Lowest-index argmin of squared Euclidean distance (partial-distance search).
std::size_t bmu(const SomGrid& grid, std::span<const float> x);
/// First and second BMU.
std::pair<std::size_t, std::size_t> two_bmus(const SomGrid& grid, std::span<const float> x);

/// image index -> cell index for every row of x.
std::vector<std::size_t> assign(const SomGrid& grid, const featex::FeatureMatrix& x);

double quantization_error(const SomGrid& grid, const featex::FeatureMatrix& x);
/// Fraction of rows whose first and second BMU are not 4-neighbours on the lattice.
double topographic_error(const SomGrid& grid, const featex::FeatureMatrix& x);

struct ContextualNumbers {
  SomGrid grid;  // 1 x cells
  std::vector<double> values;  // bmu / (cells - 1), aligned with x
};

/// Trains a 1 x cells SOM and maps every row to its normalized BMU index.
/// With `orient_increasing` the lattice is reversed when needed so the first
/// weight component grows with the index.
ContextualNumbers contextual_numbers(const featex::FeatureMatrix& x, int cells, std::uint32_t iters,
                                     std::uint64_t seed, bool orient_increasing = false);

struct Clustering {
  std::vector<int> cell_cluster;  // per SOM cell
  std::vector<double> centroids;  // k x dim
  std::size_t k = 0;
  std::size_t dim = 0;
  int iterations = 0;

  std::span<const double> centroid(std::size_t j) const { return {centroids.data() + j * dim, dim}; }
};

/// k-means over the SOM weight vectors: k-means++ seeding, Lloyd iterations
/// until the assignment is a fixpoint or 300 rounds, empty clusters repaired
/// by moving the farthest point of the largest cluster.
Clustering two_level_cluster(const SomGrid& grid, std::size_t k, std::uint64_t seed, int max_iter = 300);
/// Same routine over arbitrary rows (used as the direct-clustering baseline).
Clustering kmeans(const featex::FeatureMatrix& points, std::size_t k, std::uint64_t seed, int max_iter = 300);

/// One image id per cluster: the mapped image nearest the centroid, or the
/// globally nearest unchosen image when no image maps into the cluster.
std::vector<std::string> representative_images(const Clustering& clusters, std::span<const std::size_t> image_cell,
                                               const featex::FeatureMatrix& x);

/// Feature-space prototype per cell: Gaussian-kernel (grid distance, sigma)
/// weighted mean of the feature rows mapped to the lattice.
featex::FeatureMatrix cell_prototypes(const SomGrid& grid, std::span<const std::size_t> image_cell,
                                      const featex::FeatureMatrix& features, double sigma = 1.0);

enum class AlphabetMode { kGeneric, kPreferenceOrdered };

struct AlphabetMap {
  int rows = 0;
  int cols = 0;
  AlphabetMode mode = AlphabetMode::kGeneric;
  std::vector<Rgb> colors;          // character code = cell index
  std::vector<double> preference;   // preference-ordered only
  std::vector<int> ramp_index;      // preference-ordered only

  std::size_t size() const { return colors.size(); }
};

/// Generic: hue = c / cols, lightness = 0.35 + 0.5 * r / rows. Preference
/// ordered: entry of the warm -> cold ramp indexed by the cell preference.
AlphabetMap alphabet(const SomGrid& grid, AlphabetMode mode, std::optional<std::span<const double>> preference = {});

/// 256 entries, index 0 warm (disliked), 255 cold (liked).
const std::vector<Rgb>& preference_ramp();
int ramp_position(double preference);
/// Ramp index of an exact ramp colour, or -1.
int ramp_index_of(const Rgb& c);

// SOM file: "SOM0", u32 rows, u32 cols, u32 dim, f32 weights, u64 seed, u32 iters.
std::vector<std::uint8_t> encode_som(const SomGrid& g);
SomGrid decode_som(std::span<const std::uint8_t> bytes);
void write_som(const std::filesystem::path& path, const SomGrid& g);
SomGrid read_som(const std::filesystem::path& path);

}  // namespace prefmap::som
