#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefmap/corpus.hpp"
#include "prefmap/image.hpp"

namespace prefmap::featex {

/// Row-major float32 matrix of per-image vectors with aligned ids.
struct FeatureMatrix {
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::string> ids;

  std::size_t rows() const { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  std::span<float> row(std::size_t i) { return {values.data() + i * dim, dim}; }
  void append(std::string id, std::span<const float> v);
  bool operator==(const FeatureMatrix&) const = default;
};

/// Anything mapping a decoded image to a fixed-width descriptor.
class Extractor {
 public:
  virtual ~Extractor() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<float> extract(const Image& img) const = 0;
};

/// Reference descriptor: a 4x4 grid of blocks, each holding three 8-bin
/// colour histograms (R, G, B) and an 8-bin unsigned gradient-orientation
/// histogram weighted by gradient magnitude. Every histogram is L1-normalized
/// within its block (an all-zero gradient histogram stays zero). 512 values.
class GridHistogramExtractor final : public Extractor {
 public:
  static constexpr int kInputPx = 224;
  static constexpr int kGrid = 4;
  static constexpr int kBins = 8;
  static constexpr std::size_t kDim = kGrid * kGrid * 4 * kBins;

  std::size_t dim() const override { return kDim; }
  /// Images that are not 224x224 are resized bilinearly first.
  std::vector<float> extract(const Image& img) const override;
};

const Extractor& default_extractor();

/// Feature extraction over every (or a seeded subsample of) image of one kind
/// in manifest order. Failing images are reported together.
FeatureMatrix extract_corpus(const corpus::PlaceManifest& manifest, const std::filesystem::path& root,
                             corpus::ImageKind kind, std::optional<double> subsample, std::uint64_t seed,
                             const Extractor& extractor = default_extractor());

enum class NormalizeMode { kL2Rows, kZscoreCols };
FeatureMatrix normalize(FeatureMatrix m, NormalizeMode mode);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

// FVEC: "FVEC", u32 N, u32 D, N*D float32 LE, then N length-prefixed (u32) UTF-8 ids.
std::vector<std::uint8_t> encode_fvec(const FeatureMatrix& m);
FeatureMatrix decode_fvec(std::span<const std::uint8_t> bytes);
void write_fvec(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix read_fvec(const std::filesystem::path& path);

}  // namespace prefmap::featex
