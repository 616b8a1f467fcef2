#pragma once

#include <filesystem>
#include <unistd.h>
#include <string>

#include "prefmap/common.hpp"
#include "prefmap/featex.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("prefmap_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Tiny three-city configuration: 5x5 grids, small maps, short schedules.
inline std::string tiny_config(const std::filesystem::path& out, std::uint64_t seed = 3) {
  return "[pipeline]\nseed = " + std::to_string(seed) + "\nout = " + out.string() +
         "\n"
         "[tsne]\nperplexity = 5\niters = 300\n"
         "[som]\nrows = 6\ncols = 6\niters = 3000\nlinear_cells = 20\nlinear_iters = 2000\n"
         "[clusters]\nk = 10\n"
         "[survey]\nn_pairs = 30\nmin_appearances = 3\nrater_noise = 0.0\n"
         "[classifier]\ntarget = 60\nmax_epochs = 4\nsamples_per_epoch = 20\n"
         "[atlas]\nblock = 2\nsimilarity_iters = 300\n"
         "[city:leafy]\nlat = 10\nlon = 10\nextent_m = 1000\ncell_m = 200\ntexture_seed = 1\nlanduse = green:1.0\n"
         "[city:grey]\nlat = 20\nlon = 20\nextent_m = 1000\ncell_m = 200\ntexture_seed = 2\n"
         "landuse = built_low:0.5,built_high:0.5\n"
         "[city:mixed]\nlat = -30\nlon = 30\nextent_m = 1000\ncell_m = 200\ntexture_seed = 3\n"
         "landuse = green:0.5,built_high:0.5\n";
}

// n points per blob around well separated centres in `dim` dimensions.
inline prefmap::featex::FeatureMatrix blobs(int n_per, int n_blobs, std::size_t dim, double spread, std::uint64_t seed,
                                            std::vector<int>* labels = nullptr) {
  prefmap::Rng rng(seed);
  prefmap::featex::FeatureMatrix m;
  m.dim = dim;
  for (int b = 0; b < n_blobs; ++b)
    for (int i = 0; i < n_per; ++i) {
      std::vector<float> v(dim);
      for (std::size_t d = 0; d < dim; ++d) v[d] = static_cast<float>((d % static_cast<std::size_t>(n_blobs) == static_cast<std::size_t>(b) ? 10.0 : 0.0) + spread * rng.normal());
      m.append("b" + std::to_string(b) + "_" + std::to_string(i), v);
      if (labels) labels->push_back(b);
    }
  return m;
}

}  // namespace testing
