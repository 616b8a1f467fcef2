#pragma once

// Exact O(N^2) t-SNE.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "prefmap/featex.hpp"

namespace prefmap::manifold {

/// Dense row-major N x N matrix.
struct SquareMatrix {
  std::size_t n = 0;
  std::vector<double> values;

  double& operator()(std::size_t i, std::size_t j) { return values[i * n + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
};

struct Affinities {
  SquareMatrix conditional;  // row-stochastic p_{j|i}
  SquareMatrix joint;        // (P + P^T) / 2N, sums to 1
  std::vector<double> beta;  // per-row precision 1 / (2 sigma^2); 0 for the uniform limit
  std::vector<double> entropy_bits;
};

/// Per-row Gaussian bandwidths found by bisection so each conditional row has
/// entropy log2(perplexity) within 1e-5 bits. When the target lies outside the
/// entropy range a row can reach (e.g. all neighbours equidistant), the row
/// takes the limiting distribution: uniform over all neighbours, or uniform
/// over the tied nearest ones.
Affinities pairwise_affinities(const featex::FeatureMatrix& x, double perplexity);

struct TsneOptions {
  int dims = 2;
  double perplexity = 30.0;
  int iters = 1000;
  std::uint64_t seed = 0;
  double learning_rate = 200.0;
  double exaggeration = 12.0;
  int stop_exaggeration_iter = 250;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  int momentum_switch_iter = 250;
  double init_sigma = 1e-4;
  /// Adaptive per-coordinate gains (delta-bar-delta) as in the reference implementation.
  bool gains = true;
};

struct Embedding {
  std::size_t dims = 2;
  std::vector<double> coords;  // N x dims
  std::vector<std::string> ids;
  TsneOptions params;
  std::vector<double> kl_history;  // KL(P || Q) after each iteration, unexaggerated P
  double final_kl = 0.0;

  std::size_t rows() const { return ids.size(); }
  std::span<const double> row(std::size_t i) const { return {coords.data() + i * dims, dims}; }
  featex::FeatureMatrix to_matrix() const;
};

/// Requires N >= 3 and 1 < perplexity < N.
Embedding tsne(const featex::FeatureMatrix& x, const TsneOptions& opts);

/// Sum p log(p/q) over pairs with p > 0, in nats.
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace prefmap::manifold
