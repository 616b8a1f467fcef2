#include "prefmap/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace prefmap::manifold {

namespace {

constexpr double kEntropyTolBits = 1e-5;
constexpr int kMaxBisection = 64;

SquareMatrix squared_distances(const featex::FeatureMatrix& x) {
  const std::size_t n = x.rows();
  SquareMatrix d{n, std::vector<double>(n * n, 0.0)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = x.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto b = x.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < x.dim; ++k) {
        const double diff = static_cast<double>(a[k]) - b[k];
        s += diff * diff;
      }
      d(i, j) = s;
      d(j, i) = s;
    }
  }
  return d;
}

// Conditional row for precision beta; returns entropy in bits. dist excludes self.
double fill_row(std::span<const double> dist, double dmin, double beta, std::span<double> p) {
  double sum = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    p[j] = std::exp(-beta * (dist[j] - dmin));
    sum += p[j];
  }
  double weighted = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    p[j] /= sum;
    weighted += (dist[j] - dmin) * p[j];
  }
  return (std::log(sum) + beta * weighted) / std::numbers::ln2;
}

}  // namespace

Affinities pairwise_affinities(const featex::FeatureMatrix& x, double perplexity) {
  const std::size_t n = x.rows();
  if (n < 2) throw ValidationError("pairwise_affinities: need at least 2 points");
  if (!(perplexity > 1.0 && perplexity < static_cast<double>(n)))
    throw ValidationError("perplexity must satisfy 1 < perplexity < N (N=" + std::to_string(n) + ")");
  const double target = std::log2(perplexity);
  const auto dist = squared_distances(x);

  Affinities out;
  out.conditional = SquareMatrix{n, std::vector<double>(n * n, 0.0)};
  out.beta.assign(n, 0.0);
  out.entropy_bits.assign(n, 0.0);

  std::vector<double> row_d(n - 1), row_p(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) row_d[k++] = dist(i, j);
    const double dmin = *std::min_element(row_d.begin(), row_d.end());
    const double dmax = *std::max_element(row_d.begin(), row_d.end());
    std::size_t ties = 0;
    for (double d : row_d)
      if (d == dmin) ++ties;
    const double max_bits = std::log2(static_cast<double>(n - 1));
    const double min_bits = std::log2(static_cast<double>(ties));

    double beta = 0.0;
    double h = 0.0;
    if (dmax == dmin || target >= max_bits) {
      // Uniform limit (beta -> 0).
      h = fill_row(row_d, dmin, 0.0, row_p);
    } else if (target <= min_bits) {
      // Sharp limit (beta -> inf): uniform over the tied nearest neighbours.
      for (std::size_t j = 0; j < row_d.size(); ++j) row_p[j] = row_d[j] == dmin ? 1.0 / ties : 0.0;
      h = min_bits;
      beta = std::numeric_limits<double>::infinity();
    } else {
      double mean = 0.0;
      for (double d : row_d) mean += d - dmin;
      mean /= static_cast<double>(row_d.size());
      beta = mean > 0.0 ? 1.0 / mean : 1.0;
      double lo = 0.0, hi = std::numeric_limits<double>::infinity();
      bool converged = false;
      for (int it = 0; it < kMaxBisection; ++it) {
        h = fill_row(row_d, dmin, beta, row_p);
        if (std::abs(h - target) < kEntropyTolBits) {
          converged = true;
          break;
        }
        if (h > target) {
          lo = beta;
          beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
        } else {
          hi = beta;
          beta = 0.5 * (beta + lo);
        }
      }
      if (!converged)
        throw NumericError("perplexity bisection did not converge for row " + std::to_string(i) + " (" + x.ids[i] +
                           ") after 64 iterations");
    }
    out.beta[i] = beta;
    out.entropy_bits[i] = h;
    for (std::size_t j = 0, k = 0; j < n; ++j)
      if (j != i) out.conditional(i, j) = row_p[k++];
  }

  out.joint = SquareMatrix{n, std::vector<double>(n * n, 0.0)};
  const double denom = 2.0 * static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.joint(i, j) = (out.conditional(i, j) + out.conditional(j, i)) / denom;
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ValidationError("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

featex::FeatureMatrix Embedding::to_matrix() const {
  featex::FeatureMatrix m;
  m.dim = dims;
  m.ids = ids;
  m.values.resize(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i) m.values[i] = static_cast<float>(coords[i]);
  return m;
}

namespace {

// KL(P||Q) for the current layout; p_log_p = sum p log p precomputed.
double layout_kl(const SquareMatrix& p, std::span<const double> y, std::size_t dims, double p_log_p) {
  const std::size_t n = p.n;
  double z = 0.0, cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double d = 0.0;
      for (std::size_t k = 0; k < dims; ++k) {
        const double diff = y[i * dims + k] - y[j * dims + k];
        d += diff * diff;
      }
      z += 2.0 / (1.0 + d);
      const double pij = p(i, j) + p(j, i);
      if (pij > 0.0) cross += pij * std::log1p(d);
    }
  }
  // sum p log q = -sum p log(1 + d) - log Z
  return p_log_p + cross + std::log(z);
}

}  // namespace

Embedding tsne(const featex::FeatureMatrix& x, const TsneOptions& opts) {
  const std::size_t n = x.rows();
  if (n < 3) throw ValidationError("t-SNE needs at least 3 points, got " + std::to_string(n));
  if (opts.dims < 1) throw ValidationError("t-SNE output dimension must be >= 1");
  if (opts.iters < 1) throw ValidationError("t-SNE needs at least one iteration");
  const auto aff = pairwise_affinities(x, opts.perplexity);
  const auto& p = aff.joint;
  const auto dims = static_cast<std::size_t>(opts.dims);

  double p_log_p = 0.0;
  for (double v : p.values)
    if (v > 0.0) p_log_p += v * std::log(v);

  Rng rng(opts.seed);
  std::vector<double> y(n * dims);
  for (auto& v : y) v = rng.normal() * opts.init_sigma;
  std::vector<double> update(n * dims, 0.0), gains(n * dims, 1.0), grad(n * dims), attract(n * dims), repel(n * dims);

  Embedding emb;
  emb.dims = dims;
  emb.ids = x.ids;
  emb.params = opts;
  emb.kl_history.reserve(static_cast<std::size_t>(opts.iters));

  for (int iter = 0; iter < opts.iters; ++iter) {
    const double ex = iter < opts.stop_exaggeration_iter ? opts.exaggeration : 1.0;
    const double momentum = iter < opts.momentum_switch_iter ? opts.initial_momentum : opts.final_momentum;

    std::fill(attract.begin(), attract.end(), 0.0);
    std::fill(repel.begin(), repel.end(), 0.0);
    double z = 0.0, cross = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        double d = 0.0;
        for (std::size_t k = 0; k < dims; ++k) {
          const double diff = y[i * dims + k] - y[j * dims + k];
          d += diff * diff;
        }
        const double q = 1.0 / (1.0 + d);
        const double pij = p(i, j);
        z += 2.0 * q;
        if (pij > 0.0) cross += 2.0 * pij * std::log1p(d);
        const double a = pij * q, r = q * q;
        for (std::size_t k = 0; k < dims; ++k) {
          const double diff = y[i * dims + k] - y[j * dims + k];
          attract[i * dims + k] += a * diff;
          attract[j * dims + k] -= a * diff;
          repel[i * dims + k] += r * diff;
          repel[j * dims + k] -= r * diff;
        }
      }
    }
    emb.kl_history.push_back(p_log_p + cross + std::log(z));
    for (std::size_t i = 0; i < n * dims; ++i) {
      grad[i] = 4.0 * (ex * attract[i] - repel[i] / z);
      if (!std::isfinite(grad[i])) throw NumericError("t-SNE gradient is not finite at iteration " + std::to_string(iter));
    }
    for (std::size_t i = 0; i < n * dims; ++i) {
      if (opts.gains) {
        gains[i] = (grad[i] > 0.0) != (update[i] > 0.0) ? gains[i] + 0.2 : gains[i] * 0.8;
        gains[i] = std::max(gains[i], 0.01);
      }
      update[i] = momentum * update[i] - opts.learning_rate * gains[i] * grad[i];
      y[i] += update[i];
    }
    for (std::size_t k = 0; k < dims; ++k) {
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += y[i * dims + k];
      mean /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) y[i * dims + k] -= mean;
    }
  }
  emb.coords = std::move(y);
  emb.final_kl = layout_kl(p, emb.coords, dims, p_log_p);
  return emb;
}

}  // namespace prefmap::manifold
