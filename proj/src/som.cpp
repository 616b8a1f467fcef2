#include "prefmap/som.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace prefmap::som {

namespace {

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = static_cast<double>(a[k]) - b[k];
    s += d * d;
  }
  return s;
}

double sq_dist(std::span<const double> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

void require_dim(const SomGrid& g, std::size_t dim) {
  if (g.dim != dim)
    throw ValidationError("dimension mismatch: SOM has " + std::to_string(g.dim) + ", input has " + std::to_string(dim));
}

}  // namespace

TrainResult train_som(const featex::FeatureMatrix& x, const TrainOptions& o) {
  if (x.rows() == 0) throw ValidationError("train_som: empty input");
  if (o.rows < 1 || o.cols < 1) throw ValidationError("train_som: grid must have at least one cell");
  if (o.iters < 1) throw ValidationError("train_som: iters must be >= 1");

  TrainResult res;
  SomGrid& g = res.grid;
  g.rows = o.rows;
  g.cols = o.cols;
  g.dim = x.dim;
  g.seed = o.seed;
  g.iters = o.iters;
  g.weights.resize(g.cells() * g.dim);

  std::vector<double> lo(x.dim, std::numeric_limits<double>::infinity());
  std::vector<double> hi(x.dim, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < x.dim; ++k) {
      lo[k] = std::min(lo[k], static_cast<double>(x.row(i)[k]));
      hi[k] = std::max(hi[k], static_cast<double>(x.row(i)[k]));
    }
  Rng rng(o.seed);
  for (std::size_t c = 0; c < g.cells(); ++c)
    for (std::size_t k = 0; k < g.dim; ++k) g.weight(c)[k] = static_cast<float>(rng.uniform(lo[k], hi[k]));

  const double sigma0 = o.sigma0 > 0.0 ? o.sigma0 : std::max(o.rows, o.cols) / 2.0;
  const double sigma_f = std::min(o.sigma_final, sigma0);
  const double span = o.iters > 1 ? static_cast<double>(o.iters - 1) : 1.0;
  const int checkpoints = std::max(1, o.checkpoints);

  res.history.iteration.push_back(0);
  res.history.quantization_error.push_back(quantization_error(g, x));
  std::uint32_t next_checkpoint = 1;
  auto checkpoint_at = [&](std::uint32_t k) {
    return static_cast<std::uint32_t>(static_cast<std::uint64_t>(o.iters) * k / checkpoints);
  };

  std::vector<double> delta(g.dim);
  for (std::uint32_t t = 0; t < o.iters; ++t) {
    const double frac = t / span;
    const double alpha = o.alpha0 * std::pow(o.alpha_final / o.alpha0, frac);
    const double sigma = sigma0 * std::pow(sigma_f / sigma0, frac);
    const auto sample = x.row(static_cast<std::size_t>(rng.below(x.rows())));
    const std::size_t best = bmu(g, sample);
    const int br = g.row_of(best), bc = g.col_of(best);
    // Neighbourhood truncated where h < 1e-6.
    const double reach = sigma * std::sqrt(2.0 * std::log(1e6));
    const int rad = static_cast<int>(std::ceil(reach));
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int r = std::max(0, br - rad); r <= std::min(g.rows - 1, br + rad); ++r) {
      for (int c = std::max(0, bc - rad); c <= std::min(g.cols - 1, bc + rad); ++c) {
        const double d2 = static_cast<double>((r - br) * (r - br) + (c - bc) * (c - bc));
        if (d2 > reach * reach) continue;
        const double step = alpha * std::exp(-d2 * inv2s2);
        auto w = g.weight(static_cast<std::size_t>(r) * g.cols + c);
        for (std::size_t k = 0; k < g.dim; ++k) w[k] = static_cast<float>(w[k] + step * (sample[k] - w[k]));
      }
    }
    while (next_checkpoint <= static_cast<std::uint32_t>(checkpoints) && t + 1 == checkpoint_at(next_checkpoint)) {
      res.history.iteration.push_back(t + 1);
      res.history.quantization_error.push_back(quantization_error(g, x));
      ++next_checkpoint;
    }
  }
  for (float w : g.weights)
    if (!std::isfinite(w)) throw NumericError("train_som: non-finite weight after training");
  return res;
}

std::size_t bmu(const SomGrid& g, std::span<const float> x) {
  require_dim(g, x.size());
  if (g.cells() == 0) throw ValidationError("bmu: empty grid");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < g.cells(); ++c) {
    const auto w = g.weight(c);
    double s = 0.0;
    std::size_t k = 0;
    for (; k < g.dim; ++k) {
      const double d = static_cast<double>(x[k]) - w[k];
      s += d * d;
      if (s > best_d) break;
    }
    if (k == g.dim && s < best_d) {
      best_d = s;
      best = c;
    }
  }
  return best;
}

std::pair<std::size_t, std::size_t> two_bmus(const SomGrid& g, std::span<const float> x) {
  require_dim(g, x.size());
  if (g.cells() < 2) throw ValidationError("two_bmus: grid needs at least two cells");
  std::size_t b1 = 0, b2 = 1;
  double d1 = std::numeric_limits<double>::infinity(), d2 = d1;
  for (std::size_t c = 0; c < g.cells(); ++c) {
    const double d = sq_dist(x, g.weight(c));
    if (d < d1) {
      b2 = b1;
      d2 = d1;
      b1 = c;
      d1 = d;
    } else if (d < d2) {
      b2 = c;
      d2 = d;
    }
  }
  return {b1, b2};
}

std::vector<std::size_t> assign(const SomGrid& g, const featex::FeatureMatrix& x) {
  require_dim(g, x.dim);
  std::vector<std::size_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = bmu(g, x.row(i));
  return out;
}

double quantization_error(const SomGrid& g, const featex::FeatureMatrix& x) {
  require_dim(g, x.dim);
  if (x.rows() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < x.rows(); ++i) total += std::sqrt(sq_dist(x.row(i), g.weight(bmu(g, x.row(i)))));
  return total / static_cast<double>(x.rows());
}

double topographic_error(const SomGrid& g, const featex::FeatureMatrix& x) {
  require_dim(g, x.dim);
  if (x.rows() == 0) return 0.0;
  std::size_t errors = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto [a, b] = two_bmus(g, x.row(i));
    const int dr = std::abs(g.row_of(a) - g.row_of(b));
    const int dc = std::abs(g.col_of(a) - g.col_of(b));
    if (dr + dc != 1) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(x.rows());
}

ContextualNumbers contextual_numbers(const featex::FeatureMatrix& x, int cells, std::uint32_t iters,
                                     std::uint64_t seed, bool orient_increasing) {
  if (x.rows() < 2) throw ValidationError("contextual_numbers: need at least 2 rows");
  if (cells < 2) throw ValidationError("contextual_numbers: need at least 2 cells");
  TrainOptions o;
  o.rows = 1;
  o.cols = cells;
  o.iters = iters;
  o.seed = seed;
  o.checkpoints = 1;
  ContextualNumbers out{train_som(x, o).grid, {}};
  if (orient_increasing && out.grid.weight(out.grid.cells() - 1)[0] < out.grid.weight(0)[0]) {
    auto& g = out.grid;
    for (std::size_t a = 0, b = g.cells() - 1; a < b; ++a, --b)
      std::swap_ranges(g.weight(a).begin(), g.weight(a).end(), g.weight(b).begin());
  }
  const double denom = static_cast<double>(cells - 1);
  out.values.reserve(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out.values.push_back(static_cast<double>(bmu(out.grid, x.row(i))) / denom);
  return out;
}

namespace {

struct PointSet {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::span<const float> values;
  std::span<const float> row(std::size_t i) const { return values.subspan(i * dim, dim); }
};

Clustering kmeans_impl(const PointSet& pts, std::size_t k, std::uint64_t seed, int max_iter) {
  if (k == 0) throw ValidationError("k-means: k must be >= 1");
  std::set<std::vector<float>> distinct;
  for (std::size_t i = 0; i < pts.n; ++i) distinct.emplace(pts.row(i).begin(), pts.row(i).end());
  if (k > distinct.size())
    throw ValidationError("k-means: k=" + std::to_string(k) + " exceeds the " + std::to_string(distinct.size()) +
                          " distinct points");

  Clustering cl;
  cl.k = k;
  cl.dim = pts.dim;
  cl.centroids.assign(k * pts.dim, 0.0);
  auto set_centroid_to_point = [&](std::size_t j, std::size_t i) {
    for (std::size_t d = 0; d < pts.dim; ++d) cl.centroids[j * pts.dim + d] = pts.row(i)[d];
  };

  // k-means++ seeding.
  Rng rng(seed);
  std::vector<double> nearest(pts.n, std::numeric_limits<double>::infinity());
  std::size_t first = static_cast<std::size_t>(rng.below(pts.n));
  set_centroid_to_point(0, first);
  for (std::size_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (std::size_t i = 0; i < pts.n; ++i) {
      nearest[i] = std::min(nearest[i], sq_dist(cl.centroid(j - 1), pts.row(i)));
      total += nearest[i];
    }
    double target = rng.uniform() * total;
    std::size_t pick = pts.n;
    for (std::size_t i = 0; i < pts.n; ++i) {
      if (nearest[i] <= 0.0) continue;
      pick = i;
      target -= nearest[i];
      if (target < 0.0) break;
    }
    if (pick == pts.n) throw NumericError("k-means++: no remaining point with positive distance");
    set_centroid_to_point(j, pick);
  }

  std::vector<int> label(pts.n, -1), previous;
  std::vector<std::size_t> count(k);
  auto recompute = [&]() {
    std::fill(cl.centroids.begin(), cl.centroids.end(), 0.0);
    std::fill(count.begin(), count.end(), 0);
    for (std::size_t i = 0; i < pts.n; ++i) {
      const auto j = static_cast<std::size_t>(label[i]);
      ++count[j];
      for (std::size_t d = 0; d < pts.dim; ++d) cl.centroids[j * pts.dim + d] += pts.row(i)[d];
    }
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t d = 0; d < pts.dim; ++d) cl.centroids[j * pts.dim + d] /= static_cast<double>(count[j]);
  };
  auto repair_empty = [&]() {
    std::fill(count.begin(), count.end(), 0);
    for (int l : label) ++count[static_cast<std::size_t>(l)];
    for (std::size_t e = 0; e < k; ++e) {
      if (count[e] != 0) continue;
      const auto largest = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
      // Centroid of the largest cluster from its current members.
      std::vector<double> mean(pts.dim, 0.0);
      for (std::size_t i = 0; i < pts.n; ++i)
        if (static_cast<std::size_t>(label[i]) == largest)
          for (std::size_t d = 0; d < pts.dim; ++d) mean[d] += pts.row(i)[d];
      for (auto& m : mean) m /= static_cast<double>(count[largest]);
      std::size_t far = pts.n;
      double far_d = -1.0;
      for (std::size_t i = 0; i < pts.n; ++i) {
        if (static_cast<std::size_t>(label[i]) != largest) continue;
        const double d = sq_dist(std::span<const double>(mean), pts.row(i));
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      label[far] = static_cast<int>(e);
      --count[largest];
      ++count[e];
    }
  };

  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < pts.n; ++i) {
      std::size_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) {
        const double d = sq_dist(cl.centroid(j), pts.row(i));
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      label[i] = static_cast<int>(best);
    }
    repair_empty();
    recompute();
    cl.iterations = it + 1;
    if (label == previous) break;
    previous = label;
  }
  cl.cell_cluster = std::move(label);
  return cl;
}

}  // namespace

Clustering two_level_cluster(const SomGrid& grid, std::size_t k, std::uint64_t seed, int max_iter) {
  return kmeans_impl(PointSet{grid.cells(), grid.dim, grid.weights}, k, seed, max_iter);
}

Clustering kmeans(const featex::FeatureMatrix& points, std::size_t k, std::uint64_t seed, int max_iter) {
  return kmeans_impl(PointSet{points.rows(), points.dim, points.values}, k, seed, max_iter);
}

std::vector<std::string> representative_images(const Clustering& clusters, std::span<const std::size_t> image_cell,
                                               const featex::FeatureMatrix& x) {
  if (image_cell.size() != x.rows()) throw ValidationError("representative_images: assignment/feature size mismatch");
  if (x.dim != clusters.dim) throw ValidationError("representative_images: feature dimension differs from centroids");
  if (x.rows() < clusters.k)
    throw ValidationError("representative_images: " + std::to_string(x.rows()) + " images for " +
                          std::to_string(clusters.k) + " clusters");
  const std::size_t none = x.rows();
  std::vector<std::size_t> chosen(clusters.k, none);
  std::vector<double> chosen_d(clusters.k, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (image_cell[i] >= clusters.cell_cluster.size()) throw ValidationError("representative_images: cell out of range");
    const auto j = static_cast<std::size_t>(clusters.cell_cluster[image_cell[i]]);
    const double d = sq_dist(clusters.centroid(j), x.row(i));
    if (d < chosen_d[j]) {
      chosen_d[j] = d;
      chosen[j] = i;
    }
  }
  std::vector<bool> used(x.rows(), false);
  for (auto c : chosen)
    if (c != none) used[c] = true;
  for (std::size_t j = 0; j < clusters.k; ++j) {
    if (chosen[j] != none) continue;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (used[i]) continue;
      const double d = sq_dist(clusters.centroid(j), x.row(i));
      if (d < best) {
        best = d;
        chosen[j] = i;
      }
    }
    used[chosen[j]] = true;
  }
  std::vector<std::string> ids;
  ids.reserve(clusters.k);
  for (auto c : chosen) ids.push_back(x.ids[c]);
  return ids;
}

featex::FeatureMatrix cell_prototypes(const SomGrid& grid, std::span<const std::size_t> image_cell,
                                      const featex::FeatureMatrix& features, double sigma) {
  if (image_cell.size() != features.rows()) throw ValidationError("cell_prototypes: assignment/feature size mismatch");
  if (features.rows() == 0) throw ValidationError("cell_prototypes: no images");
  const std::size_t cells = grid.cells(), dim = features.dim;
  std::vector<double> sums(cells * dim, 0.0);
  std::vector<double> counts(cells, 0.0);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto c = image_cell[i];
    counts[c] += 1.0;
    for (std::size_t d = 0; d < dim; ++d) sums[c * dim + d] += features.row(i)[d];
  }
  std::vector<std::size_t> occupied;
  for (std::size_t c = 0; c < cells; ++c)
    if (counts[c] > 0) occupied.push_back(c);

  featex::FeatureMatrix out;
  out.dim = dim;
  out.values.assign(cells * dim, 0.0f);
  const int rad = static_cast<int>(std::ceil(sigma * std::sqrt(2.0 * std::log(1e6))));
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> acc(dim);
  for (std::size_t c = 0; c < cells; ++c) {
    out.ids.push_back("cell/" + std::to_string(c));
    const int r0 = grid.row_of(c), c0 = grid.col_of(c);
    std::fill(acc.begin(), acc.end(), 0.0);
    double wsum = 0.0;
    for (int r = std::max(0, r0 - rad); r <= std::min(grid.rows - 1, r0 + rad); ++r)
      for (int q = std::max(0, c0 - rad); q <= std::min(grid.cols - 1, c0 + rad); ++q) {
        const auto cc = static_cast<std::size_t>(r) * grid.cols + q;
        if (counts[cc] == 0) continue;
        const double w = std::exp(-((r - r0) * (r - r0) + (q - c0) * (q - c0)) * inv2s2);
        wsum += w * counts[cc];
        for (std::size_t d = 0; d < dim; ++d) acc[d] += w * sums[cc * dim + d];
      }
    if (wsum <= 0.0) {
      // Nothing nearby: average the nearest occupied cells on the lattice.
      double best = std::numeric_limits<double>::infinity();
      for (auto oc : occupied) {
        const double dr = grid.row_of(oc) - r0, dq = grid.col_of(oc) - c0;
        best = std::min(best, dr * dr + dq * dq);
      }
      for (auto oc : occupied) {
        const double dr = grid.row_of(oc) - r0, dq = grid.col_of(oc) - c0;
        if (dr * dr + dq * dq != best) continue;
        wsum += counts[oc];
        for (std::size_t d = 0; d < dim; ++d) acc[d] += sums[oc * dim + d];
      }
    }
    for (std::size_t d = 0; d < dim; ++d) out.values[c * dim + d] = static_cast<float>(acc[d] / wsum);
  }
  return out;
}

namespace {

Rgb hsl_to_rgb(double h, double s, double l) {
  auto hue = [](double p, double q, double t) {
    if (t < 0) t += 1;
    if (t > 1) t -= 1;
    if (t < 1.0 / 6) return p + (q - p) * 6 * t;
    if (t < 0.5) return q;
    if (t < 2.0 / 3) return p + (q - p) * (2.0 / 3 - t) * 6;
    return p;
  };
  const double q = l < 0.5 ? l * (1 + s) : l + s - l * s;
  const double p = 2 * l - q;
  auto to8 = [](double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L)); };
  return {to8(hue(p, q, h + 1.0 / 3)), to8(hue(p, q, h)), to8(hue(p, q, h - 1.0 / 3))};
}

struct Lab {
  double l, a, b;
};

double srgb_to_linear(double c) { return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4); }
double linear_to_srgb(double c) { return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1 / 2.4) - 0.055; }

constexpr double kXn = 0.95047, kYn = 1.0, kZn = 1.08883;

Lab rgb_to_lab(const Rgb& c) {
  const double r = srgb_to_linear(c[0] / 255.0), g = srgb_to_linear(c[1] / 255.0), b = srgb_to_linear(c[2] / 255.0);
  const double x = 0.4124 * r + 0.3576 * g + 0.1805 * b;
  const double y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
  const double z = 0.0193 * r + 0.1192 * g + 0.9505 * b;
  auto f = [](double t) { return t > 216.0 / 24389 ? std::cbrt(t) : (24389.0 / 27 * t + 16) / 116; };
  const double fx = f(x / kXn), fy = f(y / kYn), fz = f(z / kZn);
  return {116 * fy - 16, 500 * (fx - fy), 200 * (fy - fz)};
}

Rgb lab_to_rgb(const Lab& lab) {
  const double fy = (lab.l + 16) / 116, fx = fy + lab.a / 500, fz = fy - lab.b / 200;
  auto finv = [](double t) { return t * t * t > 216.0 / 24389 ? t * t * t : (116 * t - 16) * 27 / 24389; };
  const double x = kXn * finv(fx), y = kYn * finv(fy), z = kZn * finv(fz);
  const double r = 3.2406 * x - 1.5372 * y - 0.4986 * z;
  const double g = -0.9689 * x + 1.8758 * y + 0.0415 * z;
  const double b = 0.0557 * x - 0.2040 * y + 1.0570 * z;
  auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(linear_to_srgb(std::clamp(v, 0.0, 1.0)) * 255.0), 0L, 255L));
  };
  return {to8(r), to8(g), to8(b)};
}

constexpr Rgb kWarm{214, 52, 28};
constexpr Rgb kCold{32, 178, 226};

}  // namespace

const std::vector<Rgb>& preference_ramp() {
  static const std::vector<Rgb> ramp = [] {
    std::vector<Rgb> r(256);
    const Lab w = rgb_to_lab(kWarm), c = rgb_to_lab(kCold);
    r.front() = kWarm;
    r.back() = kCold;
    for (int i = 1; i < 255; ++i) {
      const double t = i / 255.0;
      r[i] = lab_to_rgb({w.l + (c.l - w.l) * t, w.a + (c.a - w.a) * t, w.b + (c.b - w.b) * t});
    }
    return r;
  }();
  return ramp;
}

int ramp_position(double preference) {
  const double p = std::clamp(std::isfinite(preference) ? preference : 0.0, 0.0, 1.0);
  return static_cast<int>(std::lround(p * 255.0));
}

int ramp_index_of(const Rgb& c) {
  const auto& ramp = preference_ramp();
  for (int i = 0; i < 256; ++i)
    if (ramp[i] == c) return i;
  return -1;
}

AlphabetMap alphabet(const SomGrid& grid, AlphabetMode mode, std::optional<std::span<const double>> preference) {
  AlphabetMap a;
  a.rows = grid.rows;
  a.cols = grid.cols;
  a.mode = mode;
  a.colors.resize(grid.cells());
  if (mode == AlphabetMode::kGeneric) {
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      const double hue = static_cast<double>(grid.col_of(c)) / grid.cols;
      const double light = 0.35 + 0.5 * static_cast<double>(grid.row_of(c)) / grid.rows;
      a.colors[c] = hsl_to_rgb(hue, 0.8, light);
    }
    return a;
  }
  if (!preference || preference->size() != grid.cells())
    throw ValidationError("preference-ordered alphabet needs one preference value per cell");
  a.preference.assign(preference->begin(), preference->end());
  a.ramp_index.resize(grid.cells());
  const auto& ramp = preference_ramp();
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    a.ramp_index[c] = ramp_position(a.preference[c]);
    a.colors[c] = ramp[static_cast<std::size_t>(a.ramp_index[c])];
  }
  return a;
}

namespace {
template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(static_cast<std::uint64_t>(v) >> (8 * i)));
}
template <typename T>
T get(std::span<const std::uint8_t> b, std::size_t& pos) {
  if (pos + sizeof(T) > b.size()) throw Error("SOM: truncated stream");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}
}  // namespace

std::vector<std::uint8_t> encode_som(const SomGrid& g) {
  std::vector<std::uint8_t> out{'S', 'O', 'M', '0'};
  put<std::uint32_t>(out, static_cast<std::uint32_t>(g.rows));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(g.cols));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(g.dim));
  const auto* raw = reinterpret_cast<const std::uint8_t*>(g.weights.data());
  out.insert(out.end(), raw, raw + g.weights.size() * sizeof(float));
  put<std::uint64_t>(out, g.seed);
  put<std::uint32_t>(out, g.iters);
  return out;
}

SomGrid decode_som(std::span<const std::uint8_t> b) {
  if (b.size() < 16 || std::memcmp(b.data(), "SOM0", 4) != 0) throw Error("SOM: bad magic");
  std::size_t pos = 4;
  SomGrid g;
  g.rows = static_cast<int>(get<std::uint32_t>(b, pos));
  g.cols = static_cast<int>(get<std::uint32_t>(b, pos));
  g.dim = get<std::uint32_t>(b, pos);
  const std::size_t n = g.cells() * g.dim;
  if (pos + n * sizeof(float) > b.size()) throw Error("SOM: truncated weights");
  g.weights.resize(n);
  std::memcpy(g.weights.data(), b.data() + pos, n * sizeof(float));
  pos += n * sizeof(float);
  g.seed = get<std::uint64_t>(b, pos);
  g.iters = get<std::uint32_t>(b, pos);
  if (pos != b.size()) throw Error("SOM: trailing bytes");
  return g;
}

void write_som(const std::filesystem::path& path, const SomGrid& g) { write_file_bytes(path, encode_som(g)); }

SomGrid read_som(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DependencyError("missing SOM file " + path.string());
  return decode_som(read_file_bytes(path));
}

}  // namespace prefmap::som
