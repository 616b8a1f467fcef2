#include "prefmap/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace prefmap::classifier {

using nlohmann::json;

namespace {

constexpr double kMaxShearDeg = 10.0;
constexpr double kMinScale = 0.9;
constexpr double kMaxScale = 1.1;
constexpr double kMaxRotationDeg = 15.0;

}  // namespace

std::string AugmentParams::describe() const {
  if (identity) return "original";
  std::ostringstream s;
  s.precision(4);
  s << (hflip ? "h" : "-") << (vflip ? "v" : "-") << " shear=" << shear_deg << " scale=" << scale
    << " rot=" << rotation_deg;
  return s.str();
}

std::pair<Image, AugmentParams> augment_one(const Image& img, std::uint64_t seed) {
  Rng rng(seed);
  AugmentParams p;
  p.identity = false;
  p.hflip = rng.bernoulli(0.5);
  p.vflip = rng.bernoulli(0.5);
  p.shear_deg = rng.uniform(-kMaxShearDeg, kMaxShearDeg);
  p.scale = rng.uniform(kMinScale, kMaxScale);
  p.rotation_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);

  Image src = img;
  if (p.hflip) src = flip_horizontal(src);
  if (p.vflip) src = flip_vertical(src);

  // forward = rotation * shear * scale; the warp wants its inverse
  const double th = deg_to_rad(p.rotation_deg), sh = std::tan(deg_to_rad(p.shear_deg));
  const double c = std::cos(th), s = std::sin(th), k = p.scale;
  const double a = c * k, b = (c * sh - s) * k, cc = s * k, d = (s * sh + c) * k;
  const double det = a * d - b * cc;
  const std::array<double, 4> inv{d / det, -b / det, -cc / det, a / det};
  return {warp_affine(src, inv), p};
}

std::vector<Image> augment(const Image& img, int n_variants, std::uint64_t seed) {
  if (n_variants < 0) throw ValidationError("augment: n_variants must be >= 0");
  std::vector<Image> out{img};
  for (int i = 0; i < n_variants; ++i)
    out.push_back(augment_one(img, derive_seed(seed, static_cast<std::uint64_t>(i))).first);
  return out;
}

std::vector<int> plan_variants(std::size_t n_sources, std::size_t target, std::uint64_t seed) {
  if (n_sources == 0) throw ValidationError("plan_variants: no sources");
  if (target < n_sources)
    throw ValidationError("plan_variants: target " + std::to_string(target) + " is below the source count " +
                          std::to_string(n_sources));
  const std::size_t per = target / n_sources;
  const std::size_t extra = target - per * n_sources;
  std::vector<int> out(n_sources, static_cast<int>(per) - 1);
  std::vector<std::size_t> order(n_sources);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  for (std::size_t i = 0; i < extra; ++i) ++out[order[i]];
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "train";
}

std::vector<Split> split_groups(std::span<const std::size_t> group_sizes, const std::array<double, 3>& ratios,
                                std::uint64_t seed) {
  const double rsum = ratios[0] + ratios[1] + ratios[2];
  if (!(rsum > 0.0) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw ValidationError("split ratios must be non-negative with a positive sum");
  const double total = static_cast<double>(std::accumulate(group_sizes.begin(), group_sizes.end(), std::size_t{0}));
  std::array<double, 3> deficit{};
  for (int s = 0; s < 3; ++s) deficit[s] = total * ratios[s] / rsum;

  std::vector<std::size_t> order(group_sizes.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<Split> out(group_sizes.size(), Split::kTrain);
  for (auto g : order) {
    int best = 0;
    for (int s = 1; s < 3; ++s)
      if (deficit[s] > deficit[best]) best = s;
    out[g] = static_cast<Split>(best);
    deficit[best] -= static_cast<double>(group_sizes[g]);
  }
  return out;
}

std::size_t AugmentedSet::count(Split s) const { return static_cast<std::size_t>(std::count(split.begin(), split.end(), s)); }

std::pair<featex::FeatureMatrix, std::vector<int>> AugmentedSet::subset(Split s) const {
  featex::FeatureMatrix x;
  x.dim = features.dim;
  std::vector<int> y;
  for (std::size_t i = 0; i < size(); ++i)
    if (split[i] == s) {
      x.append(features.ids[i], features.row(i));
      y.push_back(labels[i]);
    }
  return {std::move(x), std::move(y)};
}

AugmentedSet build_training_set(std::span<const survey::PreferenceLabel> labels, const ImageLoader& load,
                                const TrainingSetOptions& opts, const featex::Extractor& extractor) {
  std::string unlabeled;
  for (const auto& l : labels)
    if (l.appearances == 0) unlabeled += (unlabeled.empty() ? "" : ", ") + l.image_id;
  if (!unlabeled.empty()) throw ValidationError("representatives without votes: " + unlabeled);

  const auto variants = plan_variants(labels.size(), opts.target, derive_seed(opts.seed, "variants"));
  AugmentedSet set;
  set.features.dim = extractor.dim();
  std::vector<std::size_t> group_sizes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& l = labels[i];
    const Image img = load(l.image_id);
    const std::uint64_t src_seed = derive_seed(opts.seed, l.image_id);
    for (int v = 0; v <= variants[i]; ++v) {
      AugmentParams params;
      Image aug;
      if (v == 0) {
        aug = img;
      } else {
        std::tie(aug, params) = augment_one(img, derive_seed(src_seed, static_cast<std::uint64_t>(v - 1)));
      }
      set.features.append(l.image_id + "#" + std::to_string(v), extractor.extract(aug));
      set.labels.push_back(l.liked ? 1 : 0);
      set.source.push_back(l.image_id);
      set.augmentation.push_back(params);
    }
    group_sizes.push_back(static_cast<std::size_t>(variants[i]) + 1);
  }
  if (opts.l2_normalize) set.features = featex::normalize(std::move(set.features), featex::NormalizeMode::kL2Rows);

  const auto group_split = split_groups(group_sizes, opts.ratios, derive_seed(opts.seed, "split"));
  for (std::size_t g = 0; g < group_sizes.size(); ++g) set.split.insert(set.split.end(), group_sizes[g], group_split[g]);
  return set;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.w.size() + l.b.size();
  return n;
}

Mlp make_mlp(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw ValidationError("make_mlp: need at least input and output widths");
  for (auto w : widths)
    if (w == 0) throw ValidationError("make_mlp: zero layer width");
  Mlp m;
  m.widths.assign(widths.begin(), widths.end());
  m.seed = seed;
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Layer layer{widths[l], widths[l + 1], {}, {}};
    const double limit = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    layer.w.resize(layer.in * layer.out);
    for (auto& w : layer.w) w = rng.uniform(-limit, limit);
    layer.b.assign(layer.out, 0.0);
    m.layers.push_back(std::move(layer));
  }
  return m;
}

void standardize_inputs(Mlp& m, const featex::FeatureMatrix& x) {
  if (x.dim != m.input_dim()) throw ValidationError("standardize_inputs: dimension mismatch");
  if (x.rows() == 0) throw ValidationError("standardize_inputs: no rows");
  const std::size_t d = x.dim;
  const double n = static_cast<double>(x.rows());
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += x.row(i)[k];
  for (auto& v : mean) v /= n;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double t = x.row(i)[k] - mean[k];
      var[k] += t * t;
    }
  const double unit = 1.0 / std::sqrt(static_cast<double>(d));
  m.in_shift = mean;
  m.in_scale.assign(d, 0.0);
  for (std::size_t k = 0; k < d; ++k) {
    const double sd = std::sqrt(var[k] / n);
    if (sd > 1e-12) m.in_scale[k] = unit / sd;
  }
}

namespace {

void check_dim(const Mlp& m, std::size_t d) {
  if (d != m.input_dim())
    throw ValidationError("input dimension " + std::to_string(d) + " does not match model input " +
                          std::to_string(m.input_dim()));
}

// Activations per layer; acts[0] is the input, the last entry holds softmax probabilities.
struct Pass {
  std::vector<std::vector<double>> acts;
  double log_z = 0.0;  // log-sum-exp of the output logits
};

void run_forward(const Mlp& m, std::span<const float> x, Pass& pass) {
  pass.acts.resize(m.layers.size() + 1);
  pass.acts[0].assign(x.begin(), x.end());
  if (!m.in_scale.empty())
    for (std::size_t i = 0; i < x.size(); ++i) pass.acts[0][i] = (pass.acts[0][i] - m.in_shift[i]) * m.in_scale[i];
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const auto& L = m.layers[l];
    const auto& in = pass.acts[l];
    auto& out = pass.acts[l + 1];
    out.assign(L.b.begin(), L.b.end());
    for (std::size_t o = 0; o < L.out; ++o) {
      const double* w = L.w.data() + o * L.in;
      double s = 0.0;
      for (std::size_t i = 0; i < L.in; ++i) s += w[i] * in[i];
      out[o] += s;
    }
    if (l + 1 < m.layers.size()) {
      for (auto& v : out) v = std::max(v, 0.0);
    } else {
      const double mx = *std::max_element(out.begin(), out.end());
      double z = 0.0;
      for (double v : out) z += std::exp(v - mx);
      pass.log_z = mx + std::log(z);
      for (auto& v : out) v = std::exp(v - pass.log_z);
    }
  }
}

// Sample loss; fills deltas (dLoss/dpre-activation) per layer.
double run_backward(const Mlp& m, const Pass& pass, int label, std::vector<std::vector<double>>& delta) {
  const std::size_t nl = m.layers.size();
  delta.resize(nl);
  const auto& probs = pass.acts[nl];
  const double p = probs[static_cast<std::size_t>(label)];
  const double sample_loss = -std::log(std::max(p, 1e-300));
  delta[nl - 1] = probs;
  delta[nl - 1][static_cast<std::size_t>(label)] -= 1.0;
  for (std::size_t l = nl - 1; l > 0; --l) {
    const auto& L = m.layers[l];
    auto& d = delta[l - 1];
    d.assign(L.in, 0.0);
    for (std::size_t o = 0; o < L.out; ++o) {
      const double g = delta[l][o];
      if (g == 0.0) continue;
      const double* w = L.w.data() + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) d[i] += g * w[i];
    }
    const auto& a = pass.acts[l];
    for (std::size_t i = 0; i < L.in; ++i)
      if (a[i] <= 0.0) d[i] = 0.0;
  }
  return sample_loss;
}

void check_label(int y) {
  if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1, got " + std::to_string(y));
}

}  // namespace

std::vector<double> forward(const Mlp& m, std::span<const float> x) {
  check_dim(m, x.size());
  Pass pass;
  run_forward(m, x, pass);
  return pass.acts.back();
}

Gradient loss_gradient(const Mlp& m, const featex::FeatureMatrix& x, std::span<const int> labels) {
  if (x.rows() == 0) throw ValidationError("loss_gradient: empty batch");
  if (labels.size() != x.rows()) throw ValidationError("loss_gradient: label count differs from batch size");
  check_dim(m, x.dim);
  Gradient g;
  for (const auto& L : m.layers)
    g.layers.push_back(Layer{L.in, L.out, std::vector<double>(L.w.size(), 0.0), std::vector<double>(L.b.size(), 0.0)});
  Pass pass;
  std::vector<std::vector<double>> delta;
  for (std::size_t s = 0; s < x.rows(); ++s) {
    check_label(labels[s]);
    run_forward(m, x.row(s), pass);
    g.loss += run_backward(m, pass, labels[s], delta);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      auto& G = g.layers[l];
      const auto& a = pass.acts[l];
      for (std::size_t o = 0; o < G.out; ++o) {
        const double d = delta[l][o];
        G.b[o] += d;
        if (d == 0.0) continue;
        double* w = G.w.data() + o * G.in;
        for (std::size_t i = 0; i < G.in; ++i) w[i] += d * a[i];
      }
    }
  }
  return g;
}

double loss(const Mlp& m, const featex::FeatureMatrix& x, std::span<const int> labels) {
  check_dim(m, x.dim);
  Pass pass;
  double total = 0.0;
  for (std::size_t s = 0; s < x.rows(); ++s) {
    run_forward(m, x.row(s), pass);
    total += -std::log(std::max(pass.acts.back()[static_cast<std::size_t>(labels[s])], 1e-300));
  }
  return total;
}

namespace {

// Batch loss plus which hidden units are active over every sample.
std::pair<double, std::vector<bool>> probe_loss(const Mlp& m, const featex::FeatureMatrix& x,
                                                std::span<const int> labels) {
  std::vector<bool> on;
  Pass pass;
  double total = 0.0;
  for (std::size_t s = 0; s < x.rows(); ++s) {
    run_forward(m, x.row(s), pass);
    total += -std::log(std::max(pass.acts.back()[static_cast<std::size_t>(labels[s])], 1e-300));
    for (std::size_t l = 1; l < m.layers.size(); ++l)
      for (double v : pass.acts[l]) on.push_back(v > 0.0);
  }
  return {total, on};
}

}  // namespace

double gradient_check(const Mlp& m, const featex::FeatureMatrix& batch, std::span<const int> labels, double eps,
                      std::size_t per_layer, std::uint64_t seed) {
  if (batch.rows() == 0) throw ValidationError("gradient_check: empty batch");
  const auto analytic = loss_gradient(m, batch, labels);
  if (labels.size() != batch.rows()) throw ValidationError("gradient_check: label count differs from batch rows");
  const auto base = probe_loss(m, batch, labels).second;
  Mlp probe = m;
  Rng rng(seed);
  double worst = 0.0;
  auto check = [&](double& param, double ga) {
    const double saved = param;
    param = saved + eps;
    const auto [up, on_up] = probe_loss(probe, batch, labels);
    param = saved - eps;
    const auto [down, on_down] = probe_loss(probe, batch, labels);
    param = saved;
    // A difference straddling a ReLU kink measures no derivative.
    if (on_up != base || on_down != base) return;
    const double gn = (up - down) / (2.0 * eps);
    const double rel = std::abs(ga - gn) / std::max({std::abs(ga), std::abs(gn), 1e-8});
    worst = std::max(worst, rel);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& L = probe.layers[l];
    std::vector<std::size_t> idx(L.w.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > per_layer) {
      rng.shuffle(idx);
      idx.resize(per_layer);
    }
    for (auto i : idx) check(L.w[i], analytic.layers[l].w[i]);
    for (std::size_t i = 0; i < L.b.size(); ++i) check(L.b[i], analytic.layers[l].b[i]);
  }
  return worst;
}

double TrainSchedule::lr(int epoch) const { return lr0 * std::ldexp(1.0, -(epoch / halve_every)); }

double accuracy(const Mlp& m, const featex::FeatureMatrix& x, std::span<const int> labels) {
  if (x.rows() == 0) return 0.0;
  check_dim(m, x.dim);
  Pass pass;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    run_forward(m, x.row(i), pass);
    const int pred = pass.acts.back()[1] >= 0.5 ? 1 : 0;
    if (pred == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(x.rows());
}

Mlp train(Mlp model, const featex::FeatureMatrix& train_x, std::span<const int> train_y,
          const featex::FeatureMatrix& val_x, std::span<const int> val_y, const TrainSchedule& schedule,
          std::uint64_t seed) {
  if (train_x.rows() == 0 || val_x.rows() == 0) throw ValidationError("train: training and validation sets must be non-empty");
  if (train_y.size() != train_x.rows() || val_y.size() != val_x.rows())
    throw ValidationError("train: label count differs from row count");
  check_dim(model, train_x.dim);
  check_dim(model, val_x.dim);
  for (int y : train_y) check_label(y);
  if (schedule.halve_every < 1 || schedule.max_epochs < 1 || schedule.samples_per_epoch < 1 || schedule.patience < 1)
    throw ValidationError("train: schedule values must be positive");

  Rng rng(seed);
  std::vector<std::size_t> order(train_x.rows());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  std::size_t cursor = 0;

  Mlp best = model;
  double best_acc = -1.0;
  int since_best = 0;
  Pass pass;
  std::vector<std::vector<double>> delta;
  model.history.clear();
  for (int epoch = 0; epoch < schedule.max_epochs; ++epoch) {
    const double lr = schedule.lr(epoch);
    double epoch_loss = 0.0;
    for (int s = 0; s < schedule.samples_per_epoch; ++s) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      const std::size_t i = order[cursor++];
      run_forward(model, train_x.row(i), pass);
      const double l = run_backward(model, pass, train_y[i], delta);
      if (!std::isfinite(l))
        throw NumericError("loss is not finite at epoch " + std::to_string(epoch) + " (lr " + std::to_string(lr) + ")");
      epoch_loss += l;
      for (std::size_t k = 0; k < model.layers.size(); ++k) {
        auto& L = model.layers[k];
        const auto& a = pass.acts[k];
        for (std::size_t o = 0; o < L.out; ++o) {
          const double g = lr * delta[k][o];
          if (g == 0.0) continue;
          L.b[o] -= g;
          double* w = L.w.data() + o * L.in;
          for (std::size_t j = 0; j < L.in; ++j) w[j] -= g * a[j];
        }
      }
    }
    epoch_loss /= schedule.samples_per_epoch;
    if (!std::isfinite(epoch_loss))
      throw NumericError("loss is not finite at epoch " + std::to_string(epoch) + " (lr " + std::to_string(lr) + ")");
    const double acc = accuracy(model, val_x, val_y);
    model.history.push_back(EpochRecord{epoch, lr, epoch_loss, acc});
    if (acc > best_acc) {
      best_acc = acc;
      best = model;
      best.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= schedule.patience) {
      break;
    }
  }
  best.history = model.history;
  return best;
}

std::vector<Prediction> predict(const Mlp& m, const featex::FeatureMatrix& x) {
  check_dim(m, x.dim);
  std::vector<Prediction> out;
  out.reserve(x.rows());
  Pass pass;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    run_forward(m, x.row(i), pass);
    out.push_back(Prediction{x.ids[i], pass.acts.back()[1]});
  }
  return out;
}

BinaryScores score(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ValidationError("score: size mismatch");
  BinaryScores s;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] && predicted[i]) ++s.tp;
    else if (!truth[i] && predicted[i]) ++s.fp;
    else if (truth[i] && !predicted[i]) ++s.fn;
    else ++s.tn;
  }
  s.precision = s.tp + s.fp ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fp) : 0.0;
  s.recall = s.tp + s.fn ? static_cast<double>(s.tp) / static_cast<double>(s.tp + s.fn) : 0.0;
  s.accuracy = truth.empty() ? 0.0 : static_cast<double>(s.tp + s.tn) / static_cast<double>(truth.size());
  return s;
}

std::vector<double> label_bmus(std::size_t cells, std::span<const std::size_t> image_cell, std::span<const double> p_like,
                               const featex::FeatureMatrix& prototypes, const Mlp& model) {
  if (image_cell.size() != p_like.size()) throw ValidationError("label_bmus: predictions do not cover the assignment");
  if (prototypes.rows() != cells) throw ValidationError("label_bmus: one prototype row per cell required");
  std::vector<double> sum(cells, 0.0);
  std::vector<std::size_t> count(cells, 0);
  for (std::size_t i = 0; i < image_cell.size(); ++i) {
    if (image_cell[i] >= cells) throw ValidationError("label_bmus: cell index out of range");
    sum[image_cell[i]] += p_like[i];
    ++count[image_cell[i]];
  }
  std::vector<double> out(cells);
  for (std::size_t c = 0; c < cells; ++c)
    out[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : forward(model, prototypes.row(c))[1];
  return out;
}

std::vector<TransferLabel> select_transfers(const som::SomGrid& grid, const featex::FeatureMatrix& som_input,
                                            std::span<const double> cell_preference) {
  if (cell_preference.size() != grid.cells()) throw ValidationError("select_transfers: one preference per cell required");
  if (som_input.dim != grid.dim) throw ValidationError("select_transfers: input dimension differs from the SOM");
  std::vector<TransferLabel> out;
  const std::size_t n = som_input.rows();
  if (n <= grid.cells()) {
    for (std::size_t i = 0; i < n; ++i)
      out.push_back(TransferLabel{som_input.ids[i], cell_preference[som::bmu(grid, som_input.row(i))]});
    return out;
  }
  std::vector<bool> taken(n, false);
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    const auto w = grid.weight(c);
    std::size_t best = n;
    double best_d = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const auto x = som_input.row(i);
      double d = 0.0;
      for (std::size_t k = 0; k < grid.dim; ++k) {
        const double diff = static_cast<double>(x[k]) - w[k];
        d += diff * diff;
      }
      if (best == n || d < best_d) {
        best = i;
        best_d = d;
      }
    }
    taken[best] = true;
    out.push_back(TransferLabel{som_input.ids[best], cell_preference[c]});
  }
  return out;
}

AdaptResult adapt_domain(std::span<const TransferLabel> transfers, const featex::FeatureMatrix& sat_features,
                         const AdaptOptions& opts) {
  const featex::FeatureMatrix sat =
      opts.l2_normalize ? featex::normalize(sat_features, featex::NormalizeMode::kL2Rows) : sat_features;
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < sat.rows(); ++i) row_of[sat.ids[i]] = i;
  std::map<std::string, double> transferred;
  std::string missing;
  for (const auto& t : transfers) {
    if (!row_of.contains(t.geokey)) {
      missing += (missing.empty() ? "" : ", ") + t.geokey;
      continue;
    }
    if (!transferred.emplace(t.geokey, t.p_like).second)
      throw ValidationError("adapt_domain: geokey transferred twice: " + t.geokey);
  }
  if (!missing.empty()) throw ValidationError("adapt_domain: no satellite image for geokeys: " + missing);
  if (transferred.empty()) throw ValidationError("adapt_domain: no transfer labels");

  std::vector<std::size_t> rows;
  for (const auto& t : transfers) rows.push_back(row_of[t.geokey]);
  const std::vector<std::size_t> ones(rows.size(), 1);
  const auto split = split_groups(ones, {1.0 - opts.val_fraction, opts.val_fraction, 0.0}, derive_seed(opts.seed, "split"));
  featex::FeatureMatrix tx, vx;
  tx.dim = vx.dim = sat.dim;
  std::vector<int> ty, vy;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const int y = transfers[k].p_like >= 0.5 ? 1 : 0;
    if (split[k] == Split::kVal) {
      vx.append(sat.ids[rows[k]], sat.row(rows[k]));
      vy.push_back(y);
    } else {
      tx.append(sat.ids[rows[k]], sat.row(rows[k]));
      ty.push_back(y);
    }
  }
  if (vx.rows() == 0) {
    vx = tx;
    vy = ty;
  }

  AdaptResult r;
  auto head = make_mlp(head_widths(sat.dim), derive_seed(opts.seed, "init"));
  if (opts.standardize) standardize_inputs(head, tx);
  r.model = train(std::move(head), tx, ty, vx, vy, opts.schedule, derive_seed(opts.seed, "sgd"));
  Pass pass;
  for (std::size_t i = 0; i < sat.rows(); ++i) {
    const auto it = transferred.find(sat.ids[i]);
    if (it != transferred.end()) {
      r.predictions.push_back(SatPrediction{sat.ids[i], it->second, Source::kTransferred});
      ++r.transferred;
    } else {
      run_forward(r.model, sat.row(i), pass);
      r.predictions.push_back(SatPrediction{sat.ids[i], pass.acts.back()[1], Source::kPredicted});
      ++r.predicted;
    }
  }
  return r;
}

namespace {

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(std::span<const std::uint8_t> b, std::size_t& pos) {
  if (pos + sizeof(T) > b.size()) throw ValidationError("model file truncated");
  T v;
  std::memcpy(&v, b.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_model(const Mlp& m) {
  std::vector<std::uint8_t> out{'M', 'L', 'P', '0'};
  put(out, static_cast<std::uint32_t>(m.widths.size()));
  for (auto w : m.widths) put(out, static_cast<std::uint32_t>(w));
  for (const auto& L : m.layers) {
    for (double w : L.w) put(out, static_cast<float>(w));
    for (double b : L.b) put(out, static_cast<float>(b));
  }
  put(out, m.seed);
  put(out, static_cast<std::uint32_t>(m.in_scale.size()));
  for (double v : m.in_shift) put(out, v);
  for (double v : m.in_scale) put(out, v);
  for (const auto& h : m.history) {
    json j = {{"epoch", h.epoch}, {"lr", h.lr}, {"loss", h.loss}, {"val_accuracy", h.val_accuracy},
              {"best", h.epoch == m.best_epoch}};
    const auto line = j.dump() + "\n";
    out.insert(out.end(), line.begin(), line.end());
  }
  return out;
}

Mlp decode_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "MLP0", 4) != 0) throw ValidationError("not an MLP0 model file");
  std::size_t pos = 4;
  const auto n = take<std::uint32_t>(bytes, pos);
  if (n < 2 || n > 64) throw ValidationError("model file: bad layer count");
  Mlp m;
  for (std::uint32_t i = 0; i < n; ++i) m.widths.push_back(take<std::uint32_t>(bytes, pos));
  for (std::size_t l = 0; l + 1 < m.widths.size(); ++l) {
    Layer L{m.widths[l], m.widths[l + 1], {}, {}};
    L.w.resize(L.in * L.out);
    L.b.resize(L.out);
    for (auto& w : L.w) w = take<float>(bytes, pos);
    for (auto& b : L.b) b = take<float>(bytes, pos);
    m.layers.push_back(std::move(L));
  }
  m.seed = take<std::uint64_t>(bytes, pos);
  const auto nt = take<std::uint32_t>(bytes, pos);
  if (nt != 0 && nt != m.widths.front()) throw ValidationError("model file: input transform length differs from input width");
  m.in_shift.resize(nt);
  m.in_scale.resize(nt);
  for (auto& v : m.in_shift) v = take<double>(bytes, pos);
  for (auto& v : m.in_scale) v = take<double>(bytes, pos);
  std::istringstream rest(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end()));
  std::string line;
  while (std::getline(rest, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    m.history.push_back(EpochRecord{j.at("epoch").get<int>(), j.at("lr").get<double>(), j.at("loss").get<double>(),
                                    j.at("val_accuracy").get<double>()});
    if (j.value("best", false)) m.best_epoch = m.history.back().epoch;
  }
  return m;
}

void write_model(const std::filesystem::path& path, const Mlp& m) { write_file_bytes(path, encode_model(m)); }

Mlp read_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw DependencyError("missing model file " + path.string());
  return decode_model(read_file_bytes(path));
}

void write_predictions(const std::filesystem::path& path, std::span<const SatPrediction> p) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  for (const auto& r : p)
    out << json{{"image_id", r.image_id},
                {"p_like", r.p_like},
                {"source", r.source == Source::kTransferred ? "transferred" : "predicted"}}
               .dump()
        << '\n';
}

std::vector<SatPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing predictions file " + path.string());
  std::vector<SatPrediction> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const auto src = j.at("source").get<std::string>();
    out.push_back(SatPrediction{j.at("image_id").get<std::string>(), j.at("p_like").get<double>(),
                                src == "transferred" ? Source::kTransferred : Source::kPredicted});
  }
  return out;
}

}  // namespace prefmap::classifier
