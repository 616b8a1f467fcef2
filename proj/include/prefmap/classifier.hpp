#pragma once

// Preference classifier: augmentation, group-wise splitting, the
// [D, 1000, 10, 2] ReLU/softmax network trained by single-sample SGD, and the
// transfer of street-level preferences to satellite images by geokey.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefmap/featex.hpp"
#include "prefmap/image.hpp"
#include "prefmap/som.hpp"
#include "prefmap/survey.hpp"

namespace prefmap::classifier {

struct AugmentParams {
  bool hflip = false;
  bool vflip = false;
  double shear_deg = 0.0;
  double scale = 1.0;
  double rotation_deg = 0.0;
  bool identity = true;

  std::string describe() const;
};

/// One seeded variant: flips with p = 0.5 each, shear in +-10 deg, scale in
/// [0.9, 1.1], rotation in +-15 deg, bilinear with reflect padding.
std::pair<Image, AugmentParams> augment_one(const Image& img, std::uint64_t seed);
/// The original followed by n_variants variants (variant i uses derive_seed(seed, i)).
std::vector<Image> augment(const Image& img, int n_variants, std::uint64_t seed);

/// Variants per source so that sum(1 + variants) == target. Every source gets
/// target / n - 1; the remainder goes to a seeded choice of distinct sources.
std::vector<int> plan_variants(std::size_t n_sources, std::size_t target, std::uint64_t seed);

enum class Split { kTrain = 0, kVal = 1, kTest = 2 };
const char* split_name(Split s);

/// Assigns whole groups to splits. Groups are visited in seeded order and each
/// goes to the split with the largest remaining deficit against ratio * total.
std::vector<Split> split_groups(std::span<const std::size_t> group_sizes, const std::array<double, 3>& ratios,
                                std::uint64_t seed);

struct AugmentedSet {
  featex::FeatureMatrix features;  // ids are "<source>#<variant>"
  std::vector<int> labels;         // 1 = liked
  std::vector<std::string> source;
  std::vector<AugmentParams> augmentation;
  std::vector<Split> split;

  std::size_t size() const { return labels.size(); }
  std::size_t count(Split s) const;
  /// Rows of one split as a feature matrix plus labels.
  std::pair<featex::FeatureMatrix, std::vector<int>> subset(Split s) const;
};

using ImageLoader = std::function<Image(const std::string& image_id)>;

struct TrainingSetOptions {
  std::size_t target = 3600;
  std::array<double, 3> ratios{0.60, 0.05, 0.35};
  std::uint64_t seed = 0;
  bool l2_normalize = false;
};

/// Augments every labeled source to exactly `target` samples, extracts a
/// descriptor from each augmented image and splits by source.
AugmentedSet build_training_set(std::span<const survey::PreferenceLabel> labels, const ImageLoader& load,
                                const TrainingSetOptions& opts,
                                const featex::Extractor& extractor = featex::default_extractor());

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double val_accuracy = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> w;  // out x in
  std::vector<double> b;  // out
  bool operator==(const Layer&) const = default;
};

struct Mlp {
  std::vector<std::size_t> widths;
  std::vector<Layer> layers;
  std::uint64_t seed = 0;
  // Fixed per-feature input transform (x - shift) * scale; empty means identity.
  std::vector<double> in_shift;
  std::vector<double> in_scale;
  std::vector<EpochRecord> history;
  int best_epoch = -1;

  std::size_t input_dim() const { return widths.front(); }
  std::size_t parameter_count() const;
  bool operator==(const Mlp&) const = default;
};

inline std::vector<std::size_t> head_widths(std::size_t input_dim) { return {input_dim, 1000, 10, 2}; }

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
Mlp make_mlp(std::span<const std::size_t> widths, std::uint64_t seed);

/// Sets the input transform to per-feature standardization over `x`, scaled
/// by 1/sqrt(D) so a typical input has unit norm. Constant features map to 0.
void standardize_inputs(Mlp& m, const featex::FeatureMatrix& x);

/// Softmax output for one input.
std::vector<double> forward(const Mlp& m, std::span<const float> x);

/// Summed cross-entropy over the batch and its gradient (same shapes as the layers).
struct Gradient {
  double loss = 0.0;
  std::vector<Layer> layers;
};
Gradient loss_gradient(const Mlp& m, const featex::FeatureMatrix& x, std::span<const int> labels);
double loss(const Mlp& m, const featex::FeatureMatrix& x, std::span<const int> labels);

/// Max relative error |ga - gn| / max(|ga|, |gn|, 1e-8) between analytic and
/// central-difference gradients. Checks every bias and up to
/// `per_layer` seeded weight entries of each layer; parameters whose
/// perturbation switches any ReLU on the batch are skipped.
double gradient_check(const Mlp& m, const featex::FeatureMatrix& batch, std::span<const int> labels, double eps = 1e-4,
                      std::size_t per_layer = 256, std::uint64_t seed = 0);

struct TrainSchedule {
  double lr0 = 0.1;
  int halve_every = 10;
  int max_epochs = 100;
  int samples_per_epoch = 100;
  int patience = 10;

  double lr(int epoch) const;
};

/// Single-sample SGD. Each epoch draws samples_per_epoch samples from a
/// seeded permutation stream, then measures validation accuracy. Stops at
/// max_epochs or after `patience` epochs without a strictly better validation
/// accuracy; returns the best snapshot with the complete history.
Mlp train(Mlp model, const featex::FeatureMatrix& train_x, std::span<const int> train_y,
          const featex::FeatureMatrix& val_x, std::span<const int> val_y, const TrainSchedule& schedule,
          std::uint64_t seed);

double accuracy(const Mlp& m, const featex::FeatureMatrix& x, std::span<const int> labels);

struct Prediction {
  std::string image_id;
  double p_like = 0.5;
  bool liked() const { return p_like >= 0.5; }
};

std::vector<Prediction> predict(const Mlp& m, const featex::FeatureMatrix& x);

struct BinaryScores {
  double precision = 0.0;
  double recall = 0.0;
  double accuracy = 0.0;
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};
BinaryScores score(std::span<const int> truth, std::span<const int> predicted);

/// Per-cell preference: mean p_like of the images mapped to the cell; an empty
/// cell uses the model's p_like for the cell's feature-space prototype row.
std::vector<double> label_bmus(std::size_t cells, std::span<const std::size_t> image_cell, std::span<const double> p_like,
                               const featex::FeatureMatrix& prototypes, const Mlp& model);

struct TransferLabel {
  std::string geokey;
  double p_like = 0.5;
};

/// Street-level images whose preference is carried over, at most one per SOM
/// cell. With no more images than cells every image transfers with its cell's
/// value; otherwise each cell contributes the unchosen image nearest its weight.
std::vector<TransferLabel> select_transfers(const som::SomGrid& grid, const featex::FeatureMatrix& som_input,
                                            std::span<const double> cell_preference);

enum class Source { kTransferred, kPredicted };

struct SatPrediction {
  std::string image_id;
  double p_like = 0.5;
  Source source = Source::kPredicted;
};

struct AdaptResult {
  Mlp model;
  std::vector<SatPrediction> predictions;  // satellite feature order
  std::size_t transferred = 0;
  std::size_t predicted = 0;
};

struct AdaptOptions {
  TrainSchedule schedule;
  std::uint64_t seed = 0;
  double val_fraction = 0.05;
  bool l2_normalize = false;
  bool standardize = false;
};

/// Joins transfer labels to satellite features by geokey, trains a fresh head
/// on them and predicts every satellite image without a transferred label.
AdaptResult adapt_domain(std::span<const TransferLabel> transfers, const featex::FeatureMatrix& sat_features,
                         const AdaptOptions& opts);

// Model file: "MLP0", u32 layer count, u32 widths, f32 weights then biases per
// layer, u64 seed, u32 input-transform length then f64 shifts and scales,
// then one JSON history record per line.
std::vector<std::uint8_t> encode_model(const Mlp& m);
Mlp decode_model(std::span<const std::uint8_t> bytes);
void write_model(const std::filesystem::path& path, const Mlp& m);
Mlp read_model(const std::filesystem::path& path);

// predictions.jsonl
void write_predictions(const std::filesystem::path& path, std::span<const SatPrediction> p);
std::vector<SatPrediction> read_predictions(const std::filesystem::path& path);

}  // namespace prefmap::classifier
