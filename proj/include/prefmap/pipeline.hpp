#pragma once

// Stage orchestration over an on-disk artifact tree. Every stage reads and
// writes declared files under the output root, so a live survey can sit
// between `clusters` and `labels`.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prefmap/classifier.hpp"
#include "prefmap/corpus.hpp"
#include "prefmap/manifold.hpp"
#include "prefmap/survey.hpp"

namespace prefmap::pipeline {

// How classifier inputs are conditioned before the first layer.
enum class InputMode { kRaw, kL2, kStandardize };
const char* input_mode_name(InputMode m);

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::filesystem::path out = "run";
  std::vector<corpus::CitySpec> cities;
  corpus::CorpusOptions corpus;

  manifold::TsneOptions tsne;

  int som_rows = 80;
  int som_cols = 80;
  std::uint32_t som_iters = 100000;
  int linear_cells = 1000;
  std::uint32_t linear_iters = 20000;

  std::size_t k = 513;

  std::size_t n_pairs = 1500;
  std::size_t min_appearances = 3;
  double rater_noise = 0.05;
  survey::RaterPolicy rater_policy = survey::RaterPolicy::kPreferGreen;
  std::string rater_id = "odysseus";
  survey::LabelRule label_rule;

  std::size_t augment_target = 3600;
  std::array<double, 3> split_ratios{0.60, 0.05, 0.35};
  classifier::TrainSchedule schedule;
  InputMode classifier_input = InputMode::kStandardize;

  int block = 8;
  int similarity_iters = 1000;

  int port = 8787;
  std::filesystem::path static_dir;
};

/// Reads an INI file. Unknown sections or keys, unparsable values and invalid
/// city specs raise ConfigError naming the line or the section.key.
PipelineConfig load_config(const std::filesystem::path& path);
PipelineConfig parse_config(const std::string& ini_text, const std::string& origin = "<config>");

/// Canonical JSON of everything that influences artifacts (not the output path).
std::string canonical_config(const PipelineConfig& cfg);
/// FNV-1a of canonical_config, as 16 hex digits.
std::string fingerprint(const PipelineConfig& cfg);

struct CountPlan {
  std::size_t cities = 0;
  std::size_t cells_per_city = 0;  // 0 when cities differ
  std::size_t sat_total = 0;
  std::size_t sv_total = 0;
  std::size_t som_cells = 0;
  std::size_t transferred = 0;
  std::size_t predicted = 0;
};

/// Counts implied by the configuration alone; nothing is rendered.
CountPlan plan_counts(const PipelineConfig& cfg);

using Log = std::function<void(const std::string&)>;

/// Stage names in execution order.
const std::vector<std::string>& stage_names();

struct RunOptions {
  bool synthetic_rater = false;
  Log log;
};

/// Runs one named stage (survey-serve only prepares the schedule; with
/// `synthetic_rater` it also fills the vote log).
void run_stage(const PipelineConfig& cfg, const std::string& stage, const RunOptions& opts = {});
/// Every stage in order; requires synthetic_rater because nobody is there to vote.
void run_all(const PipelineConfig& cfg, const RunOptions& opts);

struct VerifyReport {
  std::vector<std::string> problems;
  std::size_t checked = 0;
  bool ok() const { return problems.empty(); }
};

/// Recomputes the hash of every file listed in stages/*.json and checks the
/// fingerprint embedded in every JSON artifact.
VerifyReport verify(const PipelineConfig& cfg);

// Artifact paths relative to the output root.
namespace paths {
inline const char* kGrid = "grid.jsonl";
inline const char* kPlaces = "places.jsonl";
inline const char* kSatFeatures = "features/sat.fvec";
inline const char* kSvFeatures = "features/sv.fvec";
inline const char* kSatEmbed = "embed/sat.fvec";
inline const char* kSvEmbed = "embed/sv.fvec";
inline const char* kGenericSom = "som/generic.som";
inline const char* kSvSom = "som/sv.som";
inline const char* kClusters = "clusters/clusters.json";
inline const char* kSchedule = "survey/schedule.json";
inline const char* kVotes = "survey/votes.jsonl";
inline const char* kLabels = "labels/labels.jsonl";
inline const char* kSvModel = "model/sv.mlp";
inline const char* kEval = "model/eval.json";
inline const char* kSatModel = "adapt/sat.mlp";
inline const char* kBmuLabels = "adapt/bmu_labels.json";
inline const char* kPredictions = "predictions.jsonl";
inline const char* kJoint = "atlas/joint.fvec";
inline const char* kSpecificSom = "som/specific.som";
inline const char* kLayout = "layout.json";
std::string map_png(const std::string& city, const std::string& mode);
std::string map_json(const std::string& city, const std::string& mode);
std::string spectrum_png(const std::string& mode);
}  // namespace paths

}  // namespace prefmap::pipeline
