#include "prefmap/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "prefmap/atlas.hpp"
#include "prefmap/featex.hpp"
#include "prefmap/som.hpp"

namespace prefmap::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace paths {
std::string map_png(const std::string& city, const std::string& mode) { return "maps/" + city + "." + mode + ".png"; }
std::string map_json(const std::string& city, const std::string& mode) { return "maps/" + city + "." + mode + ".json"; }
std::string spectrum_png(const std::string& mode) { return "spectrum/" + mode + ".png"; }
}  // namespace paths

CountPlan plan_counts(const PipelineConfig& cfg) {
  CountPlan p;
  p.cities = cfg.cities.size();
  std::set<std::size_t> sizes;
  for (const auto& c : cfg.cities) {
    const auto side = static_cast<std::size_t>(geo::grid_side(c.extent_m, c.cell_m));
    const std::size_t cells = side * side;
    sizes.insert(cells);
    p.sat_total += cells;
    p.sv_total += corpus::sv_count(cells, cfg.corpus.sv_fraction);
  }
  p.cells_per_city = sizes.size() == 1 ? *sizes.begin() : 0;
  p.som_cells = static_cast<std::size_t>(cfg.som_rows) * static_cast<std::size_t>(cfg.som_cols);
  p.transferred = std::min(p.sv_total, p.som_cells);
  p.predicted = p.sat_total - p.transferred;
  return p;
}

const std::vector<std::string>& stage_names() {
  static const std::vector<std::string> names{"grid",         "synth",  "extract", "embed", "som",   "clusters",
                                              "survey-serve", "labels", "train",   "adapt", "atlas", "similarity"};
  return names;
}

namespace {

class Ctx {
 public:
  Ctx(const PipelineConfig& cfg, const RunOptions& opts) : cfg(cfg), opts(opts), root(cfg.out), fp(fingerprint(cfg)) {}

  fs::path at(const std::string& rel) const { return root / rel; }

  // Path of an upstream artifact; DependencyError naming the producer when absent.
  fs::path need(const std::string& rel, const std::string& producer) const {
    const auto p = at(rel);
    if (!fs::exists(p))
      throw DependencyError("missing " + p.string() + " (produced by stage '" + producer + "')");
    return p;
  }

  void log(const std::string& msg) const {
    if (opts.log) opts.log(msg);
  }

  void write_json(const std::string& rel, json j) const {
    j["fingerprint"] = fp;
    const auto p = at(rel);
    fs::create_directories(p.parent_path());
    std::ofstream(p) << j.dump(1) << '\n';
  }

  void write_jsonl(const std::string& rel, const std::vector<json>& lines) const {
    const auto p = at(rel);
    fs::create_directories(p.parent_path());
    std::ofstream out(p);
    for (const auto& l : lines) out << l.dump() << '\n';
  }

  json read_json(const std::string& rel, const std::string& producer) const {
    std::ifstream in(need(rel, producer));
    return json::parse(in);
  }

  // stages/<stage>.json: hashes of everything the stage wrote.
  void record(const std::string& stage, const std::vector<std::string>& outputs) const {
    json files = json::object();
    for (const auto& rel : outputs) files[rel] = hex64(fnv1a_bytes(read_file_bytes(at(rel))));
    write_json("stages/" + stage + ".json", {{"stage", stage}, {"outputs", files}});
  }

  const PipelineConfig& cfg;
  const RunOptions& opts;
  fs::path root;
  std::string fp;
};

corpus::PlaceManifest manifest(const Ctx& c) { return corpus::read_manifest(c.need(paths::kPlaces, "synth")); }

featex::FeatureMatrix fvec(const Ctx& c, const std::string& rel, const std::string& producer) {
  return featex::read_fvec(c.need(rel, producer));
}

som::SomGrid som_file(const Ctx& c, const std::string& rel, const std::string& producer) {
  return som::read_som(c.need(rel, producer));
}

featex::FeatureMatrix classifier_input(const Ctx& c, featex::FeatureMatrix m) {
  return c.cfg.classifier_input == InputMode::kL2 ? featex::normalize(std::move(m), featex::NormalizeMode::kL2Rows) : m;
}

void stage_grid(const Ctx& c) {
  std::vector<json> lines;
  for (const auto& city : c.cfg.cities) {
    city.validate();
    for (const auto& cell : geo::partition_city(city.city_id, city.center, city.extent_m, city.cell_m))
      lines.push_back({{"city", cell.city_id},
                       {"row", cell.row},
                       {"col", cell.col},
                       {"lat", cell.center.lat_deg()},
                       {"lon", cell.center.lon_deg()},
                       {"geokey", cell.geokey},
                       {"cell_m", cell.cell_m},
                       {"fingerprint", c.fp}});
  }
  c.write_jsonl(paths::kGrid, lines);
  c.log("grid: " + std::to_string(lines.size()) + " cells in " + std::to_string(c.cfg.cities.size()) + " cities");
  c.record("grid", {paths::kGrid});
}

void stage_synth(const Ctx& c) {
  corpus::PlaceManifest m;
  m.fingerprint = c.fp;
  m.seed = c.cfg.seed;
  std::vector<std::string> outputs;
  for (const auto& city : c.cfg.cities) {
    auto recs = corpus::synth_city(city, derive_seed(c.cfg.seed, city.city_id), c.cfg.corpus,
                                   [&](const std::string& rel, const Image& img) {
                                     write_png(c.at(rel), img);
                                     outputs.push_back(rel);
                                   });
    c.log("synth: " + city.city_id + " " + std::to_string(recs.size()) + " places");
    m.records.insert(m.records.end(), recs.begin(), recs.end());
  }
  m.validate();
  corpus::write_manifest(c.at(paths::kPlaces), m);
  outputs.insert(outputs.begin(), paths::kPlaces);
  c.record("synth", outputs);
}

void stage_extract(const Ctx& c) {
  const auto m = manifest(c);
  for (auto kind : {corpus::ImageKind::kSatellite, corpus::ImageKind::kStreetView}) {
    const auto f = featex::extract_corpus(m, c.root, kind, std::nullopt, c.cfg.seed);
    const std::string rel = kind == corpus::ImageKind::kSatellite ? paths::kSatFeatures : paths::kSvFeatures;
    featex::write_fvec(c.at(rel), f);
    c.log(std::string("extract: ") + corpus::kind_name(kind) + " " + std::to_string(f.rows()) + " x " +
          std::to_string(f.dim));
  }
  c.record("extract", {paths::kSatFeatures, paths::kSvFeatures});
}

const char* kind_key(corpus::ImageKind k) { return k == corpus::ImageKind::kSatellite ? "sat" : "sv"; }

void embed_one(const Ctx& c, corpus::ImageKind kind) {
  const std::string key = kind_key(kind);
  const auto x = fvec(c, "features/" + key + ".fvec", "extract");
  auto opts = c.cfg.tsne;
  opts.seed = derive_seed(c.cfg.seed, "tsne-" + key);
  const auto emb = manifold::tsne(x, opts);
  featex::write_fvec(c.at("embed/" + key + ".fvec"), emb.to_matrix());
  c.write_json("embed/" + key + ".json",
               {{"n", x.rows()}, {"perplexity", opts.perplexity}, {"final_kl", emb.final_kl}, {"kl_history", emb.kl_history}});
  c.log("embed: " + key + " final KL " + std::to_string(emb.final_kl));
}

void som_one(const Ctx& c, corpus::ImageKind kind) {
  const std::string key = kind_key(kind);
  const std::string name = kind == corpus::ImageKind::kSatellite ? "generic" : "sv";
  const auto x = fvec(c, "embed/" + key + ".fvec", "embed");
  som::TrainOptions o;
  o.rows = c.cfg.som_rows;
  o.cols = c.cfg.som_cols;
  o.iters = c.cfg.som_iters;
  o.seed = derive_seed(c.cfg.seed, "som-" + name);
  const auto r = som::train_som(x, o);
  som::write_som(c.at("som/" + name + ".som"), r.grid);
  const auto cells = som::assign(r.grid, x);
  json assignment = json::object();
  for (std::size_t i = 0; i < x.rows(); ++i) assignment[x.ids[i]] = cells[i];
  const double te = som::topographic_error(r.grid, x);
  c.write_json("som/" + name + ".json", {{"rows", r.grid.rows},
                                         {"cols", r.grid.cols},
                                         {"bmus", r.grid.cells()},
                                         {"qe_iteration", r.history.iteration},
                                         {"qe", r.history.quantization_error},
                                         {"topographic_error", te},
                                         {"assignment", assignment}});
  c.log("som: " + name + " " + std::to_string(r.grid.rows) + "x" + std::to_string(r.grid.cols) + " final QE " +
        std::to_string(r.history.quantization_error.back()));
}

void stage_embed(const Ctx& c) {
  embed_one(c, corpus::ImageKind::kStreetView);
  embed_one(c, corpus::ImageKind::kSatellite);
  c.record("embed", {paths::kSatEmbed, paths::kSvEmbed, "embed/sat.json", "embed/sv.json"});
}

void stage_som(const Ctx& c) {
  som_one(c, corpus::ImageKind::kStreetView);
  som_one(c, corpus::ImageKind::kSatellite);
  c.record("som", {paths::kGenericSom, paths::kSvSom, "som/generic.json", "som/sv.json"});
}

void stage_clusters(const Ctx& c) {
  const auto grid = som_file(c, paths::kSvSom, "som");
  const auto x = fvec(c, paths::kSvEmbed, "embed");
  const auto cl = som::two_level_cluster(grid, c.cfg.k, derive_seed(c.cfg.seed, "kmeans"));
  const auto cells = som::assign(grid, x);
  const auto reps = som::representative_images(cl, cells, x);
  std::vector<std::size_t> sizes(cl.k, 0);
  for (int v : cl.cell_cluster) ++sizes[static_cast<std::size_t>(v)];
  c.write_json(paths::kClusters, {{"k", cl.k},
                                  {"iterations", cl.iterations},
                                  {"cells_per_cluster", sizes},
                                  {"cell_cluster", cl.cell_cluster},
                                  {"representatives", reps}});
  c.log("clusters: k=" + std::to_string(cl.k) + ", " + std::to_string(reps.size()) + " representatives");
  c.record("clusters", {paths::kClusters});
}

std::string synthetic_timestamp(std::size_t i) {
  // Fixed epoch so repeated synthetic runs write identical logs.
  const std::time_t t = 946684800 + static_cast<std::time_t>(i);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S.000Z", &tm);
  return buf;
}

void stage_survey(const Ctx& c) {
  const auto clusters = c.read_json(paths::kClusters, "clusters");
  const auto reps = clusters.at("representatives").get<std::vector<std::string>>();
  const auto sched_path = c.at(paths::kSchedule);
  bool fresh = true;
  if (fs::exists(sched_path) && !c.opts.synthetic_rater) {
    std::ifstream in(sched_path);
    fresh = json::parse(in).value("fingerprint", "") != c.fp;
  }
  if (fresh) {
    const auto s = survey::schedule_pairs(reps, c.cfg.n_pairs, c.cfg.min_appearances, derive_seed(c.cfg.seed, "schedule"));
    survey::write_schedule(sched_path, s, c.fp);
    c.log("survey: scheduled " + std::to_string(s.pairs.size()) + " pairs over " + std::to_string(reps.size()) + " images");
  }
  std::vector<std::string> outputs{paths::kSchedule};
  if (c.opts.synthetic_rater) {
    const auto s = survey::read_schedule(sched_path);
    const auto m = manifest(c);
    std::map<std::string, corpus::GroundTruth> truth;
    for (const auto& r : m.records)
      if (r.truth) truth[r.cell.geokey] = *r.truth;
    fs::remove(c.at(paths::kVotes));
    std::size_t tick = 0;
    survey::VoteLog log(s, c.at(paths::kVotes), [&] { return synthetic_timestamp(tick++); });
    const survey::SyntheticRater rater(c.cfg.rater_policy, c.cfg.rater_noise, derive_seed(c.cfg.seed, "rater"));
    for (const auto& p : s.pairs) log.record_vote(p.pair_id, rater.decide(p, truth), c.cfg.rater_id);
    c.log("survey: synthetic rater answered " + std::to_string(log.answered()) + " pairs");
    outputs.push_back(paths::kVotes);
  }
  c.record("survey-serve", outputs);
}

void stage_labels(const Ctx& c) {
  c.need(paths::kSchedule, "survey-serve");
  const auto s = survey::read_schedule(c.at(paths::kSchedule));
  const auto votes = survey::read_votes(c.need(paths::kVotes, "survey-serve"));
  const auto labels = survey::derive_labels(s.ids, s, votes, c.cfg.label_rule);
  std::vector<json> lines;
  std::size_t liked = 0, unseen = 0;
  for (const auto& l : labels) {
    lines.push_back({{"image_id", l.image_id}, {"wins", l.wins}, {"appearances", l.appearances}, {"liked", l.liked}});
    liked += l.liked;
    unseen += l.appearances == 0;
  }
  c.write_jsonl(paths::kLabels, lines);
  c.write_json("labels/summary.json",
               {{"images", labels.size()}, {"liked", liked}, {"unseen", unseen}, {"votes", votes.size()}});
  c.log("labels: " + std::to_string(liked) + " of " + std::to_string(labels.size()) + " liked");
  c.record("labels", {paths::kLabels, "labels/summary.json"});
}

std::vector<survey::PreferenceLabel> read_labels(const Ctx& c) {
  std::ifstream in(c.need(paths::kLabels, "labels"));
  std::vector<survey::PreferenceLabel> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    out.push_back(survey::PreferenceLabel{j.at("image_id").get<std::string>(), j.at("wins").get<std::size_t>(),
                                          j.at("appearances").get<std::size_t>(), j.at("liked").get<bool>()});
  }
  return out;
}

void stage_train(const Ctx& c) {
  const auto labels = read_labels(c);
  const auto m = manifest(c);
  classifier::TrainingSetOptions o;
  o.target = c.cfg.augment_target;
  o.ratios = c.cfg.split_ratios;
  o.seed = derive_seed(c.cfg.seed, "augment");
  o.l2_normalize = c.cfg.classifier_input == InputMode::kL2;
  const auto set = classifier::build_training_set(
      labels,
      [&](const std::string& id) {
        const auto* r = m.find(id);
        if (!r || !r->sv_path) throw ValidationError("no street-level image for " + id);
        return read_png(c.at(*r->sv_path));
      },
      o);
  const auto [tx, ty] = set.subset(classifier::Split::kTrain);
  const auto [vx, vy] = set.subset(classifier::Split::kVal);
  const auto [sx, sy] = set.subset(classifier::Split::kTest);
  auto model = classifier::make_mlp(classifier::head_widths(set.features.dim), derive_seed(c.cfg.seed, "mlp-init"));
  if (c.cfg.classifier_input == InputMode::kStandardize) classifier::standardize_inputs(model, tx);
  model = classifier::train(std::move(model), tx, ty, vx, vy, c.cfg.schedule, derive_seed(c.cfg.seed, "mlp-sgd"));
  classifier::write_model(c.at(paths::kSvModel), model);

  // Scores come from the model as stored, so later stages see the same numbers.
  const auto stored = classifier::read_model(c.at(paths::kSvModel));
  std::vector<int> pred;
  for (const auto& p : classifier::predict(stored, sx)) pred.push_back(p.liked() ? 1 : 0);
  const auto sc = classifier::score(sy, pred);
  json splits = json::object();
  for (std::size_t i = 0; i < set.size(); ++i) splits[set.source[i]] = classifier::split_name(set.split[i]);
  c.write_json(paths::kEval, {{"samples", set.size()},
                              {"train", tx.rows()},
                              {"val", vx.rows()},
                              {"test", sx.rows()},
                              {"best_epoch", stored.best_epoch},
                              {"epochs_run", stored.history.size()},
                              {"precision", sc.precision},
                              {"recall", sc.recall},
                              {"accuracy", sc.accuracy},
                              {"confusion", {{"tp", sc.tp}, {"fp", sc.fp}, {"fn", sc.fn}, {"tn", sc.tn}}},
                              {"source_split", splits}});
  c.log("train: " + std::to_string(set.size()) + " samples, test precision " + std::to_string(sc.precision) +
        " recall " + std::to_string(sc.recall));
  c.record("train", {paths::kSvModel, paths::kEval});
}

void stage_adapt(const Ctx& c) {
  const auto model = classifier::read_model(c.need(paths::kSvModel, "train"));
  const auto sv_features = classifier_input(c, fvec(c, paths::kSvFeatures, "extract"));
  const auto sv_embed = fvec(c, paths::kSvEmbed, "embed");
  const auto grid = som_file(c, paths::kSvSom, "som");
  if (sv_embed.ids != sv_features.ids) throw ValidationError("adapt: street-level embedding and features disagree on ids");

  const auto image_cell = som::assign(grid, sv_embed);
  std::vector<double> p_like;
  for (const auto& p : classifier::predict(model, sv_features)) p_like.push_back(p.p_like);
  const auto protos = som::cell_prototypes(grid, image_cell, sv_features, 1.0);
  const auto cell_pref = classifier::label_bmus(grid.cells(), image_cell, p_like, protos, model);
  const auto transfers = classifier::select_transfers(grid, sv_embed, cell_pref);
  c.write_json(paths::kBmuLabels, {{"cells", grid.cells()}, {"preference", cell_pref}});

  classifier::AdaptOptions o;
  o.schedule = c.cfg.schedule;
  o.seed = derive_seed(c.cfg.seed, "adapt");
  o.l2_normalize = c.cfg.classifier_input == InputMode::kL2;
  o.standardize = c.cfg.classifier_input == InputMode::kStandardize;
  const auto r = classifier::adapt_domain(transfers, fvec(c, paths::kSatFeatures, "extract"), o);
  classifier::write_model(c.at(paths::kSatModel), r.model);
  classifier::write_predictions(c.at(paths::kPredictions), r.predictions);
  std::vector<json> tl;
  for (const auto& t : transfers) tl.push_back({{"geokey", t.geokey}, {"p_like", t.p_like}});
  c.write_jsonl("adapt/transfers.jsonl", tl);
  c.write_json("adapt/summary.json",
               {{"transferred", r.transferred}, {"predicted", r.predicted}, {"total", r.predictions.size()}});
  c.log("adapt: " + std::to_string(r.transferred) + " transferred + " + std::to_string(r.predicted) + " predicted");
  c.record("adapt", {paths::kBmuLabels, paths::kSatModel, paths::kPredictions, "adapt/transfers.jsonl",
                     "adapt/summary.json"});
}

std::map<std::string, std::size_t> characters(const som::SomGrid& g, const featex::FeatureMatrix& x) {
  std::map<std::string, std::size_t> out;
  const auto cells = som::assign(g, x);
  for (std::size_t i = 0; i < x.rows(); ++i) out[x.ids[i]] = cells[i];
  return out;
}

void stage_atlas(const Ctx& c) {
  const auto m = manifest(c);
  const auto sat_embed = fvec(c, paths::kSatEmbed, "embed");
  const auto preds = classifier::read_predictions(c.need(paths::kPredictions, "adapt"));
  const auto generic = som_file(c, paths::kGenericSom, "som");

  atlas::JointOptions jo;
  jo.cells = c.cfg.linear_cells;
  jo.iters = c.cfg.linear_iters;
  jo.seed = derive_seed(c.cfg.seed, "joint");
  const auto joint = atlas::joint_contextual_embedding(sat_embed, preds, jo);
  featex::write_fvec(c.at(paths::kJoint), joint.vectors);
  som::write_som(c.at("som/structure_linear.som"), joint.structure_som);
  som::write_som(c.at("som/preference_linear.som"), joint.preference_som);

  som::TrainOptions so;
  so.rows = c.cfg.som_rows;
  so.cols = c.cfg.som_cols;
  so.iters = c.cfg.som_iters;
  so.seed = derive_seed(c.cfg.seed, "som-specific");
  const auto spec = atlas::specific_alphabet(joint.vectors, so);
  som::write_som(c.at(paths::kSpecificSom), spec.grid);
  const auto gen_alpha = som::alphabet(generic, som::AlphabetMode::kGeneric);

  std::vector<std::string> outputs{paths::kJoint, "som/structure_linear.som", "som/preference_linear.som",
                                   paths::kSpecificSom};
  write_png(c.at(paths::spectrum_png("generic")), atlas::render_spectrum(gen_alpha, c.cfg.block));
  write_png(c.at(paths::spectrum_png("specific")), atlas::render_spectrum(spec.alphabet, c.cfg.block));
  outputs.push_back(paths::spectrum_png("generic"));
  outputs.push_back(paths::spectrum_png("specific"));

  const auto gen_chars = characters(generic, sat_embed);
  const auto spec_chars = characters(spec.grid, joint.vectors);
  std::map<std::string, double> p_like;
  for (const auto& p : preds) p_like[p.image_id] = p.p_like;
  for (const auto& city : c.cfg.cities) {
    const auto gm = atlas::pixel_map(city.city_id, m.records, gen_chars, gen_alpha, atlas::MapMode::kGeneric);
    const auto sm =
        atlas::pixel_map(city.city_id, m.records, spec_chars, spec.alphabet, atlas::MapMode::kSpecific, &p_like);
    for (const auto* pm : {&gm, &sm}) {
      const std::string mode = atlas::mode_name(pm->mode);
      write_png(c.at(paths::map_png(city.city_id, mode)), atlas::render_map(*pm, c.cfg.block));
      atlas::write_map_json(c.at(paths::map_json(city.city_id, mode)), *pm, c.fp);
      outputs.push_back(paths::map_png(city.city_id, mode));
      outputs.push_back(paths::map_json(city.city_id, mode));
    }
    c.log("atlas: " + city.city_id + " cold fraction " + std::to_string(atlas::cold_fraction(sm)));
  }
  c.record("atlas", outputs);
}

void stage_similarity(const Ctx& c) {
  std::map<std::string, atlas::CityLayout> layouts;
  if (c.cfg.cities.size() < 3) {
    c.log("similarity: skipped, needs at least 3 cities");
  } else {
    for (const char* mode : {"generic", "specific"}) {
      std::vector<atlas::PixelMap> maps;
      for (const auto& city : c.cfg.cities) {
        c.need(paths::map_json(city.city_id, mode), "atlas");
        maps.push_back(atlas::read_map_json(c.at(paths::map_json(city.city_id, mode))));
      }
      atlas::SimilarityOptions o;
      o.seed = derive_seed(c.cfg.seed, std::string("similarity-") + mode);
      o.block = c.cfg.block;
      o.iters = c.cfg.similarity_iters;
      layouts[mode] = atlas::city_similarity(maps, o);
    }
  }
  atlas::write_layout(c.at(paths::kLayout), layouts, c.fp);
  c.record("similarity", {paths::kLayout});
}

}  // namespace

void run_stage(const PipelineConfig& cfg, const std::string& stage, const RunOptions& opts) {
  const Ctx c(cfg, opts);
  fs::create_directories(c.root);
  if (stage == "grid") stage_grid(c);
  else if (stage == "synth") stage_synth(c);
  else if (stage == "extract") stage_extract(c);
  else if (stage == "embed") stage_embed(c);
  else if (stage == "embed-sv") embed_one(c, corpus::ImageKind::kStreetView);
  else if (stage == "som") stage_som(c);
  else if (stage == "som-sv") som_one(c, corpus::ImageKind::kStreetView);
  else if (stage == "clusters") stage_clusters(c);
  else if (stage == "survey-serve") stage_survey(c);
  else if (stage == "labels") stage_labels(c);
  else if (stage == "train") stage_train(c);
  else if (stage == "adapt") stage_adapt(c);
  else if (stage == "atlas") stage_atlas(c);
  else if (stage == "similarity") stage_similarity(c);
  else throw ConfigError("unknown stage '" + stage + "'");
}

void run_all(const PipelineConfig& cfg, const RunOptions& opts) {
  if (!opts.synthetic_rater)
    throw ConfigError("run-all needs --synthetic-rater; run the stages one by one to survey a human rater");
  for (const auto& s : stage_names()) {
    if (opts.log) opts.log("== " + s);
    run_stage(cfg, s, opts);
  }
}

VerifyReport verify(const PipelineConfig& cfg) {
  VerifyReport rep;
  const fs::path root = cfg.out;
  const std::string fp = fingerprint(cfg);
  if (!fs::exists(root / "stages")) {
    rep.problems.push_back("no stage records under " + (root / "stages").string());
    return rep;
  }
  std::vector<fs::path> jsons;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() == ".json") jsons.push_back(e.path());
  std::sort(jsons.begin(), jsons.end());
  for (const auto& p : jsons) {
    std::ifstream in(p);
    json j;
    try {
      j = json::parse(in);
    } catch (const std::exception& e) {
      rep.problems.push_back(p.string() + ": unreadable JSON");
      continue;
    }
    ++rep.checked;
    if (!j.is_object() || j.value("fingerprint", "") != fp) {
      rep.problems.push_back(p.string() + ": fingerprint differs from the current config (" + fp + ")");
      continue;
    }
    if (p.parent_path().filename() != "stages") continue;
    for (const auto& [rel, hash] : j.at("outputs").items()) {
      ++rep.checked;
      const auto f = root / rel;
      if (!fs::exists(f)) rep.problems.push_back(rel + ": missing (listed in " + p.filename().string() + ")");
      else if (hex64(fnv1a_bytes(read_file_bytes(f))) != hash.get<std::string>())
        rep.problems.push_back(rel + ": content changed since stage " + j.value("stage", "?") + " wrote it");
    }
  }
  return rep;
}

}  // namespace prefmap::pipeline
