#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "json.hpp"
#include "prefmap/pipeline.hpp"

namespace prefmap::pipeline {

namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

// Typed access to one INI section; anything left unread is an error.
class Section {
 public:
  Section(std::string name, const pt::ptree& tree) : name_(std::move(name)), tree_(tree) {}

  template <typename T>
  void get(const char* key, T& out) {
    const auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    used_.insert(key);
    out = convert<T>(key, trim(*v));
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    const auto v = tree_.get_optional<std::string>(key);
    if (!v) return;
    used_.insert(key);
    out = convert<T>(key, trim(*v));
  }

  template <typename T>
  T require(const char* key) {
    if (!tree_.get_optional<std::string>(key)) throw ConfigError(name_ + "." + key + ": required");
    T out{};
    get(key, out);
    return out;
  }

  void finish() const {
    for (const auto& [k, _] : tree_)
      if (!used_.contains(k)) throw ConfigError(name_ + "." + k + ": unknown key");
  }

  [[noreturn]] void fail(const char* key, const std::string& value, const std::string& why) const {
    throw ConfigError(name_ + "." + key + ": " + why + " (got '" + value + "')");
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\"");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\"");
    return s.substr(a, b - a + 1);
  }

  template <typename T>
  T convert(const char* key, const std::string& v) const {
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      return std::filesystem::path(v);
    } else if constexpr (std::is_same_v<T, bool>) {
      if (v == "true" || v == "1" || v == "yes") return true;
      if (v == "false" || v == "0" || v == "no") return false;
      fail(key, v, "expected a boolean");
    } else {
      T out{};
      const auto* end = v.data() + v.size();
      const auto [p, ec] = std::from_chars(v.data(), end, out);
      if (ec != std::errc() || p != end || v.empty())
        fail(key, v, std::is_floating_point_v<T> ? "expected a number" : "expected an integer");
      return out;
    }
  }

  std::string name_;
  const pt::ptree& tree_;
  std::set<std::string> used_;
};

template <typename T>
void positive(const char* where, T v) {
  if (!(v > T{0})) throw ConfigError(std::string(where) + ": must be positive");
}

}  // namespace

const char* input_mode_name(InputMode m) {
  switch (m) {
    case InputMode::kRaw: return "raw";
    case InputMode::kL2: return "l2";
    case InputMode::kStandardize: return "standardize";
  }
  return "?";
}

PipelineConfig parse_config(const std::string& ini_text, const std::string& origin) {
  pt::ptree tree;
  try {
    std::istringstream in(ini_text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
  }

  PipelineConfig cfg;
  for (const auto& [name, sec] : tree) {
    if (sec.empty() && !sec.data().empty()) throw ConfigError(origin + ": key '" + name + "' outside a section");
    Section s(name, sec);
    if (name == "pipeline") {
      s.get("seed", cfg.seed);
      s.get("out", cfg.out);
      s.get("port", cfg.port);
      s.get("static_dir", cfg.static_dir);
    } else if (name == "corpus") {
      s.get("image_px", cfg.corpus.image_px);
      s.get("sv_fraction", cfg.corpus.sv_fraction);
      s.get("zoom", cfg.corpus.tile.zoom);
      s.get("tile_px", cfg.corpus.tile.tile_px);
    } else if (name == "tsne") {
      s.get("perplexity", cfg.tsne.perplexity);
      s.get("iters", cfg.tsne.iters);
      s.get("learning_rate", cfg.tsne.learning_rate);
      s.get("exaggeration", cfg.tsne.exaggeration);
      s.get("stop_exaggeration_iter", cfg.tsne.stop_exaggeration_iter);
      s.get("momentum_switch_iter", cfg.tsne.momentum_switch_iter);
    } else if (name == "som") {
      s.get("rows", cfg.som_rows);
      s.get("cols", cfg.som_cols);
      s.get("iters", cfg.som_iters);
      s.get("linear_cells", cfg.linear_cells);
      s.get("linear_iters", cfg.linear_iters);
    } else if (name == "clusters") {
      s.get("k", cfg.k);
    } else if (name == "survey") {
      s.get("n_pairs", cfg.n_pairs);
      s.get("min_appearances", cfg.min_appearances);
      s.get("rater_noise", cfg.rater_noise);
      s.get("rater_id", cfg.rater_id);
      std::string policy;
      s.get("rater_policy", policy);
      if (policy == "prefer_green") cfg.rater_policy = survey::RaterPolicy::kPreferGreen;
      else if (policy == "avoid_green") cfg.rater_policy = survey::RaterPolicy::kAvoidGreen;
      else if (!policy.empty()) s.fail("rater_policy", policy, "expected prefer_green or avoid_green");
      s.get("min_wins", cfg.label_rule.min_wins);
      s.get("win_ratio", cfg.label_rule.win_ratio);
    } else if (name == "classifier") {
      s.get("target", cfg.augment_target);
      std::string split;
      s.get("split", split);
      if (!split.empty()) {
        std::array<double, 3> r{};
        char c1 = 0, c2 = 0;
        std::istringstream ss(split);
        if (!(ss >> r[0] >> c1 >> r[1] >> c2 >> r[2]) || c1 != ',' || c2 != ',' || !(ss >> std::ws).eof())
          s.fail("split", split, "expected three comma-separated ratios");
        cfg.split_ratios = r;
      }
      s.get("lr0", cfg.schedule.lr0);
      s.get("halve_every", cfg.schedule.halve_every);
      s.get("max_epochs", cfg.schedule.max_epochs);
      s.get("samples_per_epoch", cfg.schedule.samples_per_epoch);
      s.get("patience", cfg.schedule.patience);
      std::string input;
      s.get("input", input);
      if (input == "raw") cfg.classifier_input = InputMode::kRaw;
      else if (input == "l2") cfg.classifier_input = InputMode::kL2;
      else if (input == "standardize") cfg.classifier_input = InputMode::kStandardize;
      else if (!input.empty()) s.fail("input", input, "expected raw, l2 or standardize");
    } else if (name == "atlas") {
      s.get("block", cfg.block);
      s.get("similarity_iters", cfg.similarity_iters);
    } else if (name.rfind("city:", 0) == 0) {
      corpus::CitySpec c;
      c.city_id = name.substr(5);
      const auto lat = s.require<double>("lat");
      const auto lon = s.require<double>("lon");
      s.get("extent_m", c.extent_m);
      s.get("cell_m", c.cell_m);
      s.get("texture_seed", c.texture_seed);
      std::string mix;
      s.get("landuse", mix);
      try {
        c.center = geo::GeoPoint(lat, lon);
        if (!mix.empty()) c.landuse_mix = corpus::parse_mix(mix);
        c.validate();
      } catch (const ValidationError& e) {
        throw ConfigError("[" + name + "]: " + e.what());
      }
      cfg.cities.push_back(std::move(c));
    } else {
      throw ConfigError(origin + ": unknown section [" + name + "]");
    }
    s.finish();
  }

  if (cfg.cities.empty()) throw ConfigError(origin + ": no [city:<id>] sections");
  positive("corpus.image_px", cfg.corpus.image_px);
  if (!(cfg.corpus.sv_fraction >= 0.0 && cfg.corpus.sv_fraction <= 1.0))
    throw ConfigError("corpus.sv_fraction: must be in [0, 1]");
  positive("tsne.iters", cfg.tsne.iters);
  positive("som.rows", cfg.som_rows);
  positive("som.cols", cfg.som_cols);
  positive("som.iters", cfg.som_iters);
  positive("som.linear_cells", cfg.linear_cells - 1);
  positive("clusters.k", cfg.k);
  positive("survey.n_pairs", cfg.n_pairs);
  if (!(cfg.rater_noise >= 0.0 && cfg.rater_noise <= 1.0)) throw ConfigError("survey.rater_noise: must be in [0, 1]");
  positive("classifier.target", cfg.augment_target);
  positive("classifier.halve_every", cfg.schedule.halve_every);
  positive("classifier.max_epochs", cfg.schedule.max_epochs);
  positive("classifier.samples_per_epoch", cfg.schedule.samples_per_epoch);
  positive("classifier.patience", cfg.schedule.patience);
  positive("atlas.block", cfg.block);
  if (cfg.port < 1 || cfg.port > 65535) throw ConfigError("pipeline.port: must be in 1..65535");
  return cfg;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string canonical_config(const PipelineConfig& cfg) {
  json cities = json::array();
  for (const auto& c : cfg.cities)
    cities.push_back({{"id", c.city_id},
                      {"lat", c.center.lat_deg()},
                      {"lon", c.center.lon_deg()},
                      {"extent_m", c.extent_m},
                      {"cell_m", c.cell_m},
                      {"texture_seed", c.texture_seed},
                      {"landuse", corpus::format_mix(c.landuse_mix)}});
  json j = {
      {"seed", cfg.seed},
      {"cities", cities},
      {"corpus",
       {{"image_px", cfg.corpus.image_px},
        {"sv_fraction", cfg.corpus.sv_fraction},
        {"zoom", cfg.corpus.tile.zoom},
        {"tile_px", cfg.corpus.tile.tile_px}}},
      {"tsne",
       {{"perplexity", cfg.tsne.perplexity},
        {"iters", cfg.tsne.iters},
        {"learning_rate", cfg.tsne.learning_rate},
        {"exaggeration", cfg.tsne.exaggeration},
        {"stop_exaggeration_iter", cfg.tsne.stop_exaggeration_iter},
        {"momentum_switch_iter", cfg.tsne.momentum_switch_iter}}},
      {"som",
       {{"rows", cfg.som_rows},
        {"cols", cfg.som_cols},
        {"iters", cfg.som_iters},
        {"linear_cells", cfg.linear_cells},
        {"linear_iters", cfg.linear_iters}}},
      {"k", cfg.k},
      {"survey",
       {{"n_pairs", cfg.n_pairs},
        {"min_appearances", cfg.min_appearances},
        {"rater_noise", cfg.rater_noise},
        {"rater_policy", cfg.rater_policy == survey::RaterPolicy::kPreferGreen ? "prefer_green" : "avoid_green"},
        {"rater_id", cfg.rater_id},
        {"min_wins", cfg.label_rule.min_wins},
        {"win_ratio", cfg.label_rule.win_ratio ? json(*cfg.label_rule.win_ratio) : json(nullptr)}}},
      {"classifier",
       {{"target", cfg.augment_target},
        {"split", cfg.split_ratios},
        {"lr0", cfg.schedule.lr0},
        {"halve_every", cfg.schedule.halve_every},
        {"max_epochs", cfg.schedule.max_epochs},
        {"samples_per_epoch", cfg.schedule.samples_per_epoch},
        {"patience", cfg.schedule.patience},
        {"input", input_mode_name(cfg.classifier_input)}}},
      {"atlas", {{"block", cfg.block}, {"similarity_iters", cfg.similarity_iters}}},
  };
  return j.dump();
}

std::string fingerprint(const PipelineConfig& cfg) { return hex64(fnv1a(canonical_config(cfg))); }

}  // namespace prefmap::pipeline
