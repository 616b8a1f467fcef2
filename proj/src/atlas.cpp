#include "prefmap/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "prefmap/manifold.hpp"

namespace prefmap::atlas {

using nlohmann::json;

const char* mode_name(MapMode m) { return m == MapMode::kGeneric ? "generic" : "specific"; }

MapMode parse_mode(const std::string& s) {
  if (s == "generic") return MapMode::kGeneric;
  if (s == "specific") return MapMode::kSpecific;
  throw ValidationError("map mode must be 'generic' or 'specific' (got '" + s + "')");
}

PixelMap pixel_map(const std::string& city_id, std::span<const corpus::PlaceRecord> records,
                   const std::map<std::string, std::size_t>& character, const som::AlphabetMap& alphabet, MapMode mode,
                   const std::map<std::string, double>* p_like) {
  PixelMap m;
  m.city_id = city_id;
  m.mode = mode;
  std::vector<const corpus::PlaceRecord*> mine;
  for (const auto& r : records)
    if (r.cell.city_id == city_id) {
      mine.push_back(&r);
      m.rows = std::max(m.rows, r.cell.row + 1);
      m.cols = std::max(m.cols, r.cell.col + 1);
    }
  if (mine.empty()) throw ValidationError("pixel_map: no places for city '" + city_id + "'");
  const std::size_t n = static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols);
  if (mine.size() != n)
    throw ValidationError("pixel_map: city '" + city_id + "' has " + std::to_string(mine.size()) + " places for a " +
                          std::to_string(m.rows) + "x" + std::to_string(m.cols) + " grid");
  m.code.assign(n, -1);
  m.color.assign(n, Rgb{0, 0, 0});
  m.geokey.assign(n, {});
  if (p_like) m.p_like.assign(n, 0.0);

  std::string missing;
  for (const auto* r : mine) {
    const auto idx = m.index(r->cell.row, r->cell.col);
    m.geokey[idx] = r->cell.geokey;
    const auto it = character.find(r->cell.geokey);
    if (it == character.end() || it->second >= alphabet.size()) {
      missing += (missing.empty() ? "" : ", ") + r->cell.geokey;
      continue;
    }
    m.code[idx] = static_cast<int>(it->second);
    m.color[idx] = alphabet.colors[it->second];
    if (p_like) {
      const auto p = p_like->find(r->cell.geokey);
      if (p == p_like->end()) {
        missing += (missing.empty() ? "" : ", ") + r->cell.geokey;
        continue;
      }
      m.p_like[idx] = p->second;
    }
  }
  if (!missing.empty()) throw ValidationError("pixel_map: no assignment for geokeys: " + missing);
  return m;
}

Image render_map(const PixelMap& m, int block) {
  if (block < 1) throw ValidationError("render: block size must be >= 1");
  Image img(m.cols * block, m.rows * block);
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const Rgb col = m.color[m.index(r, c)];
      for (int y = 0; y < block; ++y)
        for (int x = 0; x < block; ++x) img.set(c * block + x, r * block + y, col);
    }
  return img;
}

Image render_spectrum(const som::AlphabetMap& a, int block) {
  PixelMap m;
  m.rows = a.rows;
  m.cols = a.cols;
  m.color = a.colors;
  m.code.resize(a.size());
  return render_map(m, block);
}

JointEmbedding joint_contextual_embedding(const featex::FeatureMatrix& structure_input,
                                          std::span<const classifier::SatPrediction> predictions,
                                          const JointOptions& opts) {
  if (structure_input.rows() != predictions.size())
    throw ValidationError("joint embedding: " + std::to_string(structure_input.rows()) + " structure rows vs " +
                          std::to_string(predictions.size()) + " predictions");
  featex::FeatureMatrix pref;
  pref.dim = 1;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].image_id != structure_input.ids[i])
      throw ValidationError("joint embedding: ids misaligned at row " + std::to_string(i) + " (" +
                            structure_input.ids[i] + " vs " + predictions[i].image_id + ")");
    const float v = static_cast<float>(predictions[i].p_like);
    pref.append(predictions[i].image_id, std::span<const float>(&v, 1));
  }
  auto s = som::contextual_numbers(structure_input, opts.cells, opts.iters, derive_seed(opts.seed, "structure"));
  auto p = som::contextual_numbers(pref, opts.cells, opts.iters, derive_seed(opts.seed, "preference"), true);

  JointEmbedding out;
  out.vectors.dim = 2;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const float v[2] = {static_cast<float>(s.values[i]), static_cast<float>(p.values[i])};
    out.vectors.append(predictions[i].image_id, v);
  }
  out.structure_som = std::move(s.grid);
  out.preference_som = std::move(p.grid);
  return out;
}

SpecificAlphabet specific_alphabet(const featex::FeatureMatrix& joint, const som::TrainOptions& opts) {
  if (joint.rows() < 2) throw ValidationError("specific alphabet: need at least 2 joint vectors");
  if (joint.dim != 2) throw ValidationError("specific alphabet: joint vectors must be 2-D");
  SpecificAlphabet out;
  out.grid = som::train_som(joint, opts).grid;
  std::vector<double> pref(out.grid.cells());
  for (std::size_t c = 0; c < pref.size(); ++c) pref[c] = std::clamp(static_cast<double>(out.grid.weight(c)[1]), 0.0, 1.0);
  out.alphabet = som::alphabet(out.grid, som::AlphabetMode::kPreferenceOrdered, pref);
  return out;
}

double cold_fraction(const PixelMap& m) {
  if (m.cells() == 0) return 0.0;
  std::size_t cold = 0;
  for (const auto& c : m.color)
    if (som::ramp_index_of(c) >= kColdFrom) ++cold;
  return static_cast<double>(cold) / static_cast<double>(m.cells());
}

CityLayout city_similarity(std::span<const PixelMap> maps, const SimilarityOptions& opts,
                           const featex::Extractor& extractor) {
  const std::size_t n = maps.size();
  if (n < 3) throw ValidationError("city_similarity: need at least 3 cities, got " + std::to_string(n));
  featex::FeatureMatrix x;
  x.dim = extractor.dim();
  for (const auto& m : maps) x.append(m.city_id, extractor.extract(render_map(m, opts.block)));

  manifold::TsneOptions t;
  t.dims = 2;
  t.perplexity = std::min(5.0, static_cast<double>(n - 1));
  t.iters = opts.iters;
  t.seed = opts.seed;
  const auto emb = manifold::tsne(x, t);

  CityLayout out;
  out.perplexity = t.perplexity;
  auto ranked = [&](auto dist) {
    std::vector<std::vector<std::string>> all;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::size_t> others;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) others.push_back(j);
      std::stable_sort(others.begin(), others.end(), [&](auto a, auto b) { return dist(i, a) < dist(i, b); });
      std::vector<std::string> names;
      for (auto j : others) names.push_back(maps[j].city_id);
      all.push_back(std::move(names));
    }
    return all;
  };
  for (std::size_t i = 0; i < n; ++i) {
    out.cities.push_back(maps[i].city_id);
    out.coords.push_back({emb.coords[i * 2], emb.coords[i * 2 + 1]});
  }
  out.neighbors = ranked([&](std::size_t a, std::size_t b) {
    return std::hypot(out.coords[a][0] - out.coords[b][0], out.coords[a][1] - out.coords[b][1]);
  });
  out.feature_neighbors = ranked([&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < x.dim; ++k) {
      const double d = static_cast<double>(x.row(a)[k]) - x.row(b)[k];
      s += d * d;
    }
    return s;
  });
  return out;
}

void write_map_json(const std::filesystem::path& path, const PixelMap& m, const std::string& fingerprint) {
  json cells = json::array();
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c) {
      const auto i = m.index(r, c);
      json cell = {{"row", r}, {"col", c}, {"geokey", m.geokey[i]}, {"code", m.code[i]},
                   {"color", {m.color[i][0], m.color[i][1], m.color[i][2]}}};
      if (!m.p_like.empty()) cell["p_like"] = m.p_like[i];
      cells.push_back(std::move(cell));
    }
  json j = {{"fingerprint", fingerprint}, {"city", m.city_id}, {"mode", mode_name(m.mode)},
            {"rows", m.rows},             {"cols", m.cols},    {"cells", cells}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << j.dump() << '\n';
}

PixelMap read_map_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DependencyError("missing map " + path.string() + " (produced by stage 'atlas')");
  const auto j = json::parse(in);
  PixelMap m;
  m.city_id = j.at("city").get<std::string>();
  m.mode = parse_mode(j.at("mode").get<std::string>());
  m.rows = j.at("rows").get<int>();
  m.cols = j.at("cols").get<int>();
  const std::size_t n = static_cast<std::size_t>(m.rows) * static_cast<std::size_t>(m.cols);
  m.code.assign(n, -1);
  m.color.assign(n, Rgb{0, 0, 0});
  m.geokey.assign(n, {});
  for (const auto& cell : j.at("cells")) {
    const auto i = m.index(cell.at("row").get<int>(), cell.at("col").get<int>());
    if (i >= n) throw ValidationError(path.string() + ": cell outside the grid");
    m.code[i] = cell.at("code").get<int>();
    m.geokey[i] = cell.at("geokey").get<std::string>();
    const auto& c = cell.at("color");
    m.color[i] = Rgb{c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()};
    if (cell.contains("p_like")) {
      if (m.p_like.empty()) m.p_like.assign(n, 0.0);
      m.p_like[i] = cell.at("p_like").get<double>();
    }
  }
  return m;
}

void write_layout(const std::filesystem::path& path, const std::map<std::string, CityLayout>& by_mode,
                  const std::string& fingerprint) {
  json modes = json::object();
  for (const auto& [mode, l] : by_mode) {
    json cities = json::array();
    for (std::size_t i = 0; i < l.cities.size(); ++i)
      cities.push_back({{"city", l.cities[i]},
                        {"x", l.coords[i][0]},
                        {"y", l.coords[i][1]},
                        {"neighbors", l.neighbors[i]},
                        {"feature_neighbors", l.feature_neighbors[i]}});
    modes[mode] = {{"perplexity", l.perplexity}, {"cities", cities}};
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream(path) << json{{"fingerprint", fingerprint}, {"modes", modes}}.dump(1) << '\n';
}

}  // namespace prefmap::atlas
