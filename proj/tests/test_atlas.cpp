#include <algorithm>
#include <numeric>
#include <set>

#include "doctest.h"
#include "prefmap/atlas.hpp"
#include "support.hpp"

using namespace prefmap;
using namespace prefmap::atlas;

namespace {

std::vector<corpus::PlaceRecord> city_records(const std::string& city, int rows, int cols) {
  std::vector<corpus::PlaceRecord> out;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      corpus::PlaceRecord rec;
      rec.cell.city_id = city;
      rec.cell.row = r;
      rec.cell.col = c;
      rec.cell.geokey = geo::make_geokey(city, r, c);
      rec.sat_path = "images/sat/" + rec.cell.geokey + ".png";
      out.push_back(rec);
    }
  return out;
}

som::AlphabetMap generic(int rows, int cols) {
  som::SomGrid g;
  g.rows = rows;
  g.cols = cols;
  g.dim = 1;
  g.weights.assign(static_cast<std::size_t>(rows * cols), 0.0f);
  return som::alphabet(g, som::AlphabetMode::kGeneric);
}

PixelMap random_map(const std::string& city, int side, std::uint64_t seed, const som::AlphabetMap& a) {
  const auto recs = city_records(city, side, side);
  std::map<std::string, std::size_t> ch;
  Rng r(seed);
  for (const auto& rec : recs) ch[rec.cell.geokey] = static_cast<std::size_t>(r.below(a.size()));
  return pixel_map(city, recs, ch, a, MapMode::kGeneric);
}

}  // namespace

TEST_SUITE("atlas") {

TEST_CASE("cells land at their grid position") {
  auto recs = city_records("x", 3, 4);
  auto other = city_records("y", 2, 2);
  recs.insert(recs.end(), other.begin(), other.end());
  std::reverse(recs.begin(), recs.end());
  const auto a = generic(3, 4);
  std::map<std::string, std::size_t> ch;
  for (const auto& r : recs) ch[r.cell.geokey] = static_cast<std::size_t>(r.cell.row * 4 + r.cell.col);
  const auto m = pixel_map("x", recs, ch, a, MapMode::kGeneric);
  CHECK(m.rows == 3);
  CHECK(m.cols == 4);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) {
      CHECK(m.code[m.index(r, c)] == r * 4 + c);
      CHECK(m.geokey[m.index(r, c)] == geo::make_geokey("x", r, c));
      CHECK(m.color[m.index(r, c)] == a.colors[static_cast<std::size_t>(r * 4 + c)]);
    }
}

TEST_CASE("a sentinel character is found where it was planted") {
  const auto recs = city_records("s", 7, 7);
  const auto a = generic(2, 2);
  std::map<std::string, std::size_t> ch;
  for (const auto& r : recs) ch[r.cell.geokey] = 0;
  ch[geo::make_geokey("s", 5, 2)] = 3;
  const auto m = pixel_map("s", recs, ch, a, MapMode::kGeneric);
  const auto img = render_map(m, 4);
  std::vector<std::pair<int, int>> hits;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (img.at(x, y) == a.colors[3]) hits.emplace_back(y / 4, x / 4);
  CHECK(hits.size() == 16);
  for (const auto& [r, c] : hits) {
    CHECK(r == 5);
    CHECK(c == 2);
  }
}

TEST_CASE("missing assignments are listed together") {
  const auto recs = city_records("m", 3, 3);
  const auto a = generic(2, 2);
  std::map<std::string, std::size_t> ch;
  for (const auto& r : recs) ch[r.cell.geokey] = 1;
  ch.erase("m/0/2");
  ch.erase("m/2/1");
  try {
    pixel_map("m", recs, ch, a, MapMode::kGeneric);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("m/0/2") != std::string::npos);
    CHECK(msg.find("m/2/1") != std::string::npos);
  }
  ch["m/0/2"] = 9;
  ch["m/2/1"] = 1;
  CHECK_THROWS_AS(pixel_map("m", recs, ch, a, MapMode::kGeneric), ValidationError);
  CHECK_THROWS_AS(pixel_map("nowhere", recs, ch, a, MapMode::kGeneric), ValidationError);
  auto holed = recs;
  holed.erase(holed.begin() + 4);
  ch["m/0/2"] = 1;
  CHECK_THROWS_AS(pixel_map("m", holed, ch, a, MapMode::kGeneric), ValidationError);
}

TEST_CASE("render sizes and stable bytes") {
  const auto a = generic(5, 5);
  const auto m = random_map("r", 50, 3, a);
  const auto img = render_map(m, 8);
  CHECK(img.width == 400);
  CHECK(img.height == 400);
  CHECK(img.at(17 * 8 + 3, 41 * 8 + 7) == m.color[m.index(41, 17)]);
  CHECK(encode_png(render_map(m, 8)) == encode_png(img));
  CHECK(render_map(m, 1).width == 50);
  CHECK_THROWS_AS(render_map(m, 0), ValidationError);
}

TEST_CASE("spectrum sheet holds every character in grid order") {
  const auto a = generic(80, 80);
  const auto img = render_spectrum(a, 2);
  CHECK(img.width == 160);
  CHECK(img.height == 160);
  std::set<Rgb> seen;
  for (int r = 0; r < 80; ++r)
    for (int c = 0; c < 80; ++c) {
      const auto col = img.at(c * 2 + 1, r * 2);
      CHECK(col == a.colors[static_cast<std::size_t>(r * 80 + c)]);
      seen.insert(col);
    }
  CHECK(seen.size() == 6400);
}

TEST_CASE("cold fraction counts the liked half of the ramp") {
  PixelMap m;
  m.rows = 2;
  m.cols = 2;
  m.code = {0, 1, 2, 3};
  const auto& ramp = som::preference_ramp();
  m.color = {ramp[200], ramp[255], ramp[kColdFrom], ramp[kColdFrom - 1]};
  CHECK(cold_fraction(m) == 0.75);
  m.color[0] = Rgb{1, 2, 3};
  CHECK(cold_fraction(m) == 0.5);
  CHECK(cold_fraction(PixelMap{}) == 0.0);
}

TEST_CASE("joint embedding pairs structure with preference") {
  std::vector<int> labels;
  const auto x = testing::blobs(40, 2, 4, 0.5, 5, &labels);
  std::vector<classifier::SatPrediction> preds;
  Rng r(2);
  for (std::size_t i = 0; i < x.rows(); ++i)
    preds.push_back({x.ids[i], i % 7 == 0 ? 0.5 : r.uniform(), classifier::Source::kPredicted});
  JointOptions o;
  o.cells = 60;
  o.iters = 8000;
  o.seed = 1;
  const auto j = joint_contextual_embedding(x, preds, o);
  REQUIRE(j.vectors.rows() == 80);
  CHECK(j.vectors.dim == 2);
  std::vector<double> p, pv;
  std::set<float> halves;
  for (std::size_t i = 0; i < 80; ++i) {
    CHECK(j.vectors.ids[i] == x.ids[i]);
    CHECK(j.vectors.row(i)[0] >= 0.0f);
    CHECK(j.vectors.row(i)[1] <= 1.0f);
    p.push_back(preds[i].p_like);
    pv.push_back(j.vectors.row(i)[1]);
    if (i % 7 == 0) halves.insert(j.vectors.row(i)[1]);
  }
  CHECK(halves.size() == 1);
  CHECK(spearman_rho(p, pv) > 0.9);
  CHECK(j.structure_som.cells() == 60);

  auto bad = preds;
  std::swap(bad[0], bad[1]);
  CHECK_THROWS_AS(joint_contextual_embedding(x, bad, o), ValidationError);
  bad.pop_back();
  CHECK_THROWS_AS(joint_contextual_embedding(x, bad, o), ValidationError);
}

TEST_CASE("specific alphabet follows the preference component") {
  featex::FeatureMatrix joint;
  joint.dim = 2;
  Rng r(4);
  for (int i = 0; i < 500; ++i)
    joint.append(std::to_string(i), std::vector<float>{static_cast<float>(r.uniform()), static_cast<float>(r.uniform())});
  som::TrainOptions o;
  o.rows = 8;
  o.cols = 8;
  o.iters = 8000;
  o.seed = 2;
  const auto s = specific_alphabet(joint, o);
  REQUIRE(s.alphabet.size() == 64);
  std::vector<std::size_t> order(64);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return s.grid.weight(a)[1] < s.grid.weight(b)[1]; });
  for (std::size_t k = 1; k < 64; ++k)
    CHECK(som::ramp_index_of(s.alphabet.colors[order[k]]) >= som::ramp_index_of(s.alphabet.colors[order[k - 1]]));
  CHECK(som::ramp_index_of(s.alphabet.colors[order.back()]) >= 200);
  CHECK(som::ramp_index_of(s.alphabet.colors[order.front()]) <= 55);
  CHECK_THROWS_AS(specific_alphabet(testing::blobs(5, 1, 3, 1.0, 1), o), ValidationError);
}

TEST_CASE("city similarity") {
  const auto a = generic(6, 6);
  std::vector<PixelMap> maps;
  for (int i = 0; i < 7; ++i) maps.push_back(random_map("c" + std::to_string(i), 12, static_cast<std::uint64_t>(i), a));
  maps.push_back(maps[2]);
  maps.back().city_id = "twin";
  SimilarityOptions o;
  o.iters = 500;
  const auto l = city_similarity(maps, o);
  REQUIRE(l.cities.size() == 8);
  CHECK(l.perplexity == 5.0);
  CHECK(l.neighbors[2][0] == "twin");
  CHECK(l.neighbors[7][0] == "c2");
  CHECK(l.feature_neighbors[2][0] == "twin");
  CHECK(l.neighbors[0].size() == 7);

  // At N - 1 perplexity every affinity is equal; descriptor ranks still hold.
  const std::vector<PixelMap> few{maps[0], maps[2], maps[7]};
  const auto f = city_similarity(few, o);
  CHECK(f.perplexity == 2.0);
  CHECK(f.feature_neighbors[1][0] == "twin");
  const std::vector<PixelMap> two(maps.begin(), maps.begin() + 2);
  CHECK_THROWS_AS(city_similarity(two, o), ValidationError);
}

TEST_CASE("map files round trip") {
  const auto recs = city_records("j", 3, 2);
  const auto a = generic(2, 2);
  std::map<std::string, std::size_t> ch;
  std::map<std::string, double> p;
  for (const auto& r : recs) {
    ch[r.cell.geokey] = static_cast<std::size_t>(r.cell.row % 4);
    p[r.cell.geokey] = 0.125 * r.cell.col;
  }
  const auto m = pixel_map("j", recs, ch, a, MapMode::kSpecific, &p);
  testing::TempDir dir("map");
  write_map_json(dir / "maps" / "j.json", m, "abc");
  const auto back = read_map_json(dir / "maps" / "j.json");
  CHECK(back.city_id == "j");
  CHECK(back.mode == MapMode::kSpecific);
  CHECK(back.code == m.code);
  CHECK(back.color == m.color);
  CHECK(back.geokey == m.geokey);
  CHECK(back.p_like == m.p_like);
  CHECK_THROWS_AS(read_map_json(dir / "none.json"), DependencyError);
  CHECK(parse_mode("generic") == MapMode::kGeneric);
  CHECK_THROWS_AS(parse_mode("other"), ValidationError);
}

}
