#include <cmath>
#include <set>

#include "doctest.h"
#include "prefmap/classifier.hpp"
#include "support.hpp"

using namespace prefmap;
using namespace prefmap::classifier;

namespace {

featex::FeatureMatrix rows(std::size_t dim, const std::vector<std::vector<float>>& v) {
  featex::FeatureMatrix m;
  m.dim = dim;
  for (std::size_t i = 0; i < v.size(); ++i) m.append("r" + std::to_string(i), v[i]);
  return m;
}

// Two Gaussian classes separated along every axis.
std::pair<featex::FeatureMatrix, std::vector<int>> separable(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  featex::FeatureMatrix x;
  x.dim = 4;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    std::vector<float> v(4);
    for (auto& e : v) e = static_cast<float>((label ? 1.0 : -1.0) + 0.3 * r.normal());
    x.append(std::to_string(i), v);
    y.push_back(label);
  }
  return {x, y};
}

Image test_image(int seed) {
  Image img(24, 24);
  Rng r(static_cast<std::uint64_t>(seed));
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(r.below(256));
  return img;
}

}  // namespace

TEST_SUITE("classifier") {

TEST_CASE("augmentation basics") {
  const auto img = test_image(1);
  const auto none = augment(img, 0, 5);
  REQUIRE(none.size() == 1);
  CHECK(none[0] == img);
  const auto a = augment(img, 4, 5);
  const auto b = augment(img, 4, 5);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(encode_png(a[i]) == encode_png(b[i]));
  CHECK_FALSE(a[1] == a[2]);
  CHECK(a[3].width == 24);
  CHECK_THROWS_AS(augment(img, -1, 5), ValidationError);
}

TEST_CASE("augmentation parameter ranges") {
  const auto img = test_image(2);
  int hflips = 0;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto [out, p] = augment_one(img, s);
    CHECK_FALSE(p.identity);
    CHECK(std::abs(p.shear_deg) <= 10.0);
    CHECK(p.scale >= 0.9);
    CHECK(p.scale <= 1.1);
    CHECK(std::abs(p.rotation_deg) <= 15.0);
    hflips += p.hflip;
  }
  CHECK(hflips > 60);
  CHECK(hflips < 140);
  CHECK(AugmentParams{}.describe() == "original");
}

TEST_CASE("variant plan for 513 sources and 3600 samples") {
  const auto v = plan_variants(513, 3600, 1);
  std::size_t total = 0, extra = 0;
  for (int n : v) {
    total += 1 + static_cast<std::size_t>(n);
    CHECK((n == 6 || n == 7));
    extra += n == 7;
  }
  CHECK(total == 3600);
  CHECK(extra == 9);
  CHECK(plan_variants(3, 3, 1) == std::vector<int>{0, 0, 0});
  CHECK_THROWS_AS(plan_variants(10, 5, 1), ValidationError);
}

TEST_CASE("group split sizes") {
  const auto v = plan_variants(513, 3600, 1);
  std::vector<std::size_t> sizes;
  for (int n : v) sizes.push_back(1 + static_cast<std::size_t>(n));
  const auto split = split_groups(sizes, {0.60, 0.05, 0.35}, 2);
  std::array<std::size_t, 3> count{};
  for (std::size_t g = 0; g < sizes.size(); ++g) count[static_cast<int>(split[g])] += sizes[g];
  CHECK(count[0] + count[1] + count[2] == 3600);
  CHECK(std::abs(static_cast<double>(count[0]) - 2160) <= 8);
  CHECK(std::abs(static_cast<double>(count[1]) - 180) <= 8);
  CHECK(std::abs(static_cast<double>(count[2]) - 1260) <= 8);
  CHECK(split_groups(sizes, {0.60, 0.05, 0.35}, 2) == split);
  CHECK_THROWS_AS(split_groups(sizes, {0, 0, 0}, 2), ValidationError);
}

TEST_CASE("training set construction") {
  std::vector<survey::PreferenceLabel> labels;
  for (int i = 0; i < 30; ++i) labels.push_back({"s" + std::to_string(i), static_cast<std::size_t>(i % 4), 4, i % 4 >= 2});
  TrainingSetOptions o;
  o.target = 100;
  o.seed = 4;
  int loads = 0;
  const auto set = build_training_set(labels, [&](const std::string& id) {
    ++loads;
    return test_image(std::stoi(id.substr(1)));
  }, o);
  CHECK(loads == 30);
  REQUIRE(set.size() == 100);
  CHECK(set.features.dim == 512);
  CHECK(set.features.ids[0] == "s0#0");
  CHECK(set.augmentation[0].identity);
  CHECK_FALSE(set.augmentation[1].identity);
  std::map<std::string, Split> split_of;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto it = split_of.emplace(set.source[i], set.split[i]).first;
    CHECK(it->second == set.split[i]);
    CHECK(set.labels[i] == (set.source[i] == "s2" || set.source[i] == "s3" ? 1 : set.labels[i]));
  }
  CHECK(set.count(Split::kTrain) + set.count(Split::kVal) + set.count(Split::kTest) == 100);
  const auto [tx, ty] = set.subset(Split::kTest);
  CHECK(tx.rows() == set.count(Split::kTest));

  labels[3].appearances = 0;
  labels[7].appearances = 0;
  try {
    build_training_set(labels, [](const std::string&) { return test_image(0); }, o);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("s3") != std::string::npos);
    CHECK(msg.find("s7") != std::string::npos);
  }
}

TEST_CASE("train split keeps class proportions") {
  std::vector<survey::PreferenceLabel> labels;
  for (int i = 0; i < 513; ++i) labels.push_back({"s" + std::to_string(i), 3, 5, i % 10 < 7});
  const auto v = plan_variants(513, 3600, 3);
  std::vector<std::size_t> sizes;
  for (int n : v) sizes.push_back(1 + static_cast<std::size_t>(n));
  const auto split = split_groups(sizes, {0.60, 0.05, 0.35}, 3);
  double liked_train = 0, train = 0, liked_all = 0;
  for (std::size_t g = 0; g < sizes.size(); ++g) {
    liked_all += labels[g].liked * sizes[g];
    if (split[g] == Split::kTrain) {
      train += sizes[g];
      liked_train += labels[g].liked * sizes[g];
    }
  }
  CHECK(std::abs(liked_train / train - liked_all / 3600) <= 0.1 * liked_all / 3600);
}

TEST_CASE("network shape and initialisation") {
  const auto m = make_mlp(head_widths(512), 1);
  REQUIRE(m.layers.size() == 3);
  CHECK(m.widths == std::vector<std::size_t>{512, 1000, 10, 2});
  CHECK(m.parameter_count() == 512 * 1000 + 1000 + 1000 * 10 + 10 + 10 * 2 + 2);
  const double limit = std::sqrt(6.0 / 1512.0);
  double mx = 0;
  for (double w : m.layers[0].w) mx = std::max(mx, std::abs(w));
  CHECK(mx <= limit);
  CHECK(mx > 0.9 * limit);
  for (double b : m.layers[1].b) CHECK(b == 0.0);
  CHECK(make_mlp(head_widths(8), 1) == make_mlp(head_widths(8), 1));
  const std::vector<std::size_t> bad{4, 0, 2};
  CHECK_THROWS_AS(make_mlp(bad, 1), ValidationError);
}

TEST_CASE("softmax outputs") {
  auto m = make_mlp(head_widths(6), 3);
  const std::vector<float> x{0.1f, -2.0f, 3.0f, 0.0f, 1.0f, 0.5f};
  const auto p = forward(m, x);
  CHECK(p[0] + p[1] == doctest::Approx(1.0).epsilon(1e-12));
  auto zero = m;
  for (auto& L : zero.layers) {
    std::fill(L.w.begin(), L.w.end(), 0.0);
    std::fill(L.b.begin(), L.b.end(), 0.0);
  }
  CHECK(forward(zero, x)[1] == 0.5);
  const auto batch = rows(6, {x, {1, 1, 1, 1, 1, 1}, x});
  const auto preds = predict(m, batch);
  CHECK(preds[0].p_like == forward(m, x)[1]);
  CHECK(preds[2].p_like == preds[0].p_like);
  CHECK(preds[1].p_like == forward(m, batch.row(1))[1]);
  CHECK_THROWS_AS(forward(m, std::vector<float>{1, 2}), ValidationError);
}

TEST_CASE("analytic gradient matches central differences") {
  const auto m = make_mlp(std::vector<std::size_t>{5, 7, 4, 2}, 9);
  Rng r(2);
  featex::FeatureMatrix x;
  x.dim = 5;
  std::vector<int> y;
  for (int i = 0; i < 8; ++i) {
    std::vector<float> v(5);
    for (auto& e : v) e = static_cast<float>(r.normal());
    x.append(std::to_string(i), v);
    y.push_back(i % 2);
  }
  const auto g = loss_gradient(m, x, y);
  CHECK(g.loss == doctest::Approx(loss(m, x, y)).epsilon(1e-12));
  const double eps = 1e-6;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    for (std::size_t k = 0; k < m.layers[l].w.size(); k += 3) {
      auto plus = m, minus = m;
      plus.layers[l].w[k] += eps;
      minus.layers[l].w[k] -= eps;
      const double num = (loss(plus, x, y) - loss(minus, x, y)) / (2 * eps);
      CHECK(g.layers[l].w[k] == doctest::Approx(num).epsilon(1e-5).scale(1.0));
    }
    for (std::size_t k = 0; k < m.layers[l].b.size(); ++k) {
      auto plus = m, minus = m;
      plus.layers[l].b[k] += eps;
      minus.layers[l].b[k] -= eps;
      const double num = (loss(plus, x, y) - loss(minus, x, y)) / (2 * eps);
      CHECK(g.layers[l].b[k] == doctest::Approx(num).epsilon(1e-5).scale(1.0));
    }
  }
  CHECK(gradient_check(m, x, y) < 1e-3);
}

TEST_CASE("gradient check on the full head") {
  const auto m = make_mlp(head_widths(512), 11);
  Rng r(5);
  featex::FeatureMatrix x;
  x.dim = 512;
  std::vector<int> y;
  for (int i = 0; i < 8; ++i) {
    std::vector<float> v(512);
    for (auto& e : v) e = static_cast<float>(r.uniform() / 16.0);
    x.append(std::to_string(i), v);
    y.push_back(i % 2);
  }
  CHECK(gradient_check(m, x, y) < 1e-3);
  CHECK_THROWS_AS(gradient_check(m, featex::FeatureMatrix{512, {}, {}}, std::vector<int>{}), ValidationError);
}

TEST_CASE("a duplicated sample doubles its gradient") {
  const auto m = make_mlp(std::vector<std::size_t>{3, 4, 2}, 2);
  const auto one = rows(3, {{0.5f, -1.0f, 2.0f}});
  const auto two = rows(3, {{0.5f, -1.0f, 2.0f}, {0.5f, -1.0f, 2.0f}});
  const auto g1 = loss_gradient(m, one, std::vector<int>{1});
  const auto g2 = loss_gradient(m, two, std::vector<int>{1, 1});
  CHECK(g2.loss == 2 * g1.loss);
  for (std::size_t l = 0; l < g1.layers.size(); ++l) {
    for (std::size_t k = 0; k < g1.layers[l].w.size(); ++k) CHECK(g2.layers[l].w[k] == 2 * g1.layers[l].w[k]);
    for (std::size_t k = 0; k < g1.layers[l].b.size(); ++k) CHECK(g2.layers[l].b[k] == 2 * g1.layers[l].b[k]);
  }
  CHECK_THROWS_AS(loss_gradient(m, one, std::vector<int>{2}), ValidationError);
}

TEST_CASE("learning-rate schedule") {
  const TrainSchedule s;
  CHECK(s.lr(0) == 0.1);
  CHECK(s.lr(9) == 0.1);
  CHECK(s.lr(10) == 0.05);
  CHECK(s.lr(25) == 0.025);
  CHECK(s.lr(99) == 0.1 / 512);
}

TEST_CASE("separable classes are learned") {
  const auto [tx, ty] = separable(400, 1);
  const auto [vx, vy] = separable(60, 2);
  const auto [sx, sy] = separable(200, 3);
  const auto m = train(make_mlp(head_widths(4), 4), tx, ty, vx, vy, TrainSchedule{}, 5);
  CHECK(accuracy(m, sx, sy) >= 0.95);
  for (const auto& h : m.history) CHECK(h.lr == 0.1 * std::ldexp(1.0, -(h.epoch / 10)));
  REQUIRE(m.best_epoch >= 0);
  CHECK(m.history[static_cast<std::size_t>(m.best_epoch)].val_accuracy == accuracy(m, vx, vy));
  const auto again = train(make_mlp(head_widths(4), 4), tx, ty, vx, vy, TrainSchedule{}, 5);
  CHECK(again == m);
}

TEST_CASE("flat validation accuracy stops training") {
  const auto [tx, ty] = separable(40, 1);
  TrainSchedule s;
  s.lr0 = 0.0;
  const auto m = train(make_mlp(head_widths(4), 4), tx, ty, tx, ty, s, 5);
  CHECK(m.history.size() == 11);
  CHECK(m.best_epoch == 0);
}

TEST_CASE("non-finite loss aborts with context") {
  auto [tx, ty] = separable(20, 1);
  for (auto& v : tx.values) v = std::numeric_limits<float>::infinity();
  try {
    train(make_mlp(head_widths(4), 4), tx, ty, tx, ty, TrainSchedule{}, 5);
    FAIL("expected an error");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 0") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
  }
}

TEST_CASE("input standardization") {
  auto m = make_mlp(std::vector<std::size_t>{3, 4, 2}, 1);
  const auto x = rows(3, {{1, 10, 5}, {3, 30, 5}, {5, 50, 5}});
  standardize_inputs(m, x);
  const double unit = 1.0 / std::sqrt(3.0);
  CHECK(m.in_shift == std::vector<double>{3, 30, 5});
  const double sd = std::sqrt(8.0 / 3.0);
  CHECK(m.in_scale[0] == doctest::Approx(unit / sd));
  CHECK(m.in_scale[1] == doctest::Approx(unit / (10 * sd)));
  CHECK(m.in_scale[2] == 0.0);
  // Same output as the plain network on the transformed row.
  auto plain = m;
  plain.in_shift.clear();
  plain.in_scale.clear();
  const std::vector<float> t{static_cast<float>(2 * unit / sd), static_cast<float>(2 * unit / sd), 0.0f};
  CHECK(forward(m, x.row(2))[1] == doctest::Approx(forward(plain, t)[1]).epsilon(1e-6));
}

TEST_CASE("scores") {
  const std::vector<int> truth{1, 1, 1, 0, 0, 1}, pred{1, 0, 1, 1, 0, 1};
  const auto s = score(truth, pred);
  CHECK(s.tp == 3);
  CHECK(s.fp == 1);
  CHECK(s.fn == 1);
  CHECK(s.tn == 1);
  CHECK(s.precision == 0.75);
  CHECK(s.recall == 0.75);
  CHECK(s.accuracy == doctest::Approx(4.0 / 6));
}

TEST_CASE("model file round trip") {
  auto m = make_mlp(std::vector<std::size_t>{3, 5, 2}, 8);
  const auto x = rows(3, {{1, 2, 3}, {2, 0, 1}});
  standardize_inputs(m, x);
  m.history = {{0, 0.1, 0.7, 0.5}, {1, 0.1, 0.6, 0.75}};
  m.best_epoch = 1;
  const auto back = decode_model(encode_model(m));
  CHECK(back.widths == m.widths);
  CHECK(back.seed == 8);
  CHECK(back.history == m.history);
  CHECK(back.best_epoch == 1);
  CHECK(back.in_scale == m.in_scale);
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    for (std::size_t k = 0; k < m.layers[l].w.size(); ++k)
      CHECK(back.layers[l].w[k] == static_cast<double>(static_cast<float>(m.layers[l].w[k])));
  CHECK(encode_model(back) == encode_model(m));
  testing::TempDir dir("model");
  write_model(dir / "m.mlp", m);
  CHECK(read_model(dir / "m.mlp") == back);
  CHECK_THROWS_AS(read_model(dir / "none.mlp"), DependencyError);
  CHECK_THROWS_AS(decode_model(std::vector<std::uint8_t>{'X', 'L', 'P', '0', 0, 0, 0, 0}), ValidationError);
}

TEST_CASE("cell preferences") {
  const auto m = make_mlp(std::vector<std::size_t>{1, 3, 2}, 1);
  const auto protos = rows(1, {{0}, {1}, {2}});
  const std::vector<std::size_t> cell{0, 0, 2};
  const std::vector<double> p{0.2, 0.8, 1.0};
  const auto pref = label_bmus(3, cell, p, protos, m);
  CHECK(pref[0] == doctest::Approx(0.5));
  CHECK(pref[2] == 1.0);
  CHECK(pref[1] == forward(m, protos.row(1))[1]);
  CHECK_THROWS_AS(label_bmus(2, cell, p, protos, m), ValidationError);
}

TEST_CASE("transfer selection") {
  som::SomGrid g;
  g.rows = 1;
  g.cols = 3;
  g.dim = 1;
  g.weights = {0, 5, 10};
  const std::vector<double> pref{0.1, 0.5, 0.9};
  const auto few = rows(1, {{1}, {9}});
  const auto t = select_transfers(g, few, pref);
  REQUIRE(t.size() == 2);
  CHECK(t[0].geokey == "r0");
  CHECK(t[0].p_like == 0.1);
  CHECK(t[1].p_like == 0.9);
  const auto many = rows(1, {{1}, {4}, {6}, {9}, {11}});
  const auto u = select_transfers(g, many, pref);
  REQUIRE(u.size() == 3);
  std::set<std::string> keys;
  for (const auto& e : u) keys.insert(e.geokey);
  CHECK(keys.size() == 3);
  CHECK(u[0].geokey == "r0");
  CHECK(u[1].geokey == "r1");
  CHECK(u[2].geokey == "r3");
}

TEST_CASE("domain adaptation counts and precedence") {
  Rng r(3);
  featex::FeatureMatrix sat;
  sat.dim = 4;
  for (int i = 0; i < 60; ++i) {
    const float c = i < 30 ? 1.0f : -1.0f;
    sat.append("c/" + std::to_string(i / 10) + "/" + std::to_string(i % 10),
               std::vector<float>{c + 0.2f * static_cast<float>(r.normal()), c, -c, 0.5f});
  }
  std::vector<TransferLabel> transfers;
  for (int i = 0; i < 60; i += 3) transfers.push_back({sat.ids[static_cast<std::size_t>(i)], i < 30 ? 0.83 : 0.12});
  AdaptOptions o;
  o.seed = 2;
  o.standardize = true;
  const auto res = adapt_domain(transfers, sat, o);
  CHECK(res.transferred == 20);
  CHECK(res.predicted == 40);
  REQUIRE(res.predictions.size() == 60);
  CHECK(res.predictions[0].source == Source::kTransferred);
  CHECK(res.predictions[0].p_like == 0.83);
  CHECK(res.predictions[1].source == Source::kPredicted);
  int right = 0;
  for (std::size_t i = 0; i < 60; ++i)
    if (res.predictions[i].source == Source::kPredicted) right += (res.predictions[i].p_like >= 0.5) == (i < 30);
  CHECK(right >= 36);

  transfers.push_back({"nowhere/0/0", 0.5});
  transfers.push_back({"nowhere/1/1", 0.5});
  try {
    adapt_domain(transfers, sat, o);
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("nowhere/0/0, nowhere/1/1") != std::string::npos);
  }
}

TEST_CASE("prediction file round trip") {
  testing::TempDir dir("pred");
  const std::vector<SatPrediction> p{{"a/0/0", 0.25, Source::kTransferred}, {"a/0/1", 0.875, Source::kPredicted}};
  write_predictions(dir / "p.jsonl", p);
  const auto back = read_predictions(dir / "p.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[1].image_id == "a/0/1");
  CHECK(back[1].p_like == 0.875);
  CHECK(back[0].source == Source::kTransferred);
}

}
