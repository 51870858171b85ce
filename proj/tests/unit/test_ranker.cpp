#include <doctest.h>

#include <cmath>
#include <random>

#include "stylefuse/ranker.hpp"
#include "support.hpp"

using namespace stylefuse;

namespace {

struct PairData {
  FeatureMatrix matrix;
  JudgmentSet judgments;
};

// Documents with two features; the winner of each pair is decided by
// feature 0 (or by a coin when `random_labels`). Decided pairs keep a
// margin of 0.05 standardized units on feature 0.
PairData make_pairs(std::size_t docs, std::size_t pairs, bool random_labels, std::uint64_t seed,
                    std::size_t topics = 4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<std::size_t> pick(0, docs - 1);
  std::bernoulli_distribution coin(0.5);
  PairData d;
  d.matrix.names = {"f0", "f1"};
  for (std::size_t i = 0; i < docs; ++i) {
    d.matrix.ids.push_back("d" + std::to_string(i));
    d.matrix.values.push_back(3.0 + 2.0 * z(rng));
    d.matrix.values.push_back(-1.0 + 0.5 * z(rng));
  }
  standardize_matrix(d.matrix);
  for (std::size_t k = 0; k < pairs; ++k) {
    std::size_t a = pick(rng), b = pick(rng);
    while (b == a) b = pick(rng);
    if (!random_labels && std::abs(d.matrix.at(a, 0) - d.matrix.at(b, 0)) < 0.05) {
      --k;
      continue;
    }
    const bool a_wins = random_labels ? coin(rng) : d.matrix.at(a, 0) > d.matrix.at(b, 0);
    if (!a_wins) std::swap(a, b);
    d.judgments.push_back({"p" + std::to_string(k), d.matrix.ids[a], d.matrix.ids[b],
                           "t" + std::to_string(k % topics), false, std::nullopt});
  }
  return d;
}

FeatureVector features(double f0, double f1) {
  FeatureVector v;
  v.set("f0", f0, Provenance::native);
  v.set("f1", f1, Provenance::native);
  return v;
}

Ranker unit_ranker(std::vector<double> w) {
  Ranker r;
  r.names = {"f0", "f1"};
  r.weights = std::move(w);
  r.means = {0, 0};
  r.sds = {1, 1};
  return r;
}

}  // namespace

TEST_SUITE("ranker") {

TEST_CASE("score examples") {
  const auto r = unit_ranker({1, 0});
  CHECK(score_pair(r, features(1, 0), features(0, 0)) == doctest::Approx(0.7310585786300049));
  CHECK(score_pair(r, features(2, 5), features(2, 5)) == 0.5);
  FeatureVector partial;
  partial.set("f0", 1, Provenance::native);
  CHECK_THROWS_AS(score_pair(r, partial, features(0, 0)), InputError);
  FeatureVector missing = features(0, 0);
  missing.set_missing("f1");
  CHECK_THROWS_AS(score_pair(r, missing, features(0, 0)), InputError);
}

TEST_CASE("antisymmetry and translation invariance") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 200; ++trial) {
    auto r = unit_ranker({z(rng), z(rng)});
    r.means = {z(rng), z(rng)};
    r.sds = {1.5, 0.25};
    const auto a = features(z(rng), z(rng));
    const auto b = features(z(rng), z(rng));
    const double ab = score_pair(r, a, b), ba = score_pair(r, b, a);
    CHECK(ab + ba == doctest::Approx(1.0).epsilon(1e-15));
    // Shifts by exactly representable constants keep the difference exact.
    const auto a2 = features(*a.get("f0") + 0.5, *a.get("f1") - 2.0);
    const auto b2 = features(*b.get("f0") + 0.5, *b.get("f1") - 2.0);
    const auto d1 = r.difference(a, b), d2 = r.difference(a2, b2);
    CHECK(std::abs(d1[0] - d2[0]) < 1e-12);
    CHECK(std::abs(score_pair(r, a2, b2) - ab) < 1e-12);
  }
}

TEST_CASE("loss gradient matches finite differences") {
  const auto data = make_pairs(60, 200, true, 4);
  const auto diffs = judgment_differences(data.judgments, data.matrix);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto w = testing::normal_vector(2, rng);
    const auto g = ranker_loss_gradient(w, diffs, 0.3);
    const auto fd = testing::numeric_gradient(
        [&](const std::vector<double>& x) { return ranker_loss(x, diffs, 0.3); }, w);
    CHECK(testing::relative_error(g, fd) < 1e-6);
  }
}

TEST_CASE("small-step training never increases the penalized loss") {
  const auto data = make_pairs(50, 300, false, 6);
  RankerConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 500;
  cfg.l2 = 0.01;
  TrainingTrace trace;
  train_ranker(data.judgments, data.matrix, cfg, &trace);
  REQUIRE(trace.loss.size() == 501);
  for (std::size_t i = 1; i < trace.loss.size(); ++i) CHECK(trace.loss[i] <= trace.loss[i - 1]);
}

TEST_CASE("separable pairs are learned") {
  const auto train = make_pairs(80, 400, false, 7);
  const auto r = train_ranker(train.judgments, train.matrix, {});
  CHECK(r.weights[0] > 0);
  CHECK(evaluate_holdout(r, train.judgments, train.matrix).accuracy >= 0.99);

  const auto folds = cross_validate(train.judgments, train.matrix, 5, {});
  REQUIRE(folds.size() == 5);
  for (const auto& f : folds) {
    CHECK(f.pairs > 0);
    CHECK(f.accuracy >= 0.99);
  }
  CHECK_THROWS_AS(cross_validate(train.judgments, train.matrix, 1, {}), InputError);
}

TEST_CASE("held-out pairs over unseen documents") {
  // One matrix, disjoint document halves for training and testing.
  auto all = make_pairs(200, 4000, false, 9);
  JudgmentSet train, test;
  auto idx = [](const std::string& id) { return std::stoi(id.substr(1)); };
  for (const auto& j : all.judgments) {
    const bool low = idx(j.a_id) < 100 && idx(j.b_id) < 100;
    const bool high = idx(j.a_id) >= 100 && idx(j.b_id) >= 100;
    if (low) train.push_back(j);
    if (high) test.push_back(j);
  }
  const auto r = train_ranker(train, all.matrix, {});
  CHECK(evaluate_holdout(r, test, all.matrix).accuracy >= 0.99);
}

TEST_CASE("random labels give chance accuracy") {
  const auto data = make_pairs(300, 6000, true, 10);
  JudgmentSet train(data.judgments.begin(), data.judgments.begin() + 3000);
  JudgmentSet test(data.judgments.begin() + 3000, data.judgments.end());
  const auto r = train_ranker(train, data.matrix, {});
  const double acc = evaluate_holdout(r, test, data.matrix).accuracy;
  CHECK(acc >= 0.45);
  CHECK(acc <= 0.55);
}

TEST_CASE("a huge ridge penalty drives every score to one half") {
  const auto data = make_pairs(50, 300, false, 11);
  RankerConfig cfg;
  cfg.l2 = 1e12;
  const auto r = train_ranker(data.judgments, data.matrix, cfg);
  for (double w : r.weights) CHECK(std::abs(w) < 1e-9);
  CHECK(score_pair(r, features(10, 0), features(-10, 3)) == doctest::Approx(0.5).epsilon(1e-8));
}

TEST_CASE("a constant one-half ranker resolves ties to A and reports them") {
  const auto data = make_pairs(30, 100, true, 12);
  const auto r = unit_ranker({0, 0});
  auto m = data.matrix;
  const auto rep = evaluate_holdout(r, data.judgments, m);
  CHECK(rep.pairs == 100);
  CHECK(rep.ties_at_half == 100);
  CHECK(rep.tie_rate() == 1.0);
  CHECK(rep.accuracy == 1.0);
}

TEST_CASE("ties and unstandardized matrices are excluded or refused") {
  auto data = make_pairs(30, 50, false, 13);
  for (auto& j : data.judgments) j.tie = true;
  CHECK_THROWS_AS(train_ranker(data.judgments, data.matrix, {}), InputError);
  auto raw = make_pairs(30, 50, false, 13);
  raw.matrix.standardized = false;
  CHECK_THROWS_AS(train_ranker(raw.judgments, raw.matrix, {}), InputError);
  RankerConfig bad;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(train_ranker(raw.judgments, make_pairs(30, 50, false, 13).matrix, bad),
                  InputError);
}

TEST_CASE("training is deterministic and persistence round-trips") {
  const auto data = make_pairs(40, 200, false, 14);
  const auto a = train_ranker(data.judgments, data.matrix, {});
  const auto b = train_ranker(data.judgments, data.matrix, {});
  CHECK(a.weights == b.weights);
  const auto dir = testing::temp_dir("ranker_json");
  save_ranker(a, dir / "r.json");
  const auto back = load_ranker(dir / "r.json");
  CHECK(back.names == a.names);
  CHECK(back.weights == a.weights);
  CHECK(back.means == a.means);
  CHECK(back.sds == a.sds);
}

TEST_CASE("score files override listed pairs") {
  const auto dir = testing::temp_dir("ranker_scores");
  testing::write_text(dir / "scores.tsv", "x\ty\t0.9\n");
  const auto scores = load_scores(dir / "scores.tsv");
  REQUIRE(scores.size() == 1);

  Document x, y, w;
  x.id = "x";
  x.text = "A short text.";
  y.id = "y";
  y.text = "Another short text.";
  w.id = "w";
  w.text = "Words.";
  Ranker flat;
  flat.names = {"length"};
  flat.weights = {0.0};
  flat.means = {0.0};
  flat.sds = {1.0};
  RankerDiscriminator fallback(flat);
  const ScoreFileDiscriminator d(scores, &fallback);
  CHECK(d.score(x, y) == 0.9);
  CHECK(d.score(y, x) == doctest::Approx(0.1));
  const ScoreFileDiscriminator alone(scores);
  CHECK_THROWS_AS(alone.score(x, w), InputError);

  testing::write_text(dir / "bad.tsv", "x\ty\t1.5\n");
  CHECK_THROWS_AS(load_scores(dir / "bad.tsv"), InputError);
}

TEST_CASE("ranker discriminator scores free text with its features") {
  Ranker r;
  r.names = {"length"};
  r.weights = {-1.0};
  r.means = {20.0};
  r.sds = {10.0};
  RankerDiscriminator d(r);
  Document short_doc, long_doc;
  short_doc.id = "s";
  short_doc.text = "Tiny.";
  long_doc.id = "l";
  long_doc.text = "A considerably longer piece of text than the other.";
  CHECK(d.score(short_doc, long_doc) > 0.5);
  CHECK(d.score(short_doc, long_doc) + d.score(long_doc, short_doc) == doctest::Approx(1.0));
}

}  // TEST_SUITE
