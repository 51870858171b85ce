#include "stylefuse/ranker.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"

namespace stylefuse {

using nlohmann::json;

std::vector<double> Ranker::difference(const FeatureVector& a, const FeatureVector& b) const {
  std::vector<double> out(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto xa = a.get(names[k]);
    const auto xb = b.get(names[k]);
    if (!xa || !xb) {
      throw InputError("ranker feature '" + names[k] + "' missing on " + (xa ? "b" : "a"));
    }
    const double sd = k < sds.size() ? sds[k] : 1.0;
    out[k] = (*xa - *xb) / sd;
  }
  return out;
}

double Ranker::score(std::span<const double> difference) const {
  if (difference.size() != weights.size()) {
    throw InputError("feature-set mismatch: ranker has " + std::to_string(weights.size()) +
                     " weights, got " + std::to_string(difference.size()) + " features");
  }
  double s = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * difference[k];
  // Both orientations evaluate the same positive-side sigmoid, so
  // score(a, b) + score(b, a) == 1 holds exactly in floating point.
  return s >= 0 ? sigmoid(s) : 1.0 - sigmoid(-s);
}

double score_pair(const Ranker& ranker, const FeatureVector& a, const FeatureVector& b) {
  return ranker.score(ranker.difference(a, b));
}

double ranker_loss(std::span<const double> weights, const std::vector<std::vector<double>>& diffs,
                   double l2) {
  double loss = 0;
  for (const auto& x : diffs) {
    double s = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * x[k];
    loss -= log_sigmoid(s);
  }
  if (!diffs.empty()) loss /= static_cast<double>(diffs.size());
  double norm = 0;
  for (double w : weights) norm += w * w;
  return loss + 0.5 * l2 * norm;
}

namespace {

std::vector<double> data_gradient(std::span<const double> weights,
                                  const std::vector<std::vector<double>>& diffs) {
  std::vector<double> g(weights.size(), 0.0);
  for (const auto& x : diffs) {
    double s = 0;
    for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * x[k];
    // d/ds of -log sigmoid(s) is sigmoid(s) - 1 = -sigmoid(-s).
    const double coef = -sigmoid(-s);
    for (std::size_t k = 0; k < weights.size(); ++k) g[k] += coef * x[k];
  }
  if (!diffs.empty()) {
    for (auto& v : g) v /= static_cast<double>(diffs.size());
  }
  return g;
}

}  // namespace

std::vector<double> ranker_loss_gradient(std::span<const double> weights,
                                         const std::vector<std::vector<double>>& diffs, double l2) {
  auto g = data_gradient(weights, diffs);
  for (std::size_t k = 0; k < g.size(); ++k) g[k] += l2 * weights[k];
  return g;
}

std::vector<std::vector<double>> judgment_differences(const JudgmentSet& judgments,
                                                      const FeatureMatrix& matrix) {
  std::vector<std::vector<double>> out;
  for (const auto& j : judgments) {
    if (j.tie) continue;
    const auto ra = matrix.row_of(j.a_id), rb = matrix.row_of(j.b_id);
    if (!ra || !rb) {
      throw InputError("judgment '" + j.pair_id + "' references a document without features");
    }
    std::vector<double> x(matrix.cols());
    bool complete = true;
    for (std::size_t c = 0; c < matrix.cols(); ++c) {
      x[c] = matrix.at(*ra, c) - matrix.at(*rb, c);
      if (std::isnan(x[c])) complete = false;
    }
    if (complete) out.push_back(std::move(x));
  }
  return out;
}

Ranker train_ranker(const JudgmentSet& train, const FeatureMatrix& matrix,
                    const RankerConfig& config, TrainingTrace* trace) {
  if (!(config.learning_rate > 0)) {
    throw InputError("ranker learning rate must be positive");
  }
  if (!matrix.standardized) {
    throw InputError("ranker training needs a standardized feature matrix");
  }
  const auto diffs = judgment_differences(train, matrix);
  if (diffs.empty()) {
    throw InputError("no non-tied judgments with complete features to train on");
  }
  Ranker r;
  r.names = matrix.names;
  r.weights.assign(matrix.cols(), 0.0);
  r.means = matrix.means;
  r.sds.resize(matrix.cols());
  for (std::size_t c = 0; c < matrix.cols(); ++c) {
    r.sds[c] = matrix.constant[c] ? 1.0 : matrix.sds[c];
  }
  const double eta = config.learning_rate;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (trace) trace->loss.push_back(ranker_loss(r.weights, diffs, config.l2));
    const auto g = data_gradient(r.weights, diffs);
    // Proximal step for the ridge term keeps large penalties stable.
    for (std::size_t k = 0; k < g.size(); ++k) {
      r.weights[k] = (r.weights[k] - eta * g[k]) / (1.0 + eta * config.l2);
    }
  }
  if (trace) trace->loss.push_back(ranker_loss(r.weights, diffs, config.l2));
  return r;
}

AccuracyReport evaluate_holdout(const Ranker& ranker, const JudgmentSet& test,
                                const FeatureMatrix& matrix) {
  if (matrix.names != ranker.names) {
    throw InputError("feature-set mismatch between ranker and matrix");
  }
  AccuracyReport rep;
  std::size_t correct = 0;
  for (const auto& x : judgment_differences(test, matrix)) {
    const double s = ranker.score(x);
    ++rep.pairs;
    if (s == 0.5) {
      ++rep.ties_at_half;
      ++correct;
    } else if (s > 0.5) {
      ++correct;
    }
  }
  rep.accuracy = rep.pairs ? static_cast<double>(correct) / static_cast<double>(rep.pairs) : 0.0;
  return rep;
}

std::vector<AccuracyReport> cross_validate(const JudgmentSet& judgments,
                                           const FeatureMatrix& matrix, std::size_t k,
                                           const RankerConfig& config) {
  if (k < 2) throw InputError("cross-validation needs at least 2 folds");
  const auto pool = without_ties(judgments);
  std::map<std::string, std::vector<std::size_t>> by_topic;
  for (std::size_t i = 0; i < pool.size(); ++i) by_topic[pool[i].topic].push_back(i);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> fold_of(pool.size());
  std::size_t offset = 0;
  for (auto& [topic, idx] : by_topic) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) fold_of[idx[i]] = (offset + i) % k;
    offset += idx.size();
  }
  std::vector<AccuracyReport> out;
  for (std::size_t f = 0; f < k; ++f) {
    JudgmentSet train, test;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      (fold_of[i] == f ? test : train).push_back(pool[i]);
    }
    if (test.empty() || train.empty()) {
      throw InputError("cross-validation fold " + std::to_string(f) + " has zero pairs");
    }
    out.push_back(evaluate_holdout(train_ranker(train, matrix, config), test, matrix));
  }
  return out;
}

void save_ranker(const Ranker& ranker, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  json j = {{"features", ranker.names},
            {"weights", ranker.weights},
            {"means", ranker.means},
            {"sds", ranker.sds}};
  out << j.dump(2) << '\n';
}

Ranker load_ranker(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  try {
    const auto j = json::parse(in);
    Ranker r;
    r.names = j.at("features").get<std::vector<std::string>>();
    r.weights = j.at("weights").get<std::vector<double>>();
    r.means = j.value("means", std::vector<double>(r.names.size(), 0.0));
    r.sds = j.value("sds", std::vector<double>(r.names.size(), 1.0));
    if (r.weights.size() != r.names.size() || r.means.size() != r.names.size() ||
        r.sds.size() != r.names.size()) {
      throw InputError(path.string() + ": weight and feature counts differ");
    }
    return r;
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

// Discriminators ------------------------------------------------------------

RankerDiscriminator::RankerDiscriminator(Ranker ranker, const WordLists& lists,
                                         const Corpus* corpus)
    : ranker_(std::move(ranker)), extractor_(ranker_.names, lists), corpus_(corpus) {}

void RankerDiscriminator::set_token_lexicon(
    std::unordered_map<std::string, std::vector<double>> lexicon) {
  extractor_.set_token_lexicon(std::move(lexicon));
}

FeatureVector RankerDiscriminator::features(const Document& doc) const {
  const bool known = corpus_ && corpus_->contains(doc.id);
  auto fv = extractor_.extract(doc, known ? corpus_ : nullptr);
  if (impute_missing_) {
    for (std::size_t k = 0; k < ranker_.names.size(); ++k) {
      if (!fv.get(ranker_.names[k])) {
        fv.set(ranker_.names[k], k < ranker_.means.size() ? ranker_.means[k] : 0.0,
               Provenance::native);
      }
    }
  }
  return fv;
}

double RankerDiscriminator::score(const Document& a, const Document& b) const {
  return score_pair(ranker_, features(a), features(b));
}

ScoreFileDiscriminator::ScoreFileDiscriminator(
    std::map<std::pair<std::string, std::string>, double> scores, const Discriminator* fallback)
    : scores_(std::move(scores)), fallback_(fallback) {}

double ScoreFileDiscriminator::score(const Document& a, const Document& b) const {
  if (auto it = scores_.find({a.id, b.id}); it != scores_.end()) return it->second;
  if (auto it = scores_.find({b.id, a.id}); it != scores_.end()) return 1.0 - it->second;
  if (!fallback_) {
    throw InputError("no discriminator score for pair ('" + a.id + "', '" + b.id + "')");
  }
  return fallback_->score(a, b);
}

std::map<std::pair<std::string, std::string>, double> load_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::map<std::pair<std::string, std::string>, double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string a, b, s;
    if (!std::getline(ss, a, '\t') || !std::getline(ss, b, '\t') || !std::getline(ss, s)) {
      throw InputError(path.string() + ":" + std::to_string(lineno) +
                       ": expected <a_id>\\t<b_id>\\t<score>");
    }
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || !(v > 0 && v < 1)) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": score must lie in (0,1)");
    }
    out[{a, b}] = v;
  }
  return out;
}

}  // namespace stylefuse
