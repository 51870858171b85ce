#ifndef STYLEFUSE_RANKER_HPP
#define STYLEFUSE_RANKER_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stylefuse/corpus.hpp"
#include "stylefuse/features.hpp"

namespace stylefuse {

struct RankerConfig {
  double learning_rate = 0.5;
  std::size_t epochs = 300;
  double l2 = 1e-3;
  std::uint64_t seed = 0;
};

/// Pairwise logistic model on standardized feature differences:
/// D(a, b) = sigmoid(w . (z(a) - z(b))). No intercept, so
/// D(a, b) + D(b, a) = 1.
struct Ranker {
  std::vector<std::string> names;
  std::vector<double> weights;
  /// Standardization applied to raw feature values (z = (x - mean) / sd).
  std::vector<double> means;
  std::vector<double> sds;

  /// Standardized difference z(a) - z(b); throws InputError when either
  /// side lacks one of the ranker's features.
  std::vector<double> difference(const FeatureVector& a, const FeatureVector& b) const;
  double score(std::span<const double> difference) const;
};

double score_pair(const Ranker& ranker, const FeatureVector& a, const FeatureVector& b);

/// Mean logistic loss of labelling every row as a win, plus l2/2 |w|^2.
double ranker_loss(std::span<const double> weights, const std::vector<std::vector<double>>& diffs,
                   double l2);
std::vector<double> ranker_loss_gradient(std::span<const double> weights,
                                         const std::vector<std::vector<double>>& diffs, double l2);

/// Standardized winner-minus-loser rows for non-tied judgments whose
/// features are complete.
std::vector<std::vector<double>> judgment_differences(const JudgmentSet& judgments,
                                                      const FeatureMatrix& matrix);

struct TrainingTrace {
  std::vector<double> loss;  // penalized loss before each epoch, then final
};

/// Full-batch proximal gradient descent from zero weights.
Ranker train_ranker(const JudgmentSet& train, const FeatureMatrix& matrix,
                    const RankerConfig& config, TrainingTrace* trace = nullptr);

struct AccuracyReport {
  double accuracy = 0;
  std::size_t pairs = 0;
  /// Pairs scored exactly 0.5, resolved in favour of A.
  std::size_t ties_at_half = 0;
  double tie_rate() const { return pairs ? static_cast<double>(ties_at_half) / pairs : 0.0; }
};

AccuracyReport evaluate_holdout(const Ranker& ranker, const JudgmentSet& test,
                                const FeatureMatrix& matrix);

/// Topic-stratified k-fold cross-validation.
std::vector<AccuracyReport> cross_validate(const JudgmentSet& judgments,
                                           const FeatureMatrix& matrix, std::size_t k,
                                           const RankerConfig& config);

void save_ranker(const Ranker& ranker, const std::filesystem::path& path);
Ranker load_ranker(const std::filesystem::path& path);

// Discriminators ------------------------------------------------------------

/// Probability that `a` shows the style more strongly than `b`.
class Discriminator {
 public:
  virtual ~Discriminator() = default;
  virtual double score(const Document& a, const Document& b) const = 0;
};

/// Scores texts by extracting the ranker's features. Corpus documents use
/// their annotations and embeddings; other texts use the extractor alone.
class RankerDiscriminator : public Discriminator {
 public:
  RankerDiscriminator(Ranker ranker, const WordLists& lists = WordLists::bundled(),
                      const Corpus* corpus = nullptr);
  void set_token_lexicon(std::unordered_map<std::string, std::vector<double>> lexicon);
  /// When set, a feature that cannot be computed for a text takes the
  /// ranker's training mean instead of raising InputError.
  void set_impute_missing(bool impute) noexcept { impute_missing_ = impute; }
  double score(const Document& a, const Document& b) const override;
  FeatureVector features(const Document& doc) const;
  const Ranker& ranker() const noexcept { return ranker_; }

 private:
  Ranker ranker_;
  FeatureExtractor extractor_;
  const Corpus* corpus_;
  bool impute_missing_ = false;
};

/// Overrides listed (a_id, b_id) pairs with externally computed scores;
/// the reversed pair reads as 1 - score. Unlisted pairs go to `fallback`.
class ScoreFileDiscriminator : public Discriminator {
 public:
  ScoreFileDiscriminator(std::map<std::pair<std::string, std::string>, double> scores,
                         const Discriminator* fallback = nullptr);
  double score(const Document& a, const Document& b) const override;
  std::size_t size() const noexcept { return scores_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, double> scores_;
  const Discriminator* fallback_;
};

/// scores.tsv rows: <a_id>\t<b_id>\t<score in (0,1)>.
std::map<std::pair<std::string, std::string>, double> load_scores(const std::filesystem::path& path);

}  // namespace stylefuse

#endif  // STYLEFUSE_RANKER_HPP
