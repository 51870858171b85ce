#ifndef STYLEFUSE_EVAL_HPP
#define STYLEFUSE_EVAL_HPP

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stylefuse/bayes.hpp"
#include "stylefuse/features.hpp"

namespace stylefuse::eval {

// ROUGE -----------------------------------------------------------------------

struct RougeComponent {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

struct RougeScores {
  RougeComponent rouge1;
  RougeComponent rouge2;
  RougeComponent rougeL;
  bool empty_hypothesis = false;
};

/// Lowercases and splits on anything that is not a letter or digit.
std::vector<std::string> rouge_tokens(const std::string& text);

/// Clipped n-gram overlap. Throws InputError for n < 1.
RougeComponent rouge_n(const std::vector<std::string>& reference,
                       const std::vector<std::string>& hypothesis, std::size_t n);
/// Longest-common-subsequence overlap.
RougeComponent rouge_l(const std::vector<std::string>& reference,
                       const std::vector<std::string>& hypothesis);

RougeScores rouge(const std::string& reference, const std::string& hypothesis);

/// Component-wise mean over (reference, hypothesis) pairs.
RougeScores mean_rouge(const std::vector<std::pair<std::string, std::string>>& pairs);

// Welch t-test ----------------------------------------------------------------

struct WelchResult {
  double t = 0;
  double p = 1;
  double df = 0;
  /// Both samples had zero variance.
  bool degenerate = false;
};

/// Two-sided Welch test with Welch-Satterthwaite degrees of freedom.
/// Throws InputError when either sample has fewer than two values.
WelchResult welch_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Significance ----------------------------------------------------------------

/// "ns", "p<0.05", "p<0.01", "p<0.001" or "p<0.0001".
std::string significance_bucket(double p);

struct FeatureShift {
  std::string feature;
  double baseline_mean = 0;
  double model_mean = 0;
  WelchResult test;
  std::string bucket = "ns";
  /// Set only when the feature's pooled slope interval excludes zero.
  std::optional<bool> direction_correct;
  std::optional<double> gamma;
};

struct SignificanceReport {
  std::vector<FeatureShift> features;

  const FeatureShift* find(const std::string& feature) const;
};

/// Per-feature Welch test of model against baseline generations (raw
/// feature values). A direction is correct when the sign of the mean shift
/// matches the sign of the pooled slope.
SignificanceReport significance_report(const FeatureMatrix& baseline, const FeatureMatrix& model,
                                       const std::vector<bayes::CorrelationResult>& correlations);

/// 100 * sum |gamma_f| a_f / sum |gamma_f| over features whose pooled
/// interval excludes zero; a_f = 1 (correct, p < 0.05), 0.5 (correct,
/// not significant) or 0.
double agreement_score(const SignificanceReport& report,
                       const std::vector<bayes::CorrelationResult>& correlations);

// Reports ---------------------------------------------------------------------

struct ModelEvaluation {
  std::string model;
  RougeScores rouge;
  std::size_t generations = 0;
  std::optional<double> bertscore;
  std::optional<SignificanceReport> significance;
  std::optional<double> agreement;
};

/// Reads `model,bertscore_f1` rows computed elsewhere.
std::map<std::string, double> load_bertscores(const std::filesystem::path& path);

void write_rouge_csv(const std::vector<ModelEvaluation>& models, const std::filesystem::path& path);
void write_significance_csv(const std::vector<ModelEvaluation>& models,
                            const std::filesystem::path& path);

std::string rouge_markdown(const std::vector<ModelEvaluation>& models);
std::string significance_markdown(const std::vector<ModelEvaluation>& models);
std::string agreement_markdown(const std::vector<ModelEvaluation>& models);

}  // namespace stylefuse::eval

#endif  // STYLEFUSE_EVAL_HPP
