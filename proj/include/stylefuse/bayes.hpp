#ifndef STYLEFUSE_BAYES_HPP
#define STYLEFUSE_BAYES_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "stylefuse/corpus.hpp"
#include "stylefuse/diagnostics.hpp"
#include "stylefuse/features.hpp"
#include "stylefuse/nuts.hpp"

namespace stylefuse::bayes {

/// Observations for the pairwise correlation model. Each row says whether
/// text A beat text B, with the standardized feature difference A - B.
struct BayesData {
  std::vector<int> outcomes;  // 1 = A wins
  std::vector<std::size_t> a_index;
  std::vector<std::size_t> b_index;
  std::vector<std::size_t> topic_index;
  std::vector<double> feat_diff;

  std::vector<std::string> a_ids;
  std::vector<std::string> b_ids;
  std::vector<std::string> topics;

  std::size_t size() const noexcept { return outcomes.size(); }
  /// Throws InputError on ragged arrays, out-of-range indices or
  /// non-finite differences.
  void validate() const;
};

/// One non-centred hierarchical block: value[i] = mean + v[i] * exp(sigma_raw).
struct Block {
  double mean = 0;
  double sigma_raw = 0;
  std::vector<double> v;

  double sigma() const { return std::exp(sigma_raw); }
  double value(std::size_t i) const { return mean + v[i] * sigma(); }
};

struct BayesParams {
  double p_bar = 0;
  Block alpha;  // A-side bias
  Block beta;   // B-side bias
  Block gamma;  // per-topic slope

  static BayesParams zeros(const BayesData& data);
  static std::size_t dimension(const BayesData& data);
  std::vector<double> to_vector() const;
  static BayesParams from_vector(std::span<const double> x, const BayesData& data);
};

enum class HyperPriorReading { scale, variance };

struct PriorConfig {
  /// Normal(0, 0.25) on p_bar and the block means.
  double hyper = 0.25;
  HyperPriorReading reading = HyperPriorReading::scale;
  /// Rate of the exponential prior on block scales.
  double sigma_rate = 1.0;
  /// Drop every prior term, leaving the Bernoulli log-likelihood.
  bool likelihood_only = false;

  double hyper_sd() const;
};

/// Log posterior in the unconstrained parameterization, including the
/// log-Jacobian of the scale transforms.
double log_posterior(const BayesParams& params, const BayesData& data,
                     const PriorConfig& prior = {});

/// Same as log_posterior, also writing the analytic gradient with respect
/// to the flattened parameter vector.
double log_posterior_gradient(std::span<const double> x, const BayesData& data,
                              const PriorConfig& prior, std::span<double> grad);

std::vector<double> grad_log_posterior(const BayesParams& params, const BayesData& data,
                                       const PriorConfig& prior = {});

/// Bernoulli log-likelihood term only.
double log_likelihood(const BayesParams& params, const BayesData& data);

// Fitting -------------------------------------------------------------------

struct FitConfig {
  nuts::Config sampler;
  PriorConfig prior;
  /// Central interval mass reported for every summary.
  double interval = 0.90;
};

struct Summary {
  double mean = 0;
  double sd = 0;
  double lower = 0;  // 5% quantile for the default interval
  double upper = 0;  // 95% quantile
  std::optional<double> rhat;
  std::optional<double> ess;

  bool excludes_zero() const { return lower > 0 || upper < 0; }
};

struct TopicSummary {
  std::string topic;
  std::size_t observations = 0;
  Summary gamma;
};

struct ProbabilityShift {
  double percentage_points = 0;  // (sigmoid(delta) - 0.5) * 100
  double odds_multiplier = 1;    // exp(delta)
};

ProbabilityShift logit_shift_to_probability(double delta);

struct CorrelationResult {
  std::string feature;
  std::vector<TopicSummary> topics;
  /// Topic-averaged slope, mean over topics of gamma[t].
  Summary pooled;
  /// Population mean of the slope hierarchy.
  Summary hyper_mean;
  std::size_t observations = 0;
  std::size_t divergences = 0;
  std::optional<double> max_rhat;
  bool converged = false;
  ProbabilityShift shift;
};

/// Builds model rows from non-tied judgments. Judgments store the winner
/// as A, so every row's A/B roles are swapped with probability 1/2
/// (seeded) to give the likelihood both outcomes. Pairs whose feature is
/// missing on either side are skipped.
BayesData make_data(const JudgmentSet& judgments, const FeatureMatrix& matrix,
                    const std::string& feature, std::uint64_t seed);

CorrelationResult fit(const BayesData& data, const std::string& feature, const FitConfig& config);

/// Validates the matrix (standardized, feature present and non-constant)
/// and fits one hierarchical model for the feature.
CorrelationResult fit_feature_correlation(const JudgmentSet& judgments, const FeatureMatrix& matrix,
                                          const std::string& feature, const FitConfig& config);

Summary summarize(const mcmc::Draws& draws, double interval = 0.90);

void write_correlations_csv(const std::vector<CorrelationResult>& results,
                            const std::filesystem::path& path);
std::vector<CorrelationResult> read_correlations_csv(const std::filesystem::path& path);

/// feature,observations,divergences,max_rhat,converged rows.
void write_diagnostics_csv(const std::vector<CorrelationResult>& results,
                           const std::filesystem::path& path);
/// Fills the fit diagnostics of `results` by feature name.
void read_diagnostics_csv(const std::filesystem::path& path,
                          std::vector<CorrelationResult>& results);

/// Forest plot of pooled slopes with a logit lower axis and a
/// probability-shift upper axis.
std::string forest_plot_svg(const std::vector<CorrelationResult>& results);

}  // namespace stylefuse::bayes

#endif  // STYLEFUSE_BAYES_HPP
