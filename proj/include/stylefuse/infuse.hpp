#ifndef STYLEFUSE_INFUSE_HPP
#define STYLEFUSE_INFUSE_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylefuse/corpus.hpp"
#include "stylefuse/ranker.hpp"

namespace stylefuse::infuse {

inline constexpr const char* kBos = "<bos>";
inline constexpr const char* kEos = "<eos>";

/// Order-m table language model. Every context (the last m token ids,
/// padded with BOS) owns a row of next-token logits and a state embedding
/// read by the baseline head.
struct ToyLM {
  std::vector<std::string> vocabulary;  // [0] = BOS, [1] = EOS
  int order = 1;
  std::size_t state_dim = 8;
  std::vector<double> logits;  // contexts x vocabulary
  std::vector<double> states;  // contexts x state_dim

  ToyLM() = default;
  /// Zero logits; state embeddings drawn N(0, 0.1^2) from `seed`.
  ToyLM(std::vector<std::string> vocabulary, int order, std::uint64_t seed,
        std::size_t state_dim = 8);

  std::size_t vocab_size() const noexcept { return vocabulary.size(); }
  std::size_t num_contexts() const;
  static constexpr int bos() noexcept { return 0; }
  static constexpr int eos() noexcept { return 1; }

  /// Throws InputError for out-of-vocabulary tokens.
  int id(const std::string& token) const;
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  /// Context index of the next position given everything emitted so far.
  std::size_t context(std::span<const int> history) const;
  std::span<const double> logit_row(std::size_t ctx) const;
  std::span<double> logit_row(std::size_t ctx);
  std::span<const double> state(std::size_t ctx) const;
  std::span<double> state(std::size_t ctx);
  std::vector<double> probabilities(std::size_t ctx) const;

  void validate() const;

 private:
  mutable std::unordered_map<std::string, int> index_;
  void build_index() const;
};

/// [BOS, EOS, sorted distinct tokens].
std::vector<std::string> build_vocabulary(const std::vector<std::vector<std::string>>& sequences);

/// Linear map from a state embedding to the predicted reward R-hat.
struct BaselineHead {
  std::vector<double> weights;
  double bias = 0;

  explicit BaselineHead(std::size_t dim = 8) : weights(dim, 0.0) {}
  double predict(std::span<const double> state) const;
};

struct TrainingPair {
  std::vector<std::string> prompt;
  std::vector<std::string> y_s_star;   // EOS-terminated
  std::vector<std::string> y_ns_star;  // EOS-terminated

  void validate() const;
};

/// Pairs from non-tied judgments: A is the styled sample. Tokens are
/// lowercased. The prompt is the judgment's prompt when present;
/// otherwise the first clause of the styled text (through its first
/// ',' ';' or ':'), which is then removed from the target.
std::vector<TrainingPair> make_training_pairs(const Corpus& corpus, const JudgmentSet& judgments);

enum class LossMode { SD, SS, fixed };
std::string to_string(LossMode mode);
LossMode parse_loss_mode(const std::string& s);

struct InfusionConfig {
  LossMode mode = LossMode::SD;
  double beta = 0.5;
  /// Weights for fixed mode: w_D * L_D + w_R * L_R.
  double w_d = 0.1;
  double w_r = 0.9;
  double learning_rate = 1.0;
  /// Step size for the baseline head and state embeddings; L_BR has
  /// curvature 2 in the bias, so steps must stay below 1.
  double head_learning_rate = 0.1;
  std::size_t epochs = 20;
  std::size_t beam_width = 4;
  std::size_t max_tokens = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

// Losses ----------------------------------------------------------------------

/// log p(y_i | context) for every position under teacher forcing.
std::vector<double> sequence_log_probs(const ToyLM& lm, std::span<const int> tokens,
                                       std::span<const int> prompt = {});
std::vector<std::size_t> sequence_contexts(const ToyLM& lm, std::span<const int> tokens,
                                           std::span<const int> prompt = {});

/// L_R = -(1/N) sum_i log p(y_s*_i).
double reconstruction_loss(const ToyLM& lm, std::span<const int> y_s_star,
                           std::span<const int> prompt = {});
double reconstruction_loss(const ToyLM& lm, const TrainingPair& pair);

/// L_D = R - (1/N) sum_i R-hat_i log p(y_i), with R = D(y_s*, y).
double discriminator_loss(double reward, std::span<const double> baselines,
                          std::span<const double> log_probs);

/// Scores the generated sequence against the styled sample and evaluates L_D.
double discriminator_loss(const Discriminator& discriminator, const TrainingPair& pair,
                          std::span<const int> y, std::span<const double> baselines,
                          const ToyLM& lm);

/// L_BR = (1/N) sum_i (R - R-hat_i)^2.
double baseline_loss(double reward, std::span<const double> baselines);

/// L_S: mean of prefix scores D(y_s*, y^(1..i)).
double supervised_loss(std::span<const double> prefix_scores);
double supervised_loss(const Discriminator& discriminator, const TrainingPair& pair,
                       std::span<const int> y, const ToyLM& lm);

struct Combined {
  double c = 0;
  double value = 0;
};

/// C = beta (1 - alpha_S); L_SD = C L_D + (1 - C) L_R.
Combined combined_loss(double l_d, double l_r, double beta, double alpha_s);

// Gradients -------------------------------------------------------------------

/// Dense gradient with the shape of ToyLM::logits.
using LogitGrad = std::vector<double>;

/// Adds scale * d/dlogits log p(y_i | c_i) for each position i, with the
/// per-position coefficients `coef`.
void accumulate_log_prob_gradient(const ToyLM& lm, std::span<const int> tokens,
                                  std::span<const int> prompt, std::span<const double> coef,
                                  LogitGrad& grad);

/// d L_R / d logits.
LogitGrad reconstruction_gradient(const ToyLM& lm, std::span<const int> y_s_star,
                                  std::span<const int> prompt = {});

/// Score-function estimate of d E[R] / d logits from one sample:
/// sum_i (R - R-hat_i) d log p(y_i). Unbiased for any baseline that does
/// not depend on y_i itself.
LogitGrad policy_gradient(const ToyLM& lm, std::span<const int> y, std::span<const int> prompt,
                          double reward, std::span<const double> baselines);

struct HeadGrad {
  std::vector<double> weights;
  double bias = 0;
  std::vector<double> states;  // shape of ToyLM::states
};

/// Baselines R-hat_i = head(state(c_i)) for every position of y.
std::vector<double> baselines(const ToyLM& lm, const BaselineHead& head, std::span<const int> y,
                              std::span<const int> prompt = {});

/// Gradient of L_BR with respect to the head and the state embeddings.
HeadGrad baseline_gradient(const ToyLM& lm, const BaselineHead& head, std::span<const int> y,
                           std::span<const int> prompt, double reward);

// Training --------------------------------------------------------------------

struct EpochLosses {
  std::size_t epoch = 0;
  double l_r = 0;
  double l_d = 0;  // L_S in SS mode
  double c = 0;
  double total = 0;
  double l_br = 0;
};

struct TrainResult {
  ToyLM lm;
  BaselineHead head;
  std::vector<EpochLosses> curve;
  std::vector<double> alpha_s;
};

/// Text document for a token sequence, BOS/EOS removed.
Document to_document(const std::string& id, std::span<const std::string> tokens);

/// Per-pair SGD over `pairs` in order, for config.epochs epochs. When the
/// discriminator term's weight is zero no sequence is sampled, so the
/// trajectory equals pure maximum-likelihood training.
TrainResult train(ToyLM lm, BaselineHead head, const std::vector<TrainingPair>& pairs,
                  const Discriminator& discriminator, const InfusionConfig& config);

/// Maximum-likelihood training only (reconstruction loss), same schedule.
TrainResult train_mle(ToyLM lm, const std::vector<TrainingPair>& pairs,
                      const InfusionConfig& config);

// Decoding --------------------------------------------------------------------

struct Generation {
  std::vector<std::string> prompt;
  std::vector<int> tokens;  // generated ids, EOS included when reached
  std::vector<double> log_probs;
  double score = 0;  // mean log prob
};

/// Ancestral sampling up to max_tokens or EOS.
std::vector<int> sample(const ToyLM& lm, std::span<const int> prompt, std::size_t max_tokens,
                        std::mt19937_64& rng);

/// Beam search with length-normalized scores (mean log prob). Finished
/// hypotheses compete with open ones; ties break on the token ids.
Generation generate(const ToyLM& lm, const std::vector<std::string>& prompt,
                    std::size_t beam_width, std::size_t max_tokens);

/// Truncates after the first 4-token window that is immediately repeated.
std::vector<std::string> postprocess(const std::vector<std::string>& tokens);
std::string postprocess(const std::string& text);

/// Detokenized text of a generation (BOS/EOS dropped, postprocessed).
std::string generation_text(const ToyLM& lm, const Generation& g);

// Persistence -----------------------------------------------------------------

void save_model(const ToyLM& lm, const BaselineHead& head, const std::filesystem::path& path);
std::pair<ToyLM, BaselineHead> load_model(const std::filesystem::path& path);
void save_generations(const ToyLM& lm, const std::vector<Generation>& gens,
                      const std::filesystem::path& path);
void save_loss_curve(const std::vector<EpochLosses>& curve, LossMode mode,
                     const std::filesystem::path& path);

}  // namespace stylefuse::infuse

#endif  // STYLEFUSE_INFUSE_HPP
