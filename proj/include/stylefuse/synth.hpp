#ifndef STYLEFUSE_SYNTH_HPP
#define STYLEFUSE_SYNTH_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "stylefuse/corpus.hpp"
#include "stylefuse/features.hpp"
#include "stylefuse/infuse.hpp"

namespace stylefuse::synth {

/// Deterministic pseudo-embedding of a word: N(0,1) coordinates seeded by
/// an FNV-1a hash of the word.
std::vector<double> word_vector(const std::string& word, std::size_t dim = 8);

// Bayesian recovery -------------------------------------------------------------

/// Judgments drawn from the pairwise model
/// logit = p_bar + alpha[A] - beta[B] + gamma[t] (f_A - f_B).
struct BayesScenario {
  std::size_t pairs = 500;
  std::size_t topics = 4;
  std::size_t texts_per_topic = 25;
  double p_bar = 0.0;
  double bias_sd = 0.3;     // spread of alpha and beta
  double gamma = 0.5;       // slope hyper-mean
  double gamma_sd = 0.0;    // topic spread around it
};

struct BayesReplication {
  JudgmentSet judgments;  // winner stored as A
  FeatureMatrix matrix;   // single standardized column "f"
  std::vector<double> gamma;  // true per-topic slopes
};

BayesReplication bayes_replication(const BayesScenario& scenario, std::uint64_t seed);

// Pipeline fixture --------------------------------------------------------------

struct FixtureSpec {
  std::size_t pairs = 200;
  std::size_t topics = 4;
  std::size_t docs_per_topic = 30;
  std::size_t external = 120;
  double tie_rate = 0.05;
  std::size_t dim = 8;
};

/// A style corpus whose audience prefers short, plain texts, plus an
/// external candidate corpus, with CoNLL-U annotations and token-unit
/// embeddings for both.
struct Fixture {
  Corpus style;
  Corpus external;
};

Fixture pipeline_fixture(const FixtureSpec& spec, std::uint64_t seed);

/// Writes documents.jsonl, judgments.jsonl, annotations.conllu,
/// embeddings.tsv, external.jsonl, external_embeddings.tsv and a
/// config.json running the whole pipeline.
void write_pipeline_fixture(const std::filesystem::path& dir, const FixtureSpec& spec,
                            std::uint64_t seed);

// Infusion task -----------------------------------------------------------------

/// Token sequences judged by a noisy preference for short, low-circuitousness
/// texts. Every text is a document in `corpus` with token-unit embeddings.
struct InfusionTask {
  Corpus corpus;
  JudgmentSet judgments;
  std::vector<infuse::TrainingPair> pairs;
  std::vector<std::string> vocabulary;
  std::unordered_map<std::string, std::vector<double>> lexicon;
};

struct InfusionTaskSpec {
  std::size_t pairs = 200;
  std::size_t words = 12;
  std::size_t min_length = 3;
  std::size_t max_length = 12;
  double length_weight = 0.6;   // per token
  double circuit_weight = 1.5;  // per unit of circuitousness
};

InfusionTask infusion_task(const InfusionTaskSpec& spec, std::uint64_t seed);

}  // namespace stylefuse::synth

#endif  // STYLEFUSE_SYNTH_HPP
