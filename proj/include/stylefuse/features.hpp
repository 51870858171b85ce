#ifndef STYLEFUSE_FEATURES_HPP
#define STYLEFUSE_FEATURES_HPP

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stylefuse/corpus.hpp"

namespace stylefuse {

enum class Provenance { native, annotation_derived, embedding_derived, missing };

std::string to_string(Provenance p);

struct FeatureValue {
  double value = 0.0;
  Provenance provenance = Provenance::missing;

  bool missing() const noexcept { return provenance == Provenance::missing; }
};

/// Named feature values for one document, ordered by name.
class FeatureVector {
 public:
  void set(const std::string& name, double value, Provenance provenance);
  void set_missing(const std::string& name);

  bool has(const std::string& name) const { return values_.count(name) != 0; }
  /// Throws InputError when the name is absent.
  const FeatureValue& at(const std::string& name) const;
  /// Value, or nullopt when absent or missing.
  std::optional<double> get(const std::string& name) const;

  const std::map<std::string, FeatureValue>& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  friend bool operator==(const FeatureVector& a, const FeatureVector& b);

 private:
  std::map<std::string, FeatureValue> values_;
};

/// Dense documents x features table. Missing cells hold NaN.
struct FeatureMatrix {
  std::vector<std::string> ids;
  std::vector<std::string> names;
  std::vector<double> values;  // row-major
  bool standardized = false;
  std::vector<double> means;
  std::vector<double> sds;
  /// Columns with zero spread; left unscaled when standardizing.
  std::vector<bool> constant;

  std::size_t rows() const noexcept { return ids.size(); }
  std::size_t cols() const noexcept { return names.size(); }
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  std::optional<std::size_t> row_of(const std::string& id) const;
  std::optional<std::size_t> column_of(const std::string& name) const;
  /// Throws InputError naming the missing id or feature.
  double value(const std::string& id, const std::string& feature) const;

  /// Applies this matrix's standardization to a new vector, restricted to
  /// `names`. Missing entries stay NaN.
  std::vector<double> standardize(const FeatureVector& v) const;
};

/// Bundled plain-text word lists.
struct WordLists {
  std::unordered_set<std::string> dale_chall_easy;
  std::unordered_set<std::string> frequent;
  std::unordered_set<std::string> dictionary;

  static WordLists load(const std::filesystem::path& dir);
  /// Lists shipped in the repository's resources directory.
  static const WordLists& bundled();
};

// Text statistics -----------------------------------------------------------

/// Maximal vowel-letter groups (a e i o u y), minus a final lone silent
/// "e" when another group exists. Words without vowel letters count 0.
std::size_t count_syllables(const std::string& word);

struct Readability {
  double flesch = 0;
  double flesch_kincaid = 0;
  double gunning_fog = 0;
  double smog = 0;
  double dale_chall = 0;
};

/// Standard readability formulas over word tokens of the given sentences.
/// Throws InputError when there are no sentences or no words.
Readability readability(const std::vector<TokenList>& sentences, const WordLists& lists);

struct LexicalDiversity {
  double ttr = 0;
  std::optional<double> honore;  // undefined when every type is a hapax
  double brunet = 0;
};

/// Type statistics over the given tokens, compared case-insensitively.
LexicalDiversity lexical_diversity(const TokenList& tokens);

/// Rates and counts derived from CoNLL-U annotations. Every key of
/// annotation_feature_names() is present; values the annotations cannot
/// support are nullopt.
std::map<std::string, std::optional<double>> annotation_rates(
    const std::vector<AnnotatedSentence>& sentences);

const std::vector<std::string>& annotation_feature_names();

// Embedding trajectories ----------------------------------------------------

struct HamiltonianPath {
  double length = 0;
  bool approximate = false;
  std::vector<std::size_t> order;
};

/// Exact Held-Karp for n <= 12, nearest-neighbour plus 2-opt beyond.
/// Endpoints are free.
HamiltonianPath shortest_hamiltonian_path(const std::vector<std::vector<double>>& points);

/// Path length visiting points in the given order.
double path_length(const std::vector<std::vector<double>>& points);

struct TrajectoryFeatures {
  double speed = 0;
  double volume = 0;
  std::optional<double> circuitousness;
};

TrajectoryFeatures trajectory_features(const EmbeddingSequence& seq);

// Extraction ----------------------------------------------------------------

/// Every feature name extract_features understands.
const std::vector<std::string>& supported_features();
const std::vector<std::string>& native_feature_names();
const std::vector<std::string>& embedding_feature_names();
/// Features computable from raw text alone.
std::vector<std::string> default_registry();

/// Throws InputError on the first unsupported name.
void validate_registry(const std::vector<std::string>& registry);

/// Computes the registry's features for one text. Annotations and
/// embeddings are looked up in the corpus; when the document has no
/// embedding but a token lexicon is configured, the token trajectory is
/// built from the lexicon.
class FeatureExtractor {
 public:
  FeatureExtractor(std::vector<std::string> registry, const WordLists& lists);

  /// Token-level vectors used for texts that carry no embedding.
  void set_token_lexicon(std::unordered_map<std::string, std::vector<double>> lexicon);
  const std::unordered_map<std::string, std::vector<double>>& token_lexicon() const {
    return lexicon_;
  }

  const std::vector<std::string>& registry() const noexcept { return registry_; }

  FeatureVector extract(const Document& doc, const Corpus* corpus = nullptr) const;
  /// Convenience for free text (generated sequences).
  FeatureVector extract_text(const std::string& text) const;

 private:
  std::vector<std::string> registry_;
  const WordLists* lists_;
  std::unordered_map<std::string, std::vector<double>> lexicon_;
  bool needs_native_ = false;
  bool needs_annotation_ = false;
  bool needs_embedding_ = false;
};

/// Averages token-unit corpus embeddings per lowercased surface token.
std::unordered_map<std::string, std::vector<double>> build_token_lexicon(const Corpus& corpus);

FeatureVector extract_features(const Document& doc, const Corpus& corpus,
                               const std::vector<std::string>& registry,
                               const WordLists& lists = WordLists::bundled());

/// One row per corpus document, in corpus order. With `standardize`,
/// non-constant columns are z-scored over their non-missing cells.
FeatureMatrix build_matrix(const Corpus& corpus, const std::vector<std::string>& registry,
                           bool standardize, const FeatureExtractor* extractor = nullptr);

/// Z-scores the columns in place. Throws InputError with fewer than two rows.
void standardize_matrix(FeatureMatrix& m);

void write_matrix_csv(const FeatureMatrix& m, const std::filesystem::path& path);
/// Reads the raw (unstandardized) values written by write_matrix_csv.
FeatureMatrix read_matrix_csv(const std::filesystem::path& path);

}  // namespace stylefuse

#endif  // STYLEFUSE_FEATURES_HPP
