#ifndef STYLEFUSE_AUGMENT_HPP
#define STYLEFUSE_AUGMENT_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stylefuse/corpus.hpp"
#include "stylefuse/ranker.hpp"

namespace stylefuse::augment {

struct AugmentConfig {
  std::size_t k = 5;
  /// Strict threshold on D(candidate, neighbour).
  double min_score = 0.5;
  /// 0 = unlimited.
  std::size_t max_new_pairs = 0;
  std::uint64_t seed = 0;
};

struct Neighbor {
  std::string id;
  double similarity = 0;
};

/// A retrieval pool: one vector per item (document-level mean of its
/// embedding sequence).
struct EmbeddingPool {
  std::vector<std::string> ids;
  std::vector<std::vector<double>> vectors;
  std::size_t dimension = 0;

  static EmbeddingPool from_corpus(const Corpus& corpus);
};

/// Mean of an embedding sequence.
std::vector<double> document_vector(const EmbeddingSequence& seq);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Exact scan: the k most cosine-similar pool items, descending, ties
/// broken by ascending id. Returns the whole pool when k exceeds it
/// (`truncated` set).
std::vector<Neighbor> topk_similar(std::span<const double> query, const EmbeddingPool& pool,
                                   std::size_t k, bool* truncated = nullptr);

/// Provenance of one emitted pair.
struct GeneratedPair {
  PairJudgment judgment;
  std::string candidate_id;
  std::string neighbor_id;
  double similarity = 0;
  double score = 0;
};

struct AugmentResult {
  std::vector<GeneratedPair> pairs;
  /// Candidates that contributed at least one pair, relabelled as generated.
  std::vector<Document> documents;
  std::size_t candidates_scanned = 0;
  std::size_t qualifying_candidates = 0;
  bool capped = false;

  JudgmentSet judgments() const;
};

/// For each external candidate (in id order), retrieves its k nearest
/// style documents and emits one pair per neighbour it beats with
/// D(candidate, neighbour) > min_score.
AugmentResult augment_pairs(const Corpus& external, const Corpus& style,
                            const Discriminator& discriminator, const AugmentConfig& config);

struct AugmentReport {
  std::size_t candidates_scanned = 0;
  std::size_t pairs_added = 0;
  std::map<std::string, std::size_t> per_topic;
};

AugmentReport augment_report(const AugmentResult& result);

/// judgments.jsonl plus a TSV sidecar: candidate, neighbour, similarity, score.
void save_augmentation(const AugmentResult& result, const std::filesystem::path& judgments_path,
                       const std::filesystem::path& sidecar_path);

/// Style documents plus the contributing candidates, with the original and
/// generated judgments; the corpus the augmented pairs resolve against.
Corpus merge_augmented(const Corpus& style, const AugmentResult& result);

}  // namespace stylefuse::augment

#endif  // STYLEFUSE_AUGMENT_HPP
