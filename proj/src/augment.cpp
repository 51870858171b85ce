#include "stylefuse/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

namespace stylefuse::augment {

std::vector<double> document_vector(const EmbeddingSequence& seq) {
  if (seq.vectors.empty()) {
    throw InputError("document '" + seq.document_id + "' has an empty embedding");
  }
  std::vector<double> out(seq.dimension, 0.0);
  for (const auto& v : seq.vectors)
    for (std::size_t d = 0; d < out.size(); ++d) out[d] += v[d];
  for (auto& x : out) x /= static_cast<double>(seq.vectors.size());
  return out;
}

EmbeddingPool EmbeddingPool::from_corpus(const Corpus& corpus) {
  EmbeddingPool pool;
  pool.dimension = corpus.embedding_dimension.value_or(0);
  for (const auto& doc : corpus.documents()) {
    auto it = corpus.embeddings.find(doc.id);
    if (it == corpus.embeddings.end()) {
      throw InputError("missing embedding for style document '" + doc.id + "'");
    }
    pool.ids.push_back(doc.id);
    pool.vectors.push_back(document_vector(it->second));
  }
  return pool;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<Neighbor> topk_similar(std::span<const double> query, const EmbeddingPool& pool,
                                   std::size_t k, bool* truncated) {
  if (pool.ids.empty()) throw InputError("similarity pool is empty");
  if (query.size() != pool.dimension) {
    throw InputError("query dimension " + std::to_string(query.size()) +
                     " does not match pool dimension " + std::to_string(pool.dimension));
  }
  std::vector<Neighbor> all(pool.ids.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i] = Neighbor{pool.ids[i], cosine_similarity(query, pool.vectors[i])};
  }
  const std::size_t take = std::min(k, all.size());
  if (truncated) *truncated = k > all.size();
  auto better = [](const Neighbor& a, const Neighbor& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.id < b.id;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    better);
  all.resize(take);
  return all;
}

JudgmentSet AugmentResult::judgments() const {
  JudgmentSet out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.judgment);
  return out;
}

AugmentResult augment_pairs(const Corpus& external, const Corpus& style,
                            const Discriminator& discriminator, const AugmentConfig& config) {
  if (config.k < 1) throw InputError("augmentation needs k >= 1");
  if (!(config.min_score > 0 && config.min_score < 1)) {
    throw InputError("min_score must lie in (0,1)");
  }
  AugmentResult result;
  if (external.size() == 0) return result;

  const auto pool = EmbeddingPool::from_corpus(style);
  std::vector<const Document*> candidates;
  for (const auto& d : external.documents()) candidates.push_back(&d);
  std::sort(candidates.begin(), candidates.end(),
            [](const Document* a, const Document* b) { return a->id < b->id; });

  std::vector<std::vector<GeneratedPair>> found(candidates.size());
  parallel_for(candidates.size(), [&](std::size_t c) {
    const auto& cand = *candidates[c];
    auto it = external.embeddings.find(cand.id);
    if (it == external.embeddings.end()) {
      throw InputError("missing embedding for candidate '" + cand.id + "'");
    }
    const auto query = document_vector(it->second);
    for (const auto& nb : topk_similar(query, pool, config.k)) {
      const auto& neighbor = style.document(nb.id);
      const double s = discriminator.score(cand, neighbor);
      if (s > config.min_score) {
        GeneratedPair g;
        g.judgment.pair_id = "aug:" + cand.id + ":" + neighbor.id;
        g.judgment.a_id = cand.id;
        g.judgment.b_id = neighbor.id;
        g.judgment.topic = neighbor.topic;
        g.judgment.prompt = neighbor.prompt;
        g.candidate_id = cand.id;
        g.neighbor_id = neighbor.id;
        g.similarity = nb.similarity;
        g.score = s;
        found[c].push_back(std::move(g));
      }
    }
  });

  result.candidates_scanned = candidates.size();
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (found[c].empty()) continue;
    ++result.qualifying_candidates;
    bool used = false;
    for (auto& g : found[c]) {
      if (config.max_new_pairs && result.pairs.size() >= config.max_new_pairs) {
        result.capped = true;
        break;
      }
      result.pairs.push_back(std::move(g));
      used = true;
    }
    if (used) {
      Document doc = *candidates[c];
      doc.source = DocumentSource::generated;
      result.documents.push_back(std::move(doc));
    }
    if (result.capped) break;
  }
  return result;
}

AugmentReport augment_report(const AugmentResult& result) {
  AugmentReport r;
  r.candidates_scanned = result.candidates_scanned;
  r.pairs_added = result.pairs.size();
  for (const auto& p : result.pairs) ++r.per_topic[p.judgment.topic];
  return r;
}

void save_augmentation(const AugmentResult& result, const std::filesystem::path& judgments_path,
                       const std::filesystem::path& sidecar_path) {
  save_judgments(result.judgments(), judgments_path);
  if (sidecar_path.has_parent_path()) std::filesystem::create_directories(sidecar_path.parent_path());
  std::ofstream out(sidecar_path, std::ios::binary);
  if (!out) throw InputError("cannot write " + sidecar_path.string());
  out << "candidate_id\tneighbor_id\tsimilarity\tscore\n";
  for (const auto& p : result.pairs) {
    out << p.candidate_id << '\t' << p.neighbor_id << '\t' << format_double(p.similarity) << '\t'
        << format_double(p.score) << '\n';
  }
}

Corpus merge_augmented(const Corpus& style, const AugmentResult& result) {
  Corpus merged;
  for (const auto& d : style.documents()) merged.add_document(d);
  for (const auto& d : result.documents) {
    Document copy = d;
    // The candidate keeps its text; its topic follows the pairs it joined.
    copy.topic.clear();
    merged.add_document(std::move(copy));
  }
  merged.judgments = style.judgments;
  for (const auto& p : result.pairs) {
    merged.validate(p.judgment);
    merged.judgments.push_back(p.judgment);
  }
  merged.annotations = style.annotations;
  for (const auto& [id, seq] : style.embeddings) merged.attach_embedding(seq);
  return merged;
}

}  // namespace stylefuse::augment
