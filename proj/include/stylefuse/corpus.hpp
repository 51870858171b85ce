#ifndef STYLEFUSE_CORPUS_HPP
#define STYLEFUSE_CORPUS_HPP

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stylefuse/common.hpp"

namespace stylefuse {

enum class DocumentSource { style_corpus, external_corpus, generated };

std::string to_string(DocumentSource s);
DocumentSource parse_document_source(const std::string& s);

using TokenList = std::vector<std::string>;

struct Document {
  std::string id;
  std::string text;
  std::string topic;
  /// Sentence-split surface tokens. Filled by segment() when not supplied.
  std::vector<TokenList> sentences;
  DocumentSource source = DocumentSource::style_corpus;
  /// Generation prompt, when the dataset provides one.
  std::optional<std::string> prompt;

  /// All surface tokens in order.
  TokenList tokens() const;
};

/// One CoNLL-U token row. `head` is 1-based within the sentence, 0 = root.
struct AnnotatedToken {
  std::string surface;
  std::string lemma;
  std::string upos;
  std::string xpos;
  std::string feats;
  std::size_t head = 0;
  std::string deprel;
  std::string ner;  // "O" when none
  std::string misc;

  /// Value of `key` in the FEATS column ("Tense=Past|VerbForm=Fin").
  std::optional<std::string> feat(const std::string& key) const;
  /// Value of `key` in the MISC column.
  std::optional<std::string> misc_value(const std::string& key) const;
};

using AnnotatedSentence = std::vector<AnnotatedToken>;

enum class EmbeddingUnit { token, sentence };

std::string to_string(EmbeddingUnit u);
EmbeddingUnit parse_embedding_unit(const std::string& s);

struct EmbeddingSequence {
  std::string document_id;
  EmbeddingUnit unit = EmbeddingUnit::sentence;
  std::size_t dimension = 0;
  std::vector<std::vector<double>> vectors;
};

/// A single audience comparison; `a_id` names the text judged more styled.
struct PairJudgment {
  std::string pair_id;
  std::string a_id;
  std::string b_id;
  std::string topic;
  bool tie = false;
  std::optional<std::string> prompt;

  friend bool operator==(const PairJudgment&, const PairJudgment&) = default;
};

using JudgmentSet = std::vector<PairJudgment>;

/// Documents plus everything attached to them. Insertion order of
/// documents is preserved; lookups go through an id index.
class Corpus {
 public:
  /// Adds a document; throws InputError on an empty or duplicate id.
  void add_document(Document doc);

  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  const Document& document(const std::string& id) const;
  const std::vector<Document>& documents() const noexcept { return documents_; }
  std::size_t size() const noexcept { return documents_.size(); }

  JudgmentSet judgments;
  std::map<std::string, std::vector<AnnotatedSentence>> annotations;
  std::map<std::string, EmbeddingSequence> embeddings;

  /// Shared embedding dimension once any embedding is attached.
  std::optional<std::size_t> embedding_dimension;
  std::optional<EmbeddingUnit> embedding_unit;

  /// Attaches an embedding after checking the corpus-wide dimension and
  /// unit, finiteness, and that the document exists.
  void attach_embedding(EmbeddingSequence seq);

  /// Checks that a judgment resolves against this corpus.
  void validate(const PairJudgment& j) const;

 private:
  std::vector<Document> documents_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Text segmentation ---------------------------------------------------------

/// Splits text into word and punctuation tokens. Words are maximal runs of
/// letters, digits, apostrophes and inner hyphens; every other
/// non-space character is a token of its own.
TokenList tokenize(const std::string& text);

/// Rule-based sentence splitter: a sentence ends at a run of '.', '!' or
/// '?' tokens. Trailing tokens without terminal punctuation form a final
/// sentence.
std::vector<TokenList> split_sentences(const TokenList& tokens);

/// Fills doc.sentences from doc.text when empty.
void segment(Document& doc);

/// Joins tokens with single spaces, without a space before punctuation.
std::string detokenize(const TokenList& tokens);

bool is_word_token(const std::string& token);
bool is_punctuation_token(const std::string& token);

// Interchange ---------------------------------------------------------------

/// documents.jsonl: {"id","text","topic","source"[,"prompt","sentences"]}.
Corpus load_documents(const std::filesystem::path& path);
void save_documents(const Corpus& corpus, const std::filesystem::path& path);

/// judgments.jsonl: {"pair_id","a_id","b_id","topic","tie"[,"prompt"]}.
JudgmentSet load_judgments(const std::filesystem::path& path, const Corpus& corpus);
void save_judgments(const JudgmentSet& judgments, const std::filesystem::path& path);

/// CoNLL-U with `# doc_id = <id>` comments. Returns the number of sentences
/// attached. NER tags travel in MISC as `NER=<tag>`.
std::size_t load_annotations(const std::filesystem::path& path, Corpus& corpus);
void save_annotations(const Corpus& corpus, const std::filesystem::path& path);

/// Embedding TSV with a `#dim <D> #unit <token|sentence>` header. Returns
/// the number of vectors attached.
std::size_t load_embeddings(const std::filesystem::path& path, Corpus& corpus);
void save_embeddings(const Corpus& corpus, const std::filesystem::path& path);

/// Parses a CoNLL-U stream into (doc_id, sentence) pairs without binding.
std::vector<std::pair<std::string, AnnotatedSentence>> parse_conllu(std::istream& in);

/// Checks head indices are in range and that exactly one token is the root.
void validate_sentence(const AnnotatedSentence& sentence);

// Protocol ------------------------------------------------------------------

struct TopicSplit {
  JudgmentSet train;
  JudgmentSet test;
};

/// Moves every judgment whose topic is in `holdout` into the test split.
TopicSplit split_holdout_topics(const JudgmentSet& judgments,
                                const std::set<std::string>& holdout);

std::set<std::string> topics_of(const JudgmentSet& judgments);

/// Non-tied judgments only.
JudgmentSet without_ties(const JudgmentSet& judgments);

}  // namespace stylefuse

#endif  // STYLEFUSE_CORPUS_HPP
