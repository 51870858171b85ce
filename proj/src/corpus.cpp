#include "stylefuse/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace stylefuse {

using nlohmann::json;

namespace {

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot read " + path.string());
  }
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write " + path.string());
  }
  return out;
}

std::string location(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line);
}

std::string required_string(const json& rec, const char* field,
                            const std::filesystem::path& path, std::size_t line) {
  auto it = rec.find(field);
  if (it == rec.end() || !it->is_string()) {
    throw InputError(location(path, line) + ": missing string field '" + field + "'");
  }
  return it->get<std::string>();
}

std::string strip_space(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (unsigned char c : s) {
    if (!std::isspace(c)) out.push_back(static_cast<char>(c));
  }
  return out;
}

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<std::string> key_value(const std::string& column, const std::string& key) {
  if (column.empty() || column == "_") return std::nullopt;
  std::size_t start = 0;
  while (start <= column.size()) {
    auto bar = column.find('|', start);
    auto item = column.substr(start, bar == std::string::npos ? std::string::npos : bar - start);
    auto eq = item.find('=');
    if (eq != std::string::npos && item.compare(0, eq, key) == 0 && eq == key.size()) {
      return item.substr(eq + 1);
    }
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(DocumentSource s) {
  switch (s) {
    case DocumentSource::style_corpus: return "style_corpus";
    case DocumentSource::external_corpus: return "external_corpus";
    case DocumentSource::generated: return "generated";
  }
  return "style_corpus";
}

DocumentSource parse_document_source(const std::string& s) {
  if (s == "style_corpus") return DocumentSource::style_corpus;
  if (s == "external_corpus") return DocumentSource::external_corpus;
  if (s == "generated") return DocumentSource::generated;
  throw InputError("unknown document source '" + s + "'");
}

std::string to_string(EmbeddingUnit u) {
  return u == EmbeddingUnit::token ? "token" : "sentence";
}

EmbeddingUnit parse_embedding_unit(const std::string& s) {
  if (s == "token") return EmbeddingUnit::token;
  if (s == "sentence") return EmbeddingUnit::sentence;
  throw InputError("unknown embedding unit '" + s + "'");
}

TokenList Document::tokens() const {
  TokenList out;
  for (const auto& s : sentences) out.insert(out.end(), s.begin(), s.end());
  return out;
}

std::optional<std::string> AnnotatedToken::feat(const std::string& key) const {
  return key_value(feats, key);
}

std::optional<std::string> AnnotatedToken::misc_value(const std::string& key) const {
  return key_value(misc, key);
}

// Corpus --------------------------------------------------------------------

void Corpus::add_document(Document doc) {
  if (doc.id.empty()) {
    throw InputError("document id must be nonempty");
  }
  if (index_.count(doc.id)) {
    throw InputError("duplicate document id '" + doc.id + "'");
  }
  if (doc.sentences.empty()) {
    segment(doc);
  } else {
    std::string joined;
    for (const auto& s : doc.sentences)
      for (const auto& t : s) joined += t;
    if (strip_space(joined) != strip_space(doc.text)) {
      throw InputError("sentences of '" + doc.id + "' do not concatenate to its text");
    }
  }
  index_.emplace(doc.id, documents_.size());
  documents_.push_back(std::move(doc));
}

const Document& Corpus::document(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) {
    throw InputError("unknown document id '" + id + "'");
  }
  return documents_[it->second];
}

void Corpus::attach_embedding(EmbeddingSequence seq) {
  if (!contains(seq.document_id)) {
    throw InputError("embedding references unknown document '" + seq.document_id + "'");
  }
  if (seq.dimension == 0) {
    throw InputError("embedding dimension must be positive");
  }
  if (embedding_dimension && *embedding_dimension != seq.dimension) {
    throw InputError("embedding dimension mismatch: corpus has " +
                     std::to_string(*embedding_dimension) + ", got " +
                     std::to_string(seq.dimension));
  }
  if (embedding_unit && *embedding_unit != seq.unit) {
    throw InputError("embedding unit mismatch for '" + seq.document_id + "'");
  }
  for (std::size_t i = 0; i < seq.vectors.size(); ++i) {
    if (seq.vectors[i].size() != seq.dimension) {
      throw InputError("embedding dimension mismatch in '" + seq.document_id + "' vector " +
                       std::to_string(i));
    }
    for (double v : seq.vectors[i]) {
      if (!std::isfinite(v)) {
        throw InputError("non-finite embedding entry in '" + seq.document_id + "' vector " +
                         std::to_string(i));
      }
    }
  }
  embedding_dimension = seq.dimension;
  embedding_unit = seq.unit;
  auto id = seq.document_id;
  embeddings[id] = std::move(seq);
}

void Corpus::validate(const PairJudgment& j) const {
  if (j.a_id == j.b_id) {
    throw InputError("judgment '" + j.pair_id + "' compares '" + j.a_id + "' with itself");
  }
  for (const auto* id : {&j.a_id, &j.b_id}) {
    if (!contains(*id)) {
      throw InputError("judgment '" + j.pair_id + "' references unknown document '" + *id + "'");
    }
    const auto& doc = document(*id);
    if (!doc.topic.empty() && !j.topic.empty() && doc.topic != j.topic) {
      throw InputError("judgment '" + j.pair_id + "' topic '" + j.topic +
                       "' does not match document '" + *id + "' topic '" + doc.topic + "'");
    }
  }
}

// Segmentation --------------------------------------------------------------

TokenList tokenize(const std::string& text) {
  TokenList out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    if (is_word_char(c)) {
      std::size_t j = i + 1;
      while (j < n) {
        const auto d = static_cast<unsigned char>(text[j]);
        if (is_word_char(d)) {
          ++j;
        } else if ((d == '\'' || d == '-') && j + 1 < n &&
                   is_word_char(static_cast<unsigned char>(text[j + 1]))) {
          j += 2;
        } else {
          break;
        }
      }
      out.push_back(text.substr(i, j - i));
      i = j;
    } else {
      out.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return out;
}

std::vector<TokenList> split_sentences(const TokenList& tokens) {
  std::vector<TokenList> out;
  TokenList current;
  auto terminal = [](const std::string& t) { return t == "." || t == "!" || t == "?"; };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    current.push_back(tokens[i]);
    if (terminal(tokens[i]) && (i + 1 == tokens.size() || !terminal(tokens[i + 1]))) {
      out.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

void segment(Document& doc) { doc.sentences = split_sentences(tokenize(doc.text)); }

bool is_word_token(const std::string& token) {
  return std::any_of(token.begin(), token.end(),
                     [](char c) { return is_word_char(static_cast<unsigned char>(c)); });
}

bool is_punctuation_token(const std::string& token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
    return std::ispunct(static_cast<unsigned char>(c));
  });
}

std::string detokenize(const TokenList& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    const bool attach = is_punctuation_token(t) && t != "(" && t != "\"";
    if (!out.empty() && !attach) out.push_back(' ');
    out += t;
  }
  return out;
}

// documents.jsonl -----------------------------------------------------------

Corpus load_documents(const std::filesystem::path& path) {
  auto in = open_input(path);
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip_space(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(location(path, lineno) + ": malformed record: " + e.what());
    }
    if (!rec.is_object()) {
      throw InputError(location(path, lineno) + ": record is not an object");
    }
    Document doc;
    doc.id = required_string(rec, "id", path, lineno);
    doc.text = required_string(rec, "text", path, lineno);
    doc.topic = required_string(rec, "topic", path, lineno);
    try {
      doc.source = parse_document_source(required_string(rec, "source", path, lineno));
      if (auto it = rec.find("prompt"); it != rec.end() && it->is_string()) {
        doc.prompt = it->get<std::string>();
      }
      if (auto it = rec.find("sentences"); it != rec.end()) {
        doc.sentences = it->get<std::vector<TokenList>>();
      }
      corpus.add_document(std::move(doc));
    } catch (const json::exception& e) {
      throw InputError(location(path, lineno) + ": malformed record: " + e.what());
    } catch (const InputError& e) {
      throw InputError(location(path, lineno) + ": " + e.what());
    }
  }
  return corpus;
}

void save_documents(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& d : corpus.documents()) {
    json rec = {{"id", d.id},
                {"text", d.text},
                {"topic", d.topic},
                {"source", to_string(d.source)},
                {"sentences", d.sentences}};
    if (d.prompt) rec["prompt"] = *d.prompt;
    out << rec.dump() << '\n';
  }
}

// judgments.jsonl -----------------------------------------------------------

JudgmentSet load_judgments(const std::filesystem::path& path, const Corpus& corpus) {
  auto in = open_input(path);
  JudgmentSet out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip_space(line).empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError(location(path, lineno) + ": malformed record: " + e.what());
    }
    PairJudgment j;
    j.pair_id = required_string(rec, "pair_id", path, lineno);
    j.a_id = required_string(rec, "a_id", path, lineno);
    j.b_id = required_string(rec, "b_id", path, lineno);
    j.topic = required_string(rec, "topic", path, lineno);
    if (auto it = rec.find("tie"); it != rec.end()) {
      if (!it->is_boolean()) {
        throw InputError(location(path, lineno) + ": field 'tie' must be boolean");
      }
      j.tie = it->get<bool>();
    }
    if (auto it = rec.find("prompt"); it != rec.end() && it->is_string()) {
      j.prompt = it->get<std::string>();
    }
    try {
      corpus.validate(j);
    } catch (const InputError& e) {
      throw InputError(location(path, lineno) + ": " + e.what());
    }
    out.push_back(std::move(j));
  }
  return out;
}

void save_judgments(const JudgmentSet& judgments, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& j : judgments) {
    json rec = {{"pair_id", j.pair_id}, {"a_id", j.a_id}, {"b_id", j.b_id},
                {"topic", j.topic},     {"tie", j.tie}};
    if (j.prompt) rec["prompt"] = *j.prompt;
    out << rec.dump() << '\n';
  }
}

// CoNLL-U -------------------------------------------------------------------

void validate_sentence(const AnnotatedSentence& sentence) {
  std::size_t roots = 0;
  for (const auto& tok : sentence) {
    if (tok.head > sentence.size()) {
      throw InputError("head index " + std::to_string(tok.head) + " out of range for '" +
                       tok.surface + "'");
    }
    if (tok.head == 0) ++roots;
  }
  if (!sentence.empty() && roots != 1) {
    throw InputError("sentence has " + std::to_string(roots) + " roots, expected 1");
  }
}

std::vector<std::pair<std::string, AnnotatedSentence>> parse_conllu(std::istream& in) {
  std::vector<std::pair<std::string, AnnotatedSentence>> out;
  std::string doc_id;
  AnnotatedSentence current;
  std::string line;
  std::size_t lineno = 0;
  auto flush = [&] {
    if (current.empty()) return;
    if (doc_id.empty()) {
      throw InputError("line " + std::to_string(lineno) + ": sentence without '# doc_id'");
    }
    try {
      validate_sentence(current);
    } catch (const InputError& e) {
      throw InputError("line " + std::to_string(lineno) + ": " + e.what());
    }
    out.emplace_back(doc_id, std::move(current));
    current.clear();
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    if (line[0] == '#') {
      const std::string key = "# doc_id =";
      if (line.compare(0, key.size(), key) == 0) {
        flush();
        auto value = line.substr(key.size());
        auto b = value.find_first_not_of(' ');
        auto e = value.find_last_not_of(' ');
        doc_id = b == std::string::npos ? "" : value.substr(b, e - b + 1);
      }
      continue;
    }
    auto cols = split_tabs(line);
    if (cols.size() != 10) {
      throw InputError("line " + std::to_string(lineno) + ": expected 10 CoNLL-U columns, got " +
                       std::to_string(cols.size()));
    }
    // Multiword ranges and empty nodes carry no head.
    if (cols[0].find_first_of("-.") != std::string::npos) continue;
    AnnotatedToken tok;
    tok.surface = cols[1];
    tok.lemma = cols[2];
    tok.upos = cols[3];
    tok.xpos = cols[4];
    tok.feats = cols[5];
    std::size_t head = 0;
    auto [ptr, ec] = std::from_chars(cols[6].data(), cols[6].data() + cols[6].size(), head);
    if (ec != std::errc() || ptr != cols[6].data() + cols[6].size()) {
      throw InputError("line " + std::to_string(lineno) + ": bad head '" + cols[6] + "'");
    }
    tok.head = head;
    tok.deprel = cols[7];
    tok.misc = cols[9];
    tok.ner = tok.misc_value("NER").value_or("O");
    current.push_back(std::move(tok));
  }
  flush();
  return out;
}

std::size_t load_annotations(const std::filesystem::path& path, Corpus& corpus) {
  auto in = open_input(path);
  std::vector<std::pair<std::string, AnnotatedSentence>> parsed;
  try {
    parsed = parse_conllu(in);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  std::map<std::string, std::vector<AnnotatedSentence>> grouped;
  for (auto& [id, sentence] : parsed) {
    if (!corpus.contains(id)) {
      throw InputError(path.string() + ": annotation references unknown document '" + id + "'");
    }
    grouped[id].push_back(std::move(sentence));
  }
  for (auto& [id, sentences] : grouped) corpus.annotations[id] = std::move(sentences);
  return parsed.size();
}

void save_annotations(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_output(path);
  auto col = [](const std::string& s) { return s.empty() ? std::string("_") : s; };
  // The entity tag travels in MISC; add it when only the field carries it.
  auto misc = [&](const AnnotatedToken& t) {
    if (t.ner.empty() || t.ner == "O" || t.misc_value("NER")) return col(t.misc);
    const std::string tag = "NER=" + t.ner;
    return t.misc.empty() || t.misc == "_" ? tag : t.misc + "|" + tag;
  };
  for (const auto& [id, sentences] : corpus.annotations) {
    for (const auto& sentence : sentences) {
      out << "# doc_id = " << id << '\n';
      for (std::size_t i = 0; i < sentence.size(); ++i) {
        const auto& t = sentence[i];
        out << (i + 1) << '\t' << col(t.surface) << '\t' << col(t.lemma) << '\t' << col(t.upos)
            << '\t' << col(t.xpos) << '\t' << col(t.feats) << '\t' << t.head << '\t'
            << col(t.deprel) << "\t_\t" << misc(t) << '\n';
      }
      out << '\n';
    }
  }
}

// Embedding TSV -------------------------------------------------------------

std::size_t load_embeddings(const std::filesystem::path& path, Corpus& corpus) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) {
    throw InputError(path.string() + ": empty embedding file");
  }
  std::size_t dim = 0;
  EmbeddingUnit unit;
  {
    std::istringstream header(line);
    std::string dim_tag, unit_tag, unit_name;
    if (!(header >> dim_tag >> dim >> unit_tag >> unit_name) || dim_tag != "#dim" ||
        unit_tag != "#unit" || dim == 0) {
      throw InputError(location(path, 1) + ": expected header '#dim <D> #unit <token|sentence>'");
    }
    unit = parse_embedding_unit(unit_name);
  }
  std::map<std::string, std::map<std::size_t, std::vector<double>>> rows;
  std::size_t lineno = 1;
  std::size_t count = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (strip_space(line).empty()) continue;
    auto tab1 = line.find('\t');
    auto tab2 = tab1 == std::string::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string::npos) {
      throw InputError(location(path, lineno) + ": expected '<doc_id>\\t<idx>\\t<values>'");
    }
    auto id = line.substr(0, tab1);
    std::size_t idx = 0;
    const char* first = line.data() + tab1 + 1;
    const char* last = line.data() + tab2;
    if (auto [p, ec] = std::from_chars(first, last, idx); ec != std::errc() || p != last) {
      throw InputError(location(path, lineno) + ": bad index");
    }
    std::vector<double> values;
    const char* cur = line.data() + tab2 + 1;
    const char* end = line.data() + line.size();
    while (cur < end) {
      while (cur < end && std::isspace(static_cast<unsigned char>(*cur))) ++cur;
      if (cur >= end) break;
      double v = 0;
      auto [p, ec] = std::from_chars(cur, end, v);
      if (ec != std::errc()) {
        // from_chars rejects "inf"/"nan" spellings only on some libraries;
        // either way the row is unusable.
        throw InputError(location(path, lineno) + ": malformed or non-finite value");
      }
      if (!std::isfinite(v)) {
        throw InputError(location(path, lineno) + ": non-finite embedding value");
      }
      values.push_back(v);
      cur = p;
    }
    if (values.size() != dim) {
      throw InputError(location(path, lineno) + ": dimension mismatch, header says " +
                       std::to_string(dim) + ", row has " + std::to_string(values.size()));
    }
    if (!corpus.contains(id)) {
      throw InputError(location(path, lineno) + ": unknown document '" + id + "'");
    }
    if (!rows[id].emplace(idx, std::move(values)).second) {
      throw InputError(location(path, lineno) + ": duplicate index for '" + id + "'");
    }
    ++count;
  }
  for (auto& [id, by_index] : rows) {
    EmbeddingSequence seq;
    seq.document_id = id;
    seq.unit = unit;
    seq.dimension = dim;
    std::size_t expect = 0;
    for (auto& [idx, v] : by_index) {
      if (idx != expect++) {
        throw InputError(path.string() + ": indices for '" + id + "' are not contiguous from 0");
      }
      seq.vectors.push_back(std::move(v));
    }
    corpus.attach_embedding(std::move(seq));
  }
  return count;
}

void save_embeddings(const Corpus& corpus, const std::filesystem::path& path) {
  auto out = open_output(path);
  const auto dim = corpus.embedding_dimension.value_or(0);
  const auto unit = corpus.embedding_unit.value_or(EmbeddingUnit::sentence);
  out << "#dim " << dim << " #unit " << to_string(unit) << '\n';
  for (const auto& [id, seq] : corpus.embeddings) {
    for (std::size_t i = 0; i < seq.vectors.size(); ++i) {
      out << id << '\t' << i;
      for (double v : seq.vectors[i]) out << '\t' << format_double(v);
      out << '\n';
    }
  }
}

// Protocol ------------------------------------------------------------------

std::set<std::string> topics_of(const JudgmentSet& judgments) {
  std::set<std::string> out;
  for (const auto& j : judgments) out.insert(j.topic);
  return out;
}

TopicSplit split_holdout_topics(const JudgmentSet& judgments,
                                const std::set<std::string>& holdout) {
  const auto known = topics_of(judgments);
  for (const auto& t : holdout) {
    if (!known.count(t)) {
      throw InputError("unknown holdout topic '" + t + "'");
    }
  }
  TopicSplit split;
  for (const auto& j : judgments) {
    (holdout.count(j.topic) ? split.test : split.train).push_back(j);
  }
  if (split.train.empty() && !judgments.empty()) {
    throw InputError("holding out every topic leaves an empty training split");
  }
  return split;
}

JudgmentSet without_ties(const JudgmentSet& judgments) {
  JudgmentSet out;
  std::copy_if(judgments.begin(), judgments.end(), std::back_inserter(out),
               [](const PairJudgment& j) { return !j.tie; });
  return out;
}

}  // namespace stylefuse
