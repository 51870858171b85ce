#include "stylefuse/features.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>

#ifndef STYLEFUSE_RESOURCE_DIR
#define STYLEFUSE_RESOURCE_DIR "resources"
#endif

namespace stylefuse {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string lower(const std::string& s) {
  std::string out = s;
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool has_letter(const std::string& s) {
  return std::any_of(s.begin(), s.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalpha(u) || u >= 0x80;
  });
}

std::size_t code_points(const std::string& s) {
  return static_cast<std::size_t>(std::count_if(
      s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

std::unordered_set<std::string> read_word_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw InputError("cannot read word list " + path.string());
  }
  std::unordered_set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (!line.empty()) out.insert(lower(line));
  }
  return out;
}

TokenList word_tokens(const std::vector<TokenList>& sentences) {
  TokenList out;
  for (const auto& s : sentences)
    for (const auto& t : s)
      if (is_word_token(t)) out.push_back(t);
  return out;
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::native: return "native";
    case Provenance::annotation_derived: return "annotation_derived";
    case Provenance::embedding_derived: return "embedding_derived";
    case Provenance::missing: return "missing";
  }
  return "missing";
}

// FeatureVector -------------------------------------------------------------

void FeatureVector::set(const std::string& name, double value, Provenance provenance) {
  if (!std::isfinite(value)) {
    set_missing(name);
    return;
  }
  values_[name] = FeatureValue{value, provenance};
}

void FeatureVector::set_missing(const std::string& name) {
  values_[name] = FeatureValue{kNaN, Provenance::missing};
}

const FeatureValue& FeatureVector::at(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end()) {
    throw InputError("feature '" + name + "' not present");
  }
  return it->second;
}

std::optional<double> FeatureVector::get(const std::string& name) const {
  auto it = values_.find(name);
  if (it == values_.end() || it->second.missing()) return std::nullopt;
  return it->second.value;
}

bool operator==(const FeatureVector& a, const FeatureVector& b) {
  if (a.values_.size() != b.values_.size()) return false;
  auto ia = a.values_.begin();
  auto ib = b.values_.begin();
  for (; ia != a.values_.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.provenance != ib->second.provenance) return false;
    if (!ia->second.missing() && ia->second.value != ib->second.value) return false;
  }
  return true;
}

// FeatureMatrix -------------------------------------------------------------

std::optional<std::size_t> FeatureMatrix::row_of(const std::string& id) const {
  auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids.begin());
}

std::optional<std::size_t> FeatureMatrix::column_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - names.begin());
}

double FeatureMatrix::value(const std::string& id, const std::string& feature) const {
  auto r = row_of(id);
  if (!r) throw InputError("feature matrix has no row for '" + id + "'");
  auto c = column_of(feature);
  if (!c) throw InputError("feature matrix has no column '" + feature + "'");
  return at(*r, *c);
}

std::vector<double> FeatureMatrix::standardize(const FeatureVector& v) const {
  std::vector<double> out(cols(), kNaN);
  for (std::size_t c = 0; c < cols(); ++c) {
    auto x = v.get(names[c]);
    if (!x) continue;
    if (standardized && !constant[c]) {
      out[c] = (*x - means[c]) / sds[c];
    } else {
      out[c] = *x;
    }
  }
  return out;
}

// Word lists ----------------------------------------------------------------

WordLists WordLists::load(const std::filesystem::path& dir) {
  WordLists lists;
  lists.dale_chall_easy = read_word_list(dir / "dale_chall_easy_words.txt");
  lists.frequent = read_word_list(dir / "frequent_words.txt");
  lists.dictionary = read_word_list(dir / "dictionary_words.txt");
  return lists;
}

const WordLists& WordLists::bundled() {
  static const WordLists lists = load(STYLEFUSE_RESOURCE_DIR);
  return lists;
}

// Text statistics -----------------------------------------------------------

std::size_t count_syllables(const std::string& word) {
  const std::string w = lower(word);
  auto vowel = [](char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u' || c == 'y';
  };
  std::size_t groups = 0;
  bool in_group = false;
  std::size_t last_group_start = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (vowel(w[i])) {
      if (!in_group) {
        ++groups;
        last_group_start = i;
      }
      in_group = true;
    } else {
      in_group = false;
    }
  }
  // Silent final "e": the last group is a lone 'e' ending the word.
  if (groups > 1 && in_group && last_group_start + 1 == w.size() && w.back() == 'e') {
    --groups;
  }
  return groups;
}

Readability readability(const std::vector<TokenList>& sentences, const WordLists& lists) {
  const auto words = word_tokens(sentences);
  std::size_t sentence_count = 0;
  for (const auto& s : sentences)
    if (!s.empty()) ++sentence_count;
  if (sentence_count == 0 || words.empty()) {
    throw InputError("readability needs at least one sentence and one word");
  }
  std::size_t syllables = 0, polysyllables = 0, difficult = 0;
  for (const auto& w : words) {
    const auto syl = count_syllables(w);
    syllables += syl;
    if (syl >= 3) ++polysyllables;
    if (!lists.dale_chall_easy.count(lower(w))) ++difficult;
  }
  const double n_words = static_cast<double>(words.size());
  const double n_sent = static_cast<double>(sentence_count);
  const double words_per_sentence = n_words / n_sent;
  const double syllables_per_word = static_cast<double>(syllables) / n_words;

  Readability r;
  r.flesch = 206.835 - 1.015 * words_per_sentence - 84.6 * syllables_per_word;
  r.flesch_kincaid = 0.39 * words_per_sentence + 11.8 * syllables_per_word - 15.59;
  r.gunning_fog = 0.4 * (words_per_sentence + 100.0 * static_cast<double>(polysyllables) / n_words);
  r.smog = 1.0430 * std::sqrt(static_cast<double>(polysyllables) * 30.0 / n_sent) + 3.1291;
  const double pct_difficult = 100.0 * static_cast<double>(difficult) / n_words;
  r.dale_chall = 0.1579 * pct_difficult + 0.0496 * words_per_sentence;
  if (pct_difficult > 5.0) r.dale_chall += 3.6365;
  return r;
}

LexicalDiversity lexical_diversity(const TokenList& tokens) {
  if (tokens.empty()) {
    throw InputError("lexical diversity needs at least one token");
  }
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& t : tokens) ++counts[lower(t)];
  const double n = static_cast<double>(tokens.size());
  const double v = static_cast<double>(counts.size());
  const auto hapax = static_cast<double>(
      std::count_if(counts.begin(), counts.end(), [](const auto& kv) { return kv.second == 1; }));
  LexicalDiversity d;
  d.ttr = v / n;
  if (hapax < v) {
    d.honore = 100.0 * std::log(n) / (1.0 - hapax / v);
  }
  d.brunet = std::pow(n, std::pow(v, -0.165));
  return d;
}

const std::vector<std::string>& annotation_feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {
        "noun_rate", "verb_rate", "demonstrative_rate", "adjective_rate", "adposition_rate",
        "adverb_rate", "auxiliary_rate", "conjunction_rate", "determiner_rate",
        "interjection_rate", "numeral_rate", "particle_rate", "pronoun_rate",
        "proper_noun_rate", "punctuation_rate", "subordinating_conjunction_rate", "symbol_rate",
        "possessive_rate", "noun_verb_ratio", "noun_ratio", "pronoun_noun_ratio",
        "closed_class_rate", "open_class_rate", "present_ratio", "past_ratio", "future_ratio",
        "inflected_verb_ratio", "auxiliary_verb_ratio", "gerund_ratio", "participle_ratio",
        "passive_count", "total_dependencies", "average_dependencies",
        "total_dependency_distance", "average_dependency_distance", "content_density",
        "idea_density", "mtcg_ratio", "alliteration_rate"};
    for (const char* tag : {"PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT",
                            "WORK_OF_ART", "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY",
                            "QUANTITY", "ORDINAL", "CARDINAL"}) {
      n.push_back(std::string("ner_") + lower(tag) + "_rate");
    }
    return n;
  }();
  return names;
}

std::map<std::string, std::optional<double>> annotation_rates(
    const std::vector<AnnotatedSentence>& sentences) {
  std::map<std::string, std::optional<double>> out;
  for (const auto& name : annotation_feature_names()) out[name] = std::nullopt;

  std::size_t tokens = 0;
  std::map<std::string, std::size_t> upos;
  std::size_t demonstratives = 0, possessives = 0, present = 0, past = 0, future = 0;
  std::size_t inflected = 0, gerunds = 0, participles = 0, passives = 0;
  std::size_t dependencies = 0;
  double dependency_distance = 0;
  std::size_t mtcg = 0, alliterative = 0;
  bool mtcg_tagged = false, alliteration_tagged = false;
  std::map<std::string, std::size_t> entities;

  for (const auto& sentence : sentences) {
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      const auto& tok = sentence[i];
      ++tokens;
      ++upos[tok.upos];
      const auto lemma = lower(tok.lemma);
      if (tok.feat("PronType") == "Dem" ||
          ((tok.upos == "DET" || tok.upos == "PRON") &&
           (lemma == "this" || lemma == "that" || lemma == "these" || lemma == "those"))) {
        ++demonstratives;
      }
      if (tok.feat("Poss") == "Yes" || tok.deprel == "nmod:poss" || tok.deprel == "poss") {
        ++possessives;
      }
      const bool verbal = tok.upos == "VERB" || tok.upos == "AUX";
      if (verbal) {
        const auto tense = tok.feat("Tense");
        if (tense == "Pres") ++present;
        if (tense == "Past") ++past;
        if (tok.upos == "AUX" && (lemma == "will" || lemma == "shall")) ++future;
      }
      if (tok.upos == "VERB") {
        if (lower(tok.surface) != lemma) ++inflected;
        if (tok.feat("VerbForm") == "Ger" || tok.xpos == "VBG") ++gerunds;
        if (tok.feat("VerbForm") == "Part" || tok.xpos == "VBN") ++participles;
      }
      if (tok.deprel == "aux:pass" || tok.deprel == "auxpass") ++passives;
      ++dependencies;
      const auto position = static_cast<double>(i + 1);
      dependency_distance += std::abs(position - static_cast<double>(tok.head));
      if (!tok.ner.empty() && tok.ner != "O" && tok.ner != "_") {
        auto tag = tok.ner;
        if (tag.size() > 2 && (tag[0] == 'B' || tag[0] == 'I') && tag[1] == '-') {
          tag = tag.substr(2);
        }
        ++entities[lower(tag)];
      }
      if (auto m = tok.misc_value("MTCG")) {
        mtcg_tagged = true;
        if (*m != "O") ++mtcg;
      }
      if (auto a = tok.misc_value("ALLIT")) {
        alliteration_tagged = true;
        if (*a == "Yes") ++alliterative;
      }
    }
  }
  if (tokens == 0) return out;

  const double n = static_cast<double>(tokens);
  auto count = [&](const char* tag) {
    auto it = upos.find(tag);
    return it == upos.end() ? 0.0 : static_cast<double>(it->second);
  };
  auto ratio = [](double num, double den) -> std::optional<double> {
    if (den <= 0) return std::nullopt;
    return num / den;
  };
  const double nouns = count("NOUN"), verbs = count("VERB"), aux = count("AUX");
  const double pronouns = count("PRON"), punct = count("PUNCT");
  out["noun_rate"] = nouns / n;
  out["verb_rate"] = verbs / n;
  out["demonstrative_rate"] = static_cast<double>(demonstratives) / n;
  out["adjective_rate"] = count("ADJ") / n;
  out["adposition_rate"] = count("ADP") / n;
  out["adverb_rate"] = count("ADV") / n;
  out["auxiliary_rate"] = aux / n;
  out["conjunction_rate"] = count("CCONJ") / n;
  out["determiner_rate"] = count("DET") / n;
  out["interjection_rate"] = count("INTJ") / n;
  out["numeral_rate"] = count("NUM") / n;
  out["particle_rate"] = count("PART") / n;
  out["pronoun_rate"] = pronouns / n;
  out["proper_noun_rate"] = count("PROPN") / n;
  out["punctuation_rate"] = punct / n;
  out["subordinating_conjunction_rate"] = count("SCONJ") / n;
  out["symbol_rate"] = count("SYM") / n;
  out["possessive_rate"] = static_cast<double>(possessives) / n;
  out["noun_verb_ratio"] = ratio(nouns, verbs);
  out["noun_ratio"] = ratio(nouns, nouns + verbs);
  out["pronoun_noun_ratio"] = ratio(pronouns, nouns);
  double closed = 0, open = 0;
  for (const char* t : {"ADP", "AUX", "CCONJ", "DET", "NUM", "PART", "PRON", "SCONJ"})
    closed += count(t);
  for (const char* t : {"ADJ", "ADV", "INTJ", "NOUN", "PROPN", "VERB"}) open += count(t);
  out["closed_class_rate"] = closed / n;
  out["open_class_rate"] = open / n;
  out["present_ratio"] = ratio(static_cast<double>(present), verbs + aux);
  out["past_ratio"] = ratio(static_cast<double>(past), verbs + aux);
  out["future_ratio"] = ratio(static_cast<double>(future), verbs + aux);
  out["inflected_verb_ratio"] = ratio(static_cast<double>(inflected), verbs);
  out["auxiliary_verb_ratio"] = ratio(aux, verbs + aux);
  out["gerund_ratio"] = ratio(static_cast<double>(gerunds), verbs);
  out["participle_ratio"] = ratio(static_cast<double>(participles), verbs);
  out["passive_count"] = static_cast<double>(passives);
  out["total_dependencies"] = static_cast<double>(dependencies);
  out["average_dependencies"] =
      static_cast<double>(dependencies) / static_cast<double>(sentences.size());
  out["total_dependency_distance"] = dependency_distance;
  out["average_dependency_distance"] = dependency_distance / static_cast<double>(dependencies);
  // Experimental: propositional density approximations.
  out["content_density"] = ratio(open, closed);
  const double words = n - punct;
  const double propositions =
      verbs + count("ADJ") + count("ADV") + count("ADP") + count("CCONJ") + count("SCONJ");
  out["idea_density"] = ratio(propositions, words);
  if (mtcg_tagged) out["mtcg_ratio"] = ratio(static_cast<double>(mtcg), verbs + aux);
  if (alliteration_tagged) out["alliteration_rate"] = ratio(static_cast<double>(alliterative), words);
  for (const auto& [tag, c] : entities) {
    auto key = "ner_" + tag + "_rate";
    if (out.count(key)) out[key] = static_cast<double>(c) / n;
  }
  for (const auto& name : annotation_feature_names()) {
    if (name.rfind("ner_", 0) == 0 && !out[name]) out[name] = 0.0;
  }
  return out;
}

// Embedding trajectories ----------------------------------------------------

double path_length(const std::vector<std::vector<double>>& points) {
  double total = 0;
  for (std::size_t i = 1; i < points.size(); ++i) total += euclidean(points[i - 1], points[i]);
  return total;
}

namespace {

HamiltonianPath held_karp(const std::vector<std::vector<double>>& pts) {
  const std::size_t n = pts.size();
  std::vector<double> dist(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist[i * n + j] = euclidean(pts[i], pts[j]);

  const std::size_t full = (std::size_t{1} << n) - 1;
  const double inf = std::numeric_limits<double>::infinity();
  // cost[mask * n + j]: shortest path visiting `mask` that ends at j.
  std::vector<double> cost((full + 1) * n, inf);
  std::vector<std::uint8_t> parent((full + 1) * n, 0xFF);
  for (std::size_t j = 0; j < n; ++j) cost[(std::size_t{1} << j) * n + j] = 0;
  for (std::size_t mask = 1; mask <= full; ++mask) {
    for (std::size_t j = 0; j < n; ++j) {
      if (!(mask & (std::size_t{1} << j))) continue;
      const double here = cost[mask * n + j];
      if (here == inf) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (mask & (std::size_t{1} << k)) continue;
        const std::size_t next = mask | (std::size_t{1} << k);
        const double c = here + dist[j * n + k];
        if (c < cost[next * n + k]) {
          cost[next * n + k] = c;
          parent[next * n + k] = static_cast<std::uint8_t>(j);
        }
      }
    }
  }
  std::size_t end = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (cost[full * n + j] < cost[full * n + end]) end = j;

  HamiltonianPath out;
  out.length = cost[full * n + end];
  std::size_t mask = full, j = end;
  while (true) {
    out.order.push_back(j);
    const auto p = parent[mask * n + j];
    if (p == 0xFF) break;
    mask &= ~(std::size_t{1} << j);
    j = p;
  }
  std::reverse(out.order.begin(), out.order.end());
  return out;
}

HamiltonianPath nearest_neighbor_two_opt(const std::vector<std::vector<double>>& pts) {
  const std::size_t n = pts.size();
  auto d = [&](std::size_t a, std::size_t b) { return euclidean(pts[a], pts[b]); };
  auto length = [&](const std::vector<std::size_t>& order) {
    double s = 0;
    for (std::size_t i = 1; i < order.size(); ++i) s += d(order[i - 1], order[i]);
    return s;
  };

  HamiltonianPath best;
  best.length = std::numeric_limits<double>::infinity();
  best.approximate = true;
  for (std::size_t start = 0; start < n; ++start) {
    std::vector<std::size_t> order{start};
    std::vector<bool> used(n, false);
    used[start] = true;
    for (std::size_t step = 1; step < n; ++step) {
      std::size_t pick = n;
      double pick_d = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) {
        if (!used[k] && d(order.back(), k) < pick_d) {
          pick = k;
          pick_d = d(order.back(), k);
        }
      }
      used[pick] = true;
      order.push_back(pick);
    }
    // 2-opt on an open path: reversing order[i..k] replaces the edges
    // entering i and leaving k; a missing edge at either end costs 0.
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
          double before = 0, after = 0;
          if (i > 0) {
            before += d(order[i - 1], order[i]);
            after += d(order[i - 1], order[k]);
          }
          if (k + 1 < n) {
            before += d(order[k], order[k + 1]);
            after += d(order[i], order[k + 1]);
          }
          if (after < before - 1e-12) {
            std::reverse(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(k) + 1);
            improved = true;
          }
        }
      }
    }
    const double len = length(order);
    if (len < best.length) {
      best.length = len;
      best.order = order;
    }
  }
  return best;
}

}  // namespace

HamiltonianPath shortest_hamiltonian_path(const std::vector<std::vector<double>>& points) {
  const std::size_t n = points.size();
  if (n < 2) {
    HamiltonianPath trivial;
    if (n == 1) trivial.order = {0};
    return trivial;
  }
  if (n <= 12) return held_karp(points);
  return nearest_neighbor_two_opt(points);
}

TrajectoryFeatures trajectory_features(const EmbeddingSequence& seq) {
  const auto& v = seq.vectors;
  if (v.empty()) {
    throw InputError("trajectory features need at least one vector");
  }
  TrajectoryFeatures out;
  const std::size_t n = v.size();
  if (n == 1) return out;

  out.speed = path_length(v) / static_cast<double>(n);

  const std::size_t dim = v.front().size();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < dim; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[i][j];
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov, Eigen::EigenvaluesOnly);
  // Eigenvalues ascend; the leading d' are the projected covariance spectrum.
  const auto& eig = solver.eigenvalues();
  const std::size_t keep = std::min({std::size_t{5}, n - 1, dim});
  constexpr double eps = 1e-8;
  double log_det = 0;
  for (std::size_t k = 0; k < keep; ++k) {
    const double lambda = std::max(0.0, eig(static_cast<Eigen::Index>(dim - 1 - k)));
    log_det += std::log(lambda + eps);
  }
  out.volume = std::exp(0.5 * log_det);

  if (n >= 3) {
    const double shortest = shortest_hamiltonian_path(v).length;
    if (shortest > 0) out.circuitousness = path_length(v) / shortest;
  }
  return out;
}

// Extraction ----------------------------------------------------------------

const std::vector<std::string>& native_feature_names() {
  static const std::vector<std::string> names = {
      "length",      "word_count",     "sentence_count", "avg_word_length", "avg_syllables",
      "flesch",      "flesch_kincaid", "gunning_fog",    "smog",            "dale_chall",
      "ttr",         "honore",         "brunet",         "jargon_ratio",    "misspelling_ratio"};
  return names;
}

const std::vector<std::string>& embedding_feature_names() {
  static const std::vector<std::string> names = {"speed", "volume", "circuitousness"};
  return names;
}

const std::vector<std::string>& supported_features() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> all = native_feature_names();
    const auto& ann = annotation_feature_names();
    all.insert(all.end(), ann.begin(), ann.end());
    const auto& emb = embedding_feature_names();
    all.insert(all.end(), emb.begin(), emb.end());
    return all;
  }();
  return names;
}

std::vector<std::string> default_registry() { return native_feature_names(); }

void validate_registry(const std::vector<std::string>& registry) {
  const auto& all = supported_features();
  for (const auto& name : registry) {
    if (std::find(all.begin(), all.end(), name) == all.end()) {
      throw InputError("unsupported feature '" + name + "'");
    }
  }
}

FeatureExtractor::FeatureExtractor(std::vector<std::string> registry, const WordLists& lists)
    : registry_(std::move(registry)), lists_(&lists) {
  validate_registry(registry_);
  const auto& nat = native_feature_names();
  const auto& emb = embedding_feature_names();
  for (const auto& name : registry_) {
    if (std::find(nat.begin(), nat.end(), name) != nat.end()) {
      needs_native_ = true;
    } else if (std::find(emb.begin(), emb.end(), name) != emb.end()) {
      needs_embedding_ = true;
    } else {
      needs_annotation_ = true;
    }
  }
}

void FeatureExtractor::set_token_lexicon(
    std::unordered_map<std::string, std::vector<double>> lexicon) {
  lexicon_ = std::move(lexicon);
}

FeatureVector FeatureExtractor::extract(const Document& doc, const Corpus* corpus) const {
  FeatureVector all;
  if (needs_native_) {
    const auto words = word_tokens(doc.sentences);
    const auto native = Provenance::native;
    all.set("length", static_cast<double>(code_points(doc.text)), native);
    all.set("word_count", static_cast<double>(words.size()), native);
    all.set("sentence_count", static_cast<double>(doc.sentences.size()), native);
    if (words.empty()) {
      for (const auto& name : native_feature_names()) {
        if (name != "length" && name != "word_count" && name != "sentence_count") {
          all.set_missing(name);
        }
      }
    } else {
      double letters = 0, syllables = 0, jargon = 0, misspelled = 0;
      for (const auto& w : words) {
        letters += static_cast<double>(code_points(w));
        syllables += static_cast<double>(count_syllables(w));
        if (has_letter(w)) {
          const auto lw = lower(w);
          if (!lists_->frequent.count(lw)) ++jargon;
          if (!lists_->dictionary.count(lw)) ++misspelled;
        }
      }
      const double nw = static_cast<double>(words.size());
      all.set("avg_word_length", letters / nw, native);
      all.set("avg_syllables", syllables / nw, native);
      const auto r = readability(doc.sentences, *lists_);
      all.set("flesch", r.flesch, native);
      all.set("flesch_kincaid", r.flesch_kincaid, native);
      all.set("gunning_fog", r.gunning_fog, native);
      all.set("smog", r.smog, native);
      all.set("dale_chall", r.dale_chall, native);
      const auto lex = lexical_diversity(words);
      all.set("ttr", lex.ttr, native);
      if (lex.honore) {
        all.set("honore", *lex.honore, native);
      } else {
        all.set_missing("honore");
      }
      all.set("brunet", lex.brunet, native);
      all.set("jargon_ratio", jargon / nw, native);
      all.set("misspelling_ratio", misspelled / nw, native);
    }
  }
  if (needs_annotation_) {
    const std::vector<AnnotatedSentence>* sentences = nullptr;
    if (corpus) {
      if (auto it = corpus->annotations.find(doc.id); it != corpus->annotations.end()) {
        sentences = &it->second;
      }
    }
    if (sentences) {
      for (const auto& [name, value] : annotation_rates(*sentences)) {
        if (value) {
          all.set(name, *value, Provenance::annotation_derived);
        } else {
          all.set_missing(name);
        }
      }
    } else {
      for (const auto& name : annotation_feature_names()) all.set_missing(name);
    }
  }
  if (needs_embedding_) {
    std::optional<EmbeddingSequence> seq;
    if (corpus) {
      if (auto it = corpus->embeddings.find(doc.id); it != corpus->embeddings.end()) {
        seq = it->second;
      }
    }
    if (!seq && !lexicon_.empty()) {
      EmbeddingSequence built;
      built.document_id = doc.id;
      built.unit = EmbeddingUnit::token;
      for (const auto& tok : doc.tokens()) {
        auto it = lexicon_.find(lower(tok));
        if (it != lexicon_.end()) built.vectors.push_back(it->second);
      }
      if (!built.vectors.empty()) {
        built.dimension = built.vectors.front().size();
        seq = std::move(built);
      }
    }
    if (seq && !seq->vectors.empty()) {
      const auto t = trajectory_features(*seq);
      all.set("speed", t.speed, Provenance::embedding_derived);
      all.set("volume", t.volume, Provenance::embedding_derived);
      if (t.circuitousness) {
        all.set("circuitousness", *t.circuitousness, Provenance::embedding_derived);
      } else {
        all.set_missing("circuitousness");
      }
    } else {
      for (const auto& name : embedding_feature_names()) all.set_missing(name);
    }
  }

  FeatureVector out;
  for (const auto& name : registry_) {
    const auto& v = all.at(name);
    if (v.missing()) {
      out.set_missing(name);
    } else {
      out.set(name, v.value, v.provenance);
    }
  }
  return out;
}

FeatureVector FeatureExtractor::extract_text(const std::string& text) const {
  Document doc;
  doc.id = "<text>";
  doc.text = text;
  segment(doc);
  return extract(doc, nullptr);
}

std::unordered_map<std::string, std::vector<double>> build_token_lexicon(const Corpus& corpus) {
  std::unordered_map<std::string, std::vector<double>> sums;
  std::unordered_map<std::string, double> counts;
  if (corpus.embedding_unit != EmbeddingUnit::token) return {};
  for (const auto& [id, seq] : corpus.embeddings) {
    const auto tokens = corpus.document(id).tokens();
    const std::size_t n = std::min(tokens.size(), seq.vectors.size());
    for (std::size_t i = 0; i < n; ++i) {
      const auto key = lower(tokens[i]);
      auto& sum = sums[key];
      if (sum.empty()) sum.assign(seq.dimension, 0.0);
      for (std::size_t d = 0; d < seq.dimension; ++d) sum[d] += seq.vectors[i][d];
      counts[key] += 1.0;
    }
  }
  for (auto& [key, sum] : sums)
    for (auto& x : sum) x /= counts[key];
  return sums;
}

FeatureVector extract_features(const Document& doc, const Corpus& corpus,
                               const std::vector<std::string>& registry, const WordLists& lists) {
  return FeatureExtractor(registry, lists).extract(doc, &corpus);
}

void standardize_matrix(FeatureMatrix& m) {
  if (m.rows() < 2) {
    throw InputError("standardization needs at least two documents");
  }
  m.means.assign(m.cols(), 0.0);
  m.sds.assign(m.cols(), 1.0);
  m.constant.assign(m.cols(), false);
  for (std::size_t c = 0; c < m.cols(); ++c) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      if (!std::isnan(m.at(r, c))) {
        sum += m.at(r, c);
        ++n;
      }
    }
    if (n < 2) {
      m.constant[c] = true;
      m.means[c] = n ? sum : 0.0;
      continue;
    }
    const double mean = sum / static_cast<double>(n);
    double ss = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      if (!std::isnan(m.at(r, c))) ss += (m.at(r, c) - mean) * (m.at(r, c) - mean);
    }
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    m.means[c] = mean;
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      m.constant[c] = true;
      continue;
    }
    m.sds[c] = sd;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      if (!std::isnan(m.at(r, c))) m.at(r, c) = (m.at(r, c) - mean) / sd;
    }
  }
  m.standardized = true;
}

FeatureMatrix build_matrix(const Corpus& corpus, const std::vector<std::string>& registry,
                           bool standardize, const FeatureExtractor* extractor) {
  std::optional<FeatureExtractor> local;
  if (!extractor) {
    local.emplace(registry, WordLists::bundled());
    extractor = &*local;
  }
  FeatureMatrix m;
  m.names = registry;
  const auto& docs = corpus.documents();
  for (const auto& d : docs) m.ids.push_back(d.id);
  m.values.assign(m.rows() * m.cols(), kNaN);
  parallel_for(docs.size(), [&](std::size_t r) {
    const auto v = extractor->extract(docs[r], &corpus);
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (auto x = v.get(m.names[c])) m.at(r, c) = *x;
    }
  });
  if (standardize) standardize_matrix(m);
  return m;
}

void write_matrix_csv(const FeatureMatrix& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "id";
  for (const auto& n : m.names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < m.rows(); ++r) {
    out << m.ids[r];
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out << ',';
      double v = m.at(r, c);
      if (std::isnan(v)) continue;
      if (m.standardized && !m.constant[c]) v = v * m.sds[c] + m.means[c];
      out << format_double(v);
    }
    out << '\n';
  }
}

FeatureMatrix read_matrix_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
      auto pos = line.find(',', start);
      cells.push_back(line.substr(start, pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    return cells;
  };
  FeatureMatrix m;
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty feature matrix");
  auto header = split(line);
  if (header.empty() || header[0] != "id") throw InputError(path.string() + ": bad header");
  m.names.assign(header.begin() + 1, header.end());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) {
      throw InputError(path.string() + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " cells");
    }
    m.ids.push_back(cells[0]);
    for (std::size_t c = 1; c < cells.size(); ++c) {
      if (cells[c].empty()) {
        m.values.push_back(kNaN);
        continue;
      }
      double v = 0;
      const char* b = cells[c].data();
      const char* e = b + cells[c].size();
      auto [p, ec] = std::from_chars(b, e, v);
      if (ec != std::errc() || p != e) {
        throw InputError(path.string() + ":" + std::to_string(lineno) + ": bad value '" +
                         cells[c] + "'");
      }
      m.values.push_back(v);
    }
  }
  return m;
}

}  // namespace stylefuse
