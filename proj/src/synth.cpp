#include "stylefuse/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"
#include "stylefuse/common.hpp"

namespace stylefuse::synth {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string padded(const std::string& prefix, std::size_t i, int width = 4) {
  std::string num = std::to_string(i);
  if (num.size() < static_cast<std::size_t>(width)) {
    num.insert(0, static_cast<std::size_t>(width) - num.size(), '0');
  }
  return prefix + num;
}

template <class T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> u(0, v.size() - 1);
  return v[u(rng)];
}

}  // namespace

std::vector<double> word_vector(const std::string& word, std::size_t dim) {
  std::mt19937_64 rng(fnv1a(word));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = normal(rng);
  return v;
}

// Bayesian recovery -------------------------------------------------------------

BayesReplication bayes_replication(const BayesScenario& s, std::uint64_t seed) {
  if (s.topics == 0 || s.texts_per_topic < 2) {
    throw InputError("scenario needs at least one topic with two texts");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  BayesReplication rep;
  const std::size_t n_texts = s.topics * s.texts_per_topic;

  rep.matrix.names = {"f"};
  for (std::size_t i = 0; i < n_texts; ++i) {
    rep.matrix.ids.push_back(padded("x", i));
    rep.matrix.values.push_back(normal(rng));
  }
  standardize_matrix(rep.matrix);

  std::vector<double> alpha(n_texts), beta(n_texts);
  for (auto& a : alpha) a = s.bias_sd * normal(rng);
  for (auto& b : beta) b = s.bias_sd * normal(rng);
  for (std::size_t t = 0; t < s.topics; ++t) rep.gamma.push_back(s.gamma + s.gamma_sd * normal(rng));

  std::uniform_int_distribution<std::size_t> within(0, s.texts_per_topic - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t k = 0; k < s.pairs; ++k) {
    const std::size_t t = k % s.topics;
    const std::size_t a = t * s.texts_per_topic + within(rng);
    std::size_t b = a;
    while (b == a) b = t * s.texts_per_topic + within(rng);
    const double logit = s.p_bar + alpha[a] - beta[b] +
                         rep.gamma[t] * (rep.matrix.at(a, 0) - rep.matrix.at(b, 0));
    const bool a_wins = unif(rng) < sigmoid(logit);
    PairJudgment j;
    j.pair_id = padded("p", k);
    j.a_id = rep.matrix.ids[a_wins ? a : b];
    j.b_id = rep.matrix.ids[a_wins ? b : a];
    j.topic = padded("topic", t, 2);
    rep.judgments.push_back(std::move(j));
  }
  return rep;
}

// Pipeline fixture --------------------------------------------------------------

namespace {

struct Word {
  std::string form;
  std::string upos;
};

const std::vector<std::string> kTopics = {"energy", "school", "health", "city"};

const std::vector<std::vector<std::string>> kTopicNouns = {
    {"power", "oil", "wind", "grid", "solar", "fuel", "coal", "price"},
    {"school", "class", "teacher", "test", "book", "grade", "student", "lesson"},
    {"health", "doctor", "diet", "care", "sleep", "drug", "clinic", "nurse"},
    {"city", "street", "park", "bus", "road", "home", "rent", "train"}};
const std::vector<std::string> kTopicNames = {"Europe", "Oxford", "Geneva", "Berlin"};

const std::vector<std::string> kShortAdj = {"good", "new", "big", "small", "clean", "fair",
                                            "safe", "real", "cheap", "old"};
const std::vector<std::string> kLongAdj = {"considerable",  "unprecedented", "institutional",
                                           "comprehensive", "overwhelming",  "environmental",
                                           "administrative", "international"};
const std::vector<std::string> kVerbs = {"helps", "needs", "builds", "keeps", "makes",
                                         "saves", "hurts", "shapes", "finds", "moves"};
const std::vector<std::string> kShortAdv = {"often", "still", "now", "just"};
const std::vector<std::string> kLongAdv = {"fundamentally", "unquestionably", "predominantly",
                                           "systematically"};
const std::vector<std::string> kDets = {"the", "a", "every", "this"};

struct Sentence {
  std::vector<Word> words;
};

Sentence make_sentence(std::size_t topic, double verbosity, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Sentence s;
  auto add = [&](const std::string& w, const char* pos) { s.words.push_back({w, pos}); };
  auto noun_phrase = [&] {
    add(pick(kDets, rng), "DET");
    if (u(rng) < 0.3 + 0.5 * verbosity) {
      add(u(rng) < verbosity ? pick(kLongAdj, rng) : pick(kShortAdj, rng), "ADJ");
    }
    add(pick(kTopicNouns[topic], rng), "NOUN");
  };
  if (u(rng) < 0.15) {
    add(kTopicNames[topic], "PROPN");
  } else {
    noun_phrase();
  }
  if (u(rng) < verbosity) add(u(rng) < verbosity ? pick(kLongAdv, rng) : pick(kShortAdv, rng), "ADV");
  add(pick(kVerbs, rng), "VERB");
  noun_phrase();
  if (u(rng) < verbosity * 0.8) {
    add(u(rng) < 0.5 ? "because" : "while", "SCONJ");
    noun_phrase();
    add(pick(kVerbs, rng), "VERB");
    if (u(rng) < verbosity) {
      add(pick(kLongAdj, rng), "ADJ");
    }
    noun_phrase();
  }
  add(".", "PUNCT");
  // Sentence-initial capital.
  auto& first = s.words.front().form;
  first[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(first[0])));
  return s;
}

AnnotatedSentence annotate(const Sentence& s) {
  std::size_t root = 0;
  for (std::size_t i = 0; i < s.words.size(); ++i) {
    if (s.words[i].upos == "VERB") {
      root = i + 1;
      break;
    }
  }
  AnnotatedSentence out;
  bool seen_root = false;
  for (std::size_t i = 0; i < s.words.size(); ++i) {
    const auto& w = s.words[i];
    AnnotatedToken t;
    t.surface = w.form;
    t.lemma = w.form;
    for (auto& c : t.lemma) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    t.upos = w.upos;
    t.xpos = "_";
    t.feats = w.upos == "VERB"   ? "Mood=Ind|Number=Sing|Person=3|Tense=Pres|VerbForm=Fin"
              : w.upos == "NOUN" ? "Number=Sing"
                                 : "_";
    t.ner = w.upos == "PROPN" ? "GPE" : "O";
    t.misc = "_";
    if (i + 1 == root) {
      t.head = 0;
      t.deprel = "root";
      seen_root = true;
    } else {
      t.head = root;
      t.deprel = w.upos == "DET"     ? "det"
                 : w.upos == "ADJ"   ? "amod"
                 : w.upos == "ADV"   ? "advmod"
                 : w.upos == "PUNCT" ? "punct"
                 : w.upos == "SCONJ" ? "mark"
                 : w.upos == "VERB"  ? "advcl"
                 : seen_root         ? "obj"
                                     : "nsubj";
    }
    out.push_back(std::move(t));
  }
  return out;
}

Document render(const std::string& id, const std::string& topic,
                const std::vector<Sentence>& sentences, DocumentSource source) {
  Document d;
  d.id = id;
  d.topic = topic;
  d.source = source;
  for (const auto& s : sentences) {
    TokenList toks;
    for (const auto& w : s.words) toks.push_back(w.form);
    d.sentences.push_back(toks);
  }
  std::string text;
  for (const auto& sent : d.sentences) {
    if (!text.empty()) text += ' ';
    text += detokenize(sent);
  }
  d.text = text;
  return d;
}

void add_text(Corpus& corpus, const std::string& id, const std::string& topic,
              std::size_t topic_index, double verbosity, std::size_t n_sentences,
              DocumentSource source, std::size_t dim, std::mt19937_64& rng) {
  std::vector<Sentence> sentences;
  for (std::size_t k = 0; k < n_sentences; ++k) {
    sentences.push_back(make_sentence(topic_index, verbosity, rng));
  }
  auto doc = render(id, topic, sentences, source);
  EmbeddingSequence seq;
  seq.document_id = id;
  seq.unit = EmbeddingUnit::token;
  seq.dimension = dim;
  for (const auto& tok : doc.tokens()) {
    std::string key = tok;
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    seq.vectors.push_back(word_vector(key, dim));
  }
  std::vector<AnnotatedSentence> ann;
  for (const auto& s : sentences) ann.push_back(annotate(s));
  corpus.add_document(std::move(doc));
  corpus.annotations[id] = std::move(ann);
  corpus.attach_embedding(std::move(seq));
}

}  // namespace

Fixture pipeline_fixture(const FixtureSpec& spec, std::uint64_t seed) {
  if (spec.topics == 0 || spec.topics > kTopics.size()) {
    throw InputError("fixture supports 1 to " + std::to_string(kTopics.size()) + " topics");
  }
  if (spec.docs_per_topic < 2) throw InputError("fixture needs two documents per topic");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Fixture fx;
  std::vector<double> verbosity;
  for (std::size_t t = 0; t < spec.topics; ++t) {
    for (std::size_t i = 0; i < spec.docs_per_topic; ++i) {
      const double v = u(rng);
      verbosity.push_back(v);
      const auto n_sent = 1 + static_cast<std::size_t>(std::floor(3.0 * v + u(rng)));
      add_text(fx.style, padded("d", t * spec.docs_per_topic + i), kTopics[t], t, v, n_sent,
               DocumentSource::style_corpus, spec.dim, rng);
    }
  }
  std::uniform_int_distribution<std::size_t> within(0, spec.docs_per_topic - 1);
  for (std::size_t k = 0; k < spec.pairs; ++k) {
    const std::size_t t = k % spec.topics;
    const std::size_t a = t * spec.docs_per_topic + within(rng);
    std::size_t b = a;
    while (b == a) b = t * spec.docs_per_topic + within(rng);
    PairJudgment j;
    j.pair_id = padded("p", k);
    j.topic = kTopics[t];
    const double r = u(rng);
    bool a_wins = r < sigmoid(4.0 * (verbosity[b] - verbosity[a]));
    j.tie = u(rng) < spec.tie_rate;
    j.a_id = fx.style.documents()[a_wins ? a : b].id;
    j.b_id = fx.style.documents()[a_wins ? b : a].id;
    fx.style.judgments.push_back(std::move(j));
  }
  for (std::size_t i = 0; i < spec.external; ++i) {
    const std::size_t t = i % spec.topics;
    add_text(fx.external, padded("x", i), "external", t, u(rng), 1,
             DocumentSource::external_corpus, spec.dim, rng);
  }
  return fx;
}

void write_pipeline_fixture(const std::filesystem::path& dir, const FixtureSpec& spec,
                            std::uint64_t seed) {
  const auto fx = pipeline_fixture(spec, seed);
  std::filesystem::create_directories(dir);
  save_documents(fx.style, dir / "documents.jsonl");
  save_judgments(fx.style.judgments, dir / "judgments.jsonl");
  save_annotations(fx.style, dir / "annotations.conllu");
  save_embeddings(fx.style, dir / "embeddings.tsv");
  save_documents(fx.external, dir / "external.jsonl");
  save_embeddings(fx.external, dir / "external_embeddings.tsv");

  using nlohmann::json;
  std::vector<std::string> prompts;
  for (std::size_t t = 0; t < spec.topics; ++t) {
    prompts.push_back("The " + kTopicNouns[t][0]);
  }
  json config = {
      {"seed", seed},
      {"corpus",
       {{"documents", "documents.jsonl"},
        {"judgments", "judgments.jsonl"},
        {"annotations", "annotations.conllu"},
        {"embeddings", "embeddings.tsv"},
        {"external", "external.jsonl"},
        {"external_embeddings", "external_embeddings.tsv"}}},
      {"features",
       {{"registry",
         {"length", "word_count", "avg_syllables", "flesch", "brunet", "ttr", "noun_rate",
          "total_dependency_distance", "ner_gpe_rate", "speed", "volume", "circuitousness"}}}},
      {"bayes",
       {{"features", {"length", "flesch", "avg_syllables"}},
        {"warmup", 1000},
        {"samples", 1000},
        {"chains", 4},
        {"target_accept", 0.8},
        {"interval", 0.9}}},
      {"ranker",
       {{"features", {"length", "avg_syllables", "flesch", "speed", "circuitousness"}},
        {"learning_rate", 0.5},
        {"epochs", 300},
        {"l2", 0.001},
        {"holdout_topics", {kTopics[spec.topics - 1]}},
        {"folds", 5}}},
      {"augment", {{"k", 5}, {"min_score", 0.5}, {"max_new_pairs", 0}}},
      {"infusion",
       {{"mode", "SD"},
        {"beta", 0.5},
        {"learning_rate", 1.0},
        {"mle_epochs", 20},
        {"epochs", 10},
        {"order", 1},
        {"beam_width", 4},
        {"max_tokens", 100},
        {"use_augmented", true}}},
      {"eval", {{"prompts", prompts}, {"samples_per_prompt", 25}}}};
  std::ofstream out(dir / "config.json", std::ios::binary);
  if (!out) throw InputError("cannot write " + (dir / "config.json").string());
  out << config.dump(2) << '\n';
}

// Infusion task -----------------------------------------------------------------

InfusionTask infusion_task(const InfusionTaskSpec& spec, std::uint64_t seed) {
  static const std::vector<std::string> kSyllables = {"ba", "ce", "di", "fo", "gu", "ha", "ji",
                                                      "ko", "lu", "ma", "ne", "po", "ri", "su",
                                                      "te", "vo"};
  if (spec.words < 3 || spec.words > kSyllables.size()) {
    throw InputError("infusion task supports 3 to " + std::to_string(kSyllables.size()) + " words");
  }
  if (spec.min_length < 3 || spec.max_length < spec.min_length || spec.max_length > spec.words) {
    throw InputError("infusion task lengths must satisfy 3 <= min <= max <= words");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len_dist(spec.min_length, spec.max_length);
  std::uniform_int_distribution<std::size_t> word_dist(0, spec.words - 1);

  InfusionTask task;
  // Words sit on a line in embedding space, so in-order walks along it
  // have circuitousness 1 and shuffled sequences score higher.
  for (std::size_t w = 0; w < spec.words; ++w) {
    task.lexicon[kSyllables[w]] = {static_cast<double>(w), 0.0};
  }

  auto make_text = [&](std::size_t index) {
    const std::size_t len = len_dist(rng);
    std::vector<std::size_t> ids;
    if (u(rng) < 0.5) {
      const std::size_t start = std::uniform_int_distribution<std::size_t>(0, spec.words - len)(rng);
      for (std::size_t k = 0; k < len; ++k) ids.push_back(start + k);
      if (u(rng) < 0.5) std::reverse(ids.begin(), ids.end());
    } else {
      for (std::size_t k = 0; k < len; ++k) ids.push_back(word_dist(rng));
    }
    Document d;
    d.id = padded("s", index);
    d.topic = "toy";
    TokenList toks;
    EmbeddingSequence seq;
    seq.document_id = d.id;
    seq.unit = EmbeddingUnit::token;
    seq.dimension = 2;
    for (auto id : ids) {
      toks.push_back(kSyllables[id]);
      seq.vectors.push_back(task.lexicon[kSyllables[id]]);
    }
    d.text = detokenize(toks);
    d.sentences = {toks};
    const auto traj = trajectory_features(seq);
    const double score = -spec.length_weight * static_cast<double>(len) -
                         spec.circuit_weight * traj.circuitousness.value_or(1.0);
    task.corpus.add_document(d);
    task.corpus.attach_embedding(std::move(seq));
    return std::pair{toks, score};
  };

  for (std::size_t k = 0; k < spec.pairs; ++k) {
    auto [ta, sa] = make_text(2 * k);
    auto [tb, sb] = make_text(2 * k + 1);
    const bool a_wins = u(rng) < sigmoid(sa - sb);
    PairJudgment j;
    j.pair_id = padded("p", k);
    j.topic = "toy";
    j.a_id = padded("s", a_wins ? 2 * k : 2 * k + 1);
    j.b_id = padded("s", a_wins ? 2 * k + 1 : 2 * k);
    task.judgments.push_back(j);
    infuse::TrainingPair p;
    p.y_s_star = a_wins ? ta : tb;
    p.y_ns_star = a_wins ? tb : ta;
    p.y_s_star.push_back(infuse::kEos);
    p.y_ns_star.push_back(infuse::kEos);
    task.pairs.push_back(std::move(p));
  }
  task.corpus.judgments = task.judgments;
  task.vocabulary = {infuse::kBos, infuse::kEos};
  for (std::size_t w = 0; w < spec.words; ++w) task.vocabulary.push_back(kSyllables[w]);
  return task;
}

}  // namespace stylefuse::synth
