#include <doctest.h>

#include <random>
#include <sstream>

#include "stylefuse/corpus.hpp"
#include "support.hpp"

using namespace stylefuse;
namespace fs = std::filesystem;

namespace {

Document doc(const std::string& id, const std::string& text, const std::string& topic = "") {
  Document d;
  d.id = id;
  d.text = text;
  d.topic = topic;
  return d;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("load_documents counts records and rejects duplicate ids") {
  const auto dir = testing::temp_dir("corpus_docs");
  testing::write_text(dir / "two.jsonl",
                      R"({"id":"a1","text":"One text.","topic":"t","source":"style_corpus"})"
                      "\n"
                      R"({"id":"a2","text":"Two text.","topic":"t","source":"style_corpus"})"
                      "\n");
  CHECK(load_documents(dir / "two.jsonl").size() == 2);

  testing::write_text(dir / "dup.jsonl",
                      R"({"id":"a1","text":"One.","topic":"t","source":"style_corpus"})"
                      "\n"
                      R"({"id":"a1","text":"Two.","topic":"t","source":"style_corpus"})"
                      "\n");
  const auto msg = error_of([&] { load_documents(dir / "dup.jsonl"); });
  CHECK(msg.find("a1") != std::string::npos);
  CHECK(msg.find(":2") != std::string::npos);
}

TEST_CASE("load_judgments resolves ids and rejects dangling ones") {
  const auto dir = testing::temp_dir("corpus_judg");
  Corpus c;
  c.add_document(doc("a", "Short.", "school"));
  c.add_document(doc("b", "Longer text here.", "school"));
  testing::write_text(dir / "ok.jsonl",
                      R"({"pair_id":"p1","a_id":"a","b_id":"b","topic":"school","tie":false})"
                      "\n");
  const auto js = load_judgments(dir / "ok.jsonl", c);
  REQUIRE(js.size() == 1);
  CHECK(js[0].a_id == "a");
  CHECK_FALSE(js[0].tie);

  testing::write_text(dir / "bad.jsonl",
                      R"({"pair_id":"p1","a_id":"a","b_id":"zz","topic":"school","tie":false})"
                      "\n");
  CHECK(error_of([&] { load_judgments(dir / "bad.jsonl", c); }).find("zz") != std::string::npos);

  PairJudgment self{"p2", "a", "a", "school", false, std::nullopt};
  CHECK_THROWS_AS(c.validate(self), InputError);
  PairJudgment wrong_topic{"p3", "a", "b", "health", false, std::nullopt};
  CHECK_THROWS_AS(c.validate(wrong_topic), InputError);
}

TEST_CASE("CoNLL-U sentence with one root attaches") {
  const auto dir = testing::temp_dir("corpus_conllu");
  Corpus c;
  c.add_document(doc("d1", "Cats sleep ."));
  testing::write_text(dir / "a.conllu",
                      "# doc_id = d1\n"
                      "1\tCats\tcat\tNOUN\t_\tNumber=Plur\t2\tnsubj\t_\t_\n"
                      "2\tsleep\tsleep\tVERB\t_\t_\t0\troot\t_\t_\n"
                      "3\t.\t.\tPUNCT\t_\t_\t2\tpunct\t_\t_\n\n");
  CHECK(load_annotations(dir / "a.conllu", c) == 1);
  REQUIRE(c.annotations.at("d1").size() == 1);
  CHECK(c.annotations.at("d1")[0].size() == 3);
  CHECK(c.annotations.at("d1")[0][0].feat("Number") == std::optional<std::string>("Plur"));

  testing::write_text(dir / "two_roots.conllu",
                      "# doc_id = d1\n"
                      "1\tCats\tcat\tNOUN\t_\t_\t0\troot\t_\t_\n"
                      "2\tsleep\tsleep\tVERB\t_\t_\t0\troot\t_\t_\n\n");
  Corpus c2;
  c2.add_document(doc("d1", "Cats sleep"));
  CHECK_THROWS_AS(load_annotations(dir / "two_roots.conllu", c2), InputError);
}

TEST_CASE("embedding loader rejects dimension clashes and non-finite values") {
  const auto dir = testing::temp_dir("corpus_emb");
  Corpus c;
  c.add_document(doc("d1", "A b."));
  testing::write_text(dir / "dims.tsv",
                      "#dim 4 #unit token\n"
                      "d1\t0\t1 2 3 4\n"
                      "d1\t1\t1 2 3 4 5\n");
  CHECK(error_of([&] { load_embeddings(dir / "dims.tsv", c); }).find("dimension") != std::string::npos);

  Corpus c2;
  c2.add_document(doc("d1", "A b."));
  testing::write_text(dir / "nan.tsv",
                      "#dim 2 #unit token\n"
                      "d1\t0\t1 2\n"
                      "d1\t1\tnan 2\n");
  const auto msg = error_of([&] { load_embeddings(dir / "nan.tsv", c2); });
  CHECK(msg.find(":3") != std::string::npos);

  Corpus c3;
  c3.add_document(doc("d1", "A b."));
  testing::write_text(dir / "ok.tsv", "#dim 2 #unit sentence\nd1\t0\t0.5 -1\n");
  CHECK(load_embeddings(dir / "ok.tsv", c3) == 1);
  CHECK(c3.embedding_unit == EmbeddingUnit::sentence);
}

TEST_CASE("split_holdout_topics partitions exactly") {
  JudgmentSet js;
  for (int t = 0; t < 16; ++t) {
    for (int k = 0; k < 3; ++k) {
      js.push_back({"p" + std::to_string(t * 3 + k), "a", "b", "t" + std::to_string(t), k == 2,
                    std::nullopt});
    }
  }
  const auto s = split_holdout_topics(js, {"t1", "t2"});
  CHECK(topics_of(s.train).size() == 14);
  CHECK(s.train.size() + s.test.size() == js.size());
  CHECK(s.test.size() == 6);

  const auto none = split_holdout_topics(js, {});
  CHECK(none.test.empty());
  CHECK(none.train == js);

  const auto all = topics_of(js);
  CHECK_THROWS_AS(split_holdout_topics(js, all), InputError);
}

TEST_CASE("segmentation and tokenization") {
  const auto toks = tokenize("It's a well-known fact, isn't it?");
  const TokenList expect = {"It's", "a", "well-known", "fact", ",", "isn't", "it", "?"};
  CHECK(toks == expect);
  const auto sents = split_sentences(tokenize("One. Two! Three"));
  REQUIRE(sents.size() == 3);
  CHECK(sents[2] == TokenList{"Three"});
  CHECK(detokenize({"Hello", ",", "world", "."}) == "Hello, world.");
}

TEST_CASE("random corpora round-trip bit-exactly") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> len(1, 6);
  std::normal_distribution<double> z(0.0, 1e3);
  const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps"};
  for (int trial = 0; trial < 5; ++trial) {
    Corpus c;
    const int n = 4 + trial;
    for (int i = 0; i < n; ++i) {
      std::string text;
      const int w = len(rng);
      for (int k = 0; k < w; ++k) text += (k ? " " : "") + words[static_cast<std::size_t>(len(rng)) % words.size()];
      text += ".";
      Document d = doc("d" + std::to_string(i), text, i % 2 ? "odd" : "even");
      if (i == 0) d.prompt = "Prompt, with comma";
      segment(d);
      c.add_document(d);
      EmbeddingSequence seq;
      seq.document_id = d.id;
      seq.unit = EmbeddingUnit::token;
      seq.dimension = 3;
      for (int k = 0; k < w; ++k) seq.vectors.push_back({z(rng), z(rng) * 1e-9, z(rng)});
      c.attach_embedding(seq);
      AnnotatedSentence s;
      AnnotatedToken t;
      t.surface = "x";
      t.lemma = "x";
      t.upos = "NOUN";
      t.xpos = "_";
      t.feats = "_";
      t.head = 0;
      t.deprel = "root";
      t.ner = i % 2 ? "GPE" : "O";
      t.misc = "SpaceAfter=No";
      s.push_back(t);
      c.annotations[d.id] = {s};
    }
    for (int i = 0; i + 2 < n; i += 2) {
      c.judgments.push_back({"p" + std::to_string(i), "d" + std::to_string(i),
                             "d" + std::to_string(i + 2), "even", i % 4 == 0, std::nullopt});
    }
    const auto dir = testing::temp_dir("corpus_rt");
    save_documents(c, dir / "d.jsonl");
    save_judgments(c.judgments, dir / "j.jsonl");
    save_annotations(c, dir / "a.conllu");
    save_embeddings(c, dir / "e.tsv");
    Corpus back = load_documents(dir / "d.jsonl");
    back.judgments = load_judgments(dir / "j.jsonl", back);
    load_annotations(dir / "a.conllu", back);
    load_embeddings(dir / "e.tsv", back);
    REQUIRE(back.size() == c.size());
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto& a = c.documents()[i];
      const auto& b = back.documents()[i];
      CHECK(a.id == b.id);
      CHECK(a.text == b.text);
      CHECK(a.topic == b.topic);
      CHECK(a.prompt == b.prompt);
      CHECK(a.sentences == b.sentences);
      CHECK(a.source == b.source);
      CHECK(back.embeddings.at(a.id).vectors == c.embeddings.at(a.id).vectors);
      const auto& ta = c.annotations.at(a.id)[0][0];
      const auto& tb = back.annotations.at(a.id)[0][0];
      CHECK(ta.ner == tb.ner);
      CHECK(ta.head == tb.head);
      CHECK(ta.upos == tb.upos);
    }
    CHECK(back.judgments == c.judgments);
  }
}

}  // TEST_SUITE
