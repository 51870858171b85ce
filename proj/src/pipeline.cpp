#include "stylefuse/pipeline.hpp"

#include <Eigen/Core>
#include <boost/version.hpp>
#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>

#include "stylefuse/augment.hpp"
#include "stylefuse/bayes.hpp"
#include "stylefuse/corpus.hpp"
#include "stylefuse/eval.hpp"
#include "stylefuse/features.hpp"
#include "stylefuse/infuse.hpp"
#include "stylefuse/ranker.hpp"

#ifndef STYLEFUSE_VERSION
#define STYLEFUSE_VERSION "0.0.0"
#endif

namespace stylefuse::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// Hashing ---------------------------------------------------------------------

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << bytes;
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

json versions() {
  return {{"stylefuse", STYLEFUSE_VERSION},
          {"compiler", std::string("GCC ") + __VERSION__},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                        "." + std::to_string(EIGEN_MINOR_VERSION)},
          {"boost", BOOST_LIB_VERSION},
          {"openssl", OPENSSL_VERSION_TEXT},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

// Config ----------------------------------------------------------------------

namespace {

enum class Kind { string, number, count, boolean, strings };

const std::map<std::string, std::map<std::string, Kind>>& schema() {
  static const std::map<std::string, std::map<std::string, Kind>> s = {
      {"corpus",
       {{"documents", Kind::string},
        {"judgments", Kind::string},
        {"annotations", Kind::string},
        {"embeddings", Kind::string},
        {"external", Kind::string},
        {"external_embeddings", Kind::string}}},
      {"features", {{"registry", Kind::strings}}},
      {"bayes",
       {{"features", Kind::strings},
        {"warmup", Kind::count},
        {"samples", Kind::count},
        {"chains", Kind::count},
        {"target_accept", Kind::number},
        {"max_depth", Kind::count},
        {"interval", Kind::number},
        {"hyper_prior", Kind::string}}},
      {"ranker",
       {{"features", Kind::strings},
        {"learning_rate", Kind::number},
        {"epochs", Kind::count},
        {"l2", Kind::number},
        {"holdout_topics", Kind::strings},
        {"folds", Kind::count}}},
      {"augment", {{"k", Kind::count}, {"min_score", Kind::number}, {"max_new_pairs", Kind::count}}},
      {"infusion",
       {{"mode", Kind::string},
        {"beta", Kind::number},
        {"w_d", Kind::number},
        {"w_r", Kind::number},
        {"learning_rate", Kind::number},
        {"head_learning_rate", Kind::number},
        {"mle_epochs", Kind::count},
        {"epochs", Kind::count},
        {"order", Kind::count},
        {"state_dim", Kind::count},
        {"beam_width", Kind::count},
        {"max_tokens", Kind::count},
        {"use_augmented", Kind::boolean}}},
      {"eval",
       {{"prompts", Kind::strings},
        {"samples_per_prompt", Kind::count},
        {"bertscores", Kind::string}}}};
  return s;
}

bool has_kind(const json& v, Kind k) {
  switch (k) {
    case Kind::string: return v.is_string();
    case Kind::number: return v.is_number();
    case Kind::count: return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
    case Kind::boolean: return v.is_boolean();
    case Kind::strings:
      if (!v.is_array()) return false;
      for (const auto& e : v) {
        if (!e.is_string()) return false;
      }
      return true;
  }
  return false;
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::string: return "a string";
    case Kind::number: return "a number";
    case Kind::count: return "a non-negative integer";
    case Kind::boolean: return "a boolean";
    case Kind::strings: return "a list of strings";
  }
  return "?";
}

void check_schema(const json& tree) {
  if (!tree.is_object()) throw ConfigError("config: top level must be an object");
  for (const auto& [key, value] : tree.items()) {
    if (key == "seed") {
      if (!has_kind(value, Kind::count)) throw ConfigError("config: seed must be a non-negative integer");
      continue;
    }
    auto sec = schema().find(key);
    if (sec == schema().end()) throw ConfigError("config: unknown section '" + key + "'");
    if (!value.is_object()) throw ConfigError("config: section '" + key + "' must be an object");
    for (const auto& [k, v] : value.items()) {
      auto spec = sec->second.find(k);
      if (spec == sec->second.end()) {
        throw ConfigError("config: unknown key '" + key + "." + k + "'");
      }
      if (!has_kind(v, spec->second)) {
        throw ConfigError("config: " + key + "." + k + " must be " + kind_name(spec->second));
      }
    }
  }
}

const json& section(const RunConfig& c, const std::string& name) {
  static const json empty = json::object();
  auto it = c.tree.find(name);
  return it == c.tree.end() ? empty : *it;
}

template <typename T>
T get_or(const json& sec, const std::string& key, T fallback) {
  auto it = sec.find(key);
  return it == sec.end() ? fallback : it->get<T>();
}

std::vector<std::string> strings_or(const json& sec, const std::string& key,
                                    std::vector<std::string> fallback) {
  auto it = sec.find(key);
  return it == sec.end() ? fallback : it->get<std::vector<std::string>>();
}

}  // namespace

std::uint64_t RunConfig::require_seed(const std::string& stage) const {
  if (!seed) throw ConfigError("config: stage '" + stage + "' needs a seed (config 'seed' or --seed)");
  return *seed;
}

RunConfig parse_config(const std::string& text, const fs::path& base_dir,
                       std::optional<std::uint64_t> seed) {
  RunConfig c;
  try {
    c.tree = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_schema(c.tree);
  c.base_dir = base_dir;
  c.sha256 = sha256_hex(text);
  if (seed) {
    c.seed = seed;
  } else if (c.tree.contains("seed")) {
    c.seed = c.tree["seed"].get<std::uint64_t>();
  }
  return c;
}

RunConfig load_config(const fs::path& path, std::optional<std::uint64_t> seed) {
  if (!fs::exists(path)) throw MissingArtifactError("config " + path.string());
  return parse_config(read_file(path), path.parent_path(), seed);
}

// Stages ----------------------------------------------------------------------

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s = {Stage::ingest,       Stage::features, Stage::fit_bayes,
                                       Stage::train_ranker, Stage::augment,  Stage::train_infuse,
                                       Stage::generate,     Stage::evaluate, Stage::report};
  return s;
}

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::ingest: return "ingest";
    case Stage::features: return "features";
    case Stage::fit_bayes: return "fit-bayes";
    case Stage::train_ranker: return "train-ranker";
    case Stage::augment: return "augment";
    case Stage::train_infuse: return "train-infuse";
    case Stage::generate: return "generate";
    case Stage::evaluate: return "evaluate";
    case Stage::report: return "report";
  }
  return "?";
}

std::string artifact_name(Stage stage) {
  switch (stage) {
    case Stage::ingest: return "corpus";
    case Stage::features: return "features";
    case Stage::fit_bayes: return "correlations";
    case Stage::train_ranker: return "ranker";
    case Stage::augment: return "augmented";
    case Stage::train_infuse: return "infusion";
    case Stage::generate: return "generations";
    case Stage::evaluate: return "evaluation";
    case Stage::report: return "report";
  }
  return "?";
}

Stage parse_stage(const std::string& name) {
  for (Stage s : all_stages()) {
    if (stage_name(s) == name) return s;
  }
  throw InputError("unknown stage '" + name + "'");
}

namespace {

// Manifest --------------------------------------------------------------------

fs::path manifest_path(const fs::path& out) { return out / "manifest.json"; }

json read_manifest(const fs::path& out) {
  if (!fs::exists(manifest_path(out))) {
    return {{"versions", versions()}, {"artifacts", json::object()}};
  }
  try {
    return json::parse(read_file(manifest_path(out)));
  } catch (const json::parse_error& e) {
    throw InputError("corrupt manifest " + manifest_path(out).string() + ": " + e.what());
  }
}

/// Checks the artifact is recorded and its files are intact; returns the
/// record for input bookkeeping.
json require(const fs::path& out, const json& manifest, const std::string& name) {
  const auto& arts = manifest.at("artifacts");
  if (!arts.contains(name)) throw MissingArtifactError(name);
  const auto& rec = arts.at(name);
  for (const auto& f : rec.at("files")) {
    const fs::path p = out / f.at("path").get<std::string>();
    if (!fs::exists(p)) throw MissingArtifactError(name + " (" + p.string() + ")");
    if (sha256_file(p) != f.at("sha256").get<std::string>()) {
      throw InputError("artifact " + name + " was modified after it was written: " + p.string());
    }
  }
  return {{"artifact", name}, {"sha256", sha256_hex(rec.at("files").dump())}};
}

class StageRun {
 public:
  StageRun(Stage stage, const RunConfig& config, const fs::path& out)
      : stage_(stage), config_(config), out_(out), manifest_(read_manifest(out)) {
    fs::create_directories(out_);
  }

  /// Marks an upstream artifact as an input.
  void need(const std::string& artifact) { inputs_.push_back(require(out_, manifest_, artifact)); }
  bool has(const std::string& artifact) const {
    return manifest_.at("artifacts").contains(artifact);
  }
  void input_file(const std::string& label, const fs::path& path) {
    inputs_.push_back({{"path", label}, {"sha256", sha256_file(path)}});
  }

  /// Fresh stage directory.
  fs::path dir(const std::string& name) {
    const fs::path d = out_ / name;
    fs::remove_all(d);
    fs::create_directories(d);
    dir_ = name;
    return d;
  }

  void output(const std::string& file) { files_.push_back(dir_ + "/" + file); }

  void commit() {
    json files = json::array();
    std::sort(files_.begin(), files_.end());
    for (const auto& f : files_) {
      files.push_back({{"path", f}, {"sha256", sha256_file(out_ / f)}});
    }
    json rec = {{"stage", stage_name(stage_)},
                {"config_sha256", config_.sha256},
                {"seed", config_.seed ? json(*config_.seed) : json(nullptr)},
                {"inputs", inputs_},
                {"files", files}};
    manifest_["versions"] = versions();
    manifest_["artifacts"][artifact_name(stage_)] = rec;
    write_file(manifest_path(out_), manifest_.dump(2) + "\n");
  }

  const fs::path& out() const { return out_; }
  const RunConfig& config() const { return config_; }

 private:
  Stage stage_;
  const RunConfig& config_;
  fs::path out_;
  json manifest_;
  json inputs_ = json::array();
  std::string dir_;
  std::vector<std::string> files_;
};

// Run-directory loaders ---------------------------------------------------------

Corpus load_style(const fs::path& out) {
  const fs::path d = out / "corpus";
  Corpus c = load_documents(d / "documents.jsonl");
  c.judgments = load_judgments(d / "judgments.jsonl", c);
  if (fs::exists(d / "annotations.conllu")) load_annotations(d / "annotations.conllu", c);
  if (fs::exists(d / "embeddings.tsv")) load_embeddings(d / "embeddings.tsv", c);
  return c;
}

std::optional<Corpus> load_external(const fs::path& out) {
  const fs::path d = out / "corpus";
  if (!fs::exists(d / "external.jsonl")) return std::nullopt;
  Corpus c = load_documents(d / "external.jsonl");
  if (fs::exists(d / "external_embeddings.tsv")) load_embeddings(d / "external_embeddings.tsv", c);
  return c;
}

/// Documents, annotations and embeddings of several corpora under one index.
Corpus combine(const std::vector<const Corpus*>& parts) {
  Corpus all;
  for (const Corpus* c : parts) {
    for (const auto& d : c->documents()) all.add_document(d);
    for (const auto& [id, ann] : c->annotations) all.annotations[id] = ann;
    for (const auto& [id, seq] : c->embeddings) all.attach_embedding(seq);
  }
  return all;
}

FeatureMatrix select_columns(const FeatureMatrix& m, const std::vector<std::string>& names) {
  FeatureMatrix s;
  s.ids = m.ids;
  s.names = names;
  std::vector<std::size_t> cols;
  for (const auto& n : names) {
    auto c = m.column_of(n);
    if (!c) throw InputError("features artifact has no column '" + n + "'");
    cols.push_back(*c);
  }
  s.values.reserve(m.rows() * cols.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c : cols) s.values.push_back(m.at(r, c));
  }
  return s;
}

std::string lower(std::string s) {
  for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return s;
}

std::vector<std::string> prompt_tokens(const std::string& prompt) {
  std::vector<std::string> out;
  for (const auto& t : tokenize(prompt)) out.push_back(lower(t));
  return out;
}

std::unique_ptr<RankerDiscriminator> make_discriminator(const fs::path& out, const Corpus& lookup) {
  auto disc = std::make_unique<RankerDiscriminator>(load_ranker(out / "ranker" / "ranker.json"),
                                                    WordLists::bundled(), &lookup);
  disc->set_token_lexicon(build_token_lexicon(lookup));
  disc->set_impute_missing(true);
  return disc;
}

void ingest(StageRun& run) {
  const RunConfig& c = run.config();
  const json& sec = section(c, "corpus");
  auto path_of = [&](const std::string& key, bool required) -> std::optional<fs::path> {
    if (!sec.contains(key)) {
      if (required) throw ConfigError("config: corpus." + key + " is required");
      return std::nullopt;
    }
    const std::string label = sec.at(key).get<std::string>();
    const fs::path p = c.base_dir / label;
    if (!fs::exists(p)) throw MissingArtifactError("corpus." + key + " (" + p.string() + ")");
    run.input_file(label, p);
    return p;
  };
  const auto docs = path_of("documents", true);
  const auto judg = path_of("judgments", true);
  const auto ann = path_of("annotations", false);
  const auto emb = path_of("embeddings", false);
  const auto ext = path_of("external", false);
  const auto ext_emb = path_of("external_embeddings", false);
  if (ext_emb && !ext) throw ConfigError("config: corpus.external_embeddings needs corpus.external");

  Corpus style = load_documents(*docs);
  style.judgments = load_judgments(*judg, style);
  if (ann) load_annotations(*ann, style);
  if (emb) load_embeddings(*emb, style);

  const fs::path d = run.dir("corpus");
  save_documents(style, d / "documents.jsonl");
  run.output("documents.jsonl");
  save_judgments(style.judgments, d / "judgments.jsonl");
  run.output("judgments.jsonl");
  if (!style.annotations.empty()) {
    save_annotations(style, d / "annotations.conllu");
    run.output("annotations.conllu");
  }
  if (!style.embeddings.empty()) {
    save_embeddings(style, d / "embeddings.tsv");
    run.output("embeddings.tsv");
  }
  std::size_t n_ext = 0;
  if (ext) {
    Corpus external = load_documents(*ext);
    if (ext_emb) load_embeddings(*ext_emb, external);
    for (const auto& doc : external.documents()) {
      if (style.contains(doc.id)) {
        throw InputError("external document id '" + doc.id + "' also names a style document");
      }
    }
    save_documents(external, d / "external.jsonl");
    run.output("external.jsonl");
    if (!external.embeddings.empty()) {
      save_embeddings(external, d / "external_embeddings.tsv");
      run.output("external_embeddings.tsv");
    }
    n_ext = external.size();
  }
  std::cout << "ingest: " << style.size() << " documents, " << style.judgments.size()
            << " judgments, " << n_ext << " external candidates\n";
}

void features(StageRun& run) {
  run.need("corpus");
  const auto registry = strings_or(section(run.config(), "features"), "registry", default_registry());
  validate_registry(registry);
  const Corpus style = load_style(run.out());
  FeatureExtractor ex(registry, WordLists::bundled());
  const auto m = build_matrix(style, registry, false, &ex);
  const fs::path d = run.dir("features");
  write_matrix_csv(m, d / "features.csv");
  run.output("features.csv");
  std::cout << "features: " << m.rows() << " documents x " << m.cols() << " features\n";
}

void fit_bayes(StageRun& run) {
  run.need("features");
  run.need("corpus");
  const auto seed = run.config().require_seed("fit-bayes");
  const json& sec = section(run.config(), "bayes");
  const Corpus style = load_style(run.out());
  FeatureMatrix m = read_matrix_csv(run.out() / "features" / "features.csv");
  standardize_matrix(m);
  std::vector<std::string> names;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    if (!m.constant[c]) names.push_back(m.names[c]);
  }
  names = strings_or(sec, "features", names);

  bayes::FitConfig fc;
  fc.sampler.warmup = get_or<std::size_t>(sec, "warmup", fc.sampler.warmup);
  fc.sampler.samples = get_or<std::size_t>(sec, "samples", fc.sampler.samples);
  fc.sampler.chains = get_or<std::size_t>(sec, "chains", fc.sampler.chains);
  fc.sampler.max_depth = get_or<std::size_t>(sec, "max_depth", fc.sampler.max_depth);
  fc.sampler.target_accept = get_or<double>(sec, "target_accept", fc.sampler.target_accept);
  fc.sampler.seed = seed;
  fc.interval = get_or<double>(sec, "interval", fc.interval);
  const auto reading = get_or<std::string>(sec, "hyper_prior", "scale");
  if (reading == "variance") {
    fc.prior.reading = bayes::HyperPriorReading::variance;
  } else if (reading != "scale") {
    throw ConfigError("config: bayes.hyper_prior must be 'scale' or 'variance'");
  }
  if (!(fc.sampler.target_accept > 0 && fc.sampler.target_accept < 1)) {
    throw ConfigError("config: bayes.target_accept must be in (0, 1)");
  }
  if (!(fc.interval > 0 && fc.interval < 1)) {
    throw ConfigError("config: bayes.interval must be in (0, 1)");
  }
  if (fc.sampler.chains < 1 || fc.sampler.samples < 1) {
    throw ConfigError("config: bayes.chains and bayes.samples must be positive");
  }

  std::vector<bayes::CorrelationResult> results;
  for (const auto& f : names) {
    auto r = bayes::fit_feature_correlation(style.judgments, m, f, fc);
    std::cout << "fit-bayes: " << f << " pooled " << format_double(r.pooled.mean) << " ["
              << format_double(r.pooled.lower) << ", " << format_double(r.pooled.upper) << "]"
              << (r.converged ? "" : " (not converged)") << '\n';
    results.push_back(std::move(r));
  }
  const fs::path d = run.dir("bayes");
  bayes::write_correlations_csv(results, d / "correlations.csv");
  run.output("correlations.csv");
  bayes::write_diagnostics_csv(results, d / "diagnostics.csv");
  run.output("diagnostics.csv");
}

json accuracy_json(const AccuracyReport& r) {
  return {{"accuracy", r.accuracy}, {"pairs", r.pairs}, {"ties_at_half", r.ties_at_half}};
}

void train_ranker_stage(StageRun& run) {
  run.need("features");
  run.need("corpus");
  const auto seed = run.config().require_seed("train-ranker");
  const json& sec = section(run.config(), "ranker");
  const Corpus style = load_style(run.out());
  const FeatureMatrix raw = read_matrix_csv(run.out() / "features" / "features.csv");
  FeatureMatrix m = select_columns(raw, strings_or(sec, "features", raw.names));
  standardize_matrix(m);

  RankerConfig rc;
  rc.learning_rate = get_or<double>(sec, "learning_rate", rc.learning_rate);
  rc.epochs = get_or<std::size_t>(sec, "epochs", rc.epochs);
  rc.l2 = get_or<double>(sec, "l2", rc.l2);
  rc.seed = seed;
  const auto holdout_list = strings_or(sec, "holdout_topics", {});
  const std::set<std::string> holdout(holdout_list.begin(), holdout_list.end());
  const auto known = topics_of(style.judgments);
  for (const auto& t : holdout) {
    if (!known.count(t)) throw ConfigError("config: ranker.holdout_topics names unknown topic '" + t + "'");
  }
  const auto split = split_holdout_topics(style.judgments, holdout);
  const Ranker ranker = train_ranker(split.train, m, rc);

  json acc = json::object();
  if (!split.test.empty()) {
    const auto h = evaluate_holdout(ranker, split.test, m);
    acc["holdout"] = accuracy_json(h);
    std::cout << "train-ranker: held-out accuracy " << format_double(h.accuracy) << " over "
              << h.pairs << " pairs\n";
  }
  const auto folds = get_or<std::size_t>(sec, "folds", 5);
  if (folds >= 2) {
    json arr = json::array();
    double sum = 0;
    const auto cv = cross_validate(split.train, m, folds, rc);
    for (const auto& r : cv) {
      arr.push_back(accuracy_json(r));
      sum += r.accuracy;
    }
    acc["folds"] = arr;
    acc["cv_mean_accuracy"] = cv.empty() ? 0.0 : sum / static_cast<double>(cv.size());
  }
  json w = json::object();
  for (std::size_t k = 0; k < ranker.names.size(); ++k) w[ranker.names[k]] = ranker.weights[k];
  acc["weights"] = w;

  const fs::path d = run.dir("ranker");
  save_ranker(ranker, d / "ranker.json");
  run.output("ranker.json");
  write_file(d / "accuracy.json", acc.dump(2) + "\n");
  run.output("accuracy.json");
}

void augment_stage(StageRun& run) {
  run.need("corpus");
  run.need("ranker");
  const auto seed = run.config().require_seed("augment");
  const json& sec = section(run.config(), "augment");
  const Corpus style = load_style(run.out());
  const auto external = load_external(run.out());
  if (!external) throw MissingArtifactError("external corpus (corpus.external)");
  const Corpus lookup = combine({&style, &*external});
  const auto disc = make_discriminator(run.out(), lookup);

  augment::AugmentConfig ac;
  ac.k = get_or<std::size_t>(sec, "k", ac.k);
  ac.min_score = get_or<double>(sec, "min_score", ac.min_score);
  ac.max_new_pairs = get_or<std::size_t>(sec, "max_new_pairs", ac.max_new_pairs);
  ac.seed = seed;
  const auto result = augment::augment_pairs(*external, style, *disc, ac);

  const fs::path d = run.dir("augment");
  augment::save_augmentation(result, d / "judgments.jsonl", d / "pairs.tsv");
  run.output("judgments.jsonl");
  run.output("pairs.tsv");
  Corpus candidates;
  for (const auto& doc : result.documents) candidates.add_document(doc);
  save_documents(candidates, d / "documents.jsonl");
  run.output("documents.jsonl");
  const auto rep = augment::augment_report(result);
  std::cout << "augment: scanned " << rep.candidates_scanned << " candidates, added "
            << rep.pairs_added << " pairs" << (result.capped ? " (capped)" : "") << '\n';
}

infuse::InfusionConfig infusion_config(const RunConfig& c, std::uint64_t seed) {
  const json& sec = section(c, "infusion");
  infuse::InfusionConfig ic;
  ic.mode = infuse::parse_loss_mode(get_or<std::string>(sec, "mode", "SD"));
  ic.beta = get_or<double>(sec, "beta", ic.beta);
  ic.w_d = get_or<double>(sec, "w_d", ic.w_d);
  ic.w_r = get_or<double>(sec, "w_r", ic.w_r);
  ic.learning_rate = get_or<double>(sec, "learning_rate", ic.learning_rate);
  ic.head_learning_rate = get_or<double>(sec, "head_learning_rate", ic.head_learning_rate);
  ic.epochs = get_or<std::size_t>(sec, "epochs", ic.epochs);
  ic.beam_width = get_or<std::size_t>(sec, "beam_width", ic.beam_width);
  ic.max_tokens = get_or<std::size_t>(sec, "max_tokens", ic.max_tokens);
  ic.seed = seed;
  ic.validate();
  return ic;
}

std::vector<std::string> eval_prompts(const RunConfig& c) {
  return strings_or(section(c, "eval"), "prompts", {""});
}

void train_infuse(StageRun& run) {
  run.need("corpus");
  run.need("ranker");
  const auto seed = run.config().require_seed("train-infuse");
  const json& sec = section(run.config(), "infusion");
  const auto ic = infusion_config(run.config(), seed);
  const bool use_augmented = get_or<bool>(sec, "use_augmented", false);

  const Corpus style = load_style(run.out());
  Corpus training = style;
  JudgmentSet judgments = style.judgments;
  if (use_augmented) {
    run.need("augmented");
    const fs::path d = run.out() / "augment";
    const Corpus candidates = load_documents(d / "documents.jsonl");
    for (auto doc : candidates.documents()) {
      doc.topic.clear();
      training.add_document(std::move(doc));
    }
    for (auto& j : load_judgments(d / "judgments.jsonl", training)) judgments.push_back(std::move(j));
  }
  const auto pairs = infuse::make_training_pairs(training, judgments);
  if (pairs.empty()) throw InputError("no non-tied judgments to train the generator on");

  std::vector<std::vector<std::string>> seqs;
  for (const auto& p : pairs) {
    seqs.push_back(p.prompt);
    seqs.push_back(p.y_s_star);
    seqs.push_back(p.y_ns_star);
  }
  for (const auto& prompt : eval_prompts(run.config())) seqs.push_back(prompt_tokens(prompt));
  const auto order = get_or<std::size_t>(sec, "order", 1);
  const auto state_dim = get_or<std::size_t>(sec, "state_dim", 8);
  if (order < 1 || order > 3) throw ConfigError("config: infusion.order must be 1, 2 or 3");
  if (state_dim < 1) throw ConfigError("config: infusion.state_dim must be positive");
  infuse::ToyLM lm(infuse::build_vocabulary(seqs), static_cast<int>(order), seed, state_dim);

  auto mle_cfg = ic;
  mle_cfg.epochs = get_or<std::size_t>(sec, "mle_epochs", ic.epochs);
  const auto base = infuse::train_mle(lm, pairs, mle_cfg);

  const Corpus lookup = combine({&training});
  const auto disc = make_discriminator(run.out(), lookup);
  const auto model = infuse::train(base.lm, infuse::BaselineHead(state_dim), pairs, *disc, ic);

  const fs::path d = run.dir("infusion");
  infuse::save_model(base.lm, base.head, d / "baseline.json");
  run.output("baseline.json");
  infuse::save_model(model.lm, model.head, d / "model.json");
  run.output("model.json");
  infuse::save_loss_curve(base.curve, infuse::LossMode::fixed, d / "baseline_loss.csv");
  run.output("baseline_loss.csv");
  infuse::save_loss_curve(model.curve, ic.mode, d / "loss.csv");
  run.output("loss.csv");
  std::cout << "train-infuse: " << pairs.size() << " pairs, vocabulary " << lm.vocab_size()
            << ", final L_R " << format_double(model.curve.back().l_r) << '\n';
}

const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {"baseline", "model"};
  return names;
}

void generate_stage(StageRun& run) {
  run.need("infusion");
  const auto seed = run.config().require_seed("generate");
  const auto ic = infusion_config(run.config(), seed);
  const auto prompts = eval_prompts(run.config());
  const auto per_prompt = get_or<std::size_t>(section(run.config(), "eval"), "samples_per_prompt", 25);
  if (per_prompt < 2) throw ConfigError("config: eval.samples_per_prompt must be at least 2");

  const fs::path d = run.dir("generate");
  for (std::size_t m = 0; m < model_names().size(); ++m) {
    const auto& name = model_names()[m];
    const auto [lm, head] = infuse::load_model(run.out() / "infusion" / (name + ".json"));
    std::vector<infuse::Generation> beams, samples;
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(m)};
    std::mt19937_64 rng(ss);
    for (const auto& prompt : prompts) {
      const auto toks = prompt_tokens(prompt);
      beams.push_back(infuse::generate(lm, toks, ic.beam_width, ic.max_tokens));
      const auto ids = lm.encode(toks);
      for (std::size_t s = 0; s < per_prompt; ++s) {
        infuse::Generation g;
        g.prompt = toks;
        g.tokens = infuse::sample(lm, ids, ic.max_tokens, rng);
        g.log_probs = infuse::sequence_log_probs(lm, g.tokens, ids);
        double sum = 0;
        for (double lp : g.log_probs) sum += lp;
        g.score = g.log_probs.empty() ? 0.0 : sum / static_cast<double>(g.log_probs.size());
        samples.push_back(std::move(g));
      }
    }
    infuse::save_generations(lm, beams, d / (name + "_beam.jsonl"));
    run.output(name + "_beam.jsonl");
    infuse::save_generations(lm, samples, d / (name + "_samples.jsonl"));
    run.output(name + "_samples.jsonl");
  }
  std::cout << "generate: " << prompts.size() << " prompts, " << per_prompt
            << " samples per prompt per model\n";
}

struct GeneratedText {
  std::string prompt;
  std::string text;
};

std::vector<GeneratedText> read_generations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<GeneratedText> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      const auto rec = json::parse(line);
      out.push_back({rec.at("prompt").get<std::string>(), rec.at("text").get<std::string>()});
    } catch (const json::exception& e) {
      throw InputError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

FeatureMatrix generated_matrix(const std::vector<GeneratedText>& texts,
                               const std::vector<std::string>& registry,
                               const FeatureExtractor& ex) {
  Corpus gen;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    Document doc;
    std::ostringstream id;
    id << 'g' << std::setw(5) << std::setfill('0') << i;
    doc.id = id.str();
    doc.text = texts[i].text;
    doc.source = DocumentSource::generated;
    segment(doc);
    gen.add_document(std::move(doc));
  }
  return build_matrix(gen, registry, false, &ex);
}

// Non-finite values travel as strings so the JSON stays valid.
json num(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

double num_of(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

json component_json(const eval::RougeComponent& c) {
  return {{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}};
}

eval::RougeComponent component_of(const json& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

json evaluation_json(const eval::ModelEvaluation& e) {
  json j = {{"model", e.model},
            {"generations", e.generations},
            {"rouge",
             {{"rouge1", component_json(e.rouge.rouge1)},
              {"rouge2", component_json(e.rouge.rouge2)},
              {"rougeL", component_json(e.rouge.rougeL)},
              {"empty_hypothesis", e.rouge.empty_hypothesis}}}};
  if (e.bertscore) j["bertscore"] = *e.bertscore;
  if (e.agreement) j["agreement"] = *e.agreement;
  if (e.significance) {
    json rows = json::array();
    for (const auto& f : e.significance->features) {
      json r = {{"feature", f.feature},
                {"baseline_mean", num(f.baseline_mean)},
                {"model_mean", num(f.model_mean)},
                {"t", num(f.test.t)},
                {"p", num(f.test.p)},
                {"df", num(f.test.df)},
                {"degenerate", f.test.degenerate},
                {"bucket", f.bucket}};
      if (f.direction_correct) r["direction_correct"] = *f.direction_correct;
      if (f.gamma) r["gamma"] = *f.gamma;
      rows.push_back(r);
    }
    j["significance"] = rows;
  }
  return j;
}

eval::ModelEvaluation evaluation_of(const json& j) {
  eval::ModelEvaluation e;
  e.model = j.at("model").get<std::string>();
  e.generations = j.at("generations").get<std::size_t>();
  const auto& r = j.at("rouge");
  e.rouge.rouge1 = component_of(r.at("rouge1"));
  e.rouge.rouge2 = component_of(r.at("rouge2"));
  e.rouge.rougeL = component_of(r.at("rougeL"));
  e.rouge.empty_hypothesis = r.at("empty_hypothesis").get<bool>();
  if (j.contains("bertscore")) e.bertscore = j.at("bertscore").get<double>();
  if (j.contains("agreement")) e.agreement = j.at("agreement").get<double>();
  if (j.contains("significance")) {
    eval::SignificanceReport rep;
    for (const auto& row : j.at("significance")) {
      eval::FeatureShift f;
      f.feature = row.at("feature").get<std::string>();
      f.baseline_mean = num_of(row.at("baseline_mean"));
      f.model_mean = num_of(row.at("model_mean"));
      f.test.t = num_of(row.at("t"));
      f.test.p = num_of(row.at("p"));
      f.test.df = num_of(row.at("df"));
      f.test.degenerate = row.at("degenerate").get<bool>();
      f.bucket = row.at("bucket").get<std::string>();
      if (row.contains("direction_correct")) f.direction_correct = row.at("direction_correct").get<bool>();
      if (row.contains("gamma")) f.gamma = row.at("gamma").get<double>();
      rep.features.push_back(std::move(f));
    }
    e.significance = std::move(rep);
  }
  return e;
}

void evaluate_stage(StageRun& run) {
  run.need("corpus");
  run.need("correlations");
  run.need("generations");
  const Corpus style = load_style(run.out());
  const auto correlations = bayes::read_correlations_csv(run.out() / "bayes" / "correlations.csv");
  const fs::path gen_dir = run.out() / "generate";

  // ROUGE references: the styled side of every non-tied judgment.
  std::vector<std::string> refs;
  std::set<std::string> seen;
  for (const auto& j : without_ties(style.judgments)) {
    if (seen.insert(j.a_id).second) refs.push_back(style.document(j.a_id).text);
  }
  if (refs.empty()) throw InputError("no styled texts to score generations against");

  std::vector<std::string> registry;
  for (const auto& c : correlations) registry.push_back(c.feature);
  FeatureExtractor ex(registry, WordLists::bundled());
  ex.set_token_lexicon(build_token_lexicon(style));

  std::vector<eval::ModelEvaluation> models;
  std::vector<FeatureMatrix> matrices;
  for (const auto& name : model_names()) {
    eval::ModelEvaluation e;
    e.model = name;
    const auto beams = read_generations(gen_dir / (name + "_beam.jsonl"));
    std::vector<std::pair<std::string, std::string>> scored;
    for (const auto& g : beams) {
      // The generated text is the prompt followed by its continuation.
      const std::string hyp = g.prompt.empty() ? g.text : g.prompt + " " + g.text;
      // Each generation is scored against its closest styled text.
      std::size_t best = 0;
      double best_f1 = -1;
      for (std::size_t r = 0; r < refs.size(); ++r) {
        const double f1 = eval::rouge(refs[r], hyp).rougeL.f1;
        if (f1 > best_f1) {
          best_f1 = f1;
          best = r;
        }
      }
      scored.emplace_back(refs[best], hyp);
    }
    e.rouge = eval::mean_rouge(scored);
    const auto samples = read_generations(gen_dir / (name + "_samples.jsonl"));
    e.generations = samples.size();
    matrices.push_back(generated_matrix(samples, registry, ex));
    models.push_back(std::move(e));
  }
  models[1].significance = eval::significance_report(matrices[0], matrices[1], correlations);
  try {
    models[1].agreement = eval::agreement_score(*models[1].significance, correlations);
  } catch (const InputError& e) {
    std::cout << "evaluate: no agreement score (" << e.what() << ")\n";
  }
  const json& sec = section(run.config(), "eval");
  if (sec.contains("bertscores")) {
    const fs::path p = run.config().base_dir / sec.at("bertscores").get<std::string>();
    if (!fs::exists(p)) throw MissingArtifactError("eval.bertscores (" + p.string() + ")");
    run.input_file(sec.at("bertscores").get<std::string>(), p);
    const auto scores = eval::load_bertscores(p);
    for (auto& m : models) {
      if (auto it = scores.find(m.model); it != scores.end()) m.bertscore = it->second;
    }
  }

  const fs::path d = run.dir("evaluate");
  eval::write_rouge_csv(models, d / "rouge.csv");
  run.output("rouge.csv");
  eval::write_significance_csv(models, d / "significance.csv");
  run.output("significance.csv");
  json all = json::array();
  for (const auto& m : models) all.push_back(evaluation_json(m));
  write_file(d / "evaluation.json", all.dump(2) + "\n");
  run.output("evaluation.json");
  std::cout << "evaluate: ROUGE-L f1 baseline " << format_double(models[0].rouge.rougeL.f1)
            << ", model " << format_double(models[1].rouge.rougeL.f1);
  if (models[1].agreement) std::cout << ", agreement " << format_double(*models[1].agreement);
  std::cout << '\n';
}

std::string correlation_markdown(const std::vector<bayes::CorrelationResult>& results) {
  std::ostringstream os;
  os << "| Feature | Pooled slope | 90% interval | Max R-hat | Converged |\n";
  os << "|---|---|---|---|---|\n";
  for (const auto& r : results) {
    os << "| " << r.feature << " | " << std::fixed << std::setprecision(3) << r.pooled.mean
       << " | [" << r.pooled.lower << ", " << r.pooled.upper << "] | ";
    if (r.max_rhat) {
      os << *r.max_rhat;
    } else {
      os << "-";
    }
    os << " | " << (r.converged ? "yes" : "no") << " |\n";
  }
  return os.str();
}

void report_stage(StageRun& run) {
  run.need("correlations");
  run.need("evaluation");
  auto correlations = bayes::read_correlations_csv(run.out() / "bayes" / "correlations.csv");
  bayes::read_diagnostics_csv(run.out() / "bayes" / "diagnostics.csv", correlations);
  const json all = json::parse(read_file(run.out() / "evaluate" / "evaluation.json"));
  std::vector<eval::ModelEvaluation> models;
  for (const auto& j : all) models.push_back(evaluation_of(j));

  const fs::path d = run.dir("report");
  write_file(d / "forest.svg", bayes::forest_plot_svg(correlations));
  run.output("forest.svg");
  std::ostringstream md;
  md << "# Style infusion report\n\n"
     << "## Feature correlations\n\n"
     << correlation_markdown(correlations) << "\n"
     << "## Overlap with styled texts\n\n"
     << eval::rouge_markdown(models) << "\n"
     << "## Feature shifts against the baseline\n\n"
     << eval::significance_markdown(models) << "\n"
     << "## Agreement with the audience\n\n"
     << eval::agreement_markdown(models);
  write_file(d / "report.md", md.str());
  run.output("report.md");
  std::cout << "report: " << (d / "report.md").string() << '\n';
}

}  // namespace

void run_stage(Stage stage, const RunConfig& config, const fs::path& out) {
  StageRun run(stage, config, out);
  switch (stage) {
    case Stage::ingest: ingest(run); break;
    case Stage::features: features(run); break;
    case Stage::fit_bayes: fit_bayes(run); break;
    case Stage::train_ranker: train_ranker_stage(run); break;
    case Stage::augment: augment_stage(run); break;
    case Stage::train_infuse: train_infuse(run); break;
    case Stage::generate: generate_stage(run); break;
    case Stage::evaluate: evaluate_stage(run); break;
    case Stage::report: report_stage(run); break;
  }
  run.commit();
}

void run_all(const RunConfig& config, const fs::path& out) {
  for (Stage s : all_stages()) run_stage(s, config, out);
}

}  // namespace stylefuse::pipeline
