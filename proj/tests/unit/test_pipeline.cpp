#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "stylefuse/pipeline.hpp"
#include "support.hpp"

using namespace stylefuse;
using namespace stylefuse::pipeline;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string err;
};

Outcome cli(const std::string& args, const fs::path& dir) {
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + STYLEFUSE_CLI + "\" " + args + " > \"" +
                          (dir / "stdout.txt").string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.err = testing::read_text(err);
  return o;
}

std::string fixture_config() {
  return (fs::path(STYLEFUSE_FIXTURE_DIR) / "synthetic" / "config.json").string();
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("config schema errors") {
  const fs::path base = STYLEFUSE_FIXTURE_DIR;
  CHECK_NOTHROW(parse_config(R"({"seed": 3})", base));
  CHECK_THROWS_AS(parse_config("[1, 2]", base), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"bogus": {}})", base), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"ranker": {"bogus": 1}})", base), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"ranker": {"epochs": "many"}})", base), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seed": -1})", base), ConfigError);
  CHECK_THROWS_AS(parse_config("{not json", base), ConfigError);

  const auto unseeded = parse_config("{}", base);
  CHECK_THROWS_AS(unseeded.require_seed("fit-bayes"), ConfigError);
  CHECK(parse_config("{}", base, 11).require_seed("fit-bayes") == 11);
  CHECK(parse_config(R"({"seed": 3})", base, 11).require_seed("fit-bayes") == 11);
  CHECK_THROWS_AS(load_config(base / "absent.json"), MissingArtifactError);
}

TEST_CASE("stage names round-trip") {
  REQUIRE(all_stages().size() == 9);
  for (Stage s : all_stages()) CHECK(parse_stage(stage_name(s)) == s);
  CHECK(stage_name(Stage::fit_bayes) == "fit-bayes");
  CHECK_THROWS_AS(parse_stage("nope"), InputError);
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("a missing upstream artifact exits with code 2 and names it") {
  const auto dir = testing::temp_dir("pipeline_missing");
  const auto out = dir / "run";
  fs::create_directories(out);
  const auto r = cli("fit-bayes --config \"" + fixture_config() + "\" --out \"" + out.string() + "\"", dir);
  CHECK(r.code == 2);
  CHECK(r.err.find("features") != std::string::npos);
}

TEST_CASE("an invalid config exits with code 1") {
  const auto dir = testing::temp_dir("pipeline_badconfig");
  testing::write_text(dir / "bad.json", R"({"seed": 1, "ranker": {"l2": "big"}})");
  const auto r = cli("ingest --config \"" + (dir / "bad.json").string() + "\" --out \"" +
                         (dir / "run").string() + "\"",
                     dir);
  CHECK(r.code == 1);
  CHECK(r.err.find("ranker.l2") != std::string::npos);
}

TEST_CASE("a full run records every artifact and reruns byte-identically") {
  const auto dir = testing::temp_dir("pipeline_full");
  const auto a = dir / "a", b = dir / "b";
  REQUIRE(cli("run --config \"" + fixture_config() + "\" --out \"" + a.string() + "\"", dir).code == 0);
  REQUIRE(cli("run --config \"" + fixture_config() + "\" --out \"" + b.string() + "\"", dir).code == 0);

  const auto manifest = nlohmann::json::parse(testing::read_text(a / "manifest.json"));
  const auto& arts = manifest.at("artifacts");
  CHECK(arts.size() == 9);
  for (const auto& name : {"corpus", "features", "correlations", "ranker", "augmented", "infusion",
                           "generations", "evaluation", "report"}) {
    CHECK_MESSAGE(arts.contains(name), name);
  }
  for (const auto& [name, rec] : arts.items()) {
    CHECK(rec.at("seed") == 7);
    CHECK(rec.at("config_sha256") == sha256_file(fixture_config()));
    REQUIRE(!rec.at("files").empty());
    for (const auto& f : rec.at("files")) {
      const auto path = a / f.at("path").get<std::string>();
      REQUIRE(fs::exists(path));
      CHECK(sha256_file(path) == f.at("sha256").get<std::string>());
    }
  }
  CHECK(testing::read_text(a / "manifest.json") == testing::read_text(b / "manifest.json"));
  for (const auto& f : {"generate/model_samples.jsonl", "generate/model_beam.jsonl",
                        "bayes/correlations.csv", "evaluate/evaluation.json"}) {
    CHECK_MESSAGE(testing::read_text(a / f) == testing::read_text(b / f), f);
  }
}

}  // TEST_SUITE
