// stylefuse: pipeline driver. Every stage reads and writes a run directory.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "stylefuse/pipeline.hpp"
#include "stylefuse/synth.hpp"

namespace pl = stylefuse::pipeline;

namespace {

struct Options {
  std::string config;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("--config", opt.config, "JSON run configuration")->required();
  cmd->add_option("--out", opt.out, "Run directory")->capture_default_str();
  cmd->add_option("--seed", opt.seed, "Seed overriding the config's");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Style infusion pipeline"};
  app.require_subcommand(1);
  Options opt;

  std::vector<std::pair<CLI::App*, pl::Stage>> stages;
  for (pl::Stage s : pl::all_stages()) {
    auto* cmd = app.add_subcommand(pl::stage_name(s), "Run the " + pl::stage_name(s) + " stage");
    add_common(cmd, opt);
    stages.emplace_back(cmd, s);
  }
  auto* run = app.add_subcommand("run", "Run every stage in order");
  add_common(run, opt);

  std::string fixture_dir;
  std::uint64_t fixture_seed = 7;
  stylefuse::synth::FixtureSpec spec;
  auto* synth = app.add_subcommand("synth", "Write the synthetic pipeline fixture");
  synth->add_option("--out", fixture_dir, "Fixture directory")->required();
  synth->add_option("--seed", fixture_seed, "Fixture seed")->capture_default_str();
  synth->add_option("--pairs", spec.pairs, "Judgments")->capture_default_str();
  synth->add_option("--external", spec.external, "External candidates")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) {
      stylefuse::synth::write_pipeline_fixture(fixture_dir, spec, fixture_seed);
      std::cout << "synth: wrote " << fixture_dir << '\n';
      return 0;
    }
    const auto config = pl::load_config(opt.config, opt.seed);
    if (run->parsed()) {
      pl::run_all(config, opt.out);
      return 0;
    }
    for (const auto& [cmd, stage] : stages) {
      if (cmd->parsed()) pl::run_stage(stage, config, opt.out);
    }
    return 0;
  } catch (const stylefuse::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
