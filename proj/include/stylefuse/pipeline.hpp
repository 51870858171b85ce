#ifndef STYLEFUSE_PIPELINE_HPP
#define STYLEFUSE_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "stylefuse/common.hpp"

namespace stylefuse::pipeline {

/// The run configuration violates the schema (unknown key, wrong type,
/// out-of-range value, absent seed).
class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

struct RunConfig {
  nlohmann::json tree;
  /// Directory the config was read from; relative corpus paths resolve here.
  std::filesystem::path base_dir;
  /// SHA-256 of the config file bytes.
  std::string sha256;
  std::optional<std::uint64_t> seed;

  /// Seed for stages that train or sample; ConfigError when absent.
  std::uint64_t require_seed(const std::string& stage) const;
};

/// Reads and schema-checks a JSON config. `seed` overrides the config's.
/// Throws MissingArtifactError when the file does not exist.
RunConfig load_config(const std::filesystem::path& path,
                      std::optional<std::uint64_t> seed = std::nullopt);
RunConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                       std::optional<std::uint64_t> seed = std::nullopt);

enum class Stage {
  ingest,
  features,
  fit_bayes,
  train_ranker,
  augment,
  train_infuse,
  generate,
  evaluate,
  report
};

/// Pipeline order.
const std::vector<Stage>& all_stages();
/// Subcommand name, e.g. "fit-bayes".
std::string stage_name(Stage stage);
/// Name of the artifact the stage writes, e.g. "correlations".
std::string artifact_name(Stage stage);
Stage parse_stage(const std::string& name);

/// Runs one stage against the run directory `out`, writing its files and
/// updating out/manifest.json. Upstream artifacts are read from the
/// manifest; an absent one raises MissingArtifactError naming it.
void run_stage(Stage stage, const RunConfig& config, const std::filesystem::path& out);

/// Every stage in order.
void run_all(const RunConfig& config, const std::filesystem::path& out);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Library, compiler and dependency versions recorded in manifests.
nlohmann::json versions();

}  // namespace stylefuse::pipeline

#endif  // STYLEFUSE_PIPELINE_HPP
