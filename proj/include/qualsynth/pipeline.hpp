#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qualsynth/inference.hpp"
#include "qualsynth/panel.hpp"
#include "qualsynth/sampler.hpp"
#include "qualsynth/simgen.hpp"
#include "qualsynth/synth.hpp"

namespace qualsynth {

enum class Stage { Ingest, Residualize, Smooth, Filter, Synth, Placebo, Report };

std::string_view stage_name(Stage s);
/// Throws InvalidConfig for unknown names.
Stage stage_from_name(std::string_view name);

/// Which series the synthetic-control stage fits.
enum class SynthSeries { Auto, Observed, Residual, Smoothed, Trend };

struct StageToggles {
  bool residualize = true;
  bool smooth = true;
  bool filter = true;
  bool synth = true;
  bool placebo = true;
  bool report = true;

  bool enabled(Stage s) const;
};

/// Groups of treated units compared in the equality table: units whose
/// covariate is above `threshold` against the rest.
struct EqualitySplit {
  std::string covariate = "landlocked";
  double threshold = 0.5;
};

/// Configuration of one pipeline run. Every field has a default; see
/// README.md for the file format.
struct RunConfig {
  /// Input panel file. Relative paths resolve against the config file.
  std::filesystem::path input;
  /// Generates the input instead of reading it when set.
  std::optional<DgpConfig> simgen;
  std::filesystem::path output_dir = "qualsynth_out";
  /// Empty means every outcome found in the input.
  std::vector<std::string> outcomes;
  /// Required unless `simgen` supplies it.
  std::optional<int> t0;
  PredictorSpec predictors;
  SynthOptions synth;
  SynthSeries synth_series = SynthSeries::Auto;
  SamplerConfig sampler;
  SmoothingOptions smoothing;
  /// Use the posterior median instead of the mean as the smoothed value.
  bool smoothed_median = false;
  double phi = 6.25;
  PlaceboBudget placebo;
  EqualitySplit equality;
  /// Mechanism covariates for the principal-component screen; unset means
  /// every numeric covariate.
  std::optional<std::vector<std::string>> mechanisms;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  StageToggles stages;
};

/// Parses a JSON run configuration. QUALSYNTH_OUTPUT_DIR, when set, overrides
/// `output_dir`. Throws ParseError or InvalidConfig.
RunConfig parse_run_config(std::string_view json, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical JSON echo of a configuration.
std::string run_config_to_json(const RunConfig& cfg);

struct StageRecord {
  std::string stage;
  std::string status;  // "ok", "skipped", "failed"
  double seconds = 0.0;
  std::string message;
};

struct RunResult {
  bool ok = true;
  std::vector<StageRecord> stages;
  /// Paths relative to the output directory.
  std::vector<std::string> files;
  std::string error;
};

/// Runs the enabled stages in pipeline order up to and including `last`,
/// writing artifacts and manifest.json under cfg.output_dir.
RunResult run_pipeline(const RunConfig& cfg, Stage last = Stage::Report);

/// Builds the report from the artifacts of an earlier run. Throws
/// MissingArtifact. Returns the files written, relative to `run_dir`.
std::vector<std::string> write_report(const std::filesystem::path& run_dir);

}  // namespace qualsynth
