#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cadr/config.hpp"
#include "cadr/trainer.hpp"

namespace cadr {

struct ManifestRun {
  std::string name;
  std::string group;  // aggregation key; defaults to the mode name
  RunConfig config;
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> test;
};

/// Global keys (output_dir plus RunConfig defaults) followed by `[run <name>]` sections.
struct ExperimentManifest {
  std::vector<ManifestRun> runs;
  std::filesystem::path output_dir = ".";

  /// Relative paths resolve against `base_dir`.
  static ExperimentManifest from(const SectionedConfig& cfg, const std::filesystem::path& base_dir);
  static ExperimentManifest load(const std::filesystem::path& path);
};

struct ComparisonRow {
  std::string run;
  std::string group;
  std::string seed;  // "all" on aggregate rows
  std::string status = "ok";
  double mean_acc = 0.0;
  double gm_acc = 0.0;
  double mean_acc_std = 0.0;
  double gm_acc_std = 0.0;
  bool aggregate = false;
};

/// Runs every entry (a failure is recorded on its row and does not stop the others), writes
/// `<output_dir>/<name>.history.csv` and `<name>.ckpt`, and appends one aggregate row per group.
std::vector<ComparisonRow> run_manifest(const ExperimentManifest& manifest, unsigned parallel = 1);

/// Final-record comparison rows for saved histories, aggregated by mode.
std::vector<ComparisonRow> report_rows(const std::vector<std::pair<std::string, TrainHistory>>& histories);

/// Appends per-group mean/std rows for the successful runs in `rows`.
void append_aggregates(std::vector<ComparisonRow>& rows);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);

/// Long format: step,run,metric,value.
std::string plot_data(const std::vector<std::pair<std::string, TrainHistory>>& histories);

/// Inverse of plot_data for the per-step records. Throws FormatError on malformed input.
std::map<std::string, std::vector<EvalRecord>> parse_plot_data(const std::string& csv);

/// Run name for a history path: the file name without ".history.csv" / ".csv".
std::string run_name_from_path(const std::filesystem::path& path);

}  // namespace cadr
