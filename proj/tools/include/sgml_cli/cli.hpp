#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sgml/dataset.hpp"
#include "sgml/evaluator.hpp"
#include "sgml/gradcheck.hpp"
#include "sgml/trainer.hpp"

namespace sgml::cli {

enum class SplitKind { instance, class_disjoint };

std::string to_string(SplitKind kind);
SplitKind split_kind_from_string(const std::string& s);
std::string to_string(RetrievalMode mode);
RetrievalMode retrieval_mode_from_string(const std::string& s);

/// Everything a subcommand needs, resolved from defaults, then a JSON config
/// file, then command-line flags.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  /// Dataset file to load; empty means generate from `data`.
  std::string data_path;
  DatasetSpec data;
  SplitKind split = SplitKind::instance;
  InstanceRetrieval instance;
  ClassRetrieval classes;
  TrainConfig train;
  std::vector<std::size_t> ks{1, 2, 4, 8};
  std::vector<FeatureLayer> layers{FeatureLayer::emb};
  /// Unset: separate when the data has query/gallery splits, else leave-one-out.
  std::optional<RetrievalMode> mode;
  std::vector<double> alphas{2.0, 2.5, 2.7, 3.0};
  std::vector<double> betas{0.0, 0.1, 0.3, 0.5, 0.7};
  GradCheckOptions gradcheck;

  /// Pushes `seed` into every seeded component.
  void apply_seed();
};

/// Canonical JSON (stable key order) of the resolved configuration.
std::string to_json(const ExperimentConfig& config);
/// Keys present in `json` override `base`; unknown keys are an error.
ExperimentConfig experiment_config_from_json(const std::string& json, ExperimentConfig base = {});

/// Loaded or generated data with its train / evaluation views.
struct PreparedData {
  Dataset dataset;
  TrainingSet train;
  EvalSplit eval;
  std::size_t split_warnings = 0;
};

/// Loads `data_path` (using its stored splits when present) or generates the
/// dataset, then splits it with the configured policy.
PreparedData prepare_data(const ExperimentConfig& config);
EvalSplit make_eval_split(const Dataset& dataset, std::optional<RetrievalMode> mode);

struct GenDataResult {
  std::filesystem::path data_file;
  std::filesystem::path splits_file;
  std::string summary;
};
GenDataResult cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct TrainCommandResult {
  std::filesystem::path checkpoint_file;
  std::filesystem::path history_file;
  TrainResult result;
};
TrainCommandResult cmd_train(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct EvalCommandResult {
  std::filesystem::path csv_file;
  std::vector<RecallReport> reports;
};
EvalCommandResult cmd_eval(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& out_dir);

struct SweepRow {
  double alpha = 0.0;
  double beta = 0.0;
  double recall_at_1 = 0.0;
};
struct SweepResult {
  std::filesystem::path csv_file;
  std::vector<SweepRow> rows;
};
std::string sweep_csv(const std::vector<SweepRow>& rows);
SweepResult cmd_sweep(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct AblationRow {
  Variant variant = Variant::sgml;
  RecallReport report;
};
struct AblationResult {
  std::filesystem::path csv_file;
  std::vector<AblationRow> rows;
};
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);
/// Trains metric_only, attr_only, multitask and sgml on the same data and
/// seed. attr_only is scored on the fc layer since its embedding head is
/// never trained; the others on the first configured layer.
AblationResult cmd_ablate(const ExperimentConfig& config, const std::filesystem::path& out_dir);

struct GradCheckCommandResult {
  std::filesystem::path report_file;
  GradCheckReport report;
};
GradCheckCommandResult cmd_gradcheck(const ExperimentConfig& config, const std::filesystem::path& out_dir);

/// Full command-line entry point. Returns the process exit code: 0 on
/// success, 1 on a failed gradient check, 2 on any error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sgml::cli
