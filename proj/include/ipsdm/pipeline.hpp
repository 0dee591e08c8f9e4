#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipsdm/balance.hpp"
#include "ipsdm/corpus.hpp"
#include "ipsdm/metrics.hpp"
#include "ipsdm/tokenizer.hpp"
#include "ipsdm/trainer.hpp"

namespace ipsdm {

struct DatasetSpec {
  std::filesystem::path path;
  std::string text_column = "Email";
  std::string label_column = "Category";
  std::optional<std::string> source_id;
  LabelMap labels = LabelMap::defaults();
};

struct BalanceSettings {
  bool enabled = true;
  std::size_t k = 5;
  double beta = 1.0;
  std::uint64_t seed = 7;
};

struct TokenizerSettings {
  std::size_t vocab_size = 8192;
  std::size_t max_len = 128;  // also the model's max_len
};

struct PipelineConfig {
  std::vector<DatasetSpec> datasets;
  SplitSpec split;
  BalanceSettings balance;
  TokenizerSettings tokenizer;
  TrainingConfig training;
  std::filesystem::path output_dir = "out";
  double overfit_threshold = 0.05;

  /// Relative paths are resolved against base_dir. Unknown keys are rejected.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  /// One seed for every stage (split, synthesis, training).
  void set_seed(std::uint64_t seed);
  /// Schema-level checks plus existence of every dataset file (Io).
  void validate() const;

  std::filesystem::path file(std::string_view name) const { return output_dir / name; }
};

// Output file names inside output_dir.
namespace files {
inline constexpr const char* train = "train.csv";
inline constexpr const char* val = "val.csv";
inline constexpr const char* test = "test.csv";
inline constexpr const char* manifest = "manifest.json";
inline constexpr const char* vocab = "vocab.json";
inline constexpr const char* balanced = "train_balanced.csv";
inline constexpr const char* balance_report = "balance_report.json";
inline constexpr const char* checkpoint = "checkpoint.ipsd";
inline constexpr const char* diverged = "checkpoint.last_good.ipsd";
inline constexpr const char* history = "history.json";
inline constexpr const char* evaluation = "evaluation.json";
}  // namespace files

struct PrepareResult {
  CorpusSplit split;
  nlohmann::json manifest;
};

/// Load, merge, split; writes the three split CSVs and manifest.json.
PrepareResult run_prepare(const PipelineConfig& config);

/// Learns the vocabulary on train.csv and writes vocab.json.
Vocabulary run_tokenizer_train(const PipelineConfig& config);

struct BalanceStageResult {
  BalanceReport report;
  bool nothing_to_balance = false;  // output is a copy of the input
};

/// Reads train.csv, writes train_balanced.csv and balance_report.json. Trains
/// the vocabulary first if vocab.json is missing.
BalanceStageResult run_balance(const PipelineConfig& config);

/// Trains on train_balanced.csv when balancing is enabled (train.csv otherwise)
/// and writes checkpoint.ipsd and history.json. On divergence the last good
/// checkpoint is written to checkpoint.last_good.ipsd before rethrowing.
TrainResult run_train(const PipelineConfig& config, const Checkpoint* resume = nullptr);

struct EvaluationReport {
  MetricsReport metrics;
  std::optional<GapRecord> gap;

  nlohmann::json to_json() const;
};

EvaluationReport run_evaluate(const Checkpoint& checkpoint, const std::optional<std::filesystem::path>& val_csv,
                              const std::optional<std::filesystem::path>& test_csv, double overfit_threshold = 0.05);

/// One JSON object per text: {"label": ..., "probabilities": {...}}.
nlohmann::json classify_json(const Checkpoint& checkpoint, std::string_view text);

/// Command-line entry point. Returns the process exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int internal = 1;
inline constexpr int input = 2;
inline constexpr int numeric = 3;
inline constexpr int usage = 64;
}  // namespace exit_code

/// Exit code for an error raised by any stage.
int exit_code_for(ErrorCode code) noexcept;

}  // namespace ipsdm
