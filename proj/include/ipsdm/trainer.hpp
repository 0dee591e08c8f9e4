#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipsdm/corpus.hpp"
#include "ipsdm/error.hpp"
#include "ipsdm/metrics.hpp"
#include "ipsdm/model.hpp"
#include "ipsdm/optim.hpp"
#include "ipsdm/tokenizer.hpp"

namespace ipsdm {

enum class StoppingMetric { val_accuracy, val_loss };

struct EarlyStopping {
  bool enabled = true;
  std::size_t patience = 2;
  StoppingMetric metric = StoppingMetric::val_accuracy;

  friend bool operator==(const EarlyStopping&, const EarlyStopping&) = default;
};

struct TrainingConfig {
  std::size_t train_batch_size = 32;
  std::size_t val_batch_size = 64;
  std::size_t num_epochs = 3;
  std::uint64_t seed = 42;
  EarlyStopping early_stopping;
  OptimizerHyperparams optimizer = default_optimizer();
  LrSchedule schedule = LrSchedule::constant;
  double max_grad_norm = 0.0;  // 0 disables clipping
  ModelConfig model;

  /// The printed update rule multiplies any parameter whose gradient is
  /// exactly zero by (1 - lr*wd/eps) per step, which diverges for unused
  /// embedding rows, so training defaults to the decoupled form.
  static OptimizerHyperparams default_optimizer() {
    OptimizerHyperparams h;
    h.variant = AdamWVariant::decoupled;
    return h;
  }

  void validate() const;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double learning_rate = 0.0;
  double wall_time = 0.0;  // seconds; not persisted in checkpoints

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

/// Everything needed to continue an interrupted run.
struct ResumeState {
  ModelParameters<float> latest;
  OptimizerState<float> optimizer;
  std::size_t epochs_completed = 0;
  std::size_t best_epoch = 0;
  double best_metric = 0.0;
  std::size_t stale_epochs = 0;
};

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  TrainingConfig training;
  Vocabulary vocab;
  ModelParameters<float> params;  // best epoch
  std::vector<EpochRecord> history;
  std::optional<ResumeState> resume;
};

/// Serialized container: "IPSD", u32 version, u64 header length, JSON header,
/// u32 tensor count, tensors (u32 name length, name, u32 rows, u32 cols,
/// little-endian f32 row-major), trailing CRC32 of all preceding bytes.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Index batches over [0, n). With shuffle the order is a pure function of
/// (seed, epoch); without it batches follow input order.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                   std::uint64_t seed, std::size_t epoch);

struct TrainOptions {
  const Checkpoint* resume = nullptr;
  /// Return after this epoch even if more remain (for resumable runs).
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Checkpoint checkpoint;
  bool stopped_early = false;
};

/// Thrown when the training loss or parameters become non-finite. Carries the
/// checkpoint as of the last completed epoch.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& message, Checkpoint last_good)
      : Error(ErrorCode::DivergedLoss, message), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const noexcept { return last_good_; }

 private:
  Checkpoint last_good_;
};

TrainResult train(const TrainingConfig& config, const Corpus& train_split, const Corpus& val_split,
                  const Vocabulary& vocab, const TrainOptions& options = {});

struct EvaluationOutput {
  SplitMetrics metrics;
  std::vector<Label> predictions;
};

/// Inference pass without dropout, in batches of val_batch_size.
EvaluationOutput evaluate_detailed(const ModelParameters<float>& params, const Vocabulary& vocab,
                                   const Corpus& split, std::size_t batch_size);
SplitMetrics evaluate(const Checkpoint& checkpoint, const Corpus& split);
/// Also checks that `vocab` is the checkpoint's vocabulary (VocabularyMismatch).
SplitMetrics evaluate(const Checkpoint& checkpoint, const Corpus& split, const Vocabulary& vocab);

struct GapRecord {
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  double gap = 0.0;
  bool warn = false;
};

GapRecord overfit_gap(const std::vector<EpochRecord>& history, double test_accuracy, double threshold = 0.05);

// JSON forms shared by the checkpoint header and the pipeline config.
nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
nlohmann::json to_json(const OptimizerHyperparams& h);
OptimizerHyperparams optimizer_from_json(const nlohmann::json& j, OptimizerHyperparams base = {});
nlohmann::json to_json(const TrainingConfig& c);
TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig base = {});
nlohmann::json to_json(const EpochRecord& r, bool include_wall_time = true);
EpochRecord epoch_record_from_json(const nlohmann::json& j);

}  // namespace ipsdm
