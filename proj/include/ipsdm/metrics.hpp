#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ipsdm/corpus.hpp"
#include "ipsdm/tensor.hpp"

namespace ipsdm {

/// Max-subtracted softmax. Throws NonFiniteInput.
std::vector<double> softmax(std::span<const double> logits);

struct CrossEntropyResult {
  double loss = 0.0;         // mean over the batch
  Matrix<double> gradient;   // (softmax - onehot) / batch
  std::vector<double> per_sample;
};

/// Mean negative log-likelihood of the true label, via log-sum-exp.
CrossEntropyResult cross_entropy(const Matrix<double>& logits, std::span<const Label> labels);

struct ConfusionMatrix {
  /// counts[true][predicted]
  std::array<std::array<std::uint64_t, kNumLabels>, kNumLabels> counts{};

  std::uint64_t total() const noexcept;
  std::uint64_t trace() const noexcept;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion(std::span<const Label> predictions, std::span<const Label> labels);

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool precision_defined = true;  // false when nothing was predicted as this class
  bool recall_defined = true;     // false when the class has no samples

  friend bool operator==(const ClassScore&, const ClassScore&) = default;
};

struct SplitMetrics {
  double accuracy = 0.0;
  std::array<ClassScore, kNumLabels> per_class{};
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> loss;
  std::uint64_t samples = 0;
  std::vector<std::string> warnings;

  friend bool operator==(const SplitMetrics&, const SplitMetrics&) = default;
};

/// One-vs-rest precision/recall/F1 per class, macro means, accuracy.
/// Undefined ratios are reported as 0 with a warning. Throws EmptyMatrix.
SplitMetrics score(const ConfusionMatrix& matrix);

struct MetricsReport {
  std::optional<SplitMetrics> validation;
  std::optional<SplitMetrics> test;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

nlohmann::json to_json(const SplitMetrics& m);
SplitMetrics split_metrics_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MetricsReport& r);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

enum class ReportFormat {
  table_csv,  // rows = eight validation/test metrics, columns = models
  long_csv,   // metric,split,model,value
  json,
  gap_csv,    // model,validation_accuracy,test_accuracy,gap
};

using NamedReport = std::pair<std::string, MetricsReport>;

/// Comparison document across models, in input order.
std::string emit_report(const std::vector<NamedReport>& reports, ReportFormat format);

/// Grouped bar chart of the eight comparison metrics.
std::string report_svg(const std::vector<NamedReport>& reports);

}  // namespace ipsdm
