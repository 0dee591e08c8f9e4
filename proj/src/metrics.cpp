#include "ipsdm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "ipsdm/error.hpp"

namespace ipsdm {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(ErrorCode::InvalidArgument, "softmax of an empty vector");
  for (double z : logits)
    if (!std::isfinite(z)) throw Error(ErrorCode::NonFiniteInput, "softmax input is not finite");
  const double max = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max);
    total += out[i];
  }
  for (auto& p : out) p /= total;
  return out;
}

CrossEntropyResult cross_entropy(const Matrix<double>& logits, std::span<const Label> labels) {
  if (logits.rows != labels.size())
    throw Error(ErrorCode::LengthMismatch, "logits and labels disagree on batch size");
  CrossEntropyResult r;
  r.gradient = Matrix<double>(logits.rows, logits.cols);
  r.per_sample.resize(logits.rows);
  if (logits.rows == 0) return r;
  const double inv_batch = 1.0 / static_cast<double>(logits.rows);
  double sum = 0.0;
  for (std::size_t b = 0; b < logits.rows; ++b) {
    const auto z = logits.row(b);
    const std::size_t y = index_of(labels[b]);
    if (y >= logits.cols) throw Error(ErrorCode::InvalidArgument, "label outside the logit range");
    const double max = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (double v : z) total += std::exp(v - max);
    const double log_norm = max + std::log(total);
    r.per_sample[b] = log_norm - z[y];
    sum += r.per_sample[b];
    for (std::size_t k = 0; k < logits.cols; ++k) {
      const double p = std::exp(z[k] - log_norm);
      r.gradient(b, k) = (p - (k == y ? 1.0 : 0.0)) * inv_batch;
    }
  }
  r.loss = sum * inv_batch;
  return r;
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  std::uint64_t t = 0;
  for (const auto& row : counts)
    for (auto c : row) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::trace() const noexcept {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < kNumLabels; ++i) t += counts[i][i];
  return t;
}

ConfusionMatrix confusion(std::span<const Label> predictions, std::span<const Label> labels) {
  if (predictions.size() != labels.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(predictions.size()) + " predictions vs " +
                                               std::to_string(labels.size()) + " labels");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < labels.size(); ++i) ++m.counts[index_of(labels[i])][index_of(predictions[i])];
  return m;
}

SplitMetrics score(const ConfusionMatrix& matrix) {
  const auto total = matrix.total();
  if (total == 0) throw Error(ErrorCode::EmptyMatrix, "confusion matrix has no samples");
  SplitMetrics s;
  s.samples = total;
  s.accuracy = static_cast<double>(matrix.trace()) / static_cast<double>(total);
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    std::uint64_t tp = matrix.counts[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < kNumLabels; ++o) {
      if (o == c) continue;
      fp += matrix.counts[o][c];
      fn += matrix.counts[c][o];
    }
    auto& cs = s.per_class[c];
    const std::string name(label_name(static_cast<Label>(c)));
    cs.support = tp + fn;
    if (tp + fp == 0) {
      cs.precision_defined = false;
      s.warnings.push_back("precision undefined for class '" + name + "' (no predictions); reported as 0");
    } else {
      cs.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    if (tp + fn == 0) {
      cs.recall_defined = false;
      s.warnings.push_back("class '" + name + "' has zero support; recall reported as 0");
    } else {
      cs.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    }
    const double pr = cs.precision + cs.recall;
    cs.f1 = pr > 0.0 ? 2.0 * cs.precision * cs.recall / pr : 0.0;
  }
  for (const auto& cs : s.per_class) {
    s.macro_precision += cs.precision;
    s.macro_recall += cs.recall;
    s.macro_f1 += cs.f1;
  }
  s.macro_precision /= static_cast<double>(kNumLabels);
  s.macro_recall /= static_cast<double>(kNumLabels);
  s.macro_f1 /= static_cast<double>(kNumLabels);
  return s;
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const SplitMetrics& m) {
  nlohmann::json per_class = nlohmann::json::object();
  for (std::size_t c = 0; c < kNumLabels; ++c) {
    const auto& cs = m.per_class[c];
    per_class[std::string(label_name(static_cast<Label>(c)))] = {
        {"precision", cs.precision},
        {"recall", cs.recall},
        {"f1", cs.f1},
        {"support", cs.support},
        {"precision_defined", cs.precision_defined},
        {"recall_defined", cs.recall_defined},
    };
  }
  return {
      {"accuracy", m.accuracy},
      {"per_class", std::move(per_class)},
      {"macro", {{"precision", m.macro_precision}, {"recall", m.macro_recall}, {"f1", m.macro_f1}}},
      {"loss", m.loss ? nlohmann::json(*m.loss) : nlohmann::json(nullptr)},
      {"samples", m.samples},
      {"warnings", m.warnings},
  };
}

SplitMetrics split_metrics_from_json(const nlohmann::json& j) {
  try {
    SplitMetrics m;
    m.accuracy = j.at("accuracy").get<double>();
    for (std::size_t c = 0; c < kNumLabels; ++c) {
      const auto& e = j.at("per_class").at(std::string(label_name(static_cast<Label>(c))));
      auto& cs = m.per_class[c];
      cs.precision = e.at("precision").get<double>();
      cs.recall = e.at("recall").get<double>();
      cs.f1 = e.at("f1").get<double>();
      cs.support = e.value("support", std::uint64_t{0});
      cs.precision_defined = e.value("precision_defined", true);
      cs.recall_defined = e.value("recall_defined", true);
    }
    const auto& macro = j.at("macro");
    m.macro_precision = macro.at("precision").get<double>();
    m.macro_recall = macro.at("recall").get<double>();
    m.macro_f1 = macro.at("f1").get<double>();
    if (j.contains("loss") && !j.at("loss").is_null()) m.loss = j.at("loss").get<double>();
    m.samples = j.value("samples", std::uint64_t{0});
    if (j.contains("warnings")) m.warnings = j.at("warnings").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("metrics json: ") + e.what());
  }
}

nlohmann::json to_json(const MetricsReport& r) {
  return {
      {"validation", r.validation ? to_json(*r.validation) : nlohmann::json(nullptr)},
      {"test", r.test ? to_json(*r.test) : nlohmann::json(nullptr)},
  };
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  if (j.contains("validation") && !j.at("validation").is_null())
    r.validation = split_metrics_from_json(j.at("validation"));
  if (j.contains("test") && !j.at("test").is_null()) r.test = split_metrics_from_json(j.at("test"));
  return r;
}

namespace {

struct MetricRow {
  const char* title;  // Table-1 row label
  const char* metric;
  const char* split;
  bool validation;
  double (*get)(const SplitMetrics&);
};

constexpr MetricRow kRows[] = {
    {"Validation Accuracy", "accuracy", "validation", true, [](const SplitMetrics& m) { return m.accuracy; }},
    {"Test Accuracy", "accuracy", "test", false, [](const SplitMetrics& m) { return m.accuracy; }},
    {"Validation Precision", "precision", "validation", true, [](const SplitMetrics& m) { return m.macro_precision; }},
    {"Test Precision", "precision", "test", false, [](const SplitMetrics& m) { return m.macro_precision; }},
    {"Validation Recall", "recall", "validation", true, [](const SplitMetrics& m) { return m.macro_recall; }},
    {"Test Recall", "recall", "test", false, [](const SplitMetrics& m) { return m.macro_recall; }},
    {"Validation F1-Score", "f1", "validation", true, [](const SplitMetrics& m) { return m.macro_f1; }},
    {"Test F1-Score", "f1", "test", false, [](const SplitMetrics& m) { return m.macro_f1; }},
};

std::optional<double> row_value(const MetricRow& row, const MetricsReport& r) {
  const auto& split = row.validation ? r.validation : r.test;
  if (!split) return std::nullopt;
  return row.get(*split);
}

std::string fmt(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream ss;
  ss << std::setprecision(6) << std::fixed << *v;
  return ss.str();
}

}  // namespace

std::string emit_report(const std::vector<NamedReport>& reports, ReportFormat format) {
  if (reports.empty()) throw Error(ErrorCode::InvalidArgument, "emit_report needs at least one report");
  switch (format) {
    case ReportFormat::table_csv: {
      csv::Row header{"Evaluation Metrics"};
      for (const auto& [name, _] : reports) header.push_back(name);
      std::string out = csv::format_row(header);
      for (const auto& row : kRows) {
        csv::Row line{row.title};
        for (const auto& [_, r] : reports) line.push_back(fmt(row_value(row, r)));
        out += csv::format_row(line);
      }
      return out;
    }
    case ReportFormat::long_csv: {
      std::string out = csv::format_row({"metric", "split", "model", "value"});
      for (const auto& row : kRows)
        for (const auto& [name, r] : reports)
          if (auto v = row_value(row, r)) out += csv::format_row({row.metric, row.split, name, fmt(v)});
      return out;
    }
    case ReportFormat::gap_csv: {
      std::string out = csv::format_row({"model", "validation_accuracy", "test_accuracy", "gap"});
      for (const auto& [name, r] : reports) {
        std::optional<double> va, ta, gap;
        if (r.validation) va = r.validation->accuracy;
        if (r.test) ta = r.test->accuracy;
        if (va && ta) gap = std::abs(*va - *ta);
        out += csv::format_row({name, fmt(va), fmt(ta), fmt(gap)});
      }
      return out;
    }
    case ReportFormat::json: {
      nlohmann::json models = nlohmann::json::array();
      nlohmann::json gaps = nlohmann::json::array();
      for (const auto& [name, r] : reports) {
        auto entry = to_json(r);
        entry["model"] = name;
        models.push_back(std::move(entry));
        nlohmann::json g = {{"model", name}};
        g["validation_accuracy"] = r.validation ? nlohmann::json(r.validation->accuracy) : nlohmann::json(nullptr);
        g["test_accuracy"] = r.test ? nlohmann::json(r.test->accuracy) : nlohmann::json(nullptr);
        g["gap"] = r.validation && r.test ? nlohmann::json(std::abs(r.validation->accuracy - r.test->accuracy))
                                          : nlohmann::json(nullptr);
        gaps.push_back(std::move(g));
      }
      return nlohmann::json{{"models", std::move(models)}, {"validation_vs_test", std::move(gaps)}}.dump(2) + "\n";
    }
  }
  return {};
}

std::string report_svg(const std::vector<NamedReport>& reports) {
  if (reports.empty()) throw Error(ErrorCode::InvalidArgument, "report_svg needs at least one report");
  static constexpr const char* kPalette[] = {"#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#edc948"};
  constexpr int kWidth = 900, kHeight = 420, kLeft = 60, kBottom = 110, kTop = 30;
  const int plot_h = kHeight - kBottom - kTop;
  const int group_w = (kWidth - kLeft - 20) / static_cast<int>(std::size(kRows));
  const int bar_w = std::max(4, (group_w - 12) / static_cast<int>(reports.size()));

  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
      << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
      << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = kTop + plot_h * (1.0 - t / 4.0);
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << t * 0.25 << "</text>\n";
    svg << "<line x1=\"" << kLeft << "\" y1=\"" << y << "\" x2=\"" << kWidth - 20 << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/>\n";
  }
  for (std::size_t g = 0; g < std::size(kRows); ++g) {
    const int gx = kLeft + 6 + static_cast<int>(g) * group_w;
    for (std::size_t m = 0; m < reports.size(); ++m) {
      const double v = row_value(kRows[g], reports[m].second).value_or(0.0);
      const double h = plot_h * std::clamp(v, 0.0, 1.0);
      svg << "<rect x=\"" << gx + static_cast<int>(m) * bar_w << "\" y=\"" << kTop + plot_h - h << "\" width=\""
          << bar_w - 1 << "\" height=\"" << h << "\" fill=\"" << kPalette[m % std::size(kPalette)] << "\"/>\n";
    }
    svg << "<text transform=\"translate(" << gx + group_w / 2 << "," << kTop + plot_h + 12
        << ") rotate(35)\">" << kRows[g].title << "</text>\n";
  }
  for (std::size_t m = 0; m < reports.size(); ++m) {
    const int lx = kLeft + static_cast<int>(m) * 160;
    svg << "<rect x=\"" << lx << "\" y=\"8\" width=\"10\" height=\"10\" fill=\"" << kPalette[m % std::size(kPalette)]
        << "\"/><text x=\"" << lx + 14 << "\" y=\"17\">";
    for (char c : reports[m].first) {
      switch (c) {
        case '<': svg << "&lt;"; break;
        case '>': svg << "&gt;"; break;
        case '&': svg << "&amp;"; break;
        default: svg << c;
      }
    }
    svg << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace ipsdm
