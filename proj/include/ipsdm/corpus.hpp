#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ipsdm {

enum class Label : std::uint8_t { ham = 0, spam = 1, phishing = 2 };

inline constexpr std::size_t kNumLabels = 3;
inline constexpr std::array<Label, kNumLabels> kAllLabels{Label::ham, Label::spam, Label::phishing};

std::string_view label_name(Label label) noexcept;
std::optional<Label> parse_label_name(std::string_view name);
inline constexpr std::size_t index_of(Label label) noexcept { return static_cast<std::size_t>(label); }

struct LabeledEmail {
  std::string text;
  Label label = Label::ham;
  std::string source_id;
  std::uint64_t row_index = 0;

  friend bool operator==(const LabeledEmail&, const LabeledEmail&) = default;
};

using ClassCounts = std::array<std::size_t, kNumLabels>;

class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<LabeledEmail> samples);

  void add(LabeledEmail sample);

  const std::vector<LabeledEmail>& samples() const noexcept { return samples_; }
  const ClassCounts& class_counts() const noexcept { return counts_; }
  std::size_t count(Label label) const noexcept { return counts_[index_of(label)]; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }
  const LabeledEmail& operator[](std::size_t i) const { return samples_[i]; }

  friend bool operator==(const Corpus&, const Corpus&) = default;

 private:
  std::vector<LabeledEmail> samples_;
  ClassCounts counts_{};
};

/// Maps raw label strings in a source file to labels. Keys are matched after
/// trimming, and case-insensitively unless case_insensitive is false.
struct LabelMap {
  std::map<std::string, Label> entries;
  bool case_insensitive = true;

  static LabelMap defaults();
  std::optional<Label> lookup(std::string_view raw) const;
};

struct LoadOptions {
  std::string text_column = "Email";
  std::string label_column = "Category";
  LabelMap label_map = LabelMap::defaults();
  /// Defaults to the file stem.
  std::optional<std::string> source_id;
};

struct SkippedRow {
  std::uint64_t row_index;
  enum class Reason { unknown_label, empty_text } reason;
  std::string detail;
};

struct LoadResult {
  Corpus corpus;
  std::vector<SkippedRow> skipped;

  std::size_t unknown_label_count() const;
  std::size_t empty_text_count() const;
};

/// Reads an RFC-4180 CSV. Throws MissingColumn or MalformedCsv; rows with an
/// unmapped label or blank text are skipped and reported in `skipped`.
/// When the header also carries "source_id" and "row_index" columns (as written
/// by write_split_csv) those provenance fields are restored.
LoadResult load_csv(const std::filesystem::path& path, const LoadOptions& options = {});
LoadResult parse_csv_corpus(std::string_view content, const LoadOptions& options,
                            const std::string& source_id);

Corpus merge(const std::vector<Corpus>& corpora);

struct SplitSpec {
  double train_fraction = 0.6;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 42;
  bool stratified = true;

  void validate() const;
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

struct CorpusSplit {
  Corpus train, val, test;
};

/// Sizes produced by the floor rule for a population of n items.
SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

/// Seeded Fisher-Yates shuffle, then test/val/train assignment by the floor
/// rule (per class when stratified, remainders to train).
CorpusSplit split(const Corpus& corpus, const SplitSpec& spec);

/// Writes samples with an added "split" column plus provenance columns.
void write_split_csv(const std::filesystem::path& path, const Corpus& corpus, std::string_view split_name,
                     std::string_view text_column = "Email", std::string_view label_column = "Category");

// CSV primitives, exposed for reuse by the pipeline and tests.
namespace csv {
using Row = std::vector<std::string>;
std::vector<Row> parse(std::string_view content);
std::string escape(std::string_view field);
std::string format_row(const Row& row);
}  // namespace csv

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::uint64_t fnv1a64(std::string_view s) noexcept;
std::string hex64(std::uint64_t v);  // 16 lowercase hex digits

}  // namespace ipsdm
