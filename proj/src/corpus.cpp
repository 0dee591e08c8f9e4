#include "ipsdm/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ipsdm/error.hpp"
#include "ipsdm/rng.hpp"

namespace ipsdm {

std::string_view label_name(Label label) noexcept {
  switch (label) {
    case Label::ham: return "ham";
    case Label::spam: return "spam";
    case Label::phishing: return "phishing";
  }
  return "?";
}

std::optional<Label> parse_label_name(std::string_view name) {
  const std::string key = to_lower_ascii(trim(name));
  for (auto l : kAllLabels)
    if (label_name(l) == key) return l;
  return std::nullopt;
}

std::string trim(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  std::size_t b = 0, e = s.size();
  while (b < e && is_space(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_space(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

Corpus::Corpus(std::vector<LabeledEmail> samples) : samples_(std::move(samples)) {
  for (const auto& s : samples_) ++counts_[index_of(s.label)];
}

void Corpus::add(LabeledEmail sample) {
  ++counts_[index_of(sample.label)];
  samples_.push_back(std::move(sample));
}

LabelMap LabelMap::defaults() {
  LabelMap m;
  for (auto l : kAllLabels) m.entries.emplace(std::string(label_name(l)), l);
  return m;
}

std::optional<Label> LabelMap::lookup(std::string_view raw) const {
  const std::string key = trim(raw);
  if (!case_insensitive) {
    auto it = entries.find(key);
    if (it == entries.end()) return std::nullopt;
    return it->second;
  }
  const std::string lowered = to_lower_ascii(key);
  for (const auto& [k, v] : entries)
    if (to_lower_ascii(trim(k)) == lowered) return v;
  return std::nullopt;
}

std::size_t LoadResult::unknown_label_count() const {
  return static_cast<std::size_t>(std::count_if(skipped.begin(), skipped.end(), [](const SkippedRow& r) {
    return r.reason == SkippedRow::Reason::unknown_label;
  }));
}

std::size_t LoadResult::empty_text_count() const { return skipped.size() - unknown_label_count(); }

namespace csv {

std::vector<Row> parse(std::string_view content) {
  std::vector<Row> rows;
  if (content.size() >= 3 && content.substr(0, 3) == "\xEF\xBB\xBF") content.remove_prefix(3);

  Row row;
  std::string field;
  bool in_quotes = false;
  bool field_was_quoted = false;
  bool row_has_data = false;
  std::size_t line = 1;

  auto end_field = [&] {
    row.push_back(std::move(field));
    field.clear();
    field_was_quoted = false;
  };
  auto end_row = [&] {
    end_field();
    rows.push_back(std::move(row));
    row.clear();
    row_has_data = false;
  };

  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (!field.empty() || field_was_quoted)
          throw Error(ErrorCode::MalformedCsv, "stray quote on line " + std::to_string(line));
        in_quotes = true;
        field_was_quoted = true;
        row_has_data = true;
        break;
      case ',':
        end_field();
        row_has_data = true;
        break;
      case '\r':
        if (i + 1 < content.size() && content[i + 1] == '\n') ++i;
        [[fallthrough]];
      case '\n':
        if (row_has_data || !field.empty()) end_row();
        ++line;
        break;
      default:
        if (field_was_quoted)
          throw Error(ErrorCode::MalformedCsv, "text after closing quote on line " + std::to_string(line));
        field.push_back(c);
        row_has_data = true;
    }
  }
  if (in_quotes) throw Error(ErrorCode::MalformedCsv, "unterminated quoted field (line " + std::to_string(line) + ")");
  if (row_has_data || !field.empty()) end_row();
  return rows;
}

std::string escape(std::string_view field) {
  const bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos ||
                            (!field.empty() && (field.front() == ' ' || field.back() == ' '));
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_row(const Row& row) {
  std::string out;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out.push_back(',');
    out += escape(row[i]);
  }
  out += "\r\n";
  return out;
}

}  // namespace csv

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error(ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

namespace {

std::optional<std::size_t> find_column(const csv::Row& header, std::string_view name) {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == name) return i;
  return std::nullopt;
}

}  // namespace

LoadResult parse_csv_corpus(std::string_view content, const LoadOptions& options, const std::string& source_id) {
  auto rows = csv::parse(content);
  LoadResult result;
  if (rows.empty()) throw Error(ErrorCode::MissingColumn, "no header row");
  const auto& header = rows.front();
  auto text_col = find_column(header, options.text_column);
  auto label_col = find_column(header, options.label_column);
  if (!text_col) throw Error(ErrorCode::MissingColumn, "header lacks column '" + options.text_column + "'");
  if (!label_col) throw Error(ErrorCode::MissingColumn, "header lacks column '" + options.label_column + "'");
  auto source_col = find_column(header, "source_id");
  auto row_col = find_column(header, "row_index");
  const std::size_t needed = std::max(*text_col, *label_col) + 1;

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::uint64_t row_index = r - 1;
    if (row.size() < needed)
      throw Error(ErrorCode::MalformedCsv, "row " + std::to_string(row_index) + " has " +
                                               std::to_string(row.size()) + " fields, expected " +
                                               std::to_string(header.size()));
    auto label = options.label_map.lookup(row[*label_col]);
    if (!label) {
      result.skipped.push_back({row_index, SkippedRow::Reason::unknown_label, row[*label_col]});
      continue;
    }
    if (trim(row[*text_col]).empty()) {
      result.skipped.push_back({row_index, SkippedRow::Reason::empty_text, {}});
      continue;
    }
    LabeledEmail email{row[*text_col], *label, source_id, row_index};
    if (source_col && row_col && *source_col < row.size() && *row_col < row.size()) {
      email.source_id = row[*source_col];
      try {
        email.row_index = std::stoull(row[*row_col]);
      } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedCsv, "bad row_index '" + row[*row_col] + "'");
      }
    }
    result.corpus.add(std::move(email));
  }
  return result;
}

LoadResult load_csv(const std::filesystem::path& path, const LoadOptions& options) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "file not found: " + path.string());
  return parse_csv_corpus(read_file(path), options, options.source_id.value_or(path.stem().string()));
}

Corpus merge(const std::vector<Corpus>& corpora) {
  if (corpora.empty()) throw Error(ErrorCode::InvalidArgument, "merge needs at least one corpus");
  std::vector<LabeledEmail> all;
  std::size_t total = 0;
  for (const auto& c : corpora) total += c.size();
  all.reserve(total);
  for (const auto& c : corpora) all.insert(all.end(), c.samples().begin(), c.samples().end());
  return Corpus(std::move(all));
}

void SplitSpec::validate() const {
  for (double f : {train_fraction, val_fraction, test_fraction})
    if (!(f > 0.0 && f < 1.0)) throw Error(ErrorCode::InvalidArgument, "split fractions must lie in (0,1)");
  if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
    throw Error(ErrorCode::InvalidArgument, "split fractions must sum to 1");
}

namespace {

// floor(f*n), tolerant of representation error such as 0.29*100 = 28.999...
std::size_t floor_share(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

}  // namespace

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  SplitSizes s;
  s.test = floor_share(spec.test_fraction, n);
  s.val = floor_share(spec.val_fraction, n);
  s.train = n - s.val - s.test;
  return s;
}

CorpusSplit split(const Corpus& corpus, const SplitSpec& spec) {
  spec.validate();
  if (corpus.empty()) throw Error(ErrorCode::DegenerateSplit, "empty corpus");

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(spec.seed, {0x73706c6974ull}));
  fisher_yates(std::span(order), rng);

  // quota[class][0] = test, [1] = val
  std::array<std::array<std::size_t, 2>, kNumLabels> quota{};
  if (spec.stratified) {
    for (auto l : kAllLabels) {
      auto s = split_sizes(corpus.count(l), spec);
      quota[index_of(l)] = {s.test, s.val};
    }
  } else {
    auto s = split_sizes(corpus.size(), spec);
    for (auto& q : quota) q = {0, 0};
    quota[0] = {s.test, s.val};
  }

  CorpusSplit out;
  for (std::size_t idx : order) {
    const auto& email = corpus[idx];
    auto& q = quota[spec.stratified ? index_of(email.label) : 0];
    if (q[0] > 0) {
      --q[0];
      out.test.add(email);
    } else if (q[1] > 0) {
      --q[1];
      out.val.add(email);
    } else {
      out.train.add(email);
    }
  }
  if (out.train.empty() || out.val.empty() || out.test.empty())
    throw Error(ErrorCode::DegenerateSplit,
                "split of " + std::to_string(corpus.size()) + " samples leaves a partition empty (train=" +
                    std::to_string(out.train.size()) + ", val=" + std::to_string(out.val.size()) +
                    ", test=" + std::to_string(out.test.size()) + ")");
  return out;
}

void write_split_csv(const std::filesystem::path& path, const Corpus& corpus, std::string_view split_name,
                     std::string_view text_column, std::string_view label_column) {
  std::string out = csv::format_row(
      {std::string(text_column), std::string(label_column), "source_id", "row_index", "split"});
  for (const auto& s : corpus.samples())
    out += csv::format_row({s.text, std::string(label_name(s.label)), s.source_id, std::to_string(s.row_index),
                            std::string(split_name)});
  write_file_atomic(path, out);
}

}  // namespace ipsdm
