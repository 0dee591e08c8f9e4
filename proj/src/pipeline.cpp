#include "ipsdm/pipeline.hpp"

#include <cmath>
#include <initializer_list>

#include "ipsdm/error.hpp"

namespace ipsdm {

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw Error(ErrorCode::Config, std::string(where) + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw Error(ErrorCode::Config, "unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

nlohmann::json counts_json(const ClassCounts& c) {
  nlohmann::json j = nlohmann::json::object();
  std::size_t total = 0;
  for (auto l : kAllLabels) {
    j[std::string(label_name(l))] = c[index_of(l)];
    total += c[index_of(l)];
  }
  j["total"] = total;
  return j;
}

Corpus load_split(const std::filesystem::path& path) { return load_csv(path).corpus; }

Vocabulary load_or_train_vocab(const PipelineConfig& config) {
  const auto path = config.file(files::vocab);
  if (!std::filesystem::exists(path)) return run_tokenizer_train(config);
  try {
    return Vocabulary::from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  check_keys(j, {"datasets", "split", "balance", "tokenizer", "training", "output_dir", "overfit_threshold"}, "config");
  PipelineConfig c;
  try {
    if (j.contains("datasets")) {
      for (const auto& d : j.at("datasets")) {
        check_keys(d, {"path", "text_column", "label_column", "source_id", "labels", "case_insensitive_labels"},
                   "dataset");
        DatasetSpec spec;
        spec.path = resolve(base_dir, d.at("path").get<std::string>());
        read_into(d, "text_column", spec.text_column);
        read_into(d, "label_column", spec.label_column);
        if (d.contains("source_id")) spec.source_id = d.at("source_id").get<std::string>();
        if (d.contains("labels")) {
          for (const auto& [raw, name] : d.at("labels").items()) {
            auto label = parse_label_name(name.get<std::string>());
            if (!label) throw Error(ErrorCode::Config, "label map target '" + name.get<std::string>() + "' is not a label");
            spec.labels.entries[raw] = *label;
          }
        }
        read_into(d, "case_insensitive_labels", spec.labels.case_insensitive);
        c.datasets.push_back(std::move(spec));
      }
    }
    if (j.contains("split")) {
      const auto& s = j.at("split");
      check_keys(s, {"train", "val", "test", "seed", "stratified"}, "split");
      read_into(s, "train", c.split.train_fraction);
      read_into(s, "val", c.split.val_fraction);
      read_into(s, "test", c.split.test_fraction);
      read_into(s, "seed", c.split.seed);
      read_into(s, "stratified", c.split.stratified);
    }
    if (j.contains("balance")) {
      const auto& b = j.at("balance");
      check_keys(b, {"enabled", "k", "beta", "seed"}, "balance");
      read_into(b, "enabled", c.balance.enabled);
      read_into(b, "k", c.balance.k);
      read_into(b, "beta", c.balance.beta);
      read_into(b, "seed", c.balance.seed);
    }
    bool explicit_model_len = false;
    if (j.contains("training")) {
      c.training = training_config_from_json(j.at("training"));
      explicit_model_len = j.at("training").contains("model") && j.at("training").at("model").contains("max_len");
    }
    if (j.contains("tokenizer")) {
      const auto& t = j.at("tokenizer");
      check_keys(t, {"vocab_size", "max_len"}, "tokenizer");
      read_into(t, "vocab_size", c.tokenizer.vocab_size);
      read_into(t, "max_len", c.tokenizer.max_len);
      if (explicit_model_len && t.contains("max_len") && c.training.model.max_len != c.tokenizer.max_len)
        throw Error(ErrorCode::Config, "tokenizer.max_len and training.model.max_len disagree");
      if (explicit_model_len && !t.contains("max_len")) c.tokenizer.max_len = c.training.model.max_len;
    } else if (explicit_model_len) {
      c.tokenizer.max_len = c.training.model.max_len;
    }
    c.training.model.max_len = c.tokenizer.max_len;
    c.training.model.vocab_size = c.tokenizer.vocab_size;
    if (j.contains("output_dir")) c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    else c.output_dir = base_dir / c.output_dir;
    read_into(j, "overfit_threshold", c.overfit_threshold);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("config: ") + e.what());
  }
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, path.string() + ": " + e.what());
  }
  return from_json(j, path.parent_path());
}

nlohmann::json PipelineConfig::to_json() const {
  nlohmann::json ds = nlohmann::json::array();
  for (const auto& d : datasets) {
    nlohmann::json labels = nlohmann::json::object();
    for (const auto& [raw, l] : d.labels.entries) labels[raw] = label_name(l);
    nlohmann::json e = {{"path", d.path.string()},
                        {"text_column", d.text_column},
                        {"label_column", d.label_column},
                        {"labels", labels},
                        {"case_insensitive_labels", d.labels.case_insensitive}};
    if (d.source_id) e["source_id"] = *d.source_id;
    ds.push_back(std::move(e));
  }
  return {{"datasets", ds},
          {"split",
           {{"train", split.train_fraction},
            {"val", split.val_fraction},
            {"test", split.test_fraction},
            {"seed", split.seed},
            {"stratified", split.stratified}}},
          {"balance", {{"enabled", balance.enabled}, {"k", balance.k}, {"beta", balance.beta}, {"seed", balance.seed}}},
          {"tokenizer", {{"vocab_size", tokenizer.vocab_size}, {"max_len", tokenizer.max_len}}},
          {"training", ipsdm::to_json(training)},
          {"output_dir", output_dir.string()},
          {"overfit_threshold", overfit_threshold}};
}

void PipelineConfig::set_seed(std::uint64_t seed) {
  split.seed = seed;
  balance.seed = seed;
  training.seed = seed;
}

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::Config, m); };
  if (datasets.empty()) fail("config lists no datasets");
  for (const auto& d : datasets)
    if (!std::filesystem::exists(d.path)) throw Error(ErrorCode::Io, "file not found: " + d.path.string());
  try {
    split.validate();
    training.validate();
    if (tokenizer.vocab_size <= Vocabulary::kFirstLearned)
      throw Error(ErrorCode::VocabTooSmall, "tokenizer.vocab_size must exceed " +
                                                std::to_string(Vocabulary::kFirstLearned));
    training.model.validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidArgument) fail(e.what());
    throw;
  }
  if (balance.k == 0) fail("balance.k must be at least 1");
  if (!(balance.beta > 0.0 && balance.beta <= 1.0)) fail("balance.beta must lie in (0,1]");
  if (!(overfit_threshold >= 0.0)) fail("overfit_threshold must be non-negative");
}

// ---------------------------------------------------------------------------
// Stages

PrepareResult run_prepare(const PipelineConfig& config) {
  config.validate();
  std::vector<Corpus> parts;
  nlohmann::json sources = nlohmann::json::array();
  for (const auto& d : config.datasets) {
    const std::string content = read_file(d.path);
    LoadOptions opts;
    opts.text_column = d.text_column;
    opts.label_column = d.label_column;
    opts.label_map = d.labels;
    const std::string source_id = d.source_id.value_or(d.path.stem().string());
    auto loaded = parse_csv_corpus(content, opts, source_id);
    sources.push_back({{"file", d.path.filename().string()},
                       {"source_id", source_id},
                       {"fnv1a64", hex64(fnv1a64(content))},
                       {"rows", loaded.corpus.size()},
                       {"skipped_unknown_label", loaded.unknown_label_count()},
                       {"skipped_empty_text", loaded.empty_text_count()}});
    parts.push_back(std::move(loaded.corpus));
  }
  const Corpus all = merge(parts);
  PrepareResult result;
  result.split = split(all, config.split);

  std::filesystem::create_directories(config.output_dir);
  write_split_csv(config.file(files::train), result.split.train, "train");
  write_split_csv(config.file(files::val), result.split.val, "val");
  write_split_csv(config.file(files::test), result.split.test, "test");

  nlohmann::json outputs = nlohmann::json::object();
  for (const char* name : {files::train, files::val, files::test})
    outputs[name] = hex64(fnv1a64(read_file(config.file(name))));

  result.manifest = {
      {"format_version", 1},
      {"sources", sources},
      {"split",
       {{"train", config.split.train_fraction},
        {"val", config.split.val_fraction},
        {"test", config.split.test_fraction},
        {"seed", config.split.seed},
        {"stratified", config.split.stratified}}},
      {"counts",
       {{"all", counts_json(all.class_counts())},
        {"train", counts_json(result.split.train.class_counts())},
        {"val", counts_json(result.split.val.class_counts())},
        {"test", counts_json(result.split.test.class_counts())}}},
      {"outputs", outputs},
  };
  write_file_atomic(config.file(files::manifest), result.manifest.dump(2) + "\n");
  return result;
}

Vocabulary run_tokenizer_train(const PipelineConfig& config) {
  const auto train_split = load_split(config.file(files::train));
  if (config.tokenizer.vocab_size <= Vocabulary::kFirstLearned)
    throw Error(ErrorCode::VocabTooSmall, "tokenizer.vocab_size must exceed " +
                                              std::to_string(Vocabulary::kFirstLearned));
  auto vocab = train_vocab(train_split, config.tokenizer.vocab_size);
  write_file_atomic(config.file(files::vocab), vocab.to_json().dump() + "\n");
  return vocab;
}

BalanceStageResult run_balance(const PipelineConfig& config) {
  const auto in_path = config.file(files::train);
  const auto train_split = load_split(in_path);
  const auto vocab = load_or_train_vocab(config);

  BalanceStageResult result;
  const auto vectors = vectorize(train_split, vocab);
  std::vector<Label> labels;
  labels.reserve(train_split.size());
  for (const auto& s : train_split.samples()) labels.push_back(s.label);
  const auto plan = plan_adasyn(vectors, labels, {config.balance.k, config.balance.beta});

  if (plan.empty() || plan.total_synthetic(Label::ham) + plan.total_synthetic(Label::spam) +
                              plan.total_synthetic(Label::phishing) ==
                          0) {
    result.nothing_to_balance = true;
    result.report = balance_report(train_split, train_split);
    write_file_atomic(config.file(files::balanced), read_file(in_path));
  } else {
    const auto balanced = synthesize(plan, train_split, vocab, {config.balance.seed, config.tokenizer.max_len});
    result.report = balance_report(train_split, balanced);
    write_split_csv(config.file(files::balanced), balanced, "train");
  }
  write_file_atomic(config.file(files::balance_report), result.report.to_json().dump(2) + "\n");
  return result;
}

TrainResult run_train(const PipelineConfig& config, const Checkpoint* resume) {
  const auto vocab = load_or_train_vocab(config);
  if (config.balance.enabled && !std::filesystem::exists(config.file(files::balanced))) run_balance(config);
  const auto train_split = load_split(config.file(config.balance.enabled ? files::balanced : files::train));
  const auto val_split = load_split(config.file(files::val));

  TrainOptions options;
  options.resume = resume;
  TrainResult result;
  try {
    result = train(config.training, train_split, val_split, vocab, options);
  } catch (const DivergedError& e) {
    save_checkpoint(e.last_good(), config.file(files::diverged));
    throw;
  }
  save_checkpoint(result.checkpoint, config.file(files::checkpoint));

  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : result.checkpoint.history) history.push_back(to_json(r, false));
  const nlohmann::json doc = {{"history", history},
                              {"best_epoch", result.checkpoint.resume ? result.checkpoint.resume->best_epoch : 0},
                              {"stopped_early", result.stopped_early}};
  write_file_atomic(config.file(files::history), doc.dump(2) + "\n");
  return result;
}

nlohmann::json EvaluationReport::to_json() const {
  auto j = ipsdm::to_json(metrics);
  if (gap)
    j["overfit"] = {{"best_val_accuracy", gap->best_val_accuracy},
                    {"test_accuracy", gap->test_accuracy},
                    {"gap", gap->gap},
                    {"warn", gap->warn}};
  return j;
}

EvaluationReport run_evaluate(const Checkpoint& checkpoint, const std::optional<std::filesystem::path>& val_csv,
                              const std::optional<std::filesystem::path>& test_csv, double overfit_threshold) {
  if (!val_csv && !test_csv) throw Error(ErrorCode::InvalidArgument, "nothing to evaluate");
  EvaluationReport report;
  if (val_csv) report.metrics.validation = evaluate(checkpoint, load_split(*val_csv));
  if (test_csv) report.metrics.test = evaluate(checkpoint, load_split(*test_csv));
  if (report.metrics.test && !checkpoint.history.empty())
    report.gap = overfit_gap(checkpoint.history, report.metrics.test->accuracy, overfit_threshold);
  return report;
}

nlohmann::json classify_json(const Checkpoint& checkpoint, std::string_view text) {
  const auto p = predict(checkpoint.params, checkpoint.vocab, text);
  nlohmann::json probs = nlohmann::json::object();
  for (auto l : kAllLabels) probs[std::string(label_name(l))] = p.probabilities[index_of(l)];
  return {{"label", label_name(p.label)}, {"probabilities", probs}};
}

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DivergedLoss:
    case ErrorCode::NonFiniteGradient:
    case ErrorCode::NonFiniteInput:
      return exit_code::numeric;
    default:
      return exit_code::input;
  }
}

}  // namespace ipsdm
