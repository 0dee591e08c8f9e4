#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include "ipsdm/pipeline.hpp"

namespace ipsdm {

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
  std::optional<std::size_t> epochs;
  std::optional<double> learning_rate;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Seed for every stage (beats IPSDM_SEED)");
  cmd->add_option("--output-dir", o.output_dir, "Output directory");
  cmd->add_option("--epochs", o.epochs, "Number of training epochs");
  cmd->add_option("--lr", o.learning_rate, "Learning rate");
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("IPSDM_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  std::string_view s(raw);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::Config, "IPSDM_SEED must be a non-negative integer, got '" + std::string(s) + "'");
  return v;
}

PipelineConfig load_config(const std::string& path, const Overrides& o) {
  auto config = PipelineConfig::load(path);
  if (auto s = env_seed()) config.set_seed(*s);
  if (o.seed) config.set_seed(*o.seed);
  if (o.output_dir) config.output_dir = *o.output_dir;
  if (o.epochs) config.training.num_epochs = *o.epochs;
  if (o.learning_rate) config.training.optimizer.learning_rate = *o.learning_rate;
  config.validate();
  return config;
}

std::string counts_line(const ClassCounts& c) {
  std::string s;
  for (auto l : kAllLabels) {
    if (!s.empty()) s += ' ';
    s += std::string(label_name(l)) + '=' + std::to_string(c[index_of(l)]);
  }
  return s;
}

std::optional<ReportFormat> parse_format(const std::string& name) {
  if (name == "table_csv") return ReportFormat::table_csv;
  if (name == "long_csv") return ReportFormat::long_csv;
  if (name == "json") return ReportFormat::json;
  if (name == "gap_csv") return ReportFormat::gap_csv;
  return std::nullopt;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Email ham/spam/phishing detection pipeline", "ipsdm"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides overrides;

  auto* prepare = app.add_subcommand("prepare", "Load, merge and split the datasets");
  auto* tokenizer = app.add_subcommand("tokenizer-train", "Learn the byte-level BPE vocabulary on the train split");
  auto* balance = app.add_subcommand("balance", "Oversample minority classes of the train split");
  auto* train_cmd = app.add_subcommand("train", "Train the classifier");
  for (auto* cmd : {prepare, tokenizer, balance, train_cmd}) {
    cmd->add_option("--config", config_path, "Pipeline config JSON")->required();
    add_overrides(cmd, overrides);
  }
  std::string resume_path;
  train_cmd->add_option("--resume", resume_path, "Continue from a checkpoint");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Score a checkpoint on the validation and test splits");
  std::string eval_config, checkpoint_path, val_path, test_path, eval_out;
  evaluate_cmd->add_option("--config", eval_config, "Pipeline config JSON (supplies default paths)");
  evaluate_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file");
  evaluate_cmd->add_option("--val", val_path, "Validation split CSV");
  evaluate_cmd->add_option("--test", test_path, "Test split CSV");
  evaluate_cmd->add_option("--out", eval_out, "Write the report JSON here");
  double threshold = 0.05;
  evaluate_cmd->add_option("--overfit-threshold", threshold, "Validation/test gap that triggers a warning");

  auto* classify_cmd = app.add_subcommand("classify", "Classify one text or every line of a file");
  std::string classify_ckpt, classify_text, classify_file;
  classify_cmd->add_option("--checkpoint", classify_ckpt, "Checkpoint file")->required();
  auto* text_opt = classify_cmd->add_option("--text", classify_text, "Text to classify");
  auto* file_opt = classify_cmd->add_option("--file", classify_file, "File with one text per line");
  text_opt->excludes(file_opt);
  file_opt->excludes(text_opt);

  auto* report_cmd = app.add_subcommand("report", "Compare evaluation reports across models");
  std::vector<std::string> inputs;
  std::string format_name = "table_csv", report_out, svg_out;
  report_cmd->add_option("inputs", inputs, "Reports as NAME=PATH (or PATH, named by file stem)")->required();
  report_cmd->add_option("--format", format_name, "table_csv | long_csv | json | gap_csv");
  report_cmd->add_option("--out", report_out, "Output file (default stdout)");
  report_cmd->add_option("--svg", svg_out, "Also write a bar chart");

  if (!args.empty() && !args.front().empty() && args.front().front() != '-') {
    const auto subs = app.get_subcommands([](CLI::App*) { return true; });
    const bool known = std::any_of(subs.begin(), subs.end(), [&](CLI::App* s) { return s->get_name() == args.front(); });
    if (!known) {
      err << "ipsdm: unknown subcommand '" << args.front() << "'\n" << app.help();
      return exit_code::usage;
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::ok;
  } catch (const CLI::ParseError& e) {
    err << "ipsdm: " << e.what() << "\n";
    return exit_code::usage;
  }

  try {
    if (prepare->parsed()) {
      const auto config = load_config(config_path, overrides);
      const auto r = run_prepare(config);
      out << "train: " << counts_line(r.split.train.class_counts()) << "\n"
          << "val:   " << counts_line(r.split.val.class_counts()) << "\n"
          << "test:  " << counts_line(r.split.test.class_counts()) << "\n"
          << "manifest " << hex64(fnv1a64(r.manifest.dump())) << "\n";
    } else if (tokenizer->parsed()) {
      const auto config = load_config(config_path, overrides);
      const auto vocab = run_tokenizer_train(config);
      out << "vocabulary: " << vocab.size() << " tokens, " << vocab.merges().size() << " merges, hash "
          << hex64(vocab.hash()) << "\n";
    } else if (balance->parsed()) {
      const auto config = load_config(config_path, overrides);
      const auto r = run_balance(config);
      if (r.nothing_to_balance) out << "notice: classes already balanced, train split copied unchanged\n";
      out << "before: " << counts_line(r.report.before) << "\n"
          << "after:  " << counts_line(r.report.after) << "\n";
    } else if (train_cmd->parsed()) {
      const auto config = load_config(config_path, overrides);
      std::optional<Checkpoint> resume;
      if (!resume_path.empty()) resume = load_checkpoint(resume_path);
      const auto r = run_train(config, resume ? &*resume : nullptr);
      for (const auto& e : r.checkpoint.history)
        out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss
            << " val_accuracy " << e.val_accuracy << "\n";
      if (r.stopped_early) out << "early stopping triggered\n";
      out << "checkpoint " << config.file(files::checkpoint).string() << "\n";
    } else if (evaluate_cmd->parsed()) {
      std::optional<PipelineConfig> config;
      if (!eval_config.empty()) {
        config = load_config(eval_config, {});
        if (checkpoint_path.empty()) checkpoint_path = config->file(files::checkpoint).string();
        if (val_path.empty()) val_path = config->file(files::val).string();
        if (test_path.empty()) test_path = config->file(files::test).string();
        if (eval_out.empty()) eval_out = config->file(files::evaluation).string();
        if (evaluate_cmd->count("--overfit-threshold") == 0) threshold = config->overfit_threshold;
      }
      if (checkpoint_path.empty()) throw CLI::RequiredError("--checkpoint");
      const auto ckpt = load_checkpoint(checkpoint_path);
      auto opt_path = [](const std::string& p) {
        return p.empty() ? std::nullopt : std::optional<std::filesystem::path>(p);
      };
      const auto report = run_evaluate(ckpt, opt_path(val_path), opt_path(test_path), threshold);
      const std::string doc = report.to_json().dump(2) + "\n";
      if (eval_out.empty()) {
        out << doc;
      } else {
        write_file_atomic(eval_out, doc);
        if (report.metrics.validation) out << "validation accuracy " << report.metrics.validation->accuracy << "\n";
        if (report.metrics.test) out << "test accuracy " << report.metrics.test->accuracy << "\n";
      }
      if (report.gap && report.gap->warn)
        err << "WARN: validation/test accuracy gap " << report.gap->gap << " exceeds " << threshold << "\n";
    } else if (classify_cmd->parsed()) {
      if (text_opt->count() == 0 && file_opt->count() == 0)
        throw CLI::RequiredError("--text or --file");
      const auto ckpt = load_checkpoint(classify_ckpt);
      if (file_opt->count() > 0) {
        if (!std::filesystem::exists(classify_file)) throw Error(ErrorCode::Io, "file not found: " + classify_file);
        std::ifstream in(classify_file, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (trim(line).empty()) continue;
          out << classify_json(ckpt, line).dump() << "\n";
        }
      } else {
        out << classify_json(ckpt, classify_text).dump() << "\n";
      }
    } else if (report_cmd->parsed()) {
      const auto format = parse_format(format_name);
      if (!format) throw CLI::ValidationError("--format", "unknown report format '" + format_name + "'");
      std::vector<NamedReport> reports;
      for (const auto& spec : inputs) {
        const auto eq = spec.find('=');
        const std::string path = eq == std::string::npos ? spec : spec.substr(eq + 1);
        const std::string name = eq == std::string::npos ? std::filesystem::path(path).stem().string() : spec.substr(0, eq);
        if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "file not found: " + path);
        nlohmann::json j;
        try {
          j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
          throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
        }
        reports.emplace_back(name, metrics_report_from_json(j));
      }
      const auto doc = emit_report(reports, *format);
      if (report_out.empty()) out << doc;
      else write_file_atomic(report_out, doc);
      if (!svg_out.empty()) write_file_atomic(svg_out, report_svg(reports));
    }
  } catch (const CLI::ParseError& e) {
    err << "ipsdm: " << e.what() << "\n";
    return exit_code::usage;
  } catch (const DivergedError& e) {
    err << "ipsdm: training diverged: " << e.what() << "\n";
    return exit_code::numeric;
  } catch (const Error& e) {
    err << "ipsdm: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "ipsdm: internal error: " << e.what() << "\n";
    return exit_code::internal;
  }
  return exit_code::ok;
}

}  // namespace ipsdm
