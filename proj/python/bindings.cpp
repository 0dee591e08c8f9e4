#include <pybind11/gil_safe_call_once.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "ipsdm/pipeline.hpp"

namespace py = pybind11;
using namespace ipsdm;

namespace {

std::string label_str(Label l) { return std::string(label_name(l)); }

Label label_from(const std::string& name) {
  auto l = parse_label_name(name);
  if (!l) throw Error(ErrorCode::UnknownLabel, "unknown label '" + name + "'");
  return *l;
}

py::dict metrics_dict(const SplitMetrics& m) {
  py::dict d;
  d["accuracy"] = m.accuracy;
  d["macro_precision"] = m.macro_precision;
  d["macro_recall"] = m.macro_recall;
  d["macro_f1"] = m.macro_f1;
  d["samples"] = m.samples;
  if (m.loss) d["loss"] = *m.loss;
  py::dict per_class;
  for (auto l : kAllLabels) {
    const auto& c = m.per_class[index_of(l)];
    py::dict e;
    e["precision"] = c.precision;
    e["recall"] = c.recall;
    e["f1"] = c.f1;
    per_class[py::str(label_str(l))] = e;
  }
  d["per_class"] = per_class;
  return d;
}

py::dict prediction_dict(const Prediction& p) {
  py::dict probs;
  for (auto l : kAllLabels) probs[py::str(label_str(l))] = p.probabilities[index_of(l)];
  py::dict d;
  d["label"] = label_str(p.label);
  d["probabilities"] = probs;
  return d;
}

PipelineConfig config_from(const std::filesystem::path& path, std::optional<std::uint64_t> seed) {
  auto c = PipelineConfig::load(path);
  if (seed) c.set_seed(*seed);
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_ipsdm, m) {
  m.doc() = "Email ham/spam/phishing detection pipeline";

  PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
  error_type.call_once_and_store_result(
      [&]() { return py::object(py::exception<Error>(m, "IpsdmError", PyExc_RuntimeError)); });
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      const auto& type = error_type.get_stored();
      py::object inst = type(e.what());
      inst.attr("code") = std::string(to_string(e.code()));
      py::set_error(type, inst);
    }
  });

  m.attr("LABELS") = py::make_tuple("ham", "spam", "phishing");

  py::class_<Vocabulary>(m, "Vocabulary")
      .def_static("from_json", [](const std::string& s) { return Vocabulary::from_json(nlohmann::json::parse(s)); })
      .def("to_json", [](const Vocabulary& v) { return v.to_json().dump(); })
      .def("__len__", &Vocabulary::size)
      .def_property_readonly("hash", &Vocabulary::hash)
      .def_property_readonly("merges", [](const Vocabulary& v) {
        std::vector<std::pair<TokenId, TokenId>> out;
        for (const auto& mg : v.merges()) out.emplace_back(mg.first, mg.second);
        return out;
      })
      .def("tokenize", [](const Vocabulary& v, const std::string& text) { return tokenize(v, text); }, py::arg("text"))
      .def(
          "encode",
          [](const Vocabulary& v, const std::string& text, std::size_t max_len) {
            auto s = encode(v, text, max_len);
            return py::make_tuple(s.ids, s.attention_mask, s.true_length);
          },
          py::arg("text"), py::arg("max_len") = 128, "Returns (ids, attention_mask, true_length).")
      .def(
          "decode",
          [](const Vocabulary& v, const std::vector<TokenId>& ids) { return py::bytes(decode_bytes(v, ids)); },
          py::arg("ids"), "Raw bytes of the content tokens; special tokens are dropped.");

  m.def(
      "train_vocab",
      [](const std::vector<std::string>& texts, std::size_t vocab_size) { return train_vocab(texts, vocab_size); },
      py::arg("texts"), py::arg("vocab_size") = 8192);

  m.def(
      "score",
      [](const std::vector<std::string>& predicted, const std::vector<std::string>& truth) {
        std::vector<Label> p, t;
        for (const auto& s : predicted) p.push_back(label_from(s));
        for (const auto& s : truth) t.push_back(label_from(s));
        return metrics_dict(score(confusion(p, t)));
      },
      py::arg("predicted"), py::arg("truth"));
  m.def("softmax", [](const std::vector<double>& x) { return softmax(x); }, py::arg("logits"));

  m.def(
      "adamw_trace",
      [](double z, const std::vector<double>& grads, double lr, double beta1, double beta2, double eps,
         double weight_decay, const std::string& variant) {
        OptimizerHyperparams h;
        h.learning_rate = lr;
        h.beta1 = beta1;
        h.beta2 = beta2;
        h.epsilon = eps;
        h.weight_decay = weight_decay;
        if (variant == "paper") h.variant = AdamWVariant::paper;
        else if (variant == "decoupled") h.variant = AdamWVariant::decoupled;
        else throw Error(ErrorCode::InvalidArgument, "variant must be 'paper' or 'decoupled'");
        h.validate();
        std::vector<double> zs{z}, g{0}, mm{0}, v{0}, out;
        for (std::size_t t = 0; t < grads.size(); ++t) {
          g[0] = grads[t];
          adamw_update<double>(zs, g, mm, v, t + 1, h);
          out.push_back(zs[0]);
        }
        return out;
      },
      py::arg("z"), py::arg("grads"), py::arg("lr") = 2e-5, py::arg("beta1") = 0.9, py::arg("beta2") = 0.999,
      py::arg("eps") = 1e-8, py::arg("weight_decay") = 0.01, py::arg("variant") = "paper",
      "Parameter values after each AdamW step on a single scalar.");

  m.def(
      "split_sizes",
      [](std::size_t n, double train, double val, double test) {
        SplitSpec s;
        s.train_fraction = train;
        s.val_fraction = val;
        s.test_fraction = test;
        s.validate();
        const auto r = split_sizes(n, s);
        return py::make_tuple(r.train, r.val, r.test);
      },
      py::arg("n"), py::arg("train") = 0.6, py::arg("val") = 0.2, py::arg("test") = 0.2);

  m.def(
      "load_csv",
      [](const std::filesystem::path& path, const std::string& text_column, const std::string& label_column) {
        LoadOptions o;
        o.text_column = text_column;
        o.label_column = label_column;
        const auto r = load_csv(path, o);
        std::vector<std::pair<std::string, std::string>> rows;
        for (const auto& s : r.corpus.samples()) rows.emplace_back(s.text, label_str(s.label));
        return rows;
      },
      py::arg("path"), py::arg("text_column") = "Email", py::arg("label_column") = "Category",
      "Rows as (text, label) pairs; rows with unknown labels or empty text are skipped.");

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); }, py::arg("path"))
      .def_property_readonly("vocabulary", [](const Checkpoint& c) { return c.vocab; })
      .def_property_readonly("parameter_count", [](const Checkpoint& c) { return c.params.parameter_count(); })
      .def_property_readonly("history",
                             [](const Checkpoint& c) {
                               std::vector<py::dict> out;
                               for (const auto& e : c.history) {
                                 py::dict d;
                                 d["epoch"] = e.epoch;
                                 d["train_loss"] = e.train_loss;
                                 d["val_loss"] = e.val_loss;
                                 d["val_accuracy"] = e.val_accuracy;
                                 d["learning_rate"] = e.learning_rate;
                                 out.push_back(d);
                               }
                               return out;
                             })
      .def(
          "classify", [](const Checkpoint& c, const std::string& text) {
            return prediction_dict(predict(c.params, c.vocab, text));
          },
          py::arg("text"))
      .def(
          "evaluate",
          [](const Checkpoint& c, const std::filesystem::path& csv) {
            return metrics_dict(evaluate(c, load_csv(csv).corpus));
          },
          py::arg("csv"));

  m.def(
      "prepare", [](const std::filesystem::path& config, std::optional<std::uint64_t> seed) {
        return run_prepare(config_from(config, seed)).manifest.dump();
      },
      py::arg("config"), py::arg("seed") = py::none(), "Runs the prepare stage; returns the manifest JSON.");
  m.def(
      "tokenizer_train",
      [](const std::filesystem::path& config, std::optional<std::uint64_t> seed) {
        return run_tokenizer_train(config_from(config, seed));
      },
      py::arg("config"), py::arg("seed") = py::none());
  m.def(
      "balance",
      [](const std::filesystem::path& config, std::optional<std::uint64_t> seed) {
        return run_balance(config_from(config, seed)).report.to_json().dump();
      },
      py::arg("config"), py::arg("seed") = py::none(), "Runs the balance stage; returns the report JSON.");
  m.def(
      "train",
      [](const std::filesystem::path& config, std::optional<std::uint64_t> seed) {
        const auto c = config_from(config, seed);
        py::gil_scoped_release release;
        run_train(c);
        return c.file(files::checkpoint);
      },
      py::arg("config"), py::arg("seed") = py::none(), "Runs the train stage; returns the checkpoint path.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_cli(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command line; returns (exit_code, stdout, stderr).");
}
