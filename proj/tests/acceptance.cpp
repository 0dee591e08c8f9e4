// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "ipsdm/balance.hpp"
#include "ipsdm/metrics.hpp"
#include "ipsdm/optim.hpp"
#include "ipsdm/pipeline.hpp"
#include "ipsdm/rng.hpp"
#include "oracles.hpp"

using namespace ipsdm;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail.clear();
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  Outcome o;
  const auto t0 = Clock::now();
  const ModelConfig desk;  // 2 layers, 4 heads, d_model 128, d_ff 256
  auto params = init_parameters<double>(desk, 2024);
  std::mt19937_64 rng(8);
  // Move off the initial point: zero biases and unit norm scales hide terms,
  // and first-layer query/key gradients there sit at the difference noise floor.
  std::normal_distribution<double> normal(0.0, 1.0);
  params.for_each_tensor([&](std::string_view name, Matrix<double>& m) {
    for (auto& x : m.data) {
      if (name.ends_with(".scale")) x = 1.0 + 0.2 * normal(rng);
      else if (name.ends_with(".bias") || name.ends_with(".offset")) x = 0.1 * normal(rng);
      else x *= 3.0;
    }
  });
  std::vector<TokenSequence> batch;
  for (std::size_t len : {12u, 7u}) {
    TokenSequence s;
    s.ids.assign(desk.max_len, 0);
    s.attention_mask.assign(desk.max_len, 0);
    s.true_length = len;
    for (std::size_t i = 0; i < len; ++i) {
      s.ids[i] = i == 0 ? 2 : i + 1 == len ? 3 : static_cast<TokenId>(4 + rng() % (desk.vocab_size - 4));
      s.attention_mask[i] = 1;
    }
    batch.push_back(s);
  }
  const std::vector<Label> labels{Label::spam, Label::phishing};

  gradcheck::Options opts;
  opts.step = 1e-5;
  opts.training = true;  // fixed dropout masks
  opts.dropout_seed = 99;
  opts.max_per_group = 128;
  double worst = 0;
  std::string worst_name;
  std::size_t groups = 0, entries = 0;
  for (const auto& g : gradcheck::run(params, batch, labels, opts)) {
    ++groups;
    entries += g.checked;
    o.require(g.analytic_norm > 0, g.name + " has no gradient");
    o.require(g.relative_error < 1e-4, fmt("%s rel err %.2e", g.name.c_str(), g.relative_error));
    if (g.relative_error >= worst) worst = g.relative_error, worst_name = g.name;
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120, fmt("took %.1fs", secs));
  if (o.pass)
    o.detail = fmt("%zu groups, %zu entries, worst %.2e (%s), %.1fs", groups, entries, worst, worst_name.c_str(), secs);
  return o;
}

Outcome adamw_fidelity() {
  Outcome o;
  const std::vector<double> grads{1, -1, 0.5};
  double worst = 0;
  for (bool decoupled : {false, true}) {
    for (double lr : {2e-5, 1e-2}) {
      for (double z0 : {0.0, 0.7, -1.5}) {
        OptimizerHyperparams h;
        h.learning_rate = lr;
        h.variant = decoupled ? AdamWVariant::decoupled : AdamWVariant::paper;
        oracle::AdamScalar ref;
        ref.lr = lr;
        ref.decoupled = decoupled;
        const auto want = oracle::adamw_trace(z0, grads, ref);
        std::vector<double> z{z0}, g{0}, m{0}, v{0};
        for (std::uint64_t t = 1; t <= 3; ++t) {
          g[0] = grads[t - 1];
          adamw_update<double>(z, g, m, v, t, h);
          worst = std::max(worst, std::abs(z[0] - want[t - 1]));
        }
      }
    }
  }
  o.require(worst <= 1e-12, fmt("trace error %.2e", worst));

  double bias_err = 0;
  for (double g0 : {1.0, -3.5, 0.001, 42.0}) {
    OptimizerHyperparams h;
    std::vector<double> z{0}, g{g0}, m{0}, v{0};
    adamw_update<double>(z, g, m, v, 1, h);
    const double m_hat = m[0] / (1 - h.beta1), v_hat = v[0] / (1 - h.beta2);
    bias_err = std::max({bias_err, std::abs(m_hat - g0) / std::abs(g0), std::abs(v_hat - g0 * g0) / (g0 * g0)});
  }
  // a few ulps from the two roundings in the moment update and the division
  o.require(bias_err <= 8 * std::numeric_limits<double>::epsilon(), fmt("bias correction off by %.2e", bias_err));
  if (o.pass) o.detail = fmt("max trace error %.2e, bias-correction rel error %.2e", worst, bias_err);
  return o;
}

Outcome metrics_oracle() {
  Outcome o;
  std::mt19937_64 rng(1000);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 100;
    std::vector<int> p(n), t(n);
    std::vector<Label> pl(n), tl(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng() % 3);
      t[i] = static_cast<int>(rng() % 3);
      pl[i] = static_cast<Label>(p[i]);
      tl[i] = static_cast<Label>(t[i]);
    }
    const auto want = oracle::score(p, t);
    const auto got = score(confusion(pl, tl));
    bool same = got.accuracy == want.accuracy && got.macro_precision == want.macro_precision &&
                got.macro_recall == want.macro_recall && got.macro_f1 == want.macro_f1;
    for (std::size_t c = 0; c < 3; ++c)
      same = same && got.per_class[c].precision == want.precision[c] && got.per_class[c].recall == want.recall[c] &&
             got.per_class[c].f1 == want.f1[c];
    mismatches += !same;
  }
  o.require(mismatches == 0, fmt("%zu of 1000 fixtures differ", mismatches));

  Matrix<double> uniform(4, 3);
  for (std::size_t i = 0; i < uniform.data.size(); ++i) uniform.data[i] = static_cast<double>(i / 3) * 1.25 - 2.0;
  const std::vector<Label> labels{Label::ham, Label::spam, Label::phishing, Label::spam};
  const double ce_err = std::abs(cross_entropy(uniform, labels).loss - std::log(3.0));
  o.require(ce_err <= 1e-12, fmt("uniform cross-entropy off by %.2e", ce_err));

  std::size_t shift_fail = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> x(3), y(3);
    const double c = static_cast<double>(static_cast<int>(rng() % 2001) - 1000);
    for (std::size_t i = 0; i < 3; ++i) {
      x[i] = static_cast<double>(static_cast<int>(rng() % 8192) - 4096) / 1024.0;
      y[i] = x[i] + c;
    }
    shift_fail += softmax(x) != softmax(y);
  }
  o.require(shift_fail == 0, fmt("%zu shifted softmax rows differ", shift_fail));
  if (o.pass) o.detail = fmt("1000 fixtures exact, |CE - ln 3| = %.1e, 1000 shifts bitwise", ce_err);
  return o;
}

CountVector sparse(const std::vector<double>& dense) {
  CountVector v;
  for (std::size_t i = 0; i < dense.size(); ++i)
    if (dense[i] != 0.0) {
      v.indices.push_back(static_cast<TokenId>(i));
      v.values.push_back(dense[i]);
    }
  return v;
}

Outcome adasyn_correctness() {
  Outcome o;
  std::vector<std::pair<std::vector<std::vector<double>>, std::vector<int>>> fixtures;
  fixtures.push_back({{{1, 1}, {1, 2}, {2, 1}, {2, 2}, {5, 5}, {1.5, 1.5}, {5, 4}, {3, 3}}, {0, 0, 0, 0, 0, 1, 1, 1}});
  fixtures.push_back({{{0, 0}, {0, 1}, {1, 0}, {1, 1}, {4, 4}, {4, 5}, {5, 4}, {0.5, 0.5}, {4.5, 4.5}, {2, 2}, {2.5, 2}},
                      {0, 0, 0, 0, 0, 0, 0, 1, 1, 2, 2}});
  std::mt19937_64 rng(31);
  while (fixtures.size() < 40) {
    const std::size_t n = 8 + rng() % 30;
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      x.push_back({double(1 + rng() % 6), double(1 + rng() % 6)});  // the origin is an empty text
      y.push_back(i < 2 ? 1 : i < 4 ? 2 : static_cast<int>(rng() % 3));
    }
    std::map<int, int> sizes;
    for (int c : y) ++sizes[c];
    if (sizes[0] >= 2 && sizes[1] >= 2 && sizes[2] >= 2) fixtures.push_back({x, y});
  }

  std::size_t rows = 0, bad = 0;
  for (const auto& [x, y] : fixtures) {
    for (std::size_t k : {1u, 3u, 5u}) {
      std::vector<CountVector> vecs;
      std::vector<Label> labels;
      for (std::size_t i = 0; i < x.size(); ++i) {
        vecs.push_back(sparse(x[i]));
        labels.push_back(static_cast<Label>(y[i]));
      }
      const auto plan = plan_adasyn(vecs, labels, {k, 1.0});
      const auto want = oracle::adasyn(x, y, k, 1.0);
      if (plan.samples.size() != want.rows.size()) {
        ++bad;
        continue;
      }
      for (const auto& s : plan.samples) {
        const auto& w = want.rows.at(s.index);
        ++rows;
        bad += s.ratio != w.r || std::abs(s.ratio_hat - w.r_hat) > 1e-12 || s.synthetic != static_cast<std::uint64_t>(w.g);
      }
      for (const auto& c : plan.classes) bad += c.target_total != static_cast<std::uint64_t>(want.G.at(static_cast<int>(c.label)));
    }
  }
  o.require(bad == 0, fmt("%zu plan entries differ from the oracle", bad));

  // text corpus through vectorize, plan and synthesis
  const auto corpus = fixture::keyword_corpus({120, 40, 15}, 77);
  const auto vocab = train_vocab(corpus, 400);
  const auto vecs = vectorize(corpus, vocab);
  std::vector<Label> labels;
  for (const auto& s : corpus.samples()) labels.push_back(s.label);
  const auto plan = plan_adasyn(vecs, labels, {5, 1.0});
  const auto balanced = synthesize(plan, corpus, vocab, {5, 64});
  const auto before = corpus.class_counts(), after = balanced.class_counts();
  const auto majority = after[index_of(Label::ham)];
  for (auto l : {Label::spam, Label::phishing}) {
    const auto n_min = before[index_of(l)];
    const double diff = std::abs(static_cast<double>(after[index_of(l)]) - static_cast<double>(majority));
    o.require(diff <= static_cast<double>(n_min), fmt("%s ends %zu away from %zu", std::string(label_name(l)).c_str(),
                                                      static_cast<std::size_t>(diff), static_cast<std::size_t>(majority)));
  }
  if (o.pass)
    o.detail = fmt("%zu fixtures x 3 k, %zu rows exact; %zu/%zu/%zu -> %zu/%zu/%zu", fixtures.size(), rows,
                   static_cast<std::size_t>(before[0]), static_cast<std::size_t>(before[1]),
                   static_cast<std::size_t>(before[2]), static_cast<std::size_t>(after[0]),
                   static_cast<std::size_t>(after[1]), static_cast<std::size_t>(after[2]));
  return o;
}

// Shared by the end-to-end and determinism criteria.
struct E2E {
  fixture::TempDir dir{"e2e"};
  std::string config_path;
  Corpus corpus;

  E2E() {
    corpus = fixture::keyword_corpus({140, 100, 60}, 2025);
    std::string csv = "Category,Email\n";
    for (const auto& s : corpus.samples()) csv += std::string(label_name(s.label)) + "," + s.text + "\n";
    fixture::write_text(dir / "keywords.csv", csv);
    nlohmann::json j = {
        {"datasets", {{{"path", "keywords.csv"}}}},
        {"split", {{"seed", 11}}},
        {"balance", {{"seed", 11}}},
        {"tokenizer", {{"vocab_size", 8192}, {"max_len", 128}}},
        {"training",
         {{"num_epochs", 10},
          {"train_batch_size", 16},
          {"seed", 11},
          {"optimizer", {{"learning_rate", 1e-3}}}}},
    };
    config_path = (dir / "config.json").string();
    fixture::write_text(config_path, j.dump(2));
  }

  int run(std::vector<std::string> args, const std::string& out_dir, std::string* out = nullptr) {
    args.push_back("--output-dir");
    args.push_back((dir / out_dir).string());
    std::ostringstream o, e;
    const int code = run_cli(args, o, e);
    if (out) *out = o.str();
    if (code != 0) std::fprintf(stderr, "%s", e.str().c_str());
    return code;
  }

  bool full(const std::string& out_dir) {
    for (const char* stage : {"prepare", "tokenizer-train", "balance", "train"})
      if (run({stage, "--config", config_path}, out_dir) != 0) return false;
    return true;
  }
};

Outcome end_to_end(E2E& e) {
  Outcome o;
  std::size_t rule_hits = 0;
  for (const auto& s : e.corpus.samples()) rule_hits += fixture::keyword_rule(s.text) == static_cast<int>(s.label);
  o.require(rule_hits == e.corpus.size(), fmt("keyword rule scores %zu/%zu", rule_hits, e.corpus.size()));

  const auto t0 = Clock::now();
  if (!e.full("run_a")) {
    o.require(false, "pipeline failed");
    return o;
  }
  const auto out = e.dir / "run_a";
  std::ostringstream so, se;
  const int code = run_cli({"evaluate", "--checkpoint", (out / files::checkpoint).string(), "--val",
                            (out / files::val).string(), "--test", (out / files::test).string(), "--out",
                            (out / files::evaluation).string()},
                           so, se);
  const double secs = seconds_since(t0);
  if (code != 0) {
    o.require(false, "evaluate failed: " + se.str());
    return o;
  }
  const auto report = nlohmann::json::parse(read_file(out / files::evaluation));
  const double test_acc = report.at("test").at("accuracy").get<double>();
  const double gap = report.at("overfit").at("gap").get<double>();
  const auto history = nlohmann::json::parse(read_file(out / files::history));
  const std::size_t epochs = history.at("history").size();

  const auto ckpt = load_checkpoint(out / files::checkpoint);
  const auto spam = predict(ckpt.params, ckpt.vocab, "free cash prize call now");

  o.require(test_acc >= 0.90, fmt("test accuracy %.4f", test_acc));
  o.require(gap < 0.05, fmt("val/test gap %.4f", gap));
  o.require(epochs <= 10, fmt("%zu epochs", epochs));
  o.require(spam.label == Label::spam, "\"free cash prize call now\" not classified spam");
  o.require(secs < 300, fmt("took %.1fs", secs));
  if (o.pass)
    o.detail = fmt("test accuracy %.4f, gap %.4f, %zu epochs, %.1fs", test_acc, gap, epochs, secs);
  return o;
}

Outcome determinism(E2E& e) {
  Outcome o;
  if (!e.full("run_b")) {
    o.require(false, "second pipeline run failed");
    return o;
  }
  const auto a = read_file(e.dir / "run_a" / files::checkpoint);
  const auto b = read_file(e.dir / "run_b" / files::checkpoint);
  o.require(a == b, "checkpoints of identical runs differ");
  for (const char* f : {files::train, files::val, files::test, files::manifest, files::vocab, files::balanced,
                        files::history})
    o.require(read_file(e.dir / "run_a" / f) == read_file(e.dir / "run_b" / f), std::string(f) + " differs");

  // interrupted and resumed through a file on disk
  auto config = PipelineConfig::load(e.config_path);
  config.output_dir = e.dir / "run_a";
  const auto vocab = Vocabulary::from_json(nlohmann::json::parse(read_file(config.file(files::vocab))));
  const auto train_split = load_csv(config.file(files::balanced)).corpus;
  const auto val_split = load_csv(config.file(files::val)).corpus;
  const auto uninterrupted = deserialize_checkpoint(a);
  const std::size_t total = uninterrupted.history.size();
  const std::size_t cut = std::max<std::size_t>(1, total / 2);

  TrainOptions first;
  first.stop_after_epoch = cut;
  const auto half = train(config.training, train_split, val_split, vocab, first);
  const auto mid = e.dir / "mid.ipsd";
  save_checkpoint(half.checkpoint, mid);
  const auto reloaded = load_checkpoint(mid);
  TrainOptions rest;
  rest.resume = &reloaded;
  const auto resumed = train(config.training, train_split, val_split, vocab, rest);
  o.require(serialize_checkpoint(resumed.checkpoint) == a,
            fmt("resume after epoch %zu of %zu differs from the uninterrupted run", cut, total));
  if (o.pass)
    o.detail = fmt("two runs identical (%zu-byte checkpoint); resume after epoch %zu of %zu bit-exact", a.size(), cut,
                   total);
  return o;
}

Outcome data_protocol() {
  Outcome o;
  fixture::TempDir dir("paper");
  fixture::write_source_pair(dir.path, 4825, 747, 189);
  nlohmann::json j = {
      {"datasets",
       {{{"path", "ham_spam.csv"}, {"text_column", "Message"}, {"label_column", "Category"}},
        {{"path", "phishing.csv"},
         {"text_column", "Email Text"},
         {"label_column", "Email Type"},
         {"labels", {{"Phishing Email", "phishing"}}}}}},
      {"split", {{"train", 0.6}, {"val", 0.2}, {"test", 0.2}, {"stratified", false}}},
  };
  const auto config = PipelineConfig::from_json(j, dir.path);
  const auto r = run_prepare(config);
  const auto& all = r.manifest.at("counts").at("all");
  const auto ham = all.at("ham").get<std::size_t>(), spam = all.at("spam").get<std::size_t>(),
             phishing = all.at("phishing").get<std::size_t>(), total = all.at("total").get<std::size_t>();
  o.require(ham == 4825 && spam == 747 && phishing == 189 && total == 5761,
            fmt("counts %zu/%zu/%zu total %zu", ham, spam, phishing, total));
  const auto tr = r.split.train.size(), va = r.split.val.size(), te = r.split.test.size();
  o.require(tr == 3457 && va == 1152 && te == 1152, fmt("split %zu/%zu/%zu", tr, va, te));
  const auto sizes = split_sizes(5761, SplitSpec{});
  o.require(sizes.train == 3457 && sizes.val == 1152 && sizes.test == 1152, "split_sizes disagrees");
  if (o.pass) o.detail = fmt("ham %zu, spam %zu, phishing %zu, total %zu; split %zu/%zu/%zu", ham, spam, phishing, total, tr, va, te);
  return o;
}

Outcome tokenizer_round_trip() {
  Outcome o;
  std::vector<std::string> texts = fixture::kTwentyLines;
  const auto keywords = fixture::keyword_corpus({20, 20, 20}, 3);
  for (const auto& s : keywords.samples()) texts.push_back(s.text);
  texts.push_back("");
  texts.push_back("line one\r\nline two\ttab");
  texts.push_back("\xF0\x9F\x93\xA7 \xE2\x82\xAC" "100 \xE4\xBD\xA0\xE5\xA5\xBD");
  std::string all_bytes;
  for (int b = 1; b < 256; ++b) all_bytes.push_back(static_cast<char>(b));
  texts.push_back(all_bytes.substr(0, 120));

  const auto vocab = train_vocab(texts, 600);
  std::size_t checked = 0, bad = 0;
  for (const auto& t : texts) {
    if (tokenize(vocab, t).size() + 2 > 128) continue;
    ++checked;
    bad += decode_bytes(vocab, encode(vocab, t, 128).ids) != t;
  }
  o.require(bad == 0, fmt("%zu of %zu texts fail to round trip", bad, checked));

  std::size_t merges = 0, merge_bad = 0;
  for (std::size_t target : {300u, 500u, 2000u}) {
    const auto v = train_vocab(fixture::kTwentyLines, target);
    const auto want = oracle::bpe_train(fixture::kTwentyLines, target);
    if (v.merges().size() != want.merges.size()) {
      ++merge_bad;
      continue;
    }
    for (std::size_t r = 0; r < want.merges.size(); ++r) {
      ++merges;
      merge_bad += v.merges()[r].first != want.merges[r].first || v.merges()[r].second != want.merges[r].second ||
                   v.merge_result(r) != want.results[r];
    }
  }
  o.require(merge_bad == 0, fmt("%zu merges differ from the oracle", merge_bad));
  if (o.pass) o.detail = fmt("%zu texts byte-exact, %zu merges match", checked, merges);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> checks_before = {
      {"gradient correctness", gradient_correctness},
      {"adamw fidelity", adamw_fidelity},
      {"metrics oracle equivalence", metrics_oracle},
      {"adasyn correctness", adasyn_correctness},
  };
  int failures = 0;
  int number = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& f) {
    ++number;
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::printf("criterion %d %s: %s (%s)\n", number, name, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  };
  for (const auto& [name, f] : checks_before) report(name, f);
  E2E e2e;
  report("end-to-end learning", [&] { return end_to_end(e2e); });
  report("determinism and resume", [&] { return determinism(e2e); });
  report("data protocol", data_protocol);
  report("tokenizer round trip", tokenizer_round_trip);
  return failures == 0 ? 0 : 1;
}
