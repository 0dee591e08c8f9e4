#include "ipsdm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "ipsdm/rng.hpp"

namespace ipsdm {

void TrainingConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "training config: " + m); };
  if (train_batch_size == 0 || val_batch_size == 0) fail("batch sizes must be >= 1");
  if (num_epochs == 0) fail("num_epochs must be >= 1");
  if (early_stopping.patience == 0) fail("patience must be >= 1");
  if (!(max_grad_norm >= 0.0)) fail("max_grad_norm must be non-negative");
  optimizer.validate();
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, bool shuffle,
                                                   std::uint64_t seed, std::size_t epoch) {
  if (batch_size == 0) throw Error(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(mix_seed(seed, {3, epoch}));
    fisher_yates(std::span(order), rng);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return batches;
}

namespace {

struct EncodedSplit {
  std::vector<TokenSequence> sequences;
  std::vector<Label> labels;
};

EncodedSplit encode_split(const Corpus& split, const Vocabulary& vocab, std::size_t max_len) {
  EncodedSplit out;
  out.sequences.reserve(split.size());
  out.labels.reserve(split.size());
  for (const auto& s : split.samples()) {
    out.sequences.push_back(encode(vocab, s.text, max_len));
    out.labels.push_back(s.label);
  }
  return out;
}

EvaluationOutput evaluate_encoded(const ModelParameters<float>& params, const EncodedSplit& data,
                                  std::size_t batch_size) {
  if (data.sequences.empty()) throw Error(ErrorCode::EmptySplit, "cannot evaluate an empty split");
  EvaluationOutput out;
  out.predictions.reserve(data.sequences.size());
  double loss_sum = 0.0;
  for (const auto& batch : make_batches(data.sequences.size(), batch_size, false, 0, 0)) {
    std::vector<TokenSequence> seqs;
    std::vector<Label> labels;
    for (auto i : batch) {
      seqs.push_back(data.sequences[i]);
      labels.push_back(data.labels[i]);
    }
    auto fr = forward(params, std::span<const TokenSequence>(seqs), false);
    const auto logits = fr.logits.cast<double>();
    const auto ce = cross_entropy(logits, labels);
    for (double l : ce.per_sample) loss_sum += l;
    for (std::size_t b = 0; b < logits.rows; ++b) {
      const auto row = logits.row(b);
      const auto probs = softmax(std::span<const double>(row.data(), row.size()));
      out.predictions.push_back(static_cast<Label>(argmax(probs)));
    }
  }
  out.metrics = score(confusion(out.predictions, data.labels));
  out.metrics.loss = loss_sum / static_cast<double>(data.sequences.size());
  return out;
}

bool params_finite(const ModelParameters<float>& p) {
  bool ok = true;
  p.for_each_tensor([&](std::string_view, const Matrix<float>& m) { ok = ok && linalg::all_finite(m); });
  return ok;
}

double worst_metric(StoppingMetric m) {
  return m == StoppingMetric::val_accuracy ? -std::numeric_limits<double>::infinity()
                                           : std::numeric_limits<double>::infinity();
}

bool improves(StoppingMetric m, double candidate, double best) {
  return m == StoppingMetric::val_accuracy ? candidate > best : candidate < best;
}

}  // namespace

TrainResult train(const TrainingConfig& config, const Corpus& train_split, const Corpus& val_split,
                  const Vocabulary& vocab, const TrainOptions& options) {
  config.validate();
  if (train_split.empty()) throw Error(ErrorCode::EmptySplit, "training split is empty");
  if (val_split.empty()) throw Error(ErrorCode::EmptySplit, "validation split is empty");

  TrainingConfig cfg = config;
  cfg.model.vocab_size = vocab.size();
  cfg.model.validate();

  const auto train_data = encode_split(train_split, vocab, cfg.model.max_len);
  const auto val_data = encode_split(val_split, vocab, cfg.model.max_len);
  const StoppingMetric metric = cfg.early_stopping.metric;

  ModelParameters<float> params;
  OptimizerState<float> opt;
  ModelParameters<float> best;
  std::vector<EpochRecord> history;
  std::size_t start_epoch = 1, best_epoch = 0, stale = 0;
  double best_metric = worst_metric(metric);

  if (options.resume) {
    const auto& r = *options.resume;
    if (!r.resume) throw Error(ErrorCode::InvalidArgument, "checkpoint carries no resume state");
    if (r.vocab.hash() != vocab.hash()) throw Error(ErrorCode::VocabularyMismatch, "resume vocabulary differs");
    if (!(r.training.model == cfg.model))
      throw Error(ErrorCode::InvalidArgument, "resume checkpoint was trained with a different model config");
    params = r.resume->latest;
    opt = r.resume->optimizer;
    best = r.params;
    history = r.history;
    start_epoch = r.resume->epochs_completed + 1;
    best_epoch = r.resume->best_epoch;
    best_metric = r.resume->best_metric;
    stale = r.resume->stale_epochs;
  } else {
    params = init_parameters<float>(cfg.model, mix_seed(cfg.seed, {1}));
    opt.init(params);
    best = params;
  }

  auto snapshot = [&]() {
    Checkpoint c;
    c.training = cfg;
    c.vocab = vocab;
    c.params = best;
    c.history = history;
    c.resume = ResumeState{params, opt, history.size(), best_epoch, best_metric, stale};
    return c;
  };

  const std::size_t n = train_data.sequences.size();
  const std::uint64_t steps_per_epoch = (n + cfg.train_batch_size - 1) / cfg.train_batch_size;
  const std::uint64_t total_steps = steps_per_epoch * cfg.num_epochs;

  ParameterGradients<float> grads = params.zeros_like();
  Checkpoint last_good = snapshot();
  bool stopped_early = cfg.early_stopping.enabled && stale >= cfg.early_stopping.patience;

  for (std::size_t epoch = start_epoch; epoch <= cfg.num_epochs && !stopped_early; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    double lr = cfg.optimizer.learning_rate;

    for (const auto& batch : make_batches(n, cfg.train_batch_size, true, cfg.seed, epoch)) {
      std::vector<TokenSequence> seqs;
      std::vector<Label> labels;
      seqs.reserve(batch.size());
      for (auto i : batch) {
        seqs.push_back(train_data.sequences[i]);
        labels.push_back(train_data.labels[i]);
      }
      lr = lr_at(opt.step, cfg.schedule, total_steps, cfg.optimizer.learning_rate);

      auto fr = forward(params, std::span<const TokenSequence>(seqs), true, mix_seed(cfg.seed, {2, opt.step}));
      const auto ce = cross_entropy(fr.logits.cast<double>(), labels);
      if (!std::isfinite(ce.loss))
        throw DivergedError("training loss became non-finite at epoch " + std::to_string(epoch), last_good);

      grads.zero();
      backward(params, fr.cache, ce.gradient.cast<float>(), grads);
      if (cfg.max_grad_norm > 0.0) clip_grad_norm(grads, cfg.max_grad_norm);

      OptimizerHyperparams hyper = cfg.optimizer;
      hyper.learning_rate = lr;
      try {
        adamw_step(params, grads, opt, hyper);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NonFiniteGradient) throw;
        throw DivergedError(e.what(), last_good);
      }
      if (!params_finite(params))
        throw DivergedError("parameters became non-finite at epoch " + std::to_string(epoch), last_good);
      loss_sum += ce.loss * static_cast<double>(batch.size());
    }

    const auto val = evaluate_encoded(params, val_data, cfg.val_batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.val_loss = *val.metrics.loss;
    rec.val_accuracy = val.metrics.accuracy;
    rec.learning_rate = lr;
    rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history.push_back(rec);

    const double value = metric == StoppingMetric::val_accuracy ? rec.val_accuracy : rec.val_loss;
    if (improves(metric, value, best_metric)) {
      best_metric = value;
      best_epoch = epoch;
      best = params;
      stale = 0;
    } else {
      ++stale;
    }
    if (options.on_epoch) options.on_epoch(rec);
    last_good = snapshot();

    if (cfg.early_stopping.enabled && stale >= cfg.early_stopping.patience) stopped_early = true;
    if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) break;
  }

  return TrainResult{snapshot(), stopped_early};
}

EvaluationOutput evaluate_detailed(const ModelParameters<float>& params, const Vocabulary& vocab,
                                   const Corpus& split, std::size_t batch_size) {
  if (split.empty()) throw Error(ErrorCode::EmptySplit, "cannot evaluate an empty split");
  return evaluate_encoded(params, encode_split(split, vocab, params.config.max_len), batch_size);
}

SplitMetrics evaluate(const Checkpoint& checkpoint, const Corpus& split) {
  return evaluate_detailed(checkpoint.params, checkpoint.vocab, split, checkpoint.training.val_batch_size).metrics;
}

SplitMetrics evaluate(const Checkpoint& checkpoint, const Corpus& split, const Vocabulary& vocab) {
  if (vocab.hash() != checkpoint.vocab.hash())
    throw Error(ErrorCode::VocabularyMismatch, "vocabulary does not match the checkpoint");
  return evaluate(checkpoint, split);
}

GapRecord overfit_gap(const std::vector<EpochRecord>& history, double test_accuracy, double threshold) {
  if (history.empty()) throw Error(ErrorCode::InvalidArgument, "overfit_gap needs at least one epoch");
  GapRecord g;
  g.best_val_accuracy = history.front().val_accuracy;
  for (const auto& r : history) g.best_val_accuracy = std::max(g.best_val_accuracy, r.val_accuracy);
  g.test_accuracy = test_accuracy;
  g.gap = std::abs(g.best_val_accuracy - test_accuracy);
  g.warn = g.gap > threshold;
  return g;
}

}  // namespace ipsdm
