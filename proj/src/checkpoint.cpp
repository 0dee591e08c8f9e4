#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <limits>

#include "ipsdm/trainer.hpp"

namespace ipsdm {

namespace {

constexpr char kMagic[4] = {'I', 'P', 'S', 'D'};

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

// ---- little-endian byte helpers ----

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
  std::uint64_t u64() { return uint(8); }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }

 private:
  std::uint64_t uint(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::CorruptFile, "checkpoint is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void put_tensor(std::string& out, const std::string& name, const Matrix<float>& m) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put_u32(out, static_cast<std::uint32_t>(m.rows));
  put_u32(out, static_cast<std::uint32_t>(m.cols));
  for (float f : m.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
}

std::vector<std::pair<std::string, Matrix<float>*>> named(ModelParameters<float>& p, const std::string& prefix) {
  std::vector<std::pair<std::string, Matrix<float>*>> out;
  p.for_each_tensor([&](std::string_view name, Matrix<float>& m) { out.emplace_back(prefix + std::string(name), &m); });
  return out;
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

// ---------------------------------------------------------------------------
// JSON forms

nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"num_heads", c.num_heads},   {"d_model", c.d_model},
          {"d_ff", c.d_ff},             {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
          {"num_labels", c.num_labels}, {"dropout_rate", c.dropout_rate},
          {"pooling", c.pooling == Pooling::first_token ? "first_token" : "mean"}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  check_keys(j, {"num_layers", "num_heads", "d_model", "d_ff", "max_len", "vocab_size", "num_labels", "dropout_rate", "pooling"},
             "model");
  try {
    read_into(j, "num_layers", c.num_layers);
    read_into(j, "num_heads", c.num_heads);
    read_into(j, "d_model", c.d_model);
    read_into(j, "d_ff", c.d_ff);
    read_into(j, "max_len", c.max_len);
    read_into(j, "vocab_size", c.vocab_size);
    read_into(j, "num_labels", c.num_labels);
    read_into(j, "dropout_rate", c.dropout_rate);
    if (j.contains("pooling")) {
      const auto p = j.at("pooling").get<std::string>();
      if (p == "first_token") c.pooling = Pooling::first_token;
      else if (p == "mean") c.pooling = Pooling::mean;
      else throw Error(ErrorCode::Config, "pooling must be first_token or mean");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("model: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const OptimizerHyperparams& h) {
  return {{"learning_rate", h.learning_rate}, {"beta1", h.beta1},
          {"beta2", h.beta2},                 {"epsilon", h.epsilon},
          {"weight_decay", h.weight_decay},   {"variant", h.variant == AdamWVariant::paper ? "paper" : "decoupled"}};
}

OptimizerHyperparams optimizer_from_json(const nlohmann::json& j, OptimizerHyperparams h) {
  check_keys(j, {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "variant"}, "optimizer");
  try {
    read_into(j, "learning_rate", h.learning_rate);
    read_into(j, "beta1", h.beta1);
    read_into(j, "beta2", h.beta2);
    read_into(j, "epsilon", h.epsilon);
    read_into(j, "weight_decay", h.weight_decay);
    if (j.contains("variant")) {
      const auto v = j.at("variant").get<std::string>();
      if (v == "paper") h.variant = AdamWVariant::paper;
      else if (v == "decoupled") h.variant = AdamWVariant::decoupled;
      else throw Error(ErrorCode::Config, "optimizer variant must be paper or decoupled");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("optimizer: ") + e.what());
  }
  return h;
}

nlohmann::json to_json(const TrainingConfig& c) {
  return {
      {"train_batch_size", c.train_batch_size},
      {"val_batch_size", c.val_batch_size},
      {"num_epochs", c.num_epochs},
      {"seed", c.seed},
      {"early_stopping",
       {{"enabled", c.early_stopping.enabled},
        {"patience", c.early_stopping.patience},
        {"metric", c.early_stopping.metric == StoppingMetric::val_accuracy ? "val_accuracy" : "val_loss"}}},
      {"optimizer", to_json(c.optimizer)},
      {"schedule", c.schedule == LrSchedule::constant ? "constant" : "linear_decay"},
      {"max_grad_norm", c.max_grad_norm},
      {"model", to_json(c.model)},
  };
}

TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig c) {
  check_keys(j,
             {"train_batch_size", "val_batch_size", "num_epochs", "seed", "early_stopping", "optimizer", "schedule",
              "max_grad_norm", "model"},
             "training");
  try {
    read_into(j, "train_batch_size", c.train_batch_size);
    read_into(j, "val_batch_size", c.val_batch_size);
    read_into(j, "num_epochs", c.num_epochs);
    read_into(j, "seed", c.seed);
    read_into(j, "max_grad_norm", c.max_grad_norm);
    if (j.contains("early_stopping")) {
      const auto& es = j.at("early_stopping");
      check_keys(es, {"enabled", "patience", "metric"}, "early_stopping");
      read_into(es, "enabled", c.early_stopping.enabled);
      read_into(es, "patience", c.early_stopping.patience);
      if (es.contains("metric")) {
        const auto m = es.at("metric").get<std::string>();
        if (m == "val_accuracy") c.early_stopping.metric = StoppingMetric::val_accuracy;
        else if (m == "val_loss") c.early_stopping.metric = StoppingMetric::val_loss;
        else throw Error(ErrorCode::Config, "early_stopping.metric must be val_accuracy or val_loss");
      }
    }
    if (j.contains("schedule")) {
      const auto s = j.at("schedule").get<std::string>();
      if (s == "constant") c.schedule = LrSchedule::constant;
      else if (s == "linear_decay") c.schedule = LrSchedule::linear_decay;
      else throw Error(ErrorCode::Config, "schedule must be constant or linear_decay");
    }
    if (j.contains("optimizer")) c.optimizer = optimizer_from_json(j.at("optimizer"), c.optimizer);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"), c.model);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::Config, std::string("training: ") + e.what());
  }
  return c;
}

nlohmann::json to_json(const EpochRecord& r, bool include_wall_time) {
  nlohmann::json j = {{"epoch", r.epoch},
                      {"train_loss", finite_or_null(r.train_loss)},
                      {"val_loss", finite_or_null(r.val_loss)},
                      {"val_accuracy", r.val_accuracy},
                      {"learning_rate", r.learning_rate}};
  if (include_wall_time) j["wall_time"] = r.wall_time;
  return j;
}

EpochRecord epoch_record_from_json(const nlohmann::json& j) {
  EpochRecord r;
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_loss = j.at("train_loss").is_null() ? nan : j.at("train_loss").get<double>();
  r.val_loss = j.at("val_loss").is_null() ? nan : j.at("val_loss").get<double>();
  r.val_accuracy = j.at("val_accuracy").get<double>();
  r.learning_rate = j.at("learning_rate").get<double>();
  r.wall_time = j.value("wall_time", 0.0);
  return r;
}

// ---------------------------------------------------------------------------
// Container

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& r : ckpt.history) history.push_back(to_json(r, false));

  nlohmann::json header = {
      {"format_version", Checkpoint::kFormatVersion},
      {"training", to_json(ckpt.training)},
      {"vocabulary", ckpt.vocab.to_json()},
      {"vocab_hash", hex64(ckpt.vocab.hash())},
      {"history", std::move(history)},
      {"resume", nullptr},
  };
  if (ckpt.resume) {
    const auto& r = *ckpt.resume;
    header["resume"] = {{"epochs_completed", r.epochs_completed},
                        {"best_epoch", r.best_epoch},
                        {"best_metric", finite_or_null(r.best_metric)},
                        {"stale_epochs", r.stale_epochs},
                        {"optimizer_step", r.optimizer.step}};
  }

  auto params = ckpt.params;  // named() needs mutable access
  std::vector<std::pair<std::string, const Matrix<float>*>> tensors;
  for (auto& [n, m] : named(params, "model.")) tensors.emplace_back(n, m);
  std::optional<ResumeState> resume = ckpt.resume;
  if (resume) {
    for (auto& [n, m] : named(resume->latest, "latest.")) tensors.emplace_back(n, m);
    const auto names = named(resume->latest, "");
    if (resume->optimizer.m.size() != names.size() || resume->optimizer.v.size() != names.size())
      throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the parameters");
    for (std::size_t i = 0; i < names.size(); ++i) tensors.emplace_back("adam.m." + names[i].first, &resume->optimizer.m[i]);
    for (std::size_t i = 0; i < names.size(); ++i) tensors.emplace_back("adam.v." + names[i].first, &resume->optimizer.v[i]);
  }

  const std::string header_text = header.dump();
  std::string out(kMagic, 4);
  put_u32(out, Checkpoint::kFormatVersion);
  put_u64(out, header_text.size());
  out += header_text;
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) put_tensor(out, name, *m);
  put_u32(out, crc32_of(out));
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < 4 + 4 + 8 + 4 + 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw Error(ErrorCode::CorruptFile, "not an IPSD checkpoint");
  const auto body = bytes.substr(0, bytes.size() - 4);
  Reader trailer(bytes.substr(bytes.size() - 4));
  if (trailer.u32() != crc32_of(body)) throw Error(ErrorCode::CorruptFile, "checksum mismatch");

  Reader in(body);
  in.take(4);
  const auto version = in.u32();
  if (version != Checkpoint::kFormatVersion)
    throw Error(ErrorCode::VersionMismatch, "checkpoint format " + std::to_string(version) + ", expected " +
                                                std::to_string(Checkpoint::kFormatVersion));
  const auto header_len = in.u64();
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(in.take(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("bad header: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.training = training_config_from_json(header.at("training"));
    ckpt.vocab = Vocabulary::from_json(header.at("vocabulary"));
    if (header.at("vocab_hash").get<std::string>() != hex64(ckpt.vocab.hash()))
      throw Error(ErrorCode::CorruptFile, "vocabulary hash mismatch");
    for (const auto& r : header.at("history")) ckpt.history.push_back(epoch_record_from_json(r));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("bad header: ") + e.what());
  }

  ckpt.params = ModelParameters<float>::zeros(ckpt.training.model);
  std::vector<std::pair<std::string, Matrix<float>*>> slots = named(ckpt.params, "model.");
  const auto& rj = header.at("resume");
  if (!rj.is_null()) {
    ResumeState r;
    r.latest = ModelParameters<float>::zeros(ckpt.training.model);
    r.optimizer.init(r.latest);
    r.epochs_completed = rj.at("epochs_completed").get<std::size_t>();
    r.best_epoch = rj.at("best_epoch").get<std::size_t>();
    r.best_metric = rj.at("best_metric").is_null()
                        ? (ckpt.training.early_stopping.metric == StoppingMetric::val_accuracy
                               ? -std::numeric_limits<double>::infinity()
                               : std::numeric_limits<double>::infinity())
                        : rj.at("best_metric").get<double>();
    r.stale_epochs = rj.at("stale_epochs").get<std::size_t>();
    r.optimizer.step = rj.at("optimizer_step").get<std::uint64_t>();
    ckpt.resume = std::move(r);
    for (auto& s : named(ckpt.resume->latest, "latest.")) slots.push_back(s);
    const auto names = named(ckpt.resume->latest, "");
    for (std::size_t i = 0; i < names.size(); ++i) slots.emplace_back("adam.m." + names[i].first, &ckpt.resume->optimizer.m[i]);
    for (std::size_t i = 0; i < names.size(); ++i) slots.emplace_back("adam.v." + names[i].first, &ckpt.resume->optimizer.v[i]);
  }

  const auto count = in.u32();
  if (count != slots.size()) throw Error(ErrorCode::CorruptFile, "unexpected tensor count");
  for (auto& [expected, m] : slots) {
    const auto name = in.take(in.u32());
    if (name != expected) throw Error(ErrorCode::CorruptFile, "expected tensor " + expected + ", found " + std::string(name));
    const auto rows = in.u32(), cols = in.u32();
    if (rows != m->rows || cols != m->cols) throw Error(ErrorCode::CorruptFile, "shape mismatch for " + expected);
    for (auto& f : m->data) f = std::bit_cast<float>(in.u32());
  }
  if (!in.done()) throw Error(ErrorCode::CorruptFile, "trailing bytes after tensors");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "file not found: " + path.string());
  return deserialize_checkpoint(read_file(path));
}

}  // namespace ipsdm
