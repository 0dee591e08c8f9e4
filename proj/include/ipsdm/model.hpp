#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ipsdm/corpus.hpp"
#include "ipsdm/tensor.hpp"
#include "ipsdm/tokenizer.hpp"

namespace ipsdm {

enum class Pooling { first_token, mean };

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t d_model = 128;
  std::size_t d_ff = 256;
  std::size_t max_len = 128;
  std::size_t vocab_size = 8192;
  std::size_t num_labels = 3;
  double dropout_rate = 0.1;
  Pooling pooling = Pooling::first_token;

  void validate() const;
  std::size_t head_dim() const noexcept { return d_model / num_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct EncoderLayer {
  // A key bias would add the same constant to every score in a row, which
  // softmax ignores, so keys have none.
  Matrix<T> w_q, b_q, w_k, w_v, b_v, w_o, b_o;
  Matrix<T> ln1_gamma, ln1_beta;
  Matrix<T> ff1_w, ff1_b, ff2_w, ff2_b;
  Matrix<T> ln2_gamma, ln2_beta;

  friend bool operator==(const EncoderLayer&, const EncoderLayer&) = default;
};

/// All trainable tensors. The same structure holds gradients.
template <typename T>
struct ModelParameters {
  ModelConfig config;
  Matrix<T> token_embedding;     // vocab_size x d_model
  Matrix<T> position_embedding;  // max_len x d_model
  std::vector<EncoderLayer<T>> layers;
  Matrix<T> classifier_w;  // d_model x num_labels
  Matrix<T> classifier_b;  // 1 x num_labels

  /// Bumped by every optimizer update; forward caches record it.
  std::uint64_t generation = 0;

  /// Zero tensors shaped by `config`.
  static ModelParameters zeros(const ModelConfig& config);
  ModelParameters zeros_like() const { return zeros(config); }

  std::size_t parameter_count() const;
  void zero();

  /// Visits every tensor with a stable dotted name, in a fixed order.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  template <typename U>
  ModelParameters<U> cast() const {
    ModelParameters<U> out = ModelParameters<U>::zeros(config);
    std::vector<const Matrix<T>*> src;
    for_each_tensor([&](std::string_view, const Matrix<T>& m) { src.push_back(&m); });
    std::size_t i = 0;
    out.for_each_tensor([&](std::string_view, Matrix<U>& m) { m = src[i++]->template cast<U>(); });
    return out;
  }

  bool tensors_equal(const ModelParameters& o) const {
    return config == o.config && token_embedding == o.token_embedding &&
           position_embedding == o.position_embedding && layers == o.layers && classifier_w == o.classifier_w &&
           classifier_b == o.classifier_b;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    f("embeddings.token", self.token_embedding);
    f("embeddings.position", self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "attention.query.weight", L.w_q);
      f(p + "attention.query.bias", L.b_q);
      f(p + "attention.key.weight", L.w_k);
      f(p + "attention.value.weight", L.w_v);
      f(p + "attention.value.bias", L.b_v);
      f(p + "attention.output.weight", L.w_o);
      f(p + "attention.output.bias", L.b_o);
      f(p + "attention_norm.scale", L.ln1_gamma);
      f(p + "attention_norm.offset", L.ln1_beta);
      f(p + "ffn.in.weight", L.ff1_w);
      f(p + "ffn.in.bias", L.ff1_b);
      f(p + "ffn.out.weight", L.ff2_w);
      f(p + "ffn.out.bias", L.ff2_b);
      f(p + "ffn_norm.scale", L.ln2_gamma);
      f(p + "ffn_norm.offset", L.ln2_beta);
    }
    f("classifier.weight", self.classifier_w);
    f("classifier.bias", self.classifier_b);
  }
};

template <typename T>
using ParameterGradients = ModelParameters<T>;

/// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& config);

/// Truncated normal (std 0.02, cut at two sigma) weights, zero biases,
/// unit layer-norm scales. Deterministic for a fixed seed.
template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------

template <typename T>
struct AttentionResult {
  Matrix<T> output;         // queries x dv
  Matrix<T> probabilities;  // queries x keys
};

/// Single-head scaled dot-product attention. Keys with mask 0 get zero
/// probability. Throws AllMasked when no key is unmasked.
template <typename T>
AttentionResult<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                             std::span<const std::uint8_t> key_mask);

template <typename T>
struct LayerCache {
  Matrix<T> input;
  Matrix<T> q, k, v;
  std::vector<Matrix<T>> probs;  // per head, n x n
  Matrix<T> context;
  Matrix<T> attn_dropout;  // empty when dropout is inactive
  Matrix<T> ln1_xhat;
  std::vector<T> ln1_rstd;
  Matrix<T> ln1_out;
  Matrix<T> ff_pre;
  Matrix<T> ff_act;
  Matrix<T> ff_dropout;
  Matrix<T> ln2_xhat;
  std::vector<T> ln2_rstd;
  Matrix<T> output;
};

template <typename T>
struct SampleCache {
  std::vector<std::size_t> positions;  // unmasked positions, in order
  std::vector<TokenId> token_ids;      // ids at those positions
  Matrix<T> embed_dropout;
  std::vector<LayerCache<T>> layers;
  Matrix<T> pooled;  // 1 x d_model, before dropout
  Matrix<T> pooled_dropout;
  Matrix<T> classifier_input;  // pooled after dropout
};

template <typename T>
struct ForwardCache {
  const ModelParameters<T>* params = nullptr;
  std::uint64_t generation = 0;
  std::vector<SampleCache<T>> samples;
};

template <typename T>
struct ForwardResult {
  Matrix<T> logits;  // batch x num_labels
  ForwardCache<T> cache;
};

/// Embeddings -> post-LN encoder layers -> pooling -> linear head. Only
/// unmasked positions are computed, so padded ids never influence the logits.
/// Dropout is drawn from `dropout_seed` and only when training is true.
template <typename T>
ForwardResult<T> forward(const ModelParameters<T>& params, std::span<const TokenSequence> batch, bool training,
                         std::uint64_t dropout_seed = 0);

/// Gradients of sum_b <logit_grads[b], logits[b]> with respect to every
/// parameter, written into `grads` (accumulated, so zero it first).
template <typename T>
void backward(const ModelParameters<T>& params, const ForwardCache<T>& cache, const Matrix<T>& logit_grads,
              ParameterGradients<T>& grads);

template <typename T>
ParameterGradients<T> backward(const ModelParameters<T>& params, const ForwardCache<T>& cache,
                               const Matrix<T>& logit_grads) {
  auto grads = params.zeros_like();
  backward(params, cache, logit_grads, grads);
  return grads;
}

struct Prediction {
  Label label = Label::ham;
  std::array<double, kNumLabels> probabilities{};
};

template <typename T>
Prediction predict(const ModelParameters<T>& params, const Vocabulary& vocab, std::string_view text);

/// Argmax with ties to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace ipsdm
