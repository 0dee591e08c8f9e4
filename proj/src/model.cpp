#include "ipsdm/model.hpp"

#include <cmath>
#include <limits>
#include <numeric>

#include "ipsdm/error.hpp"
#include "ipsdm/metrics.hpp"
#include "ipsdm/rng.hpp"

namespace ipsdm {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "model config: " + m); };
  if (num_layers == 0) fail("num_layers must be >= 1");
  if (num_heads == 0 || d_model == 0 || d_model % num_heads != 0) fail("d_model must be a positive multiple of num_heads");
  if (d_ff == 0) fail("d_ff must be >= 1");
  if (max_len < 2) fail("max_len must be >= 2");
  if (vocab_size <= Vocabulary::kFirstLearned - 1) fail("vocab_size too small");
  if (num_labels != kNumLabels) fail("num_labels must be 3");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) fail("dropout_rate must lie in [0,1)");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  const std::size_t per_layer = 4 * d * d + 3 * d  // q, k, v, o; keys carry no bias
                                + 2 * d          // attention norm
                                + d * f + f      // ffn in
                                + f * d + d      // ffn out
                                + 2 * d;         // ffn norm
  return c.vocab_size * d + c.max_len * d + c.num_layers * per_layer + d * c.num_labels + c.num_labels;
}

template <typename T>
ModelParameters<T> ModelParameters<T>::zeros(const ModelConfig& c) {
  ModelParameters p;
  p.config = c;
  const std::size_t d = c.d_model, f = c.d_ff;
  p.token_embedding = Matrix<T>(c.vocab_size, d);
  p.position_embedding = Matrix<T>(c.max_len, d);
  p.layers.resize(c.num_layers);
  for (auto& L : p.layers) {
    for (auto* w : {&L.w_q, &L.w_k, &L.w_v, &L.w_o}) *w = Matrix<T>(d, d);
    for (auto* b : {&L.b_q, &L.b_v, &L.b_o, &L.ln1_gamma, &L.ln1_beta, &L.ff2_b, &L.ln2_gamma, &L.ln2_beta})
      *b = Matrix<T>(1, d);
    L.ff1_w = Matrix<T>(d, f);
    L.ff1_b = Matrix<T>(1, f);
    L.ff2_w = Matrix<T>(f, d);
  }
  p.classifier_w = Matrix<T>(d, c.num_labels);
  p.classifier_b = Matrix<T>(1, c.num_labels);
  return p;
}

template <typename T>
std::size_t ModelParameters<T>::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&](std::string_view, const Matrix<T>& m) { n += m.size(); });
  return n;
}

template <typename T>
void ModelParameters<T>::zero() {
  for_each_tensor([](std::string_view, Matrix<T>& m) { m.zero(); });
}

template <typename T>
ModelParameters<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto p = ModelParameters<T>::zeros(config);
  Rng rng(mix_seed(seed, {0x696e6974ull}));
  p.for_each_tensor([&](std::string_view name, Matrix<T>& m) {
    if (name.ends_with(".scale")) {
      std::fill(m.data.begin(), m.data.end(), T{1});
    } else if (name.ends_with(".bias") || name.ends_with(".offset")) {
      m.zero();
    } else {
      for (auto& x : m.data) x = static_cast<T>(0.02 * truncated_normal(rng));
    }
  });
  return p;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

// ---------------------------------------------------------------------------

template <typename T>
AttentionResult<T> attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                             std::span<const std::uint8_t> key_mask) {
  if (q.cols != k.cols || k.rows != v.rows || key_mask.size() != k.rows)
    throw Error(ErrorCode::ShapeMismatch, "attention operand shapes are incompatible");
  if (std::find(key_mask.begin(), key_mask.end(), std::uint8_t{1}) == key_mask.end())
    throw Error(ErrorCode::AllMasked, "no unmasked key");

  const T scale = T{1} / std::sqrt(static_cast<T>(q.cols));
  AttentionResult<T> r{Matrix<T>(q.rows, v.cols), Matrix<T>(q.rows, k.rows)};
  for (std::size_t i = 0; i < q.rows; ++i) {
    auto p = r.probabilities.row(i);
    T max_score = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k.rows; ++j) {
      if (!key_mask[j]) continue;
      T s{};
      for (std::size_t c = 0; c < q.cols; ++c) s += q(i, c) * k(j, c);
      p[j] = s * scale;
      max_score = std::max(max_score, p[j]);
    }
    T total{};
    for (std::size_t j = 0; j < k.rows; ++j) {
      p[j] = key_mask[j] ? std::exp(p[j] - max_score) : T{0};
      total += p[j];
    }
    for (std::size_t j = 0; j < k.rows; ++j) p[j] /= total;
    auto out = r.output.row(i);
    for (std::size_t j = 0; j < k.rows; ++j) {
      if (!key_mask[j]) continue;
      for (std::size_t c = 0; c < v.cols; ++c) out[c] += p[j] * v(j, c);
    }
  }
  return r;
}

namespace {

template <typename T>
constexpr T kLayerNormEps = static_cast<T>(1e-12);

template <typename T>
T gelu(T x) {
  return T{0.5} * x * (T{1} + std::erf(x * static_cast<T>(0.70710678118654752440)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = T{0.5} * (T{1} + std::erf(x * static_cast<T>(0.70710678118654752440)));
  const T pdf = std::exp(T{-0.5} * x * x) * static_cast<T>(0.39894228040143267794);
  return cdf + x * pdf;
}

template <typename T>
Matrix<T> dropout_mask(std::size_t rows, std::size_t cols, double rate, bool active, Rng& rng) {
  if (!active || rate <= 0.0) return {};
  Matrix<T> m(rows, cols);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& x : m.data) x = uniform01(rng) < rate ? T{0} : keep_scale;
  return m;
}

template <typename T>
void apply_mask(Matrix<T>& x, const Matrix<T>& mask) {
  if (mask.data.empty()) return;
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] *= mask.data[i];
}

// y = xhat * gamma + beta, row-wise over d columns.
template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& gamma, const Matrix<T>& beta, Matrix<T>& xhat,
                     std::vector<T>& rstd) {
  const std::size_t d = x.cols;
  Matrix<T> y(x.rows, d);
  xhat = Matrix<T>(x.rows, d);
  rstd.assign(x.rows, T{});
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto xi = x.row(i);
    T mean{};
    for (auto v : xi) mean += v;
    mean /= static_cast<T>(d);
    T var{};
    for (auto v : xi) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + kLayerNormEps<T>);
    rstd[i] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xi[j] - mean) * rs;
      xhat(i, j) = h;
      y(i, j) = h * gamma.data[j] + beta.data[j];
    }
  }
  return y;
}

// Returns dx; accumulates dgamma, dbeta.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat, const std::vector<T>& rstd,
                              const Matrix<T>& gamma, Matrix<T>& dgamma, Matrix<T>& dbeta) {
  const std::size_t d = dy.cols;
  Matrix<T> dx(dy.rows, d);
  std::vector<T> dxhat(d);
  for (std::size_t i = 0; i < dy.rows; ++i) {
    T mean_dxhat{}, mean_dxhat_xhat{};
    for (std::size_t j = 0; j < d; ++j) {
      const T g = dy(i, j);
      dgamma.data[j] += g * xhat(i, j);
      dbeta.data[j] += g;
      dxhat[j] = g * gamma.data[j];
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * xhat(i, j);
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j)
      dx(i, j) = rstd[i] * (dxhat[j] - mean_dxhat - xhat(i, j) * mean_dxhat_xhat);
  }
  return dx;
}

template <typename T>
Matrix<T> columns(const Matrix<T>& m, std::size_t begin, std::size_t count) {
  Matrix<T> out(m.rows, count);
  for (std::size_t i = 0; i < m.rows; ++i)
    std::copy_n(m.data.begin() + static_cast<std::ptrdiff_t>(i * m.cols + begin), count, out.row(i).begin());
  return out;
}

template <typename T>
void add_columns(Matrix<T>& dst, const Matrix<T>& src, std::size_t begin) {
  for (std::size_t i = 0; i < src.rows; ++i)
    for (std::size_t j = 0; j < src.cols; ++j) dst(i, begin + j) += src(i, j);
}

template <typename T>
void add_inplace(Matrix<T>& a, const Matrix<T>& b) {
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

template <typename T>
void check_sequence(const ModelConfig& c, const TokenSequence& s) {
  if (s.ids.size() != c.max_len || s.attention_mask.size() != c.max_len)
    throw Error(ErrorCode::SequenceLengthMismatch, "sequence length " + std::to_string(s.ids.size()) +
                                                        " does not match max_len " + std::to_string(c.max_len));
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const ModelParameters<T>& params, std::span<const TokenSequence> batch, bool training,
                         std::uint64_t dropout_seed) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.d_model, H = cfg.num_heads, dh = cfg.head_dim();
  const bool drop = training && cfg.dropout_rate > 0.0;
  Rng rng(dropout_seed);

  ForwardResult<T> result;
  result.logits = Matrix<T>(batch.size(), cfg.num_labels);
  result.cache.params = &params;
  result.cache.generation = params.generation;
  result.cache.samples.resize(batch.size());

  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& seq = batch[b];
    check_sequence<T>(cfg, seq);
    auto& sc = result.cache.samples[b];
    for (std::size_t p = 0; p < cfg.max_len; ++p) {
      if (!seq.attention_mask[p]) continue;
      if (seq.ids[p] >= cfg.vocab_size) throw Error(ErrorCode::UnknownId, "token id " + std::to_string(seq.ids[p]));
      sc.positions.push_back(p);
      sc.token_ids.push_back(seq.ids[p]);
    }
    if (sc.positions.empty()) throw Error(ErrorCode::AllMasked, "sequence has no unmasked position");
    const std::size_t n = sc.positions.size();
    const std::vector<std::uint8_t> all_keys(n, 1);

    Matrix<T> x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto tok = params.token_embedding.row(sc.token_ids[i]);
      auto pos = params.position_embedding.row(sc.positions[i]);
      for (std::size_t j = 0; j < d; ++j) x(i, j) = tok[j] + pos[j];
    }
    sc.embed_dropout = dropout_mask<T>(n, d, cfg.dropout_rate, drop, rng);
    apply_mask(x, sc.embed_dropout);

    sc.layers.resize(cfg.num_layers);
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const auto& L = params.layers[l];
      auto& lc = sc.layers[l];
      lc.input = x;
      lc.q = linalg::affine(x, L.w_q, L.b_q);
      lc.k = linalg::matmul(x, L.w_k);
      lc.v = linalg::affine(x, L.w_v, L.b_v);
      lc.context = Matrix<T>(n, d);
      lc.probs.resize(H);
      for (std::size_t h = 0; h < H; ++h) {
        auto r = attention(columns(lc.q, h * dh, dh), columns(lc.k, h * dh, dh), columns(lc.v, h * dh, dh),
                           std::span<const std::uint8_t>(all_keys));
        add_columns(lc.context, r.output, h * dh);
        lc.probs[h] = std::move(r.probabilities);
      }
      auto attn_out = linalg::affine(lc.context, L.w_o, L.b_o);
      lc.attn_dropout = dropout_mask<T>(n, d, cfg.dropout_rate, drop, rng);
      apply_mask(attn_out, lc.attn_dropout);
      add_inplace(attn_out, x);
      lc.ln1_out = layer_norm(attn_out, L.ln1_gamma, L.ln1_beta, lc.ln1_xhat, lc.ln1_rstd);

      lc.ff_pre = linalg::affine(lc.ln1_out, L.ff1_w, L.ff1_b);
      lc.ff_act = Matrix<T>(n, cfg.d_ff);
      for (std::size_t i = 0; i < lc.ff_pre.data.size(); ++i) lc.ff_act.data[i] = gelu(lc.ff_pre.data[i]);
      auto ff_out = linalg::affine(lc.ff_act, L.ff2_w, L.ff2_b);
      lc.ff_dropout = dropout_mask<T>(n, d, cfg.dropout_rate, drop, rng);
      apply_mask(ff_out, lc.ff_dropout);
      add_inplace(ff_out, lc.ln1_out);
      lc.output = layer_norm(ff_out, L.ln2_gamma, L.ln2_beta, lc.ln2_xhat, lc.ln2_rstd);
      x = lc.output;
    }

    sc.pooled = Matrix<T>(1, d);
    if (cfg.pooling == Pooling::first_token) {
      std::copy(x.row(0).begin(), x.row(0).end(), sc.pooled.data.begin());
    } else {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) sc.pooled.data[j] += x(i, j);
      for (auto& v : sc.pooled.data) v /= static_cast<T>(n);
    }
    sc.pooled_dropout = dropout_mask<T>(1, d, cfg.dropout_rate, drop, rng);
    sc.classifier_input = sc.pooled;
    apply_mask(sc.classifier_input, sc.pooled_dropout);

    auto logits = linalg::affine(sc.classifier_input, params.classifier_w, params.classifier_b);
    std::copy(logits.data.begin(), logits.data.end(), result.logits.row(b).begin());
  }
  return result;
}

template <typename T>
void backward(const ModelParameters<T>& params, const ForwardCache<T>& cache, const Matrix<T>& logit_grads,
              ParameterGradients<T>& grads) {
  if (cache.params != &params || cache.generation != params.generation)
    throw Error(ErrorCode::StaleCache, "forward cache does not belong to the current parameters");
  const auto& cfg = params.config;
  if (logit_grads.rows != cache.samples.size() || logit_grads.cols != cfg.num_labels)
    throw Error(ErrorCode::ShapeMismatch, "logit gradient shape does not match the batch");
  if (!(grads.config == cfg)) throw Error(ErrorCode::ShapeMismatch, "gradient buffer has a different config");

  const std::size_t d = cfg.d_model, H = cfg.num_heads, dh = cfg.head_dim();
  const T scale = T{1} / std::sqrt(static_cast<T>(dh));

  for (std::size_t b = 0; b < cache.samples.size(); ++b) {
    const auto& sc = cache.samples[b];
    const std::size_t n = sc.positions.size();

    Matrix<T> dlogit(1, cfg.num_labels);
    std::copy(logit_grads.row(b).begin(), logit_grads.row(b).end(), dlogit.data.begin());
    linalg::matmul_tn_acc(sc.classifier_input, dlogit, grads.classifier_w);
    linalg::add_column_sums(dlogit, grads.classifier_b);
    Matrix<T> dpooled(1, d);
    linalg::matmul_nt_acc(dlogit, params.classifier_w, dpooled);
    apply_mask(dpooled, sc.pooled_dropout);

    Matrix<T> dx(n, d);
    if (cfg.pooling == Pooling::first_token) {
      std::copy(dpooled.data.begin(), dpooled.data.end(), dx.row(0).begin());
    } else {
      const T inv = T{1} / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) dx(i, j) = dpooled.data[j] * inv;
    }

    for (std::size_t l = cfg.num_layers; l-- > 0;) {
      const auto& L = params.layers[l];
      auto& G = grads.layers[l];
      const auto& lc = sc.layers[l];

      // ffn block
      auto dh2 = layer_norm_backward(dx, lc.ln2_xhat, lc.ln2_rstd, L.ln2_gamma, G.ln2_gamma, G.ln2_beta);
      Matrix<T> dln1 = dh2;  // residual path
      Matrix<T> dff = dh2;
      apply_mask(dff, lc.ff_dropout);
      linalg::matmul_tn_acc(lc.ff_act, dff, G.ff2_w);
      linalg::add_column_sums(dff, G.ff2_b);
      Matrix<T> dact(n, cfg.d_ff);
      linalg::matmul_nt_acc(dff, L.ff2_w, dact);
      for (std::size_t i = 0; i < dact.data.size(); ++i) dact.data[i] *= gelu_grad(lc.ff_pre.data[i]);
      linalg::matmul_tn_acc(lc.ln1_out, dact, G.ff1_w);
      linalg::add_column_sums(dact, G.ff1_b);
      linalg::matmul_nt_acc(dact, L.ff1_w, dln1);

      // attention block
      auto dh1 = layer_norm_backward(dln1, lc.ln1_xhat, lc.ln1_rstd, L.ln1_gamma, G.ln1_gamma, G.ln1_beta);
      Matrix<T> dinput = dh1;  // residual path
      Matrix<T> dattn = dh1;
      apply_mask(dattn, lc.attn_dropout);
      linalg::matmul_tn_acc(lc.context, dattn, G.w_o);
      linalg::add_column_sums(dattn, G.b_o);
      Matrix<T> dctx(n, d);
      linalg::matmul_nt_acc(dattn, L.w_o, dctx);

      Matrix<T> dq(n, d), dk(n, d), dv(n, d);
      std::vector<T> dp(n);
      for (std::size_t h = 0; h < H; ++h) {
        const auto& P = lc.probs[h];
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < n; ++i) {
          T dot_pdp{};
          for (std::size_t j = 0; j < n; ++j) {
            T s{};
            for (std::size_t c = 0; c < dh; ++c) s += dctx(i, off + c) * lc.v(j, off + c);
            dp[j] = s;
            dot_pdp += P(i, j) * s;
            const T pij = P(i, j);
            for (std::size_t c = 0; c < dh; ++c) dv(j, off + c) += pij * dctx(i, off + c);
          }
          for (std::size_t j = 0; j < n; ++j) {
            const T ds = P(i, j) * (dp[j] - dot_pdp) * scale;
            for (std::size_t c = 0; c < dh; ++c) {
              dq(i, off + c) += ds * lc.k(j, off + c);
              dk(j, off + c) += ds * lc.q(i, off + c);
            }
          }
        }
      }
      linalg::matmul_tn_acc(lc.input, dq, G.w_q);
      linalg::add_column_sums(dq, G.b_q);
      linalg::matmul_tn_acc(lc.input, dk, G.w_k);
      linalg::matmul_tn_acc(lc.input, dv, G.w_v);
      linalg::add_column_sums(dv, G.b_v);
      linalg::matmul_nt_acc(dq, L.w_q, dinput);
      linalg::matmul_nt_acc(dk, L.w_k, dinput);
      linalg::matmul_nt_acc(dv, L.w_v, dinput);
      dx = std::move(dinput);
    }

    apply_mask(dx, sc.embed_dropout);
    for (std::size_t i = 0; i < n; ++i) {
      auto tok = grads.token_embedding.row(sc.token_ids[i]);
      auto pos = grads.position_embedding.row(sc.positions[i]);
      for (std::size_t j = 0; j < d; ++j) {
        tok[j] += dx(i, j);
        pos[j] += dx(i, j);
      }
    }
  }
}

template <typename T>
Prediction predict(const ModelParameters<T>& params, const Vocabulary& vocab, std::string_view text) {
  const auto seq = encode(vocab, text, params.config.max_len);
  auto fr = forward(params, std::span<const TokenSequence>(&seq, 1), false);
  std::vector<double> logits(fr.logits.data.begin(), fr.logits.data.end());
  const auto probs = softmax(logits);
  Prediction out;
  std::copy_n(probs.begin(), kNumLabels, out.probabilities.begin());
  out.label = static_cast<Label>(argmax(probs));
  return out;
}

#define IPSDM_INSTANTIATE(T)                                                                                   \
  template struct ModelParameters<T>;                                                                          \
  template ModelParameters<T> init_parameters<T>(const ModelConfig&, std::uint64_t);                           \
  template AttentionResult<T> attention<T>(const Matrix<T>&, const Matrix<T>&, const Matrix<T>&,               \
                                           std::span<const std::uint8_t>);                                     \
  template ForwardResult<T> forward<T>(const ModelParameters<T>&, std::span<const TokenSequence>, bool,        \
                                       std::uint64_t);                                                         \
  template void backward<T>(const ModelParameters<T>&, const ForwardCache<T>&, const Matrix<T>&,               \
                            ParameterGradients<T>&);                                                           \
  template Prediction predict<T>(const ModelParameters<T>&, const Vocabulary&, std::string_view);

IPSDM_INSTANTIATE(float)
IPSDM_INSTANTIATE(double)

#undef IPSDM_INSTANTIATE

}  // namespace ipsdm
