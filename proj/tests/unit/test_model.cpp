#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "ipsdm/error.hpp"
#include "ipsdm/metrics.hpp"
#include "ipsdm/model.hpp"
#include "ipsdm/tokenizer.hpp"

using namespace ipsdm;

namespace {

ModelConfig tiny(Pooling pooling = Pooling::first_token, double dropout = 0.0) {
  ModelConfig c;
  c.num_layers = 2;
  c.num_heads = 2;
  c.d_model = 8;
  c.d_ff = 12;
  c.max_len = 8;
  c.vocab_size = 264;
  c.dropout_rate = dropout;
  c.pooling = pooling;
  return c;
}

TokenSequence seq(std::vector<TokenId> content, std::size_t max_len) {
  TokenSequence s;
  s.ids = {2};
  s.ids.insert(s.ids.end(), content.begin(), content.end());
  s.ids.push_back(3);
  s.true_length = s.ids.size();
  s.ids.resize(max_len, 0);
  s.attention_mask.assign(max_len, 0);
  for (std::size_t i = 0; i < s.true_length; ++i) s.attention_mask[i] = 1;
  return s;
}

std::vector<TokenSequence> two_samples(std::size_t max_len) {
  return {seq({10, 200, 261, 77}, max_len), seq({263, 5, 5}, max_len)};
}

template <typename T>
std::vector<const Matrix<T>*> tensors(const ModelParameters<T>& p) {
  std::vector<const Matrix<T>*> out;
  p.for_each_tensor([&](std::string_view, const Matrix<T>& m) { out.push_back(&m); });
  return out;
}

// Parameter count summed from the declared shape list.
std::size_t count_from_shapes(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ff;
  std::size_t layer = 0;
  layer += 4 * (d * d) + 3 * d;  // Q K V O, biases on all but K
  layer += 2 * d;                // attention norm
  layer += d * f + f + f * d + d;
  layer += 2 * d;                // ffn norm
  return c.vocab_size * d + c.max_len * d + c.num_layers * layer + d * c.num_labels + c.num_labels;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c = tiny();
  CHECK_NOTHROW(c.validate());
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = tiny();
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("init is deterministic with unit scales and zero offsets") {
  const auto a = init_parameters<float>(tiny(), 5), b = init_parameters<float>(tiny(), 5);
  CHECK(a.tensors_equal(b));
  CHECK_FALSE(a.tensors_equal(init_parameters<float>(tiny(), 6)));
  a.for_each_tensor([](std::string_view name, const Matrix<float>& m) {
    const std::string n(name);
    for (float x : m.data) {
      if (n.ends_with(".scale")) REQUIRE(x == 1.0f);
      else if (n.ends_with(".bias") || n.ends_with(".offset")) REQUIRE(x == 0.0f);
      else REQUIRE(std::abs(x) <= 0.04f);
    }
  });
  double sum2 = 0;
  for (float x : a.token_embedding.data) sum2 += double(x) * x;
  const double sd = std::sqrt(sum2 / double(a.token_embedding.size()));
  CHECK(sd > 0.014);
  CHECK(sd < 0.022);
}

TEST_CASE("parameter count matches the shape list") {
  ModelConfig c;  // 2 layers, 4 heads, d 128, ff 256, vocab 8192, len 128
  CHECK(parameter_count(c) == count_from_shapes(c));
  CHECK(parameter_count(c) == 1'330'051);
  CHECK(ModelParameters<float>::zeros(c).parameter_count() == parameter_count(c));
  CHECK(parameter_count(tiny()) == count_from_shapes(tiny()));
}

TEST_CASE("attention basics") {
  Matrix<double> q(1, 2), k(1, 2), v(1, 3);
  q.data = {0.3, -1.0};
  k.data = {2.0, 0.5};
  v.data = {1.0, 2.0, 3.0};
  std::vector<std::uint8_t> mask{1};
  auto r = attention(q, k, v, mask);
  CHECK(r.probabilities.data == std::vector<double>{1.0});
  CHECK(r.output.data == v.data);

  Matrix<double> q2(2, 2), k2(3, 2), v2(3, 1);
  q2.data = {1, 2, -3, 0.5};
  k2.data = {0.7, 0.1, 0.7, 0.1, 0.7, 0.1};
  v2.data = {1, 2, 4};
  std::vector<std::uint8_t> all{1, 1, 1}, some{1, 0, 1}, none{0, 0, 0};
  r = attention(q2, k2, v2, all);
  for (double p : r.probabilities.data) CHECK(p == doctest::Approx(1.0 / 3).epsilon(1e-15));
  r = attention(q2, k2, v2, some);
  CHECK(r.probabilities(0, 1) == 0.0);
  CHECK(r.probabilities(0, 0) == doctest::Approx(0.5));
  CHECK_THROWS_AS(attention(q2, k2, v2, none), Error);
}

TEST_CASE("attention matches a dense recomputation") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Matrix<double> q(3, 4), k(3, 4), v(3, 4);
  for (auto* m : {&q, &k, &v})
    for (auto& x : m->data) x = n(rng);
  std::vector<std::uint8_t> mask{1, 1, 1};
  const auto r = attention(q, k, v, mask);
  for (std::size_t i = 0; i < 3; ++i) {
    double s[3], z = 0, total = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0;
      for (std::size_t t = 0; t < 4; ++t) dot += q(i, t) * k(j, t);
      s[j] = std::exp(dot / 2.0);
      z += s[j];
    }
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(r.probabilities(i, j) == doctest::Approx(s[j] / z).epsilon(1e-12));
      total += r.probabilities(i, j);
    }
    CHECK(std::abs(total - 1.0) < 1e-6);
    for (std::size_t t = 0; t < 4; ++t) {
      double o = 0;
      for (std::size_t j = 0; j < 3; ++j) o += s[j] / z * v(j, t);
      CHECK(r.output(i, t) == doctest::Approx(o).epsilon(1e-12));
    }
  }
}

TEST_CASE("forward contracts") {
  auto p = init_parameters<float>(tiny(), 11);
  const auto batch = two_samples(8);

  SUBCASE("zero head gives zero logits") {
    p.classifier_w.zero();
    p.classifier_b.zero();
    const auto fr = forward(p, std::span<const TokenSequence>(batch), false);
    for (float x : fr.logits.data) CHECK(x == 0.0f);
  }
  SUBCASE("inference is repeatable and rows follow their inputs") {
    const auto a = forward(p, std::span<const TokenSequence>(batch), false);
    const auto b = forward(p, std::span<const TokenSequence>(batch), false);
    CHECK(a.logits == b.logits);
    std::vector<TokenSequence> twins{batch[0], batch[0]};
    const auto t = forward(p, std::span<const TokenSequence>(twins), false);
    CHECK(std::equal(t.logits.row(0).begin(), t.logits.row(0).end(), t.logits.row(1).begin()));
    CHECK(std::equal(t.logits.row(0).begin(), t.logits.row(0).end(), a.logits.row(0).begin()));
  }
  SUBCASE("padding ids never matter") {
    for (auto pooling : {Pooling::first_token, Pooling::mean}) {
      auto cfg = tiny(pooling);
      auto q = init_parameters<float>(cfg, 2);
      auto other = batch;
      for (auto& s : other)
        for (std::size_t i = s.true_length; i < s.ids.size(); ++i) s.ids[i] = 261;
      CHECK(forward(q, std::span<const TokenSequence>(batch), false).logits ==
            forward(q, std::span<const TokenSequence>(other), false).logits);
    }
  }
  SUBCASE("dropout follows its seed") {
    auto cfg = tiny(Pooling::first_token, 0.3);
    auto q = init_parameters<float>(cfg, 2);
    const auto a = forward(q, std::span<const TokenSequence>(batch), true, 9);
    const auto b = forward(q, std::span<const TokenSequence>(batch), true, 9);
    const auto c = forward(q, std::span<const TokenSequence>(batch), true, 10);
    const auto e = forward(q, std::span<const TokenSequence>(batch), false, 9);
    CHECK(a.logits == b.logits);
    CHECK_FALSE(a.logits == c.logits);
    CHECK_FALSE(a.logits == e.logits);
  }
  SUBCASE("attention rows sum to one") {
    const auto fr = forward(p, std::span<const TokenSequence>(batch), false);
    for (const auto& sc : fr.cache.samples)
      for (const auto& lc : sc.layers)
        for (const auto& probs : lc.probs)
          for (std::size_t i = 0; i < probs.rows; ++i) {
            double s = 0;
            for (float x : probs.row(i)) s += x;
            CHECK(std::abs(s - 1.0) < 1e-6);
          }
  }
  SUBCASE("input errors") {
    auto bad = batch;
    bad[1].ids.push_back(0);
    bad[1].attention_mask.push_back(0);
    CHECK_THROWS_AS(forward(p, std::span<const TokenSequence>(bad), false), Error);
    bad = batch;
    bad[0].ids[1] = 264;
    try {
      forward(p, std::span<const TokenSequence>(bad), false);
      FAIL("expected UnknownId");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::UnknownId);
    }
  }
}

TEST_CASE("backward linearity and staleness") {
  auto p = init_parameters<double>(tiny(Pooling::mean), 4);
  const auto batch = two_samples(8);
  auto fr = forward(p, std::span<const TokenSequence>(batch), false);

  Matrix<double> zero(2, 3);
  const auto gz = backward(p, fr.cache, zero);
  for (auto* m : tensors(gz))
    for (double x : m->data) REQUIRE(x == 0.0);

  Matrix<double> up(2, 3);
  up.data = {0.1, -0.2, 0.3, 0.05, 0.5, -0.7};
  Matrix<double> up2 = up;
  for (auto& x : up2.data) x *= 2;
  const auto g1 = backward(p, fr.cache, up), g2 = backward(p, fr.cache, up2);
  const auto t1 = tensors(g1), t2 = tensors(g2);
  for (std::size_t t = 0; t < t1.size(); ++t)
    for (std::size_t i = 0; i < t1[t]->size(); ++i) REQUIRE(t2[t]->data[i] == 2.0 * t1[t]->data[i]);

  auto copy = p;
  CHECK_THROWS_AS(backward(copy, fr.cache, up), Error);
  ++p.generation;
  try {
    backward(p, fr.cache, up);
    FAIL("expected StaleCache");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::StaleCache);
  }
}

TEST_CASE("backward matches finite differences on every entry of a tiny model") {
  const auto batch = two_samples(8);
  const std::vector<Label> labels{Label::spam, Label::phishing};
  for (auto pooling : {Pooling::first_token, Pooling::mean}) {
    for (double dropout : {0.0, 0.25}) {
      CAPTURE(static_cast<int>(pooling));
      CAPTURE(dropout);
      auto p = init_parameters<double>(tiny(pooling, dropout), 21);
      // larger weights make every path visible to the difference quotient
      p.for_each_tensor([](std::string_view, Matrix<double>& m) {
        for (auto& x : m.data) x *= 10;
      });
      gradcheck::Options o;
      o.training = dropout > 0;
      o.dropout_seed = 77;
      for (const auto& g : gradcheck::run(p, batch, labels, o)) {
        CAPTURE(g.name);
        CHECK(g.relative_error < 1e-4);
        CHECK(g.analytic_norm > 0);
      }
    }
  }
}

TEST_CASE("predict on a zero head is uniform with ham on ties") {
  const std::vector<std::string> texts{"abab abab", "free prize"};
  const auto vocab = train_vocab(texts, 264);
  auto cfg = tiny();
  cfg.vocab_size = vocab.size();
  auto p = init_parameters<float>(cfg, 1);
  p.classifier_w.zero();
  p.classifier_b.zero();
  const auto pred = predict(p, vocab, "free cash prize call now");
  CHECK(pred.label == Label::ham);
  for (double x : pred.probabilities) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));

  const auto q = init_parameters<float>(cfg, 8);
  const auto r = predict(q, vocab, "anything at all");
  CHECK(std::abs(r.probabilities[0] + r.probabilities[1] + r.probabilities[2] - 1.0) < 1e-9);
}
