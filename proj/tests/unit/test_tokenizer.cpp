#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "ipsdm/error.hpp"
#include "ipsdm/tokenizer.hpp"
#include "oracles.hpp"

using namespace ipsdm;
using fixture::kTwentyLines;

namespace {

std::vector<std::string> random_texts(std::size_t n, std::uint64_t seed, bool ascii) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const std::size_t len = rng() % 60;
    for (std::size_t j = 0; j < len; ++j)
      s.push_back(ascii ? static_cast<char>("ab cdeab\n"[rng() % 9]) : static_cast<char>(rng() & 0xFF));
    out.push_back(s);
  }
  return out;
}

std::vector<TokenId> ids_of(const oracle::Bpe& b, const std::string& t) {
  auto v = oracle::bpe_apply(b, t);
  return {v.begin(), v.end()};
}

}  // namespace

TEST_CASE("repeated single byte merges that pair first") {
  const std::vector<std::string> texts(5, "aaaa");
  const auto v = train_vocab(texts, 261);
  REQUIRE(v.merges().size() == 1);
  CHECK(v.merges()[0] == Vocabulary::Merge{Vocabulary::byte_id('a'), Vocabulary::byte_id('a')});
  CHECK(v.size() == 261);
  CHECK(v.id_to_token(260) == "aa");
}

TEST_CASE("degenerate training inputs") {
  const std::vector<std::string> empty{"", ""};
  const auto v = train_vocab(empty, 300);
  CHECK(v.merges().empty());
  CHECK(v.size() == 260);
  CHECK_THROWS_AS(train_vocab(empty, 260), Error);
  try {
    train_vocab(empty, 100);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::VocabTooSmall);
  }
  // nothing repeats twice
  const auto once = train_vocab(std::vector<std::string>{"abcdef"}, 300);
  CHECK(once.merges().empty());
}

TEST_CASE("merges match the brute-force pair counter on a 20-line fixture") {
  for (std::size_t target : {261u, 300u, 420u, 2000u}) {
    CAPTURE(target);
    const auto v = train_vocab(kTwentyLines, target);
    const auto o = oracle::bpe_train(kTwentyLines, target);
    REQUIRE(v.merges().size() == o.merges.size());
    for (std::size_t r = 0; r < o.merges.size(); ++r) {
      CAPTURE(r);
      CHECK(v.merges()[r].first == o.merges[r].first);
      CHECK(v.merges()[r].second == o.merges[r].second);
      CHECK(v.merge_result(r) == o.results[r]);
    }
    CHECK(v.size() == o.vocab_size);
    for (const auto& line : kTwentyLines) CHECK(tokenize(v, line) == ids_of(o, line));
  }
}

TEST_CASE("merges match the oracle on repetitive random corpora") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto texts = random_texts(30, seed, true);
    const auto v = train_vocab(texts, 330);
    const auto o = oracle::bpe_train(texts, 330);
    REQUIRE(v.merges().size() == o.merges.size());
    for (std::size_t r = 0; r < o.merges.size(); ++r) {
      CHECK(v.merges()[r] == Vocabulary::Merge{o.merges[r].first, o.merges[r].second});
      CHECK(v.merge_result(r) == o.results[r]);
    }
    for (const auto& t : random_texts(20, seed + 100, true)) CHECK(tokenize(v, t) == ids_of(o, t));
  }
}

TEST_CASE("training is deterministic and order of duplicates does not matter") {
  auto a = train_vocab(kTwentyLines, 400);
  auto b = train_vocab(kTwentyLines, 400);
  CHECK(a == b);
  CHECK(a.hash() == b.hash());
}

TEST_CASE("encode layout") {
  const auto v = train_vocab(kTwentyLines, 300);
  const auto& sp = v.special();
  auto e = encode(v, "", 8);
  CHECK(e.ids == std::vector<TokenId>{sp.cls_id, sp.sep_id, 0, 0, 0, 0, 0, 0});
  CHECK(e.attention_mask == std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0, 0, 0});
  CHECK(e.true_length == 2);

  const std::string long_text(500, 'z');
  e = encode(v, long_text, 16);
  CHECK(e.true_length == 16);
  CHECK(e.ids.front() == sp.cls_id);
  CHECK(e.ids.back() == sp.sep_id);

  for (const auto& t : kTwentyLines) {
    const auto s = encode(v, t, 24);
    REQUIRE(s.ids.size() == 24);
    std::size_t ones = 0;
    for (auto m : s.attention_mask) ones += m;
    CHECK(ones == s.true_length);
    CHECK(s.ids[0] == sp.cls_id);
    CHECK(s.ids[s.true_length - 1] == sp.sep_id);
    for (std::size_t i = s.true_length; i < s.ids.size(); ++i) CHECK(s.ids[i] == sp.pad_id);
  }
  CHECK_THROWS_AS(encode(v, "x", 1), Error);
}

TEST_CASE("decode restores the truncated byte prefix") {
  const auto v = train_vocab(kTwentyLines, 500);
  for (const auto& t : random_texts(100, 42, false)) {
    const auto full = tokenize(v, t);
    CHECK(decode_bytes(v, full) == t);
    const auto s = encode(v, t, 12);
    const auto kept = std::vector<TokenId>(full.begin(), full.begin() + static_cast<long>(std::min<std::size_t>(10, full.size())));
    CHECK(decode_bytes(v, s.ids) == decode_bytes(v, kept));
    CHECK(t.rfind(decode_bytes(v, s.ids), 0) == 0);
  }
  for (const auto& t : kTwentyLines) CHECK(decode(v, encode(v, t, 256).ids) == t);
}

TEST_CASE("decode edge cases") {
  const auto v = train_vocab(kTwentyLines, 300);
  const auto& sp = v.special();
  CHECK(decode(v, std::vector<TokenId>{sp.cls_id, sp.sep_id}).empty());
  try {
    decode(v, std::vector<TokenId>{static_cast<TokenId>(v.size())});
    FAIL("expected UnknownId");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownId);
  }
  const std::vector<TokenId> broken{Vocabulary::byte_id(0xC3)};
  CHECK(decode(v, broken) == "\xEF\xBF\xBD");
  CHECK(sanitize_utf8("ok\xFF") == "ok\xEF\xBF\xBD");
  CHECK(sanitize_utf8("\xC0\xAF") == "\xEF\xBF\xBD\xEF\xBF\xBD");
  CHECK(sanitize_utf8("\xE2\x82\xAC") == "\xE2\x82\xAC");
}

TEST_CASE("token maps are inverse and json round trip preserves encodings") {
  const auto v = train_vocab(kTwentyLines, 450);
  for (TokenId id = Vocabulary::kFirstByte; id < v.size(); ++id) {
    const auto back = v.token_to_id(v.id_to_token(id));
    REQUIRE(back.has_value());
    // colliding merges reuse ids, so the first id for a string wins
    CHECK(v.id_to_token(*back) == v.id_to_token(id));
  }
  const auto j = v.to_json();
  CHECK(j.at("vocab_size") == v.size());
  CHECK(j.at("special").at("cls") == 2);
  const auto w = Vocabulary::from_json(nlohmann::json::parse(j.dump()));
  CHECK(w == v);
  CHECK(w.hash() == v.hash());
  for (const auto& t : kTwentyLines) CHECK(encode(w, t, 40) == encode(v, t, 40));
}
