#include "ipsdm/tokenizer.hpp"

#include <algorithm>
#include <map>
#include <queue>
#include <set>

#include "ipsdm/error.hpp"

namespace ipsdm {

namespace {

constexpr std::uint64_t pair_key(TokenId a, TokenId b) noexcept {
  return (static_cast<std::uint64_t>(a) << 32) | b;
}
constexpr TokenId key_left(std::uint64_t k) noexcept { return static_cast<TokenId>(k >> 32); }
constexpr TokenId key_right(std::uint64_t k) noexcept { return static_cast<TokenId>(k & 0xFFFFFFFFull); }

const std::string kSpecialNames[Vocabulary::kNumSpecial] = {"<pad>", "<unk>", "<cls>", "<sep>"};

}  // namespace

Vocabulary::Vocabulary() {
  tokens_.reserve(kFirstLearned);
  for (TokenId i = 0; i < kNumSpecial; ++i) tokens_.push_back(kSpecialNames[i]);
  for (int b = 0; b < 256; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    lookup_.emplace(tokens_.back(), static_cast<TokenId>(tokens_.size() - 1));
  }
}

Vocabulary Vocabulary::from_merges(const std::vector<Merge>& merges) {
  Vocabulary v;
  for (const auto& [a, b] : merges) {
    if (a >= v.size() || b >= v.size() || v.is_special(a) || v.is_special(b))
      throw Error(ErrorCode::UnknownId, "merge refers to an unknown or special token");
    v.add_merge(a, b);
  }
  return v;
}

const std::string& Vocabulary::id_to_token(TokenId id) const {
  if (id >= tokens_.size()) throw Error(ErrorCode::UnknownId, "token id " + std::to_string(id));
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::token_to_id(std::string_view token) const {
  auto it = lookup_.find(std::string(token));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::add_merge(TokenId left, TokenId right) {
  std::string joined = tokens_.at(left) + tokens_.at(right);
  TokenId id;
  if (auto it = lookup_.find(joined); it != lookup_.end()) {
    id = it->second;
  } else {
    id = static_cast<TokenId>(tokens_.size());
    tokens_.push_back(joined);
    lookup_.emplace(std::move(joined), id);
  }
  rank_.try_emplace(pair_key(left, right), static_cast<std::uint32_t>(merges_.size()));
  merges_.emplace_back(left, right);
  merge_results_.push_back(id);
  return id;
}

std::int64_t Vocabulary::merge_rank(TokenId left, TokenId right) const {
  auto it = rank_.find(pair_key(left, right));
  return it == rank_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

nlohmann::json Vocabulary::to_json() const {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [a, b] : merges_) merges.push_back({a, b});
  return {
      {"format", "byte-bpe"},
      {"merges", std::move(merges)},
      {"special", {{"pad", special_.pad_id}, {"unk", special_.unk_id}, {"cls", special_.cls_id}, {"sep", special_.sep_id}}},
      {"vocab_size", size()},
  };
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  try {
    std::vector<Merge> merges;
    for (const auto& m : j.at("merges")) merges.emplace_back(m.at(0).get<TokenId>(), m.at(1).get<TokenId>());
    const auto& sp = j.at("special");
    const SpecialTokens expected;
    if (sp.at("pad").get<TokenId>() != expected.pad_id || sp.at("unk").get<TokenId>() != expected.unk_id ||
        sp.at("cls").get<TokenId>() != expected.cls_id || sp.at("sep").get<TokenId>() != expected.sep_id)
      throw Error(ErrorCode::InvalidArgument, "unsupported special-token layout");
    auto v = from_merges(merges);
    if (j.contains("vocab_size") && j.at("vocab_size").get<std::size_t>() != v.size())
      throw Error(ErrorCode::InvalidArgument, "vocab_size does not match the replayed merges");
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("vocabulary json: ") + e.what());
  }
}

std::uint64_t Vocabulary::hash() const { return fnv1a64(to_json().dump()); }

// ---------------------------------------------------------------------------
// Training

Vocabulary train_vocab(const Corpus& corpus, std::size_t vocab_size) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& s : corpus.samples()) texts.push_back(s.text);
  return train_vocab(texts, vocab_size);
}

Vocabulary train_vocab(std::span<const std::string> texts, std::size_t vocab_size) {
  if (vocab_size <= Vocabulary::kFirstLearned)
    throw Error(ErrorCode::VocabTooSmall, "vocab_size must exceed " + std::to_string(Vocabulary::kFirstLearned));

  Vocabulary vocab;

  // Identical documents are merged identically, so count them once.
  std::map<std::string_view, std::int64_t> unique;
  for (const auto& t : texts)
    if (!t.empty()) ++unique[t];

  std::vector<std::vector<TokenId>> words;
  std::vector<std::int64_t> weights;
  words.reserve(unique.size());
  for (const auto& [text, n] : unique) {
    std::vector<TokenId> w;
    w.reserve(text.size());
    for (unsigned char c : text) w.push_back(Vocabulary::byte_id(c));
    words.push_back(std::move(w));
    weights.push_back(n);
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where;
  for (std::uint32_t wid = 0; wid < words.size(); ++wid) {
    const auto& w = words[wid];
    for (std::size_t i = 0; i + 1 < w.size(); ++i) {
      const auto k = pair_key(w[i], w[i + 1]);
      counts[k] += weights[wid];
      auto& list = where[k];
      if (list.empty() || list.back() != wid) list.push_back(wid);
    }
  }

  // Ordered by descending count, then ascending (left, right).
  std::set<std::pair<std::int64_t, std::uint64_t>> ranked;
  for (const auto& [k, c] : counts) ranked.emplace(-c, k);

  std::unordered_map<std::uint64_t, std::int64_t> delta;
  std::unordered_map<std::uint64_t, std::int64_t> local;
  std::vector<TokenId> merged;

  while (vocab.size() < vocab_size && !ranked.empty()) {
    const auto [neg_count, key] = *ranked.begin();
    if (-neg_count < 2) break;
    const TokenId a = key_left(key), b = key_right(key);
    const TokenId new_id = vocab.add_merge(a, b);

    auto affected = std::move(where[key]);
    where.erase(key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());

    delta.clear();
    for (auto wid : affected) {
      auto& w = words[wid];
      merged.clear();
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == a && w[i + 1] == b) {
          merged.push_back(new_id);
          i += 2;
        } else {
          merged.push_back(w[i]);
          ++i;
        }
      }
      if (merged.size() == w.size()) continue;  // stale entry

      local.clear();
      for (std::size_t i = 0; i + 1 < w.size(); ++i) --local[pair_key(w[i], w[i + 1])];
      for (std::size_t i = 0; i + 1 < merged.size(); ++i) ++local[pair_key(merged[i], merged[i + 1])];
      for (const auto& [k, d] : local) {
        if (d == 0) continue;
        delta[k] += d * weights[wid];
        if (d > 0) {
          auto& list = where[k];
          if (list.empty() || list.back() != wid) list.push_back(wid);
        }
      }
      w.swap(merged);
    }

    for (const auto& [k, d] : delta) {
      if (d == 0) continue;
      auto it = counts.find(k);
      const std::int64_t old = it == counts.end() ? 0 : it->second;
      if (old > 0) ranked.erase({-old, k});
      const std::int64_t now = old + d;
      if (now > 0) {
        counts[k] = now;
        ranked.emplace(-now, k);
      } else if (it != counts.end()) {
        counts.erase(it);
      }
    }
  }
  return vocab;
}

// ---------------------------------------------------------------------------
// Encoding

std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text) {
  const std::size_t n = text.size();
  std::vector<TokenId> tok(n);
  for (std::size_t i = 0; i < n; ++i) tok[i] = Vocabulary::byte_id(static_cast<unsigned char>(text[i]));
  if (n < 2 || vocab.merges().empty()) return tok;

  // Merges are applied in learned order: at rank r every occurrence is merged
  // left to right, and a pair formed later only qualifies for a rank above r.
  // A pair can be listed more than once when merged tokens collide with an
  // existing byte string, hence the per-pair rank lists.
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> ranks;
  ranks.reserve(vocab.merges().size());
  for (std::uint32_t r = 0; r < vocab.merges().size(); ++r) {
    const auto& [a, b] = vocab.merges()[r];
    ranks[pair_key(a, b)].push_back(r);
  }

  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  std::vector<std::size_t> prev(n), next(n);
  std::vector<bool> alive(n, true);
  for (std::size_t i = 0; i < n; ++i) {
    prev[i] = i == 0 ? npos : i - 1;
    next[i] = i + 1 == n ? npos : i + 1;
  }

  using Entry = std::pair<std::uint32_t, std::size_t>;  // (rank, node)
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  std::int64_t floor_rank = -1;

  auto push = [&](std::size_t node) {
    if (node == npos || next[node] == npos) return;
    auto it = ranks.find(pair_key(tok[node], tok[next[node]]));
    if (it == ranks.end()) return;
    auto r = std::upper_bound(it->second.begin(), it->second.end(), floor_rank,
                              [](std::int64_t f, std::uint32_t x) { return f < static_cast<std::int64_t>(x); });
    if (r != it->second.end()) heap.emplace(*r, node);
  };

  for (std::size_t i = 0; i + 1 < n; ++i) push(i);

  while (!heap.empty()) {
    const auto [rank, node] = heap.top();
    heap.pop();
    if (!alive[node] || next[node] == npos) continue;
    const auto& [a, b] = vocab.merges()[rank];
    const std::size_t right = next[node];
    if (tok[node] != a || tok[right] != b) continue;

    floor_rank = rank;
    tok[node] = vocab.merge_result(rank);
    alive[right] = false;
    next[node] = next[right];
    if (next[right] != npos) prev[next[right]] = node;
    push(prev[node]);
    push(node);
  }

  std::vector<TokenId> out;
  for (std::size_t i = 0; i != npos; i = next[i]) out.push_back(tok[i]);
  return out;
}

std::vector<TokenId> content_window(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  if (max_len < 2) throw Error(ErrorCode::InvalidArgument, "max_len must be at least 2");
  auto ids = tokenize(vocab, text);
  if (ids.size() > max_len - 2) ids.resize(max_len - 2);
  return ids;
}

TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len) {
  const auto content = content_window(vocab, text, max_len);
  const auto& sp = vocab.special();
  TokenSequence seq;
  seq.ids.reserve(max_len);
  seq.ids.push_back(sp.cls_id);
  seq.ids.insert(seq.ids.end(), content.begin(), content.end());
  seq.ids.push_back(sp.sep_id);
  seq.true_length = seq.ids.size();
  seq.ids.resize(max_len, sp.pad_id);
  seq.attention_mask.assign(max_len, 0);
  std::fill_n(seq.attention_mask.begin(), seq.true_length, std::uint8_t{1});
  return seq;
}

std::string decode_bytes(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id >= vocab.size()) throw Error(ErrorCode::UnknownId, "token id " + std::to_string(id));
    if (vocab.is_special(id)) continue;
    out += vocab.id_to_token(id);
  }
  return out;
}

std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  return sanitize_utf8(decode_bytes(vocab, ids));
}

std::string sanitize_utf8(std::string_view s) {
  static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0, min_cp = 0;
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2, cp = c & 0x1F, min_cp = 0x80;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3, cp = c & 0x0F, min_cp = 0x800;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4, cp = c & 0x07, min_cp = 0x10000;
    }
    bool ok = len != 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) ok = false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    ok = ok && cp >= min_cp && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
    if (ok) {
      out.append(s.substr(i, len));
      i += len;
    } else {
      out.append(kReplacement);
      ++i;
    }
  }
  return out;
}

}  // namespace ipsdm
