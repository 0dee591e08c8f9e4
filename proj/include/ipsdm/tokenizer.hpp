#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ipsdm/corpus.hpp"

namespace ipsdm {

using TokenId = std::uint32_t;

struct SpecialTokens {
  TokenId pad_id = 0;
  TokenId unk_id = 1;
  TokenId cls_id = 2;
  TokenId sep_id = 3;
};

/// Byte-level BPE vocabulary. Ids [0, 4) are the special tokens, [4, 260) are
/// the 256 byte values, and learned tokens follow in creation order.
class Vocabulary {
 public:
  static constexpr TokenId kNumSpecial = 4;
  static constexpr TokenId kFirstByte = kNumSpecial;
  static constexpr TokenId kFirstLearned = kNumSpecial + 256;

  using Merge = std::pair<TokenId, TokenId>;

  /// Base alphabet only.
  Vocabulary();

  /// Rebuilds the vocabulary by replaying merges in order.
  static Vocabulary from_merges(const std::vector<Merge>& merges);

  const std::vector<Merge>& merges() const noexcept { return merges_; }
  /// Id produced by merges()[rank].
  TokenId merge_result(std::size_t rank) const { return merge_results_[rank]; }
  const SpecialTokens& special() const noexcept { return special_; }
  std::size_t size() const noexcept { return tokens_.size(); }

  bool is_special(TokenId id) const noexcept { return id < kNumSpecial; }
  static TokenId byte_id(unsigned char b) noexcept { return kFirstByte + b; }

  /// Raw bytes of a non-special token; special tokens render as "<cls>" etc.
  const std::string& id_to_token(TokenId id) const;
  /// Lookup over non-special tokens (byte strings).
  std::optional<TokenId> token_to_id(std::string_view token) const;

  /// Appends a merge and returns the id of the concatenated token, reusing an
  /// existing id when the byte string is already in the vocabulary.
  TokenId add_merge(TokenId left, TokenId right);

  /// Rank of a merge pair, or -1.
  std::int64_t merge_rank(TokenId left, TokenId right) const;

  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);
  /// FNV-1a 64 over the canonical JSON form.
  std::uint64_t hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.merges_ == b.merges_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::vector<Merge> merges_;
  std::vector<TokenId> merge_results_;
  std::unordered_map<std::uint64_t, std::uint32_t> rank_;
  SpecialTokens special_;
};

struct TokenSequence {
  std::vector<TokenId> ids;
  std::vector<std::uint8_t> attention_mask;
  std::size_t true_length = 0;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// Learns merges on the texts of `corpus` (train split only). Stops when the
/// vocabulary reaches vocab_size or the most frequent pair occurs fewer than
/// twice. Ties on frequency go to the smallest (left id, right id).
Vocabulary train_vocab(const Corpus& corpus, std::size_t vocab_size);
Vocabulary train_vocab(std::span<const std::string> texts, std::size_t vocab_size);

/// Byte-level BPE segmentation without special tokens or truncation.
std::vector<TokenId> tokenize(const Vocabulary& vocab, std::string_view text);

/// [cls] content [sep] [pad]...; content truncated to max_len - 2 tokens.
TokenSequence encode(const Vocabulary& vocab, std::string_view text, std::size_t max_len);

/// Content tokens kept by encode() for the given max_len.
std::vector<TokenId> content_window(const Vocabulary& vocab, std::string_view text, std::size_t max_len);

/// Concatenated bytes of all non-special ids. Throws UnknownId.
std::string decode_bytes(const Vocabulary& vocab, std::span<const TokenId> ids);

/// decode_bytes() with invalid UTF-8 replaced by U+FFFD.
std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids);

std::string sanitize_utf8(std::string_view bytes);

}  // namespace ipsdm
