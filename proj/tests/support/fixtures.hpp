#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "ipsdm/corpus.hpp"

namespace fixture {

/// Short messages in the style of the public SMS and phishing collections,
/// plus repetitive and multi-byte lines.
inline const std::vector<std::string> kTwentyLines = {
    "Free entry in 2 a wkly comp to win FA Cup final tkts",
    "Ok lar... Joking wif u oni...",
    "U dun say so early hor... U c already then say...",
    "Nah I don't think he goes to usf, he lives around here though",
    "WINNER!! As a valued network customer you have been selected",
    "Had your mobile 11 months or more? U R entitled to Update",
    "I'm gonna be home soon and i don't want to talk about this stuff anymore",
    "SIX chances to win CASH! From 100 to 20,000 pounds txt>",
    "URGENT! You have won a 1 week FREE membership in our prize Jackpot!",
    "I've been searching for the right words to thank you for this breather.",
    "Dear customer, your account has been suspended. Verify your password now.",
    "Please login to confirm your banking details within 24 hours.",
    "Your mailbox is almost full. Click here to verify your account.",
    "Even my brother is not like to speak with me.",
    "As per your request 'Melle Melle' has been set as your callertune",
    "aaaaaaaa bbbb aaaa",
    "abababab abab",
    "the the the the the",
    "caf\xC3\xA9 na\xC3\xAFve r\xC3\xA9sum\xC3\xA9",
    "Security alert: unusual sign-in attempt on your account",
};

// Each class owns a disjoint keyword set; filler words are shared.
inline const std::array<std::vector<std::string>, 3> kKeywords = {{
    {"meeting", "lunch", "family", "weekend", "project"},
    {"winner", "prize", "discount", "offer", "free"},
    {"password", "verify", "account", "suspended", "login"},
}};

inline const std::vector<std::string> kFiller = {
    "the", "a", "please", "today", "we", "you", "will", "your", "for", "this", "and", "our",
    "see", "at", "now", "with", "new", "time", "about", "more", "call", "reply", "thanks", "on"};

/// Texts of 8-14 filler words with two or three keywords of their class.
inline ipsdm::Corpus keyword_corpus(const std::array<std::size_t, 3>& per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
  ipsdm::Corpus c;
  std::uint64_t row = 0;
  for (std::size_t label = 0; label < 3; ++label) {
    for (std::size_t i = 0; i < per_class[label]; ++i) {
      std::vector<std::string> words;
      const std::size_t n_fill = 8 + rng() % 7, n_key = 2 + rng() % 2;
      for (std::size_t w = 0; w < n_fill; ++w) words.push_back(pick(kFiller));
      for (std::size_t w = 0; w < n_key; ++w) words.insert(words.begin() + static_cast<long>(rng() % (words.size() + 1)), pick(kKeywords[label]));
      std::string text;
      for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
      c.add({text, static_cast<ipsdm::Label>(label), "keywords", row++});
    }
  }
  return c;
}

/// Rule: the class whose keywords occur most often (word match); -1 if none.
inline int keyword_rule(const std::string& text) {
  std::array<int, 3> hits{};
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(' ', start);
    if (end == std::string::npos) end = text.size();
    const auto word = text.substr(start, end - start);
    for (int c = 0; c < 3; ++c)
      for (const auto& k : kKeywords[static_cast<std::size_t>(c)]) hits[static_cast<std::size_t>(c)] += word == k;
    start = end + 1;
  }
  int best = -1, best_hits = 0;
  for (int c = 0; c < 3; ++c)
    if (hits[static_cast<std::size_t>(c)] > best_hits) best = c, best_hits = hits[static_cast<std::size_t>(c)];
  return best;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << s;
}

/// Unique scratch directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("ipsdm-" + tag + "-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

/// Two source files shaped like a ham/spam collection and a phishing
/// collection with their own column names and label spellings.
inline void write_source_pair(const std::filesystem::path& dir, std::size_t ham, std::size_t spam, std::size_t phishing) {
  std::string a = "Category,Message\r\n";
  for (std::size_t i = 0; i < ham; ++i) a += "ham,\"hey, are we still on for " + std::to_string(i) + "?\"\r\n";
  for (std::size_t i = 0; i < spam; ++i) a += "spam,WINNER claim prize " + std::to_string(i) + " now\r\n";
  write_text(dir / "ham_spam.csv", a);
  std::string b = "Email Text,Email Type\r\n";
  for (std::size_t i = 0; i < phishing; ++i)
    b += "\"Dear user,\nyour account " + std::to_string(i) + " is locked. \"\"Verify\"\" here\",Phishing Email\r\n";
  write_text(dir / "phishing.csv", b);
}

}  // namespace fixture
