#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ipsdm/corpus.hpp"
#include "ipsdm/tokenizer.hpp"

namespace ipsdm {

/// Sparse L2-normalized document-term vector. Indices strictly increasing.
struct CountVector {
  std::vector<TokenId> indices;
  std::vector<double> values;

  bool is_zero() const noexcept { return indices.empty(); }
  friend bool operator==(const CountVector&, const CountVector&) = default;
};

/// Sub-word counts of each sample's full tokenization, L2-normalized.
std::vector<CountVector> vectorize(const Corpus& corpus, const Vocabulary& vocab);
CountVector vectorize_tokens(std::span<const TokenId> tokens);

/// Squared Euclidean distance, summed over the union of indices in order.
double squared_distance(const CountVector& a, const CountVector& b);

struct AdasynSample {
  std::size_t index = 0;  // position in the training corpus
  Label label = Label::ham;
  double ratio = 0.0;       // r_i: share of k nearest neighbours from other classes
  double ratio_hat = 0.0;   // r_i normalized within its class
  std::uint64_t synthetic = 0;  // g_i
  std::vector<std::size_t> same_class_neighbors;  // k nearest, nearest first
};

struct AdasynClassPlan {
  Label label = Label::ham;
  std::size_t size = 0;
  std::uint64_t target_total = 0;  // G
  /// True when every r_i was 0 and allocation fell back to uniform.
  bool uniform_fallback = false;
};

struct AdasynPlan {
  std::size_t k = 5;
  double beta = 1.0;
  std::size_t majority_size = 0;
  std::vector<AdasynClassPlan> classes;
  std::vector<AdasynSample> samples;  // minority samples, in corpus order

  bool empty() const noexcept { return samples.empty(); }
  std::uint64_t total_synthetic(Label label) const;
};

struct AdasynOptions {
  std::size_t k = 5;
  double beta = 1.0;
};

/// ADASYN allocation. Every class smaller than the largest is a minority.
/// Neighbours are found by brute force with ties broken by sample index;
/// zero vectors are never used as neighbours. The plan is empty when all
/// present classes are the same size. Throws TooFewSamples when a minority
/// class has fewer than two samples.
AdasynPlan plan_adasyn(std::span<const CountVector> vectors, std::span<const Label> labels,
                       const AdasynOptions& options = {});

/// Prefix of `first` (ceil(lambda * |first|) tokens) followed by the suffix of
/// `second` (floor((1 - lambda) * |second|) tokens).
std::vector<TokenId> splice(std::span<const TokenId> first, std::span<const TokenId> second, double lambda);

struct SynthesisOptions {
  std::uint64_t seed = 7;
  std::size_t max_len = 128;  // synthetic text is spliced from encode() content windows
};

/// Original samples followed by the synthetic ones (source_id "adasyn").
Corpus synthesize(const AdasynPlan& plan, const Corpus& corpus, const Vocabulary& vocab,
                  const SynthesisOptions& options = {});

struct BalanceReport {
  ClassCounts before{};
  ClassCounts after{};

  nlohmann::json to_json() const;
};

BalanceReport balance_report(const Corpus& before, const Corpus& after);

}  // namespace ipsdm
