#include "ipsdm/balance.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "ipsdm/error.hpp"
#include "ipsdm/rng.hpp"

namespace ipsdm {

CountVector vectorize_tokens(std::span<const TokenId> tokens) {
  std::map<TokenId, std::uint64_t> counts;
  for (auto t : tokens) ++counts[t];
  CountVector v;
  double sq = 0.0;
  for (const auto& [id, c] : counts) {
    v.indices.push_back(id);
    v.values.push_back(static_cast<double>(c));
    sq += static_cast<double>(c) * static_cast<double>(c);
  }
  if (sq > 0.0) {
    const double norm = std::sqrt(sq);
    for (auto& x : v.values) x /= norm;
  }
  return v;
}

std::vector<CountVector> vectorize(const Corpus& corpus, const Vocabulary& vocab) {
  std::vector<CountVector> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus.samples()) out.push_back(vectorize_tokens(tokenize(vocab, s.text)));
  return out;
}

double squared_distance(const CountVector& a, const CountVector& b) {
  double sum = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.indices.size() || j < b.indices.size()) {
    double diff;
    if (j == b.indices.size() || (i < a.indices.size() && a.indices[i] < b.indices[j])) {
      diff = a.values[i++];
    } else if (i == a.indices.size() || b.indices[j] < a.indices[i]) {
      diff = -b.values[j++];
    } else {
      diff = a.values[i++] - b.values[j++];
    }
    sum += diff * diff;
  }
  return sum;
}

std::uint64_t AdasynPlan::total_synthetic(Label label) const {
  std::uint64_t total = 0;
  for (const auto& s : samples)
    if (s.label == label) total += s.synthetic;
  return total;
}

namespace {

// k nearest candidates to `query` (excluding itself and zero vectors), ordered
// by (distance, index).
std::vector<std::size_t> nearest(std::span<const CountVector> vectors, std::size_t query, std::size_t k,
                                 const std::vector<std::size_t>& candidates) {
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(candidates.size());
  for (auto j : candidates) {
    if (j == query) continue;
    dist.emplace_back(squared_distance(vectors[query], vectors[j]), j);
  }
  const std::size_t take = std::min(k, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
  std::vector<std::size_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = dist[i].second;
  return out;
}

}  // namespace

AdasynPlan plan_adasyn(std::span<const CountVector> vectors, std::span<const Label> labels,
                       const AdasynOptions& options) {
  if (vectors.size() != labels.size())
    throw Error(ErrorCode::LengthMismatch, "vectors and labels differ in length");
  if (options.k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (!(options.beta > 0.0 && options.beta <= 1.0)) throw Error(ErrorCode::InvalidArgument, "beta must lie in (0,1]");

  AdasynPlan plan;
  plan.k = options.k;
  plan.beta = options.beta;

  ClassCounts sizes{};
  for (auto l : labels) ++sizes[index_of(l)];
  plan.majority_size = *std::max_element(sizes.begin(), sizes.end());

  std::vector<Label> minority;
  for (auto l : kAllLabels)
    if (sizes[index_of(l)] > 0 && sizes[index_of(l)] < plan.majority_size) minority.push_back(l);
  if (minority.empty()) return plan;

  for (auto l : minority)
    if (sizes[index_of(l)] < 2)
      throw Error(ErrorCode::TooFewSamples,
                  "class '" + std::string(label_name(l)) + "' has fewer than two samples");

  std::vector<std::size_t> all_candidates;
  std::array<std::vector<std::size_t>, kNumLabels> class_candidates;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].is_zero()) continue;
    all_candidates.push_back(i);
    class_candidates[index_of(labels[i])].push_back(i);
  }

  for (auto l : minority) {
    AdasynClassPlan cp;
    cp.label = l;
    cp.size = sizes[index_of(l)];
    cp.target_total = static_cast<std::uint64_t>(
        std::llround(options.beta * static_cast<double>(plan.majority_size - cp.size)));

    const std::size_t first = plan.samples.size();
    double ratio_sum = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
      if (labels[i] != l) continue;
      AdasynSample s;
      s.index = i;
      s.label = l;
      if (!vectors[i].is_zero()) {
        const auto nn = nearest(vectors, i, options.k, all_candidates);
        const auto other = std::count_if(nn.begin(), nn.end(), [&](std::size_t j) { return labels[j] != l; });
        s.ratio = nn.empty() ? 0.0 : static_cast<double>(other) / static_cast<double>(nn.size());
        s.same_class_neighbors = nearest(vectors, i, options.k, class_candidates[index_of(l)]);
      }
      ratio_sum += s.ratio;
      plan.samples.push_back(std::move(s));
    }

    cp.uniform_fallback = !(ratio_sum > 0.0);
    const double n_class = static_cast<double>(plan.samples.size() - first);
    for (std::size_t t = first; t < plan.samples.size(); ++t) {
      auto& s = plan.samples[t];
      s.ratio_hat = cp.uniform_fallback ? 1.0 / n_class : s.ratio / ratio_sum;
      s.synthetic = static_cast<std::uint64_t>(std::llround(s.ratio_hat * static_cast<double>(cp.target_total)));
    }
    plan.classes.push_back(cp);
  }

  std::stable_sort(plan.samples.begin(), plan.samples.end(),
                   [](const AdasynSample& a, const AdasynSample& b) { return a.index < b.index; });
  return plan;
}

std::vector<TokenId> splice(std::span<const TokenId> first, std::span<const TokenId> second, double lambda) {
  lambda = std::clamp(lambda, 0.0, 1.0);
  const auto head = std::min(first.size(), static_cast<std::size_t>(std::ceil(lambda * static_cast<double>(first.size()))));
  const auto tail =
      std::min(second.size(), static_cast<std::size_t>(std::floor((1.0 - lambda) * static_cast<double>(second.size()))));
  std::vector<TokenId> out(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(head));
  out.insert(out.end(), second.end() - static_cast<std::ptrdiff_t>(tail), second.end());
  return out;
}

Corpus synthesize(const AdasynPlan& plan, const Corpus& corpus, const Vocabulary& vocab,
                  const SynthesisOptions& options) {
  if (plan.empty()) throw Error(ErrorCode::NothingToBalance, "class distribution is already balanced");

  std::map<std::size_t, std::vector<TokenId>> windows;
  auto window = [&](std::size_t idx) -> const std::vector<TokenId>& {
    auto it = windows.find(idx);
    if (it == windows.end())
      it = windows.emplace(idx, content_window(vocab, corpus.samples().at(idx).text, options.max_len)).first;
    return it->second;
  };

  Corpus out = corpus;
  Rng rng(mix_seed(options.seed, {0x616461737966ull}));
  std::uint64_t next_row = 0;
  for (const auto& s : plan.samples) {
    if (s.index >= corpus.size()) throw Error(ErrorCode::InvalidArgument, "plan does not match the corpus");
    const auto& parent = corpus[s.index];
    for (std::uint64_t u = 0; u < s.synthetic; ++u) {
      std::string text;
      if (s.same_class_neighbors.empty()) {
        text = parent.text;  // NoSameClassNeighbor: duplicate verbatim
      } else {
        const auto z = s.same_class_neighbors[uniform_index(rng, s.same_class_neighbors.size())];
        const double lambda = uniform01(rng);
        text = decode(vocab, splice(window(s.index), window(z), lambda));
        if (trim(text).empty()) text = parent.text;
      }
      out.add(LabeledEmail{std::move(text), s.label, "adasyn", next_row++});
    }
  }
  return out;
}

nlohmann::json BalanceReport::to_json() const {
  auto side = [](const ClassCounts& c) {
    nlohmann::json j = nlohmann::json::object();
    std::size_t total = 0;
    for (auto l : kAllLabels) {
      j[std::string(label_name(l))] = c[index_of(l)];
      total += c[index_of(l)];
    }
    j["total"] = total;
    return j;
  };
  ClassCounts added{};
  for (std::size_t i = 0; i < kNumLabels; ++i) added[i] = after[i] >= before[i] ? after[i] - before[i] : 0;
  return {{"before", side(before)}, {"after", side(after)}, {"added", side(added)}};
}

BalanceReport balance_report(const Corpus& before, const Corpus& after) {
  return {before.class_counts(), after.class_counts()};
}

}  // namespace ipsdm
