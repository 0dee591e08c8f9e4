#pragma once
// Central finite differences against the analytic backward pass.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ipsdm/metrics.hpp"
#include "ipsdm/model.hpp"

namespace gradcheck {

struct GroupResult {
  std::string name;
  std::size_t checked = 0;
  double relative_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
  double analytic_norm = 0.0;
};

struct Options {
  double step = 1e-5;
  bool training = false;
  std::uint64_t dropout_seed = 0;
  std::size_t max_per_group = 0;  // 0 checks every entry
  std::uint64_t sample_seed = 1;
};

inline double loss_of(const ipsdm::ModelParameters<double>& p, std::span<const ipsdm::TokenSequence> batch,
                      std::span<const ipsdm::Label> labels, const Options& o) {
  return ipsdm::cross_entropy(ipsdm::forward(p, batch, o.training, o.dropout_seed).logits, labels).loss;
}

/// Entries to probe: all of them, or the largest analytic entries plus a
/// random sample of the rest.
inline std::vector<std::size_t> pick(const ipsdm::Matrix<double>& g, const Options& o, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(g.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (o.max_per_group == 0 || idx.size() <= o.max_per_group) return idx;
  const std::size_t top = o.max_per_group / 2;
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(top), idx.end(),
                    [&](std::size_t a, std::size_t b) { return std::abs(g.data[a]) > std::abs(g.data[b]); });
  std::shuffle(idx.begin() + static_cast<long>(top), idx.end(), rng);
  idx.resize(o.max_per_group);
  return idx;
}

inline std::vector<GroupResult> run(const ipsdm::ModelParameters<double>& params,
                                    std::span<const ipsdm::TokenSequence> batch, std::span<const ipsdm::Label> labels,
                                    const Options& o = {}) {
  auto fr = ipsdm::forward(params, batch, o.training, o.dropout_seed);
  const auto ce = ipsdm::cross_entropy(fr.logits, labels);
  const auto grads = ipsdm::backward(params, fr.cache, ce.gradient);

  std::vector<const ipsdm::Matrix<double>*> analytic;
  grads.for_each_tensor([&](std::string_view, const ipsdm::Matrix<double>& m) { analytic.push_back(&m); });

  auto probe = params;
  std::vector<GroupResult> out;
  std::mt19937_64 rng(o.sample_seed);
  std::size_t t = 0;
  probe.for_each_tensor([&](std::string_view name, ipsdm::Matrix<double>& m) {
    const auto& g = *analytic[t++];
    GroupResult r;
    r.name = std::string(name);
    double diff2 = 0, a2 = 0, n2 = 0;
    for (std::size_t i : pick(g, o, rng)) {
      const double saved = m.data[i];
      m.data[i] = saved + o.step;
      const double up = loss_of(probe, batch, labels, o);
      m.data[i] = saved - o.step;
      const double down = loss_of(probe, batch, labels, o);
      m.data[i] = saved;
      const double numeric = (up - down) / (2 * o.step);
      diff2 += (g.data[i] - numeric) * (g.data[i] - numeric);
      a2 += g.data[i] * g.data[i];
      n2 += numeric * numeric;
      ++r.checked;
    }
    const double scale = std::max(std::sqrt(a2), std::sqrt(n2));
    r.relative_error = scale > 0 ? std::sqrt(diff2) / scale : 0.0;
    r.analytic_norm = std::sqrt(a2);
    out.push_back(r);
  });
  return out;
}

}  // namespace gradcheck
