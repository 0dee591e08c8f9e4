#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ipsdm/model.hpp"
#include "ipsdm/tensor.hpp"

namespace ipsdm {

/// `paper` keeps the weight-decay term inside the adaptive scaling:
///   z -= lr / (sqrt(v_hat) + eps) * (m_hat + wd * z)
/// `decoupled` applies it outside:
///   z -= lr * m_hat / (sqrt(v_hat) + eps) + lr * wd * z
enum class AdamWVariant { paper, decoupled };

struct OptimizerHyperparams {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
  AdamWVariant variant = AdamWVariant::paper;

  void validate() const;
  friend bool operator==(const OptimizerHyperparams&, const OptimizerHyperparams&) = default;
};

/// First and second moments per tensor, in ModelParameters::for_each_tensor
/// order. Empty until the first step (or init()).
template <typename T>
struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<Matrix<T>> m;
  std::vector<Matrix<T>> v;

  void init(const ModelParameters<T>& params);
  bool initialized() const noexcept { return !m.empty(); }
  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Elementwise update of one tensor at 1-based step `step`. Arithmetic is in
/// double regardless of T.
template <typename T>
void adamw_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::uint64_t step,
                  const OptimizerHyperparams& hyper);

/// One AdamW step over every tensor. Validates shapes and gradient finiteness
/// before touching anything; throws ShapeMismatch or NonFiniteGradient.
template <typename T>
void adamw_step(ModelParameters<T>& params, const ParameterGradients<T>& grads, OptimizerState<T>& state,
                const OptimizerHyperparams& hyper);

enum class LrSchedule { constant, linear_decay };

/// Learning rate for a 0-based step.
double lr_at(std::uint64_t step, LrSchedule schedule, std::uint64_t total_steps, double base_lr = 2e-5);

/// Scales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterGradients<T>& grads, double max_norm);

}  // namespace ipsdm
