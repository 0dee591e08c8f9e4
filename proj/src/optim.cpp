#include "ipsdm/optim.hpp"

#include <algorithm>
#include <cmath>

#include "ipsdm/error.hpp"

namespace ipsdm {

void OptimizerHyperparams::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidArgument, "optimizer: " + m); };
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0,1)");
  if (!(epsilon > 0.0)) fail("epsilon must be positive");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
}

template <typename T>
void OptimizerState<T>::init(const ModelParameters<T>& params) {
  m.clear();
  v.clear();
  params.for_each_tensor([&](std::string_view, const Matrix<T>& t) {
    m.emplace_back(t.rows, t.cols);
    v.emplace_back(t.rows, t.cols);
  });
}

template <typename T>
void adamw_update(std::span<T> params, std::span<const T> grads, std::span<T> m, std::span<T> v, std::uint64_t step,
                  const OptimizerHyperparams& h) {
  const double i = static_cast<double>(step);
  const double bc1 = 1.0 - std::pow(h.beta1, i);
  const double bc2 = 1.0 - std::pow(h.beta2, i);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grads[k];
    const double z = params[k];
    const double mk = h.beta1 * static_cast<double>(m[k]) + (1.0 - h.beta1) * g;
    const double vk = h.beta2 * static_cast<double>(v[k]) + (1.0 - h.beta2) * g * g;
    const double m_hat = mk / bc1;
    const double v_hat = vk / bc2;
    const double denom = std::sqrt(v_hat) + h.epsilon;
    double next;
    if (h.variant == AdamWVariant::paper) {
      next = z - h.learning_rate / denom * (m_hat + h.weight_decay * z);
    } else {
      next = z - h.learning_rate * m_hat / denom - h.learning_rate * h.weight_decay * z;
    }
    m[k] = static_cast<T>(mk);
    v[k] = static_cast<T>(vk);
    params[k] = static_cast<T>(next);
  }
}

template <typename T>
void adamw_step(ModelParameters<T>& params, const ParameterGradients<T>& grads, OptimizerState<T>& state,
                const OptimizerHyperparams& hyper) {
  hyper.validate();
  std::vector<Matrix<T>*> ps;
  std::vector<std::string> names;
  params.for_each_tensor([&](std::string_view name, Matrix<T>& t) {
    ps.push_back(&t);
    names.emplace_back(name);
  });
  std::vector<const Matrix<T>*> gs;
  grads.for_each_tensor([&](std::string_view, const Matrix<T>& t) { gs.push_back(&t); });

  if (gs.size() != ps.size()) throw Error(ErrorCode::ShapeMismatch, "gradient tensor count differs");
  if (!state.initialized()) state.init(params);
  if (state.m.size() != ps.size() || state.v.size() != ps.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer state tensor count differs");
  for (std::size_t t = 0; t < ps.size(); ++t) {
    if (!gs[t]->same_shape(*ps[t]) || !state.m[t].same_shape(*ps[t]) || !state.v[t].same_shape(*ps[t]))
      throw Error(ErrorCode::ShapeMismatch, names[t]);
    if (!linalg::all_finite(*gs[t])) throw Error(ErrorCode::NonFiniteGradient, names[t]);
  }

  const std::uint64_t step = state.step + 1;
  for (std::size_t t = 0; t < ps.size(); ++t)
    adamw_update<T>(ps[t]->data, gs[t]->data, state.m[t].data, state.v[t].data, step, hyper);
  state.step = step;
  ++params.generation;
}

double lr_at(std::uint64_t step, LrSchedule schedule, std::uint64_t total_steps, double base_lr) {
  switch (schedule) {
    case LrSchedule::constant: return base_lr;
    case LrSchedule::linear_decay: {
      if (total_steps == 0) return 0.0;
      const double frac = static_cast<double>(step) / static_cast<double>(total_steps);
      return std::max(0.0, base_lr * (1.0 - frac));
    }
  }
  return base_lr;
}

template <typename T>
double clip_grad_norm(ParameterGradients<T>& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each_tensor([&](std::string_view, const Matrix<T>& t) {
    for (T g : t.data) sq += static_cast<double>(g) * static_cast<double>(g);
  });
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    grads.for_each_tensor([&](std::string_view, Matrix<T>& t) {
      for (T& g : t.data) g = static_cast<T>(g * s);
    });
  }
  return norm;
}

#define IPSDM_INSTANTIATE(T)                                                                                 \
  template struct OptimizerState<T>;                                                                         \
  template void adamw_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::uint64_t, \
                                const OptimizerHyperparams&);                                                \
  template void adamw_step<T>(ModelParameters<T>&, const ParameterGradients<T>&, OptimizerState<T>&,         \
                              const OptimizerHyperparams&);                                                  \
  template double clip_grad_norm<T>(ParameterGradients<T>&, double);

IPSDM_INSTANTIATE(float)
IPSDM_INSTANTIATE(double)

#undef IPSDM_INSTANTIATE

}  // namespace ipsdm
