#include "metavqa/optimizer.hpp"

#include <cmath>

#include "metavqa/error.hpp"

namespace mvqa {

template <class T>
AdamW<T>::AdamW(std::vector<TensorSpec> tensors, AdamWConfig cfg) : tensors_(std::move(tensors)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
  if (!(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0) || !(cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0)) {
    throw UsageError("Adam betas must lie in [0,1)");
  }
  if (cfg_.weight_decay < 0.0) throw UsageError("weight_decay must be >= 0");
  std::size_t total = 0;
  for (const auto& t : tensors_) total = std::max(total, t.offset + t.size());
  m_.assign(total, 0.0);
  v_.assign(total, 0.0);
}

template <class T>
void AdamW<T>::step(std::span<T> params, std::span<const T> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw DataError("optimizer: parameter/gradient size mismatch");
  }
  for (const auto& t : tensors_) {
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
      if (!std::isfinite(static_cast<double>(grads[i]))) {
        throw NumericError("non-finite gradient in tensor " + t.name);
      }
    }
  }
  ++step_;
  const double lr = cfg_.learning_rate;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (const auto& t : tensors_) {
    const double shrink = t.decay ? 1.0 - lr * cfg_.weight_decay : 1.0;
    for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      const double p = static_cast<double>(params[i]);
      params[i] = static_cast<T>(p * shrink - lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
    }
  }
}

template <class T>
double clip_grad_norm(std::span<T> grads, double max_norm) {
  double sq = 0.0;
  for (T g : grads) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (T& g : grads) g *= s;
  }
  return norm;
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm(std::span<float>, double);
template double clip_grad_norm(std::span<double>, double);

}  // namespace mvqa
