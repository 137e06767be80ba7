#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "metavqa/model.hpp"

namespace mvqa {

struct AdamWConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Decoupled weight decay:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p (1 - lr wd) - lr mhat / (sqrt(vhat) + eps)
// Tensors whose spec has decay=false skip the decay term. Moments are kept in
// double regardless of T so the f32 path does not lose small updates.
template <class T>
class AdamW {
 public:
  AdamW(std::vector<TensorSpec> tensors, AdamWConfig cfg);

  // Throws NumericError naming the tensor if any gradient is non-finite.
  void step(std::span<T> params, std::span<const T> grads);

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return step_; }
  std::span<const double> first_moment() const { return m_; }
  std::span<const double> second_moment() const { return v_; }

 private:
  std::vector<TensorSpec> tensors_;
  AdamWConfig cfg_;
  std::vector<double> m_, v_;
  std::int64_t step_ = 0;
};

// Scales grads in place so their global L2 norm is at most max_norm. Returns the pre-clip norm.
template <class T>
double clip_grad_norm(std::span<T> grads, double max_norm);

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace mvqa
