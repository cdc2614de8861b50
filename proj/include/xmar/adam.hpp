#pragma once

#include <cstdint>
#include <vector>

#include "xmar/tensor.hpp"

namespace xmar {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

// Moment accumulators for a fixed list of parameters.
template <typename S>
struct AdamState {
  AdamOptions options;
  std::vector<Tensor<S>> first_moment;
  std::vector<Tensor<S>> second_moment;
  std::int64_t step = 0;

  AdamState() = default;
  AdamState(const std::vector<const Tensor<S>*>& params, AdamOptions opts = {});
};

// One bias-corrected Adam update applied in place:
//   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps_hat)
template <typename S>
void adam_step(const std::vector<Tensor<S>*>& params, const std::vector<const Tensor<S>*>& grads,
               AdamState<S>& state, double lr);

}  // namespace xmar
