#pragma once

// Differentiable primitives recorded on a Tape.
//
// Shape rules (all tensors row-major):
//   add, mul       a and b of equal shape; or one operand a scalar (one
//                  element); add also accepts b equal to the trailing dims of
//                  a (bias-add). Nothing else broadcasts.
//   scale          any shape, constant factor.
//   matmul         (M,K)x(K,N) -> (M,N), or batched (G,M,K)x(G,K,N) -> (G,M,N).
//                  With transpose_b the right operand is (N,K) / (G,N,K).
//   dense          (...,in) x (in,out) [+ bias (out)] -> (...,out).
//   conv2d         NHWC input (B,H,W,C), filter (KH,KW,C,O), bias (O).
//                  valid: out = floor((H-KH)/s)+1; same: out = ceil(H/s),
//                  padding split with the extra row/column at the bottom/right.
//   maxpool2d      (B,H,W,C), window k, stride k -> (B,floor(H/k),floor(W/k),C).
//   relu, tanh, clip      elementwise.
//   layernorm      normalises the last axis, then gamma/beta of that length.
//   softmax        along `axis` (negative counts from the end).
//   sum, mean      full reduction to a rank-0 tensor.
//   max_over_indices  (B,N) -> (B,G): row-wise max over each index group.
//   gather_rows    table (V,...) and n indices -> (n,...).
//   reshape, concat, slice   structural; no data change.
//   cross_entropy  logits (B,K), labels -> rank-0 mean negative log-likelihood.

#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "xmar/tape.hpp"

namespace xmar::ops {

enum class Padding { kValid, kSame };

template <typename S> Var<S> add(Var<S> a, Var<S> b);
template <typename S> Var<S> mul(Var<S> a, Var<S> b);
template <typename S> Var<S> scale(Var<S> a, std::type_identity_t<S> factor);
template <typename S> Var<S> matmul(Var<S> a, Var<S> b, bool transpose_b = false);
template <typename S> Var<S> dense(Var<S> x, Var<S> weight, std::optional<std::type_identity_t<Var<S>>> bias = std::nullopt);
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> filter, std::optional<std::type_identity_t<Var<S>>> bias, int stride = 1,
              Padding padding = Padding::kValid);
template <typename S> Var<S> maxpool2d(Var<S> x, int window);
template <typename S> Var<S> relu(Var<S> x);
template <typename S> Var<S> tanh(Var<S> x);
template <typename S> Var<S> layernorm(Var<S> x, Var<S> gamma, Var<S> beta, std::type_identity_t<S> eps = S(1e-5));
template <typename S> Var<S> softmax(Var<S> x, int axis = -1);
template <typename S> Var<S> sum(Var<S> x);
template <typename S> Var<S> mean(Var<S> x);

// Gradient goes only to the winning element of each group; ties resolve to
// the lowest source index.
template <typename S> Var<S> max_over_indices(Var<S> x, const std::vector<std::vector<int>>& groups);
// Ablation counterpart of max_over_indices.
template <typename S> Var<S> mean_over_indices(Var<S> x, const std::vector<std::vector<int>>& groups);

// Gradient passes where lo <= x <= hi and is zero where the input saturates.
template <typename S> Var<S> clip(Var<S> x, std::type_identity_t<S> lo, std::type_identity_t<S> hi);
template <typename S> Var<S> gather_rows(Var<S> table, std::span<const int> indices);
template <typename S> Var<S> reshape(Var<S> x, Shape shape);
template <typename S> Var<S> concat(std::span<const Var<S>> xs, int axis);
template <typename S> Var<S> slice(Var<S> x, int axis, std::int64_t start, std::int64_t length);
template <typename S> Var<S> cross_entropy(Var<S> logits, std::span<const int> labels);

}  // namespace xmar::ops
