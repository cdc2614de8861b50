#pragma once

// One finite-difference case per primitive op. Shared by the unit suite and
// the acceptance gradient oracle.

#include <cmath>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "xmar/ops.hpp"

namespace xmar::testing {

template <typename S>
struct OpCase {
  std::string name;
  std::vector<Tensor<S>> inputs;
  LossBuilder<S> build;
};

// Keeps values at least `gap` away from the kinks of relu/clip/maxpool so the
// finite-difference stencil never straddles one.
template <typename S>
Tensor<S> away_from(Tensor<S> t, double kink, double gap) {
  for (auto& v : t.data()) {
    const double d = static_cast<double>(v) - kink;
    if (std::abs(d) < gap) v = static_cast<S>(kink + (d < 0 ? -gap : gap));
  }
  return t;
}

template <typename S>
std::vector<OpCase<S>> primitive_op_cases(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  auto r = [&](Shape s) { return random_tensor<S>(std::move(s), rng); };
  std::vector<OpCase<S>> cases;
  cases.push_back({"add", {r({3, 4}), r({3, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::add(v[0], v[1]));
                   }});
  cases.push_back({"add_bias", {r({2, 3, 4}), r({4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::add(v[0], v[1]));
                   }});
  cases.push_back({"add_scalar", {r({3, 4}), r({})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::add(v[0], v[1]));
                   }});
  cases.push_back({"mul", {r({3, 4}), r({3, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::mul(v[0], v[1]));
                   }});
  cases.push_back({"mul_scalar", {r({3, 4}), r({})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::mul(v[0], v[1]));
                   }});
  cases.push_back({"scale", {r({2, 5})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::scale(v[0], S(-1.75)));
                   }});
  cases.push_back({"matmul", {r({3, 4}), r({4, 2})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::matmul(v[0], v[1]));
                   }});
  cases.push_back({"matmul_batched", {r({2, 3, 4}), r({2, 4, 3})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::matmul(v[0], v[1]));
                   }});
  cases.push_back({"matmul_transpose_b", {r({2, 3, 4}), r({2, 2, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::matmul(v[0], v[1], true));
                   }});
  cases.push_back({"dense", {r({2, 3, 4}), r({4, 3}), r({3})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::dense(v[0], v[1], v[2]));
                   }});
  cases.push_back({"conv2d_valid", {r({2, 4, 4, 2}), r({3, 3, 2, 3}), r({3})},
                   [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::conv2d(v[0], v[1], v[2], 1, ops::Padding::kValid));
                   }});
  cases.push_back({"conv2d_same_stride2", {r({1, 4, 4, 2}), r({3, 3, 2, 2})},
                   [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::conv2d<S>(v[0], v[1], std::nullopt, 2, ops::Padding::kSame));
                   }});
  {
    // Distinct values spaced well apart keep every pooling window's winner stable.
    Tensor<S> x(Shape{1, 4, 4, 2});
    std::vector<int> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) x[i] = static_cast<S>(order[i] * 0.1 - 1.5);
    cases.push_back({"maxpool2d", {x}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                       return probe_loss(ops::maxpool2d(v[0], 2));
                     }});
  }
  cases.push_back({"relu", {away_from(r({4, 4}), 0.0, 0.1)}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::relu(v[0]));
                   }});
  cases.push_back({"tanh", {r({4, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::tanh(v[0]));
                   }});
  cases.push_back({"layernorm", {r({3, 4}), r({4}), r({4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::layernorm(v[0], v[1], v[2]));
                   }});
  cases.push_back({"softmax_last", {r({3, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::softmax(v[0], -1));
                   }});
  cases.push_back({"softmax_middle", {r({2, 3, 2})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::softmax(v[0], 1));
                   }});
  cases.push_back({"sum", {r({3, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return ops::scale(ops::sum(ops::mul(v[0], v[0])), S(0.5));
                   }});
  cases.push_back({"mean", {r({3, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return ops::mean(ops::mul(v[0], v[0]));
                   }});
  {
    Tensor<S> x(Shape{3, 6});
    std::vector<int> order(x.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < order.size(); ++i) x[i] = static_cast<S>(order[i] * 0.1 - 0.9);
    cases.push_back({"max_over_indices", {x}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                       return probe_loss(ops::max_over_indices(v[0], {{0, 2}, {1, 3, 5}, {4}}));
                     }});
  }
  cases.push_back({"mean_over_indices", {r({3, 6})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::mean_over_indices(v[0], {{0, 2}, {1, 3, 5}, {4}}));
                   }});
  cases.push_back({"clip", {away_from(away_from(r({4, 4}), 0.5, 0.1), -0.5, 0.1)},
                   [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::clip(v[0], S(-0.5), S(0.5)));
                   }});
  cases.push_back({"gather_rows", {r({4, 3})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     const std::vector<int> idx{2, 0, 2, 3};
                     return probe_loss(ops::gather_rows<S>(v[0], idx));
                   }});
  cases.push_back({"reshape", {r({2, 6})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::reshape(v[0], Shape{3, 4}));
                   }});
  cases.push_back({"concat", {r({2, 1, 3}), r({2, 2, 3})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     std::vector<Var<S>> xs{v[0], v[1]};
                     return probe_loss(ops::concat<S>(xs, 1));
                   }});
  cases.push_back({"slice", {r({2, 4, 3})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     return probe_loss(ops::slice(v[0], 1, 1, 2));
                   }});
  cases.push_back({"cross_entropy", {r({3, 4})}, [](Tape<S>&, const std::vector<Var<S>>& v) {
                     const std::vector<int> labels{0, 3, 1};
                     return ops::cross_entropy<S>(v[0], labels);
                   }});
  return cases;
}

// Finite-difference step and tolerance per precision.
template <typename S>
constexpr double fd_step() {
  return sizeof(S) == 8 ? 1e-3 : 1e-2;
}
template <typename S>
constexpr double fd_tolerance() {
  return sizeof(S) == 8 ? 1e-5 : 1e-3;
}

}  // namespace xmar::testing
