#include "xmar/adam.hpp"

#include <cmath>
#include <string>

#include "xmar/runtime.hpp"

namespace xmar {

template <typename S>
AdamState<S>::AdamState(const std::vector<const Tensor<S>*>& params, AdamOptions opts) : options(opts) {
  for (const Tensor<S>* p : params) {
    first_moment.emplace_back(p->shape(), S{0});
    second_moment.emplace_back(p->shape(), S{0});
  }
}

template <typename S>
void adam_step(const std::vector<Tensor<S>*>& params, const std::vector<const Tensor<S>*>& grads,
               AdamState<S>& state, double lr) {
  if (!(lr >= 0.0)) throw Error("adam_step: learning rate must be non-negative, got " + std::to_string(lr));
  if (params.size() != grads.size() || params.size() != state.first_moment.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " params, " + std::to_string(grads.size()) +
                     " grads, state for " + std::to_string(state.first_moment.size()));
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->shape() != grads[k]->shape() || params[k]->shape() != state.first_moment[k].shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(k) + " has shape " + to_string(params[k]->shape()) +
                       " but gradient " + to_string(grads[k]->shape()));
    }
    if (runtime::checked() && !all_finite<S>(grads[k]->data())) {
      throw NumericError("adam_step: non-finite gradient for parameter " + std::to_string(k));
    }
  }
  state.step += 1;
  const AdamOptions& o = state.options;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<S>& p = *params[k];
    const Tensor<S>& g = *grads[k];
    Tensor<S>& m = state.first_moment[k];
    Tensor<S>& v = state.second_moment[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = o.beta1 * static_cast<double>(m[i]) + (1.0 - o.beta1) * gi;
      const double vi = o.beta2 * static_cast<double>(v[i]) + (1.0 - o.beta2) * gi * gi;
      m[i] = static_cast<S>(mi);
      v[i] = static_cast<S>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + o.eps_hat);
      p[i] = static_cast<S>(static_cast<double>(p[i]) - update);
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(const std::vector<Tensor<float>*>&, const std::vector<const Tensor<float>*>&,
                               AdamState<float>&, double);
template void adam_step<double>(const std::vector<Tensor<double>*>&, const std::vector<const Tensor<double>*>&,
                                AdamState<double>&, double);

}  // namespace xmar
