#include "xmar/tape.hpp"

#include <string>

#include "xmar/runtime.hpp"

namespace xmar {

template <typename S>
void Tape<S>::check_open() const {
  if (consumed_) throw TapeError("tape: already consumed by backward(); call reset() before recording");
}

template <typename S>
void Tape<S>::check_finite(const Tensor<S>& t, std::size_t id) const {
  if (runtime::checked() && !all_finite<S>(t.data())) {
    throw NumericError("tape: non-finite value in record " + std::to_string(id) + " of shape " +
                       to_string(t.shape()));
  }
}

template <typename S>
Var<S> Tape<S>::leaf(Tensor<S> value, bool requires_grad) {
  check_open();
  check_finite(value, records_.size());
  Record r;
  r.value = std::move(value);
  r.requires_grad = requires_grad;
  records_.push_back(std::move(r));
  return Var<S>{this, records_.size() - 1};
}

template <typename S>
Var<S> Tape<S>::record(Tensor<S> value, std::vector<std::size_t> inputs, BackwardFn backward) {
  check_open();
  const std::size_t id = records_.size();
  check_finite(value, id);
  Record r;
  r.value = std::move(value);
  for (auto in : inputs) {
    if (in >= id) throw TapeError("tape: record input " + std::to_string(in) + " is not earlier than " + std::to_string(id));
    r.requires_grad = r.requires_grad || records_[in].requires_grad;
  }
  r.inputs = std::move(inputs);
  if (r.requires_grad) r.backward = std::move(backward);
  records_.push_back(std::move(r));
  return Var<S>{this, id};
}

template <typename S>
const Tensor<S>& Tape<S>::grad(Var<S> v) const {
  const Record& r = records_.at(v.id);
  if (!r.requires_grad) throw TapeError("tape: record " + std::to_string(v.id) + " does not require grad");
  return r.grad;
}

template <typename S>
Tensor<S>* Tape<S>::grad_buffer(std::size_t id) {
  Record& r = records_.at(id);
  if (!r.requires_grad) return nullptr;
  if (r.grad.empty()) r.grad = Tensor<S>(r.value.shape(), S{0});
  return &r.grad;
}

template <typename S>
void Tape<S>::backward(Var<S> loss) {
  if (loss.tape != this) throw TapeError("backward: loss was recorded on a different tape");
  if (consumed_) throw TapeError("backward: tape already consumed; re-record before calling backward again");
  Record& top = records_.at(loss.id);
  if (top.value.size() != 1) {
    throw TapeError("backward: loss must be a scalar, got shape " + to_string(top.value.shape()));
  }
  consumed_ = true;
  if (!top.requires_grad) return;
  top.grad = Tensor<S>(top.value.shape(), S{1});
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Record& r = records_[id];
    if (!r.requires_grad || r.grad.empty() || !r.backward) continue;
    r.backward(*this, id);
  }
  for (std::size_t id = 0; id < records_.size(); ++id) {
    Record& r = records_[id];
    if (r.requires_grad && r.inputs.empty() && r.grad.empty()) r.grad = Tensor<S>(r.value.shape(), S{0});
    if (r.requires_grad && !r.grad.empty()) check_finite(r.grad, id);
  }
}

template <typename S>
void Tape<S>::reset() {
  records_.clear();
  consumed_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace xmar
