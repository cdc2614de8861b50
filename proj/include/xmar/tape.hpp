#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <vector>

#include "xmar/tensor.hpp"

namespace xmar {

template <typename S>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid until the tape
// is reset or destroyed.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<S>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(*this); }
};

// Reverse-mode autodiff record. Records are appended in evaluation order, so
// every record's inputs precede it and backward() is a single reverse sweep.
template <typename S>
class Tape {
 public:
  // Reads the gradient of record `self` and accumulates into its inputs via
  // grad_buffer().
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<S> leaf(Tensor<S> value, bool requires_grad = false);
  Var<S> constant(Tensor<S> value) { return leaf(std::move(value), false); }

  // Appends an op result. It requires grad iff any input does; the backward
  // closure is dropped otherwise.
  Var<S> record(Tensor<S> value, std::vector<std::size_t> inputs, BackwardFn backward);

  const Tensor<S>& value(Var<S> v) const { return records_.at(v.id).value; }
  const Tensor<S>& value(std::size_t id) const { return records_.at(id).value; }
  bool requires_grad(Var<S> v) const { return records_.at(v.id).requires_grad; }
  bool requires_grad(std::size_t id) const { return records_.at(id).requires_grad; }

  // Gradient after backward(). Throws if `v` does not require grad.
  const Tensor<S>& grad(Var<S> v) const;
  const Tensor<S>& grad(std::size_t id) const { return records_.at(id).grad; }

  // Zero-initialised gradient accumulator for `id`, or nullptr when the
  // record does not require grad. Only meaningful inside backward closures.
  Tensor<S>* grad_buffer(std::size_t id);

  void backward(Var<S> loss);

  void reset();
  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

 private:
  struct Record {
    Tensor<S> value;
    Tensor<S> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  void check_open() const;
  void check_finite(const Tensor<S>& t, std::size_t id) const;

  std::deque<Record> records_;
  bool consumed_ = false;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace xmar
