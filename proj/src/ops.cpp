#include "xmar/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "xmar/kernels.hpp"
#include "xmar/runtime.hpp"

namespace xmar::ops {
namespace {

using kernels::Index;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b, const std::string& why) {
  throw ShapeError(op + ": " + why + " (got " + to_string(a) + " and " + to_string(b) + ")");
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const std::string& why) {
  throw ShapeError(op + ": " + why + " (got " + to_string(a) + ")");
}

bool is_scalar(const Shape& s) { return numel(s) == 1 && s.size() <= 1; }

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.empty() || tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

template <typename S>
S reduce_sum(std::span<const S> v) {
  S acc = 0;
  const Index n = static_cast<Index>(v.size());
  if (!runtime::deterministic() && runtime::threads() > 1 && n >= kernels::kParallelWork) {
#pragma omp parallel for reduction(+ : acc) schedule(static)
    for (Index i = 0; i < n; ++i) acc += v[i];
    return acc;
  }
  for (Index i = 0; i < n; ++i) acc += v[i];
  return acc;
}

std::size_t normalize_axis(int axis, std::size_t rank, const std::string& op, const Shape& s) {
  int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) shape_error(op, s, "axis " + std::to_string(axis) + " out of range");
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

}  // namespace

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& tape = *a.tape;
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<S> out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return tape.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape<S>& t, std::size_t self) {
      const Tensor<S>& g = t.grad(self);
      for (auto id : {ai, bi}) {
        if (Tensor<S>* d = t.grad_buffer(id)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
        }
      }
    });
  }
  if (is_scalar(av.shape()) && !is_scalar(bv.shape())) return add(b, a);
  const bool scalar_b = is_scalar(bv.shape());
  if (!scalar_b && !is_suffix(av.shape(), bv.shape())) {
    shape_error("add", av.shape(), bv.shape(), "shapes must match, or the second must be a scalar or trailing-dims bias");
  }
  const std::size_t period = bv.size();
  Tensor<S> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % period];
  return tape.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, period](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    if (Tensor<S>* d = t.grad_buffer(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
    }
    if (Tensor<S>* d = t.grad_buffer(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i % period] += g[i];
    }
  });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  Tape<S>& tape = *a.tape;
  const Tensor<S>& av = a.value();
  const Tensor<S>& bv = b.value();
  if (av.shape() != bv.shape()) {
    if (is_scalar(av.shape()) && !is_scalar(bv.shape())) return mul(b, a);
    if (!is_scalar(bv.shape())) shape_error("mul", av.shape(), bv.shape(), "shapes must match or one must be a scalar");
  }
  const std::size_t period = bv.size();
  Tensor<S> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % period];
  return tape.record(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id, period](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& x = t.value(ai);
    const Tensor<S>& y = t.value(bi);
    if (Tensor<S>* d = t.grad_buffer(ai)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * y[i % period];
    }
    if (Tensor<S>* d = t.grad_buffer(bi)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*d)[i % period] += g[i] * x[i];
    }
  });
}

template <typename S>
Var<S> scale(Var<S> a, std::type_identity_t<S> factor) {
  const Tensor<S>& av = a.value();
  Tensor<S> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * factor;
  return a.tape->record(std::move(out), {a.id}, [ai = a.id, factor](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S>* d = t.grad_buffer(ai);
    for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * factor;
  });
}

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool batched = as.size() == 3;
  if (!((as.size() == 2 && bs.size() == 2) || (as.size() == 3 && bs.size() == 3))) {
    shape_error("matmul", as, bs, "operands must both be rank 2 or both rank 3");
  }
  const Index groups = batched ? as[0] : 1;
  if (batched && bs[0] != groups) shape_error("matmul", as, bs, "batch dimensions differ");
  const std::size_t o = batched ? 1 : 0;
  const Index m = as[o], k = as[o + 1];
  const Index kb = transpose_b ? bs[o + 1] : bs[o];
  const Index n = transpose_b ? bs[o] : bs[o + 1];
  if (k != kb) shape_error("matmul", as, bs, "inner dimensions differ");

  Shape out_shape = batched ? Shape{groups, m, n} : Shape{m, n};
  Tensor<S> out(out_shape);
  const S* ap = a.value().data().data();
  const S* bp = b.value().data().data();
  for (Index g = 0; g < groups; ++g) {
    kernels::gemm<S>(false, transpose_b, m, n, k, ap + g * m * k, bp + g * k * n, out.data().data() + g * m * n);
  }
  return a.tape->record(std::move(out), {a.id, b.id},
                        [ai = a.id, bi = b.id, groups, m, n, k, transpose_b](Tape<S>& t, std::size_t self) {
                          const S* gp = t.grad(self).data().data();
                          const S* x = t.value(ai).data().data();
                          const S* y = t.value(bi).data().data();
                          if (Tensor<S>* d = t.grad_buffer(ai)) {
                            for (Index g = 0; g < groups; ++g) {
                              // dA = dC * op(B)^T
                              kernels::gemm<S>(false, !transpose_b, m, k, n, gp + g * m * n, y + g * k * n,
                                               d->data().data() + g * m * k, true);
                            }
                          }
                          if (Tensor<S>* d = t.grad_buffer(bi)) {
                            for (Index g = 0; g < groups; ++g) {
                              if (transpose_b) {
                                kernels::gemm<S>(true, false, n, k, m, gp + g * m * n, x + g * m * k,
                                                 d->data().data() + g * k * n, true);
                              } else {
                                kernels::gemm<S>(true, false, k, n, m, x + g * m * k, gp + g * m * n,
                                                 d->data().data() + g * k * n, true);
                              }
                            }
                          }
                        });
}

template <typename S>
Var<S> dense(Var<S> x, Var<S> weight, std::optional<std::type_identity_t<Var<S>>> bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (ws.size() != 2 || xs.empty() || xs.back() != ws[0]) {
    shape_error("dense", xs, ws, "input last dim must equal weight rows");
  }
  if (bias && bias->shape() != Shape{ws[1]}) shape_error("dense", ws, bias->shape(), "bias must be (out)");
  const Index in = ws[0], outc = ws[1];
  const Index rows = numel(xs) / in;
  Shape out_shape = xs;
  out_shape.back() = outc;
  Tensor<S> out(out_shape);
  kernels::gemm<S>(false, false, rows, outc, in, x.value().data().data(), weight.value().data().data(),
                   out.data().data());
  if (bias) {
    const Tensor<S>& bv = bias->value();
    for (Index r = 0; r < rows; ++r)
      for (Index j = 0; j < outc; ++j) out[r * outc + j] += bv[j];
  }
  std::vector<std::size_t> inputs{x.id, weight.id};
  if (bias) inputs.push_back(bias->id);
  const std::size_t bias_id = bias ? bias->id : 0;
  const bool has_bias = bias.has_value();
  return x.tape->record(std::move(out), inputs,
                        [xi = x.id, wi = weight.id, bias_id, has_bias, rows, in, outc](Tape<S>& t, std::size_t self) {
                          const S* g = t.grad(self).data().data();
                          if (Tensor<S>* d = t.grad_buffer(xi)) {
                            kernels::gemm<S>(false, true, rows, in, outc, g, t.value(wi).data().data(),
                                             d->data().data(), true);
                          }
                          if (Tensor<S>* d = t.grad_buffer(wi)) {
                            kernels::gemm<S>(true, false, in, outc, rows, t.value(xi).data().data(), g,
                                             d->data().data(), true);
                          }
                          if (has_bias) {
                            if (Tensor<S>* d = t.grad_buffer(bias_id)) {
                              for (Index r = 0; r < rows; ++r)
                                for (Index j = 0; j < outc; ++j) (*d)[j] += g[r * outc + j];
                            }
                          }
                        });
}

template <typename S>
Var<S> conv2d(Var<S> x, Var<S> filter, std::optional<std::type_identity_t<Var<S>>> bias, int stride,
              Padding padding) {
  const Shape& xs = x.shape();
  const Shape& fs = filter.shape();
  if (xs.size() != 4 || fs.size() != 4 || fs[2] != xs[3]) {
    shape_error("conv2d", xs, fs, "expected NHWC input and (KH,KW,C,O) filter with matching C");
  }
  if (stride < 1) shape_error("conv2d", xs, "stride must be positive");
  kernels::Conv2dGeometry g;
  g.batch = xs[0];
  g.in_h = xs[1];
  g.in_w = xs[2];
  g.in_c = xs[3];
  g.k_h = fs[0];
  g.k_w = fs[1];
  g.out_c = fs[3];
  g.stride = stride;
  if (padding == Padding::kValid) {
    if (g.in_h < g.k_h || g.in_w < g.k_w) shape_error("conv2d", xs, fs, "filter larger than input with valid padding");
    g.out_h = (g.in_h - g.k_h) / stride + 1;
    g.out_w = (g.in_w - g.k_w) / stride + 1;
  } else {
    g.out_h = (g.in_h + stride - 1) / stride;
    g.out_w = (g.in_w + stride - 1) / stride;
    g.pad_top = std::max<Index>((g.out_h - 1) * stride + g.k_h - g.in_h, 0) / 2;
    g.pad_left = std::max<Index>((g.out_w - 1) * stride + g.k_w - g.in_w, 0) / 2;
  }
  if (bias && bias->shape() != Shape{g.out_c}) shape_error("conv2d", fs, bias->shape(), "bias must be (O)");

  auto col = std::make_shared<std::vector<S>>(static_cast<std::size_t>(g.rows() * g.patch_len()));
  kernels::im2col<S>(g, x.value().data().data(), col->data());
  Tensor<S> out(Shape{g.batch, g.out_h, g.out_w, g.out_c});
  kernels::gemm<S>(false, false, g.rows(), g.out_c, g.patch_len(), col->data(), filter.value().data().data(),
                   out.data().data());
  if (bias) {
    const Tensor<S>& bv = bias->value();
    for (Index r = 0; r < g.rows(); ++r)
      for (Index c = 0; c < g.out_c; ++c) out[r * g.out_c + c] += bv[c];
  }
  std::vector<std::size_t> inputs{x.id, filter.id};
  if (bias) inputs.push_back(bias->id);
  const std::size_t bias_id = bias ? bias->id : 0;
  const bool has_bias = bias.has_value();
  return x.tape->record(std::move(out), inputs,
                        [xi = x.id, fi = filter.id, bias_id, has_bias, g, col](Tape<S>& t, std::size_t self) {
                          const S* gy = t.grad(self).data().data();
                          if (Tensor<S>* d = t.grad_buffer(xi)) {
                            std::vector<S> dcol(col->size());
                            kernels::gemm<S>(false, true, g.rows(), g.patch_len(), g.out_c, gy,
                                             t.value(fi).data().data(), dcol.data());
                            kernels::col2im<S>(g, dcol.data(), d->data().data());
                          }
                          if (Tensor<S>* d = t.grad_buffer(fi)) {
                            kernels::gemm<S>(true, false, g.patch_len(), g.out_c, g.rows(), col->data(), gy,
                                             d->data().data(), true);
                          }
                          if (has_bias) {
                            if (Tensor<S>* d = t.grad_buffer(bias_id)) {
                              for (Index r = 0; r < g.rows(); ++r)
                                for (Index c = 0; c < g.out_c; ++c) (*d)[c] += gy[r * g.out_c + c];
                            }
                          }
                        });
}

template <typename S>
Var<S> maxpool2d(Var<S> x, int window) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) shape_error("maxpool2d", xs, "expected NHWC input");
  if (window < 1 || xs[1] < window || xs[2] < window) shape_error("maxpool2d", xs, "window does not fit the input");
  const Index oh = xs[1] / window, ow = xs[2] / window;
  Tensor<S> out(Shape{xs[0], oh, ow, xs[3]});
  auto arg = std::make_shared<std::vector<Index>>(out.size());
  kernels::maxpool<S>(xs[0], xs[1], xs[2], xs[3], window, x.value().data().data(), out.data().data(), arg->data());
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, arg](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S>* d = t.grad_buffer(xi);
    for (std::size_t o = 0; o < g.size(); ++o) (*d)[static_cast<std::size_t>((*arg)[o])] += g[o];
  });
}

template <typename S>
Var<S> relu(Var<S> x) {
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > S{0} ? xv[i] : S{0};
  return x.tape->record(std::move(out), {x.id}, [xi = x.id](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& v = t.value(xi);
    Tensor<S>* d = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i] > S{0}) (*d)[i] += g[i];
  });
}

template <typename S>
Var<S> tanh(Var<S> x) {
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  return x.tape->record(std::move(out), {x.id}, [xi = x.id](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& y = t.value(self);
    Tensor<S>* d = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * (S{1} - y[i] * y[i]);
  });
}

template <typename S>
Var<S> layernorm(Var<S> x, Var<S> gamma, Var<S> beta, std::type_identity_t<S> eps) {
  const Shape& xs = x.shape();
  if (xs.empty()) shape_error("layernorm", xs, "input must have rank >= 1");
  const Index dim = xs.back();
  if (gamma.shape() != Shape{dim} || beta.shape() != Shape{dim}) {
    shape_error("layernorm", xs, gamma.shape(), "gamma/beta must match the last axis");
  }
  const Index rows = numel(xs) / dim;
  const Tensor<S>& xv = x.value();
  const Tensor<S>& gv = gamma.value();
  const Tensor<S>& bv = beta.value();
  auto xhat = std::make_shared<std::vector<S>>(xv.size());
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(rows));
  Tensor<S> out(xs);
  for (Index r = 0; r < rows; ++r) {
    const S* row = xv.data().data() + r * dim;
    S mu = 0;
    for (Index j = 0; j < dim; ++j) mu += row[j];
    mu /= static_cast<S>(dim);
    S var = 0;
    for (Index j = 0; j < dim; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<S>(dim);
    const S is = S{1} / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (Index j = 0; j < dim; ++j) {
      const S h = (row[j] - mu) * is;
      (*xhat)[r * dim + j] = h;
      out[r * dim + j] = gv[j] * h + bv[j];
    }
  }
  return x.tape->record(
      std::move(out), {x.id, gamma.id, beta.id},
      [xi = x.id, gi = gamma.id, bi = beta.id, rows, dim, xhat, inv_std](Tape<S>& t, std::size_t self) {
        const Tensor<S>& g = t.grad(self);
        const Tensor<S>& gv = t.value(gi);
        if (Tensor<S>* d = t.grad_buffer(gi)) {
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < dim; ++j) (*d)[j] += g[r * dim + j] * (*xhat)[r * dim + j];
        }
        if (Tensor<S>* d = t.grad_buffer(bi)) {
          for (Index r = 0; r < rows; ++r)
            for (Index j = 0; j < dim; ++j) (*d)[j] += g[r * dim + j];
        }
        if (Tensor<S>* d = t.grad_buffer(xi)) {
          for (Index r = 0; r < rows; ++r) {
            S mean_dh = 0, mean_dh_h = 0;
            for (Index j = 0; j < dim; ++j) {
              const S dh = g[r * dim + j] * gv[j];
              mean_dh += dh;
              mean_dh_h += dh * (*xhat)[r * dim + j];
            }
            mean_dh /= static_cast<S>(dim);
            mean_dh_h /= static_cast<S>(dim);
            for (Index j = 0; j < dim; ++j) {
              const S dh = g[r * dim + j] * gv[j];
              (*d)[r * dim + j] += (*inv_std)[r] * (dh - mean_dh - (*xhat)[r * dim + j] * mean_dh_h);
            }
          }
        }
      });
}

template <typename S>
Var<S> softmax(Var<S> x, int axis) {
  const Shape& xs = x.shape();
  if (xs.empty()) shape_error("softmax", xs, "input must have rank >= 1");
  const std::size_t ax = normalize_axis(axis, xs.size(), "softmax", xs);
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= xs[i];
  for (std::size_t i = ax + 1; i < xs.size(); ++i) inner *= xs[i];
  const Index len = xs[ax];
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xs);
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      S mx = -std::numeric_limits<S>::infinity();
      for (Index j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      S z = 0;
      for (Index j = 0; j < len; ++j) {
        const S e = std::exp(xv[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (Index j = 0; j < len; ++j) out[base + j * inner] /= z;
    }
  }
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, outer, inner, len](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& y = t.value(self);
    Tensor<S>* d = t.grad_buffer(xi);
    for (Index o = 0; o < outer; ++o) {
      for (Index in = 0; in < inner; ++in) {
        const Index base = o * len * inner + in;
        S dot = 0;
        for (Index j = 0; j < len; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (Index j = 0; j < len; ++j) {
          const Index i = base + j * inner;
          (*d)[i] += y[i] * (g[i] - dot);
        }
      }
    }
  });
}

template <typename S>
Var<S> sum(Var<S> x) {
  Tensor<S> out = Tensor<S>::scalar(reduce_sum<S>(x.value().data()));
  return x.tape->record(std::move(out), {x.id}, [xi = x.id](Tape<S>& t, std::size_t self) {
    const S g = t.grad(self)[0];
    Tensor<S>* d = t.grad_buffer(xi);
    for (auto& v : d->data()) v += g;
  });
}

template <typename S>
Var<S> mean(Var<S> x) {
  const S n = static_cast<S>(x.value().size());
  Tensor<S> out = Tensor<S>::scalar(reduce_sum<S>(x.value().data()) / n);
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, n](Tape<S>& t, std::size_t self) {
    const S g = t.grad(self)[0] / n;
    Tensor<S>* d = t.grad_buffer(xi);
    for (auto& v : d->data()) v += g;
  });
}

namespace {

void check_groups(const std::string& op, const Shape& xs, const std::vector<std::vector<int>>& groups) {
  if (xs.size() != 2) shape_error(op, xs, "expected (batch, labels) input");
  if (groups.empty()) shape_error(op, xs, "no index groups");
  for (const auto& grp : groups) {
    if (grp.empty()) shape_error(op, xs, "empty index group");
    for (int i : grp) {
      if (i < 0 || i >= xs[1]) shape_error(op, xs, "index " + std::to_string(i) + " out of range");
    }
  }
}

}  // namespace

template <typename S>
Var<S> max_over_indices(Var<S> x, const std::vector<std::vector<int>>& groups) {
  const Shape& xs = x.shape();
  check_groups("max_over_indices", xs, groups);
  const Index batch = xs[0], n = xs[1];
  const Index ng = static_cast<Index>(groups.size());
  const Tensor<S>& xv = x.value();
  Tensor<S> out(Shape{batch, ng});
  auto arg = std::make_shared<std::vector<Index>>(out.size());
  for (Index b = 0; b < batch; ++b) {
    for (Index gi = 0; gi < ng; ++gi) {
      int best = -1;
      for (int i : groups[gi]) {
        const S v = xv[b * n + i];
        if (best < 0 || v > xv[b * n + best] || (v == xv[b * n + best] && i < best)) best = i;
      }
      out[b * ng + gi] = xv[b * n + best];
      (*arg)[b * ng + gi] = b * n + best;
    }
  }
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, arg](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S>* d = t.grad_buffer(xi);
    for (std::size_t o = 0; o < g.size(); ++o) (*d)[static_cast<std::size_t>((*arg)[o])] += g[o];
  });
}

template <typename S>
Var<S> mean_over_indices(Var<S> x, const std::vector<std::vector<int>>& groups) {
  const Shape& xs = x.shape();
  check_groups("mean_over_indices", xs, groups);
  const Index batch = xs[0], n = xs[1];
  const Index ng = static_cast<Index>(groups.size());
  const Tensor<S>& xv = x.value();
  Tensor<S> out(Shape{batch, ng});
  for (Index b = 0; b < batch; ++b) {
    for (Index gi = 0; gi < ng; ++gi) {
      S acc = 0;
      for (int i : groups[gi]) acc += xv[b * n + i];
      out[b * ng + gi] = acc / static_cast<S>(groups[gi].size());
    }
  }
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, groups, batch, n, ng](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S>* d = t.grad_buffer(xi);
    for (Index b = 0; b < batch; ++b) {
      for (Index gi = 0; gi < ng; ++gi) {
        const S share = g[b * ng + gi] / static_cast<S>(groups[gi].size());
        for (int i : groups[gi]) (*d)[b * n + i] += share;
      }
    }
  });
}

template <typename S>
Var<S> clip(Var<S> x, std::type_identity_t<S> lo, std::type_identity_t<S> hi) {
  if (!(lo < hi)) throw ShapeError("clip: requires lo < hi, got [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  const Tensor<S>& xv = x.value();
  Tensor<S> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(xv[i], lo), hi);
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, lo, hi](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    const Tensor<S>& v = t.value(xi);
    Tensor<S>* d = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i] >= lo && v[i] <= hi) (*d)[i] += g[i];
  });
}

template <typename S>
Var<S> gather_rows(Var<S> table, std::span<const int> indices) {
  const Shape& ts = table.shape();
  if (ts.empty()) shape_error("gather_rows", ts, "table must have rank >= 1");
  if (indices.empty()) shape_error("gather_rows", ts, "no indices");
  const Index rows = ts[0];
  const Index width = numel(ts) / rows;
  Shape out_shape = ts;
  out_shape[0] = static_cast<Index>(indices.size());
  Tensor<S> out(out_shape);
  const Tensor<S>& tv = table.value();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int idx = indices[r];
    if (idx < 0 || idx >= rows) shape_error("gather_rows", ts, "row index " + std::to_string(idx) + " out of range");
    std::copy_n(tv.data().data() + idx * width, width, out.data().data() + static_cast<Index>(r) * width);
  }
  std::vector<int> saved(indices.begin(), indices.end());
  return table.tape->record(std::move(out), {table.id},
                            [ti = table.id, saved = std::move(saved), width](Tape<S>& t, std::size_t self) {
                              const Tensor<S>& g = t.grad(self);
                              Tensor<S>* d = t.grad_buffer(ti);
                              for (std::size_t r = 0; r < saved.size(); ++r) {
                                S* dst = d->data().data() + saved[r] * width;
                                const S* src = g.data().data() + static_cast<Index>(r) * width;
                                for (Index j = 0; j < width; ++j) dst[j] += src[j];
                              }
                            });
}

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  Tensor<S> out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x.id}, [xi = x.id](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S>* d = t.grad_buffer(xi);
    for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
  });
}

template <typename S>
Var<S> concat(std::span<const Var<S>> xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = xs[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat", first);
  Shape out_shape = first;
  out_shape[ax] = 0;
  std::vector<Index> lens;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != first.size()) shape_error("concat", first, s, "ranks differ");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != first[i]) shape_error("concat", first, s, "non-concat dimensions differ");
    }
    out_shape[ax] += s[ax];
    lens.push_back(s[ax]);
  }
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  const Index total = out_shape[ax];
  Tensor<S> out(out_shape);
  Index offset = 0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor<S>& v = xs[k].value();
    for (Index o = 0; o < outer; ++o) {
      std::copy_n(v.data().data() + o * lens[k] * inner, lens[k] * inner,
                  out.data().data() + (o * total + offset) * inner);
    }
    offset += lens[k];
    ids.push_back(xs[k].id);
  }
  return xs[0].tape->record(std::move(out), ids, [ids, lens, outer, inner, total](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    Index offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor<S>* d = t.grad_buffer(ids[k])) {
        for (Index o = 0; o < outer; ++o) {
          const S* src = g.data().data() + (o * total + offset) * inner;
          S* dst = d->data().data() + o * lens[k] * inner;
          for (Index j = 0; j < lens[k] * inner; ++j) dst[j] += src[j];
        }
      }
      offset += lens[k];
    }
  });
}

template <typename S>
Var<S> slice(Var<S> x, int axis, std::int64_t start, std::int64_t length) {
  const Shape& xs = x.shape();
  const std::size_t ax = normalize_axis(axis, xs.size(), "slice", xs);
  if (start < 0 || length < 1 || start + length > xs[ax]) {
    shape_error("slice", xs, "range [" + std::to_string(start) + ", " + std::to_string(start + length) + ") out of bounds");
  }
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= xs[i];
  for (std::size_t i = ax + 1; i < xs.size(); ++i) inner *= xs[i];
  const Index full = xs[ax];
  Shape out_shape = xs;
  out_shape[ax] = length;
  Tensor<S> out(out_shape);
  const Tensor<S>& xv = x.value();
  for (Index o = 0; o < outer; ++o) {
    std::copy_n(xv.data().data() + (o * full + start) * inner, length * inner,
                out.data().data() + o * length * inner);
  }
  return x.tape->record(std::move(out), {x.id}, [xi = x.id, outer, inner, full, start, length](Tape<S>& t, std::size_t self) {
    const Tensor<S>& g = t.grad(self);
    Tensor<S>* d = t.grad_buffer(xi);
    for (Index o = 0; o < outer; ++o) {
      const S* src = g.data().data() + o * length * inner;
      S* dst = d->data().data() + (o * full + start) * inner;
      for (Index j = 0; j < length * inner; ++j) dst[j] += src[j];
    }
  });
}

template <typename S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> labels) {
  const Shape& ls = logits.shape();
  if (ls.size() != 2) shape_error("cross_entropy", ls, "expected (batch, classes) logits");
  const Index batch = ls[0], k = ls[1];
  if (static_cast<Index>(labels.size()) != batch) {
    shape_error("cross_entropy", ls, "got " + std::to_string(labels.size()) + " labels for the batch");
  }
  const Tensor<S>& z = logits.value();
  auto probs = std::make_shared<std::vector<S>>(z.size());
  S total = 0;
  for (Index b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= k) throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range [0, " + std::to_string(k) + ")");
    S mx = -std::numeric_limits<S>::infinity();
    for (Index j = 0; j < k; ++j) mx = std::max(mx, z[b * k + j]);
    S sz = 0;
    for (Index j = 0; j < k; ++j) {
      const S e = std::exp(z[b * k + j] - mx);
      (*probs)[b * k + j] = e;
      sz += e;
    }
    for (Index j = 0; j < k; ++j) (*probs)[b * k + j] /= sz;
    total += -(z[b * k + y] - mx - std::log(sz));
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return logits.tape->record(Tensor<S>::scalar(total / static_cast<S>(batch)), {logits.id},
                             [li = logits.id, probs, saved = std::move(saved), batch, k](Tape<S>& t, std::size_t self) {
                               const S g = t.grad(self)[0] / static_cast<S>(batch);
                               Tensor<S>* d = t.grad_buffer(li);
                               for (Index b = 0; b < batch; ++b) {
                                 for (Index j = 0; j < k; ++j) {
                                   const S onehot = j == saved[b] ? S{1} : S{0};
                                   (*d)[b * k + j] += g * ((*probs)[b * k + j] - onehot);
                                 }
                               }
                             });
}

#define XMAR_INSTANTIATE_OPS(S)                                                                        \
  template Var<S> add<S>(Var<S>, Var<S>);                                                              \
  template Var<S> mul<S>(Var<S>, Var<S>);                                                              \
  template Var<S> scale<S>(Var<S>, S);                                                                 \
  template Var<S> matmul<S>(Var<S>, Var<S>, bool);                                                     \
  template Var<S> dense<S>(Var<S>, Var<S>, std::optional<Var<S>>);                                     \
  template Var<S> conv2d<S>(Var<S>, Var<S>, std::optional<Var<S>>, int, Padding);                      \
  template Var<S> maxpool2d<S>(Var<S>, int);                                                           \
  template Var<S> relu<S>(Var<S>);                                                                     \
  template Var<S> tanh<S>(Var<S>);                                                                     \
  template Var<S> layernorm<S>(Var<S>, Var<S>, Var<S>, S);                                             \
  template Var<S> softmax<S>(Var<S>, int);                                                             \
  template Var<S> sum<S>(Var<S>);                                                                      \
  template Var<S> mean<S>(Var<S>);                                                                     \
  template Var<S> max_over_indices<S>(Var<S>, const std::vector<std::vector<int>>&);                   \
  template Var<S> mean_over_indices<S>(Var<S>, const std::vector<std::vector<int>>&);                  \
  template Var<S> clip<S>(Var<S>, S, S);                                                               \
  template Var<S> gather_rows<S>(Var<S>, std::span<const int>);                                        \
  template Var<S> reshape<S>(Var<S>, Shape);                                                           \
  template Var<S> concat<S>(std::span<const Var<S>>, int);                                             \
  template Var<S> slice<S>(Var<S>, int, std::int64_t, std::int64_t);                                   \
  template Var<S> cross_entropy<S>(Var<S>, std::span<const int>);

XMAR_INSTANTIATE_OPS(float)
XMAR_INSTANTIATE_OPS(double)

#undef XMAR_INSTANTIATE_OPS

}  // namespace xmar::ops
