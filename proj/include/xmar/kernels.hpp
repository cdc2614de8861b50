#pragma once

// Hot loops behind the tensor ops. Every kernel has a plain serial reference
// in `serial::` and an OpenMP version in `omp::`. The OpenMP versions split
// work over output rows only, so each output element is accumulated by one
// thread in the same order as the reference; results are bit-identical to the
// serial path for any team size.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "xmar/runtime.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace xmar::kernels {

using Index = std::int64_t;

// Below this many multiply-adds the OpenMP team is not worth waking.
inline constexpr Index kParallelWork = 1 << 15;

struct Conv2dGeometry {
  Index batch = 0, in_h = 0, in_w = 0, in_c = 0;
  Index k_h = 0, k_w = 0, out_c = 0;
  Index stride = 1;
  Index pad_top = 0, pad_left = 0;
  Index out_h = 0, out_w = 0;

  Index patch_len() const { return k_h * k_w * in_c; }
  Index rows() const { return batch * out_h * out_w; }
};

namespace serial {

// C (M x N) = op(A) * op(B), or C += ... when accumulate is set.
// A is M x K (K x M if trans_a); B is K x N (N x K if trans_b).
template <typename S>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const S* a, const S* b, S* c,
          bool accumulate) {
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      S sum = 0;
      for (Index p = 0; p < k; ++p) {
        S av = trans_a ? a[p * m + i] : a[i * k + p];
        S bv = trans_b ? b[j * k + p] : b[p * n + j];
        sum += av * bv;
      }
      c[i * n + j] = accumulate ? c[i * n + j] + sum : sum;
    }
  }
}

template <typename S>
void im2col(const Conv2dGeometry& g, const S* x, S* col) {
  const Index plen = g.patch_len();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        S* row = col + ((b * g.out_h + oy) * g.out_w + ox) * plen;
        for (Index ky = 0; ky < g.k_h; ++ky) {
          Index iy = oy * g.stride + ky - g.pad_top;
          for (Index kx = 0; kx < g.k_w; ++kx) {
            Index ix = ox * g.stride + kx - g.pad_left;
            S* dst = row + (ky * g.k_w + kx) * g.in_c;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
              std::fill(dst, dst + g.in_c, S{0});
            } else {
              const S* src = x + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
              std::copy(src, src + g.in_c, dst);
            }
          }
        }
      }
    }
  }
}

// Scatter-add of patch gradients back to the image. dx must be zeroed.
template <typename S>
void col2im(const Conv2dGeometry& g, const S* col, S* dx) {
  const Index plen = g.patch_len();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index oy = 0; oy < g.out_h; ++oy) {
      for (Index ox = 0; ox < g.out_w; ++ox) {
        const S* row = col + ((b * g.out_h + oy) * g.out_w + ox) * plen;
        for (Index ky = 0; ky < g.k_h; ++ky) {
          Index iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.in_h) continue;
          for (Index kx = 0; kx < g.k_w; ++kx) {
            Index ix = ox * g.stride + kx - g.pad_left;
            if (ix < 0 || ix >= g.in_w) continue;
            const S* src = row + (ky * g.k_w + kx) * g.in_c;
            S* dst = dx + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
            for (Index c = 0; c < g.in_c; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

// Non-overlapping k x k max pooling over NHWC input. `arg` receives the flat
// input index of each winner; ties go to the first element in scan order.
template <typename S>
void maxpool(Index batch, Index h, Index w, Index c, Index k, const S* x, S* y, Index* arg) {
  const Index oh = h / k, ow = w / k;
  for (Index b = 0; b < batch; ++b) {
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        for (Index ch = 0; ch < c; ++ch) {
          S best = -std::numeric_limits<S>::infinity();
          Index best_i = -1;
          for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
              Index i = ((b * h + oy * k + ky) * w + ox * k + kx) * c + ch;
              if (best_i < 0 || x[i] > best) {
                best = x[i];
                best_i = i;
              }
            }
          }
          Index o = ((b * oh + oy) * ow + ox) * c + ch;
          y[o] = best;
          arg[o] = best_i;
        }
      }
    }
  }
}

}  // namespace serial

namespace omp {

// Same per-element summation order as serial::gemm (p ascending from zero), so
// results are bit-identical. B is transposed up front when needed so the inner
// loop always runs contiguously over output columns.
template <typename S>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const S* a, const S* b, S* c,
          bool accumulate) {
  const bool go_parallel = m > 1 && m * n * k >= kParallelWork && runtime::threads() > 1;
  std::vector<S> bt;
  if (trans_b) {
    bt.resize(static_cast<std::size_t>(k * n));
    for (Index j = 0; j < n; ++j)
      for (Index p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    b = bt.data();
  }
#pragma omp parallel if (go_parallel)
  {
    if (!trans_a) {
      std::vector<S> acc(static_cast<std::size_t>(n));
#pragma omp for schedule(static)
      for (Index i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), S{0});
        S* ac = acc.data();
        for (Index p = 0; p < k; ++p) {
          const S av = a[i * k + p];
          const S* brow = b + p * n;
#pragma omp simd
          for (Index j = 0; j < n; ++j) ac[j] += av * brow[j];
        }
        S* crow = c + i * n;
        for (Index j = 0; j < n; ++j) crow[j] = accumulate ? crow[j] + ac[j] : ac[j];
      }
    } else {
      // A is stored (k, m): sweep p in the outer loop over this thread's rows.
      Index lo = 0, hi = m;
#ifdef _OPENMP
      if (go_parallel) {
        const Index nt = omp_get_num_threads(), t = omp_get_thread_num();
        lo = m * t / nt;
        hi = m * (t + 1) / nt;
      }
#endif
      std::vector<S> acc(static_cast<std::size_t>((hi - lo) * n));
      for (Index p = 0; p < k; ++p) {
        const S* arow = a + p * m;
        const S* brow = b + p * n;
        for (Index i = lo; i < hi; ++i) {
          const S av = arow[i];
          S* ac = acc.data() + (i - lo) * n;
#pragma omp simd
          for (Index j = 0; j < n; ++j) ac[j] += av * brow[j];
        }
      }
      for (Index i = lo; i < hi; ++i) {
        S* crow = c + i * n;
        const S* ac = acc.data() + (i - lo) * n;
        for (Index j = 0; j < n; ++j) crow[j] = accumulate ? crow[j] + ac[j] : ac[j];
      }
    }
  }
}

template <typename S>
void im2col(const Conv2dGeometry& g, const S* x, S* col) {
  const Index plen = g.patch_len();
  const Index rows = g.rows();
  const bool go_parallel = rows * plen >= kParallelWork && runtime::threads() > 1;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (Index r = 0; r < rows; ++r) {
    const Index ox = r % g.out_w;
    const Index oy = (r / g.out_w) % g.out_h;
    const Index b = r / (g.out_w * g.out_h);
    S* row = col + r * plen;
    for (Index ky = 0; ky < g.k_h; ++ky) {
      Index iy = oy * g.stride + ky - g.pad_top;
      for (Index kx = 0; kx < g.k_w; ++kx) {
        Index ix = ox * g.stride + kx - g.pad_left;
        S* dst = row + (ky * g.k_w + kx) * g.in_c;
        if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
          std::fill(dst, dst + g.in_c, S{0});
        } else {
          const S* src = x + ((b * g.in_h + iy) * g.in_w + ix) * g.in_c;
          std::copy(src, src + g.in_c, dst);
        }
      }
    }
  }
}

// Parallel over images; overlapping windows of one image stay on one thread.
template <typename S>
void col2im(const Conv2dGeometry& g, const S* col, S* dx) {
  const bool go_parallel = g.batch > 1 && g.rows() * g.patch_len() >= kParallelWork && runtime::threads() > 1;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (Index b = 0; b < g.batch; ++b) {
    Conv2dGeometry one = g;
    one.batch = 1;
    const Index img = g.in_h * g.in_w * g.in_c;
    serial::col2im(one, col + b * g.out_h * g.out_w * g.patch_len(), dx + b * img);
  }
}

template <typename S>
void maxpool(Index batch, Index h, Index w, Index c, Index k, const S* x, S* y, Index* arg) {
  const bool go_parallel = batch > 1 && batch * h * w * c >= kParallelWork && runtime::threads() > 1;
  const Index oh = h / k, ow = w / k;
#pragma omp parallel for schedule(static) if (go_parallel)
  for (Index b = 0; b < batch; ++b) {
    serial::maxpool<S>(1, h, w, c, k, x + b * h * w * c, y + b * oh * ow * c, arg + b * oh * ow * c);
    // serial::maxpool indexes relative to its own image; rebase the winners.
    for (Index o = 0; o < oh * ow * c; ++o) arg[b * oh * ow * c + o] += b * h * w * c;
  }
}

}  // namespace omp

// Entry points used by the ops: the OpenMP kernels, which fall back to one
// thread for small problems.
template <typename S>
void gemm(bool trans_a, bool trans_b, Index m, Index n, Index k, const S* a, const S* b, S* c,
          bool accumulate = false) {
  omp::gemm(trans_a, trans_b, m, n, k, a, b, c, accumulate);
}

template <typename S>
void im2col(const Conv2dGeometry& g, const S* x, S* col) {
  omp::im2col(g, x, col);
}

template <typename S>
void col2im(const Conv2dGeometry& g, const S* col, S* dx) {
  omp::col2im(g, col, dx);
}

template <typename S>
void maxpool(Index batch, Index h, Index w, Index c, Index k, const S* x, S* y, Index* arg) {
  omp::maxpool(batch, h, w, c, k, x, y, arg);
}

}  // namespace xmar::kernels
