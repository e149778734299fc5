#pragma once

// Internal dense kernels behind the autodiff ops. All loops accumulate in a
// fixed order per output element, so results are bit-identical regardless of
// thread count.

#include <algorithm>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace physprior::ag::detail {

struct ConvDims {
  int cin, h, w;     // input
  int cout, k;       // kernel (square)
  int stride, pad;
  int oh, ow;        // output
};

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(int M, int K, int N, const T* A, const T* B, T* C) {
  const bool par = static_cast<int64_t>(M) * K * N > 16384 && M > 1;
#pragma omp parallel for schedule(static) if (par)
  for (int i = 0; i < M; ++i) {
    const T* a_row = A + static_cast<int64_t>(i) * K;
    T* c_row = C + static_cast<int64_t>(i) * N;
    for (int k = 0; k < K; ++k) {
      const T a = a_row[k];
      const T* b_row = B + static_cast<int64_t>(k) * N;
      for (int j = 0; j < N; ++j) c_row[j] += a * b_row[j];
    }
  }
}

template <typename T>
void transpose(int rows, int cols, const T* in, T* out) {
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[static_cast<int64_t>(c) * rows + r] = in[static_cast<int64_t>(r) * cols + c];
}

// col[(ci*k + ky)*k + kx][oy*ow + ox] = x[ci][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* x, const ConvDims& d, T* col) {
  const int np = d.oh * d.ow;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        T* dst = col + static_cast<int64_t>((ci * d.k + ky) * d.k + kx) * np;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) {
            for (int ox = 0; ox < d.ow; ++ox) dst[oy * d.ow + ox] = T(0);
            continue;
          }
          const T* src = x + (static_cast<int64_t>(ci) * d.h + iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            dst[oy * d.ow + ox] = (ix >= 0 && ix < d.w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// row-major transpose of im2col: row[oy*ow + ox][(ci*k + ky)*k + kx]
template <typename T>
void im2row(const T* x, const ConvDims& d, T* row) {
  const int ckk = d.cin * d.k * d.k;
  for (int oy = 0; oy < d.oh; ++oy) {
    for (int ox = 0; ox < d.ow; ++ox) {
      T* dst = row + static_cast<int64_t>(oy * d.ow + ox) * ckk;
      for (int ci = 0; ci < d.cin; ++ci) {
        for (int ky = 0; ky < d.k; ++ky) {
          const int iy = oy * d.stride - d.pad + ky;
          for (int kx = 0; kx < d.k; ++kx) {
            const int ix = ox * d.stride - d.pad + kx;
            dst[(ci * d.k + ky) * d.k + kx] =
                (iy >= 0 && iy < d.h && ix >= 0 && ix < d.w)
                    ? x[(static_cast<int64_t>(ci) * d.h + iy) * d.w + ix]
                    : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvDims& d, T* dx) {
  const int np = d.oh * d.ow;
  for (int ci = 0; ci < d.cin; ++ci) {
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const T* src = col + static_cast<int64_t>((ci * d.k + ky) * d.k + kx) * np;
        for (int oy = 0; oy < d.oh; ++oy) {
          const int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.h) continue;
          T* dst = dx + (static_cast<int64_t>(ci) * d.h + iy) * d.w;
          for (int ox = 0; ox < d.ow; ++ox) {
            const int ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

// Per-thread scratch reused across calls; convolution runs at a high call
// rate and fresh allocations would dominate the runtime.
template <typename T>
T* scratch(size_t which, size_t n) {
  thread_local std::vector<T> buffers[3];
  auto& buf = buffers[which];
  if (buf.size() < n) buf.resize(n);
  return buf.data();
}

// y[cout, oh*ow] = w[cout, cin*k*k] * im2col(x); y must be zeroed.
template <typename T>
void conv2d_forward(const T* x, const T* w, T* y, const ConvDims& d) {
  const int ckk = d.cin * d.k * d.k;
  const int np = d.oh * d.ow;
  T* col = scratch<T>(0, static_cast<size_t>(ckk) * np);
  im2col(x, d, col);
  gemm_nn(d.cout, ckk, np, w, col, y);
}

// dx += conv_transpose(w, dy)
template <typename T>
void conv2d_grad_input(const T* w, const T* dy, T* dx, const ConvDims& d) {
  const int ckk = d.cin * d.k * d.k;
  const int np = d.oh * d.ow;
  T* wt = scratch<T>(1, static_cast<size_t>(ckk) * d.cout);
  transpose(d.cout, ckk, w, wt);
  T* dcol = scratch<T>(0, static_cast<size_t>(ckk) * np);
  std::fill_n(dcol, static_cast<size_t>(ckk) * np, T(0));
  gemm_nn(ckk, d.cout, np, wt, dy, dcol);
  col2im_add(dcol, d, dx);
}

// dw += dy * im2col(x)^T
template <typename T>
void conv2d_grad_kernel(const T* x, const T* dy, T* dw, const ConvDims& d) {
  const int ckk = d.cin * d.k * d.k;
  const int np = d.oh * d.ow;
  T* rows = scratch<T>(2, static_cast<size_t>(np) * ckk);
  im2row(x, d, rows);
  gemm_nn(d.cout, np, ckk, dy, rows, dw);
}

}  // namespace physprior::ag::detail
