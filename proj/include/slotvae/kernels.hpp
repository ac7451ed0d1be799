// Dense compute kernels behind the autodiff ops. The heavy lifting
// (conv/deconv via im2col + GEMM, batched matmul, softmax) lives here;
// gradients accumulate (+=) into caller-provided buffers so shared
// parameters compose. Serial reference implementations for each kernel
// are in kernels_ref.hpp and the two are compared in tests and in
// tools/bench_kernels.
#pragma once

#include <cblas.h>
#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "slotvae/tensor.hpp"

namespace slotvae::kernels {

template <typename T>
struct blas;

template <>
struct blas<float> {
  static void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, float alpha,
                   const float* A, int64_t lda, const float* B, int64_t ldb, float beta,
                   float* C, int64_t ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                (int)M, (int)N, (int)K, alpha, A, (int)lda, B, (int)ldb, beta, C, (int)ldc);
  }
};

template <>
struct blas<double> {
  static void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, double alpha,
                   const double* A, int64_t lda, const double* B, int64_t ldb, double beta,
                   double* C, int64_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans,
                (int)M, (int)N, (int)K, alpha, A, (int)lda, B, (int)ldb, beta, C, (int)ldc);
  }
};

// C[M,N] (+)= op(A)*op(B), row-major, leading dims = natural widths.
template <typename T>
void gemm(bool ta, bool tb, int64_t M, int64_t N, int64_t K, T alpha, const T* A, const T* B,
          T beta, T* C) {
  blas<T>::gemm(ta, tb, M, N, K, alpha, A, ta ? M : K, B, tb ? K : N, beta, C, N);
}

// Reusable scratch for the batched conv/deconv lowerings: avoids re-zeroing
// and re-faulting tens of megabytes per call. Callers fully overwrite the
// region they request. Distinct ids may be live simultaneously.
template <typename T>
T* scratch(int id, int64_t n) {
  static thread_local std::vector<T> bufs[6];
  auto& b = bufs[id];
  if ((int64_t)b.size() < n) b.resize(n);
  return b.data();
}

inline int64_t conv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int64_t deconv_out_dim(int64_t in, int64_t k, int64_t stride, int64_t pad, int64_t out_pad) {
  return (in - 1) * stride - 2 * pad + k + out_pad;
}

// x[C,H,W] -> col[(C*k*k) x (Ho*Wo)], zero-padded borders. `ld` is the row
// stride of col (defaults to one image's patch count); batched callers point
// successive images at column offsets of one wide matrix.
template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            T* col, int64_t ld = -1) {
  const int64_t Ho = conv_out_dim(H, k, stride, pad);
  const int64_t Wo = conv_out_dim(W, k, stride, pad);
  const int64_t patches = Ho * Wo;
  if (ld < 0) ld = patches;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        T* dst = col + ((c * k + ky) * k + kx) * ld;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          const int64_t y = ho * stride + ky - pad;
          if (y < 0 || y >= H) {
            std::fill(dst + ho * Wo, dst + (ho + 1) * Wo, T(0));
            continue;
          }
          const T* src = x + (c * H + y) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const int64_t xx = wo * stride + kx - pad;
            dst[ho * Wo + wo] = (xx < 0 || xx >= W) ? T(0) : src[xx];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters col back into x with accumulation.
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            T* x, int64_t ld = -1) {
  const int64_t Ho = conv_out_dim(H, k, stride, pad);
  const int64_t Wo = conv_out_dim(W, k, stride, pad);
  const int64_t patches = Ho * Wo;
  if (ld < 0) ld = patches;
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < k; ++ky) {
      for (int64_t kx = 0; kx < k; ++kx) {
        const T* src = col + ((c * k + ky) * k + kx) * ld;
        for (int64_t ho = 0; ho < Ho; ++ho) {
          const int64_t y = ho * stride + ky - pad;
          if (y < 0 || y >= H) continue;
          T* dst = x + (c * H + y) * W;
          for (int64_t wo = 0; wo < Wo; ++wo) {
            const int64_t xx = wo * stride + kx - pad;
            if (xx >= 0 && xx < W) dst[xx] += src[ho * Wo + wo];
          }
        }
      }
    }
  }
}

// y[B,Cout,Ho,Wo] = conv(x[B,Cin,H,W], w[Cout,Cin,k,k]) + bias. The whole
// batch is lowered into one wide column matrix so a single GEMM covers it.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Cin, int64_t H,
                    int64_t W, int64_t Cout, int64_t k, int64_t stride, int64_t pad) {
  const int64_t Ho = conv_out_dim(H, k, stride, pad);
  const int64_t Wo = conv_out_dim(W, k, stride, pad);
  const int64_t patches = Ho * Wo;
  const int64_t ckk = Cin * k * k;
  const int64_t NP = B * patches;
  T* col_all = scratch<T>(0, ckk * NP);
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < B; ++b)
    im2col(x + b * Cin * H * W, Cin, H, W, k, stride, pad, col_all + b * patches, NP);
  T* y_all = scratch<T>(1, Cout * NP);
  gemm<T>(false, false, Cout, NP, ckk, T(1), w, col_all, T(0), y_all);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Cout; ++co) {
      const T* src = y_all + co * NP + b * patches;
      T* dst = y + (b * Cout + co) * patches;
      const T bv = bias ? bias[co] : T(0);
      for (int64_t i = 0; i < patches; ++i) dst[i] = src[i] + bv;
    }
}

// Gradients accumulate into dx/dw/dbias (any may be null). Weight gradients
// come from one batch-wide GEMM, so the reduction order is fixed.
template <typename T>
void conv2d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* dbias, int64_t B,
                     int64_t Cin, int64_t H, int64_t W, int64_t Cout, int64_t k, int64_t stride,
                     int64_t pad) {
  const int64_t Ho = conv_out_dim(H, k, stride, pad);
  const int64_t Wo = conv_out_dim(W, k, stride, pad);
  const int64_t patches = Ho * Wo;
  const int64_t ckk = Cin * k * k;
  const int64_t NP = B * patches;
  if (dbias) {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t co = 0; co < Cout; ++co) {
        const T* row = dy + (b * Cout + co) * patches;
        T s = 0;
        for (int64_t i = 0; i < patches; ++i) s += row[i];
        dbias[co] += s;
      }
  }
  if (!dx && !dw) return;
  // dy regrouped as [Cout x B*patches]
  T* dy_all = scratch<T>(2, Cout * NP);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Cout; ++co)
      std::copy(dy + (b * Cout + co) * patches, dy + (b * Cout + co + 1) * patches,
                dy_all + co * NP + b * patches);
  if (dw) {
    T* col_all = scratch<T>(0, ckk * NP);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b)
      im2col(x + b * Cin * H * W, Cin, H, W, k, stride, pad, col_all + b * patches, NP);
    gemm<T>(false, true, Cout, ckk, NP, T(1), dy_all, col_all, T(1), dw);
  }
  if (dx) {
    T* dcol_all = scratch<T>(1, ckk * NP);
    gemm<T>(true, false, ckk, NP, Cout, T(1), w, dy_all, T(0), dcol_all);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b)
      col2im(dcol_all + b * patches, Cin, H, W, k, stride, pad, dx + b * Cin * H * W, NP);
  }
}

// w[Cin,Cout,k,k] permuted to [(Cout*k*k) x Cin] for the deconv GEMMs.
template <typename T>
std::vector<T> deconv_weight_permute(const T* w, int64_t Cin, int64_t Cout, int64_t k) {
  std::vector<T> w2((Cout * k * k) * Cin);
  for (int64_t ci = 0; ci < Cin; ++ci)
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t ky = 0; ky < k; ++ky)
        for (int64_t kx = 0; kx < k; ++kx)
          w2[(((co * k + ky) * k + kx)) * Cin + ci] = w[((ci * Cout + co) * k + ky) * k + kx];
  return w2;
}

// y[B,Cout,Ho,Wo] = deconv(x[B,Cin,Hi,Wi]), Ho = (Hi-1)*stride - 2*pad + k + out_pad
template <typename T>
void deconv2d_forward(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Cin,
                      int64_t Hi, int64_t Wi, int64_t Cout, int64_t k, int64_t stride, int64_t pad,
                      int64_t out_pad) {
  const int64_t Ho = deconv_out_dim(Hi, k, stride, pad, out_pad);
  const int64_t Wo = deconv_out_dim(Wi, k, stride, pad, out_pad);
  if (conv_out_dim(Ho, k, stride, pad) != Hi || conv_out_dim(Wo, k, stride, pad) != Wi)
    throw std::invalid_argument("deconv2d: inconsistent geometry");
  const std::vector<T> w2 = deconv_weight_permute(w, Cin, Cout, k);
  const int64_t ckk = Cout * k * k;
  const int64_t patches = Hi * Wi;
  const int64_t NP = B * patches;
  // x regrouped as [Cin x B*patches], one GEMM, then per-image col2im
  T* x_all = scratch<T>(3, Cin * NP);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t ci = 0; ci < Cin; ++ci)
      std::copy(x + (b * Cin + ci) * patches, x + (b * Cin + ci + 1) * patches,
                x_all + ci * NP + b * patches);
  T* col_all = scratch<T>(0, ckk * NP);
  gemm<T>(false, false, ckk, NP, Cin, T(1), w2.data(), x_all, T(0), col_all);
#pragma omp parallel for schedule(static)
  for (int64_t b = 0; b < B; ++b) {
    T* yb = y + b * Cout * Ho * Wo;
    std::fill(yb, yb + Cout * Ho * Wo, T(0));
    col2im(col_all + b * patches, Cout, Ho, Wo, k, stride, pad, yb, NP);
    if (bias) {
      for (int64_t co = 0; co < Cout; ++co) {
        T bv = bias[co];
        T* row = yb + co * Ho * Wo;
        for (int64_t i = 0; i < Ho * Wo; ++i) row[i] += bv;
      }
    }
  }
}

template <typename T>
void deconv2d_backward(const T* x, const T* w, const T* dy, T* dx, T* dw, T* dbias, int64_t B,
                       int64_t Cin, int64_t Hi, int64_t Wi, int64_t Cout, int64_t k, int64_t stride,
                       int64_t pad, int64_t out_pad) {
  const int64_t Ho = deconv_out_dim(Hi, k, stride, pad, out_pad);
  const int64_t Wo = deconv_out_dim(Wi, k, stride, pad, out_pad);
  const int64_t ckk = Cout * k * k;
  const int64_t patches = Hi * Wi;
  if (dbias) {
    for (int64_t b = 0; b < B; ++b)
      for (int64_t co = 0; co < Cout; ++co) {
        const T* row = dy + (b * Cout + co) * Ho * Wo;
        T s = 0;
        for (int64_t i = 0; i < Ho * Wo; ++i) s += row[i];
        dbias[co] += s;
      }
  }
  if (dx || dw) {
    const int64_t NP = B * patches;
    const std::vector<T> w2 = deconv_weight_permute(w, Cin, Cout, k);
    T* dcol_all = scratch<T>(1, ckk * NP);
#pragma omp parallel for schedule(static)
    for (int64_t b = 0; b < B; ++b)
      im2col(dy + b * Cout * Ho * Wo, Cout, Ho, Wo, k, stride, pad, dcol_all + b * patches, NP);
    if (dx) {
      T* dx_all = scratch<T>(4, Cin * NP);
      gemm<T>(true, false, Cin, NP, ckk, T(1), w2.data(), dcol_all, T(0), dx_all);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t ci = 0; ci < Cin; ++ci) {
          const T* src = dx_all + ci * NP + b * patches;
          T* dst = dx + (b * Cin + ci) * patches;
          for (int64_t i = 0; i < patches; ++i) dst[i] += src[i];
        }
    }
    if (dw) {
      T* x_all = scratch<T>(3, Cin * NP);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t ci = 0; ci < Cin; ++ci)
          std::copy(x + (b * Cin + ci) * patches, x + (b * Cin + ci + 1) * patches,
                    x_all + ci * NP + b * patches);
      std::vector<T> dw2(ckk * Cin);
      gemm<T>(false, true, ckk, Cin, NP, T(1), dcol_all, x_all, T(0), dw2.data());
      for (int64_t ci = 0; ci < Cin; ++ci)
        for (int64_t co = 0; co < Cout; ++co)
          for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx)
              dw[((ci * Cout + co) * k + ky) * k + kx] += dw2[((co * k + ky) * k + kx) * Cin + ci];
    }
  }
}

// Max-subtracted softmax over the middle axis of x viewed as [outer, n, inner].
template <typename T>
void softmax_forward(const T* x, T* y, int64_t outer, int64_t n, int64_t inner) {
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      T m = x[base];
      for (int64_t j = 1; j < n; ++j) m = std::max(m, x[base + j * inner]);
      T sum = 0;
      for (int64_t j = 0; j < n; ++j) {
        T e = std::exp(x[base + j * inner] - m);
        y[base + j * inner] = e;
        sum += e;
      }
      const T inv = T(1) / sum;
      for (int64_t j = 0; j < n; ++j) y[base + j * inner] *= inv;
    }
  }
}

template <typename T>
void softmax_backward(const T* y, const T* dy, T* dx, int64_t outer, int64_t n, int64_t inner) {
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      T dot = 0;
      for (int64_t j = 0; j < n; ++j) dot += y[base + j * inner] * dy[base + j * inner];
      for (int64_t j = 0; j < n; ++j)
        dx[base + j * inner] += y[base + j * inner] * (dy[base + j * inner] - dot);
    }
  }
}

}  // namespace slotvae::kernels
