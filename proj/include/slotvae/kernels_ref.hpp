// Serial reference kernels: naive loop implementations of the fast paths
// in kernels.hpp. Used by tests as ground truth and by tools/bench_kernels
// for speed comparison. Keep these obvious, not fast.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace slotvae::kernels::ref {

template <typename T>
void matmul(const T* A, const T* B, T* C, int64_t M, int64_t N, int64_t K) {
  for (int64_t m = 0; m < M; ++m)
    for (int64_t n = 0; n < N; ++n) {
      T s = 0;
      for (int64_t k = 0; k < K; ++k) s += A[m * K + k] * B[k * N + n];
      C[m * N + n] = s;
    }
}

template <typename T>
void conv2d_forward(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Cin, int64_t H,
                    int64_t W, int64_t Cout, int64_t k, int64_t stride, int64_t pad) {
  const int64_t Ho = (H + 2 * pad - k) / stride + 1;
  const int64_t Wo = (W + 2 * pad - k) / stride + 1;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t ho = 0; ho < Ho; ++ho)
        for (int64_t wo = 0; wo < Wo; ++wo) {
          T s = bias ? bias[co] : T(0);
          for (int64_t ci = 0; ci < Cin; ++ci)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t yy = ho * stride + ky - pad;
                const int64_t xx = wo * stride + kx - pad;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                s += x[((b * Cin + ci) * H + yy) * W + xx] * w[((co * Cin + ci) * k + ky) * k + kx];
              }
          y[((b * Cout + co) * Ho + ho) * Wo + wo] = s;
        }
}

template <typename T>
void deconv2d_forward(const T* x, const T* w, const T* bias, T* y, int64_t B, int64_t Cin,
                      int64_t Hi, int64_t Wi, int64_t Cout, int64_t k, int64_t stride, int64_t pad,
                      int64_t out_pad) {
  const int64_t Ho = (Hi - 1) * stride - 2 * pad + k + out_pad;
  const int64_t Wo = (Wi - 1) * stride - 2 * pad + k + out_pad;
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t co = 0; co < Cout; ++co)
      for (int64_t i = 0; i < Ho * Wo; ++i)
        y[(b * Cout + co) * Ho * Wo + i] = bias ? bias[co] : T(0);
    for (int64_t ci = 0; ci < Cin; ++ci)
      for (int64_t hi = 0; hi < Hi; ++hi)
        for (int64_t wi = 0; wi < Wi; ++wi) {
          const T xv = x[((b * Cin + ci) * Hi + hi) * Wi + wi];
          for (int64_t co = 0; co < Cout; ++co)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                const int64_t yy = hi * stride + ky - pad;
                const int64_t xx = wi * stride + kx - pad;
                if (yy < 0 || yy >= Ho || xx < 0 || xx >= Wo) continue;
                y[((b * Cout + co) * Ho + yy) * Wo + xx] +=
                    xv * w[((ci * Cout + co) * k + ky) * k + kx];
              }
        }
  }
}

template <typename T>
void softmax_forward(const T* x, T* y, int64_t outer, int64_t n, int64_t inner) {
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      const int64_t base = o * n * inner + i;
      T m = x[base];
      for (int64_t j = 1; j < n; ++j) m = std::max(m, x[base + j * inner]);
      T sum = 0;
      for (int64_t j = 0; j < n; ++j) sum += std::exp(x[base + j * inner] - m);
      for (int64_t j = 0; j < n; ++j) y[base + j * inner] = std::exp(x[base + j * inner] - m) / sum;
    }
}

}  // namespace slotvae::kernels::ref
