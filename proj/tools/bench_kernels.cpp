// Times the OpenMP/BLAS kernels against the serial reference implementations
// on the shapes the model actually uses, and checks they agree.
#include <chrono>
#include <cstdio>

#include "slotvae/kernels.hpp"
#include "slotvae/kernels_ref.hpp"
#include "slotvae/rng.hpp"
#include "slotvae/tensor.hpp"

using namespace slotvae;
using clk = std::chrono::steady_clock;

static double secs(clk::time_point a, clk::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

template <typename F>
static double time_repeats(int reps, F&& f) {
  f();  // warm-up
  auto t0 = clk::now();
  for (int i = 0; i < reps; ++i) f();
  return secs(t0, clk::now()) / reps;
}

static void fill(Rng& rng, Tensor<float>& t) {
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = (float)rng.uniform(-1.0, 1.0);
}

int main() {
  Rng rng(7);
  std::printf("%-34s %12s %12s %8s %10s\n", "kernel", "serial_ms", "fast_ms", "speedup",
              "max_diff");

  {  // encoder-sized conv: B=16, 32ch 32x32, k=5 s=1
    const int64_t B = 16, Cin = 32, H = 32, W = 32, Cout = 32, k = 5, s = 1, p = 2;
    Tensor<float> x({B, Cin, H, W}), w({Cout, Cin, k, k}), b({Cout});
    fill(rng, x), fill(rng, w), fill(rng, b);
    const int64_t Ho = kernels::conv_out_dim(H, k, s, p), Wo = kernels::conv_out_dim(W, k, s, p);
    Tensor<float> y({B, Cout, Ho, Wo}), yref({B, Cout, Ho, Wo});
    double t_ref = time_repeats(3, [&] {
      kernels::ref::conv2d_forward(x.data(), w.data(), b.data(), yref.data(), B, Cin, H, W, Cout,
                                   k, s, p);
    });
    double t_fast = time_repeats(10, [&] {
      kernels::conv2d_forward(x.data(), w.data(), b.data(), y.data(), B, Cin, H, W, Cout, k, s, p);
    });
    std::printf("%-34s %12.3f %12.3f %8.1fx %10.2e\n", "conv2d 16x32x32x32 k5", t_ref * 1e3,
                t_fast * 1e3, t_ref / t_fast, (double)max_abs_diff(y, yref));
  }

  {  // decoder-sized deconv: B*K=80, 32ch 16x16 -> 32x32
    const int64_t B = 80, Cin = 32, Hi = 16, Wi = 16, Cout = 32, k = 5, s = 2, p = 2, op = 1;
    Tensor<float> x({B, Cin, Hi, Wi}), w({Cin, Cout, k, k}), b({Cout});
    fill(rng, x), fill(rng, w), fill(rng, b);
    const int64_t Ho = kernels::deconv_out_dim(Hi, k, s, p, op);
    const int64_t Wo = kernels::deconv_out_dim(Wi, k, s, p, op);
    Tensor<float> y({B, Cout, Ho, Wo}), yref({B, Cout, Ho, Wo});
    double t_ref = time_repeats(3, [&] {
      kernels::ref::deconv2d_forward(x.data(), w.data(), b.data(), yref.data(), B, Cin, Hi, Wi,
                                     Cout, k, s, p, op);
    });
    double t_fast = time_repeats(10, [&] {
      kernels::deconv2d_forward(x.data(), w.data(), b.data(), y.data(), B, Cin, Hi, Wi, Cout, k, s,
                                p, op);
    });
    std::printf("%-34s %12.3f %12.3f %8.1fx %10.2e\n", "deconv2d 80x32x16x16 k5 s2", t_ref * 1e3,
                t_fast * 1e3, t_ref / t_fast, (double)max_abs_diff(y, yref));
  }

  {  // attention-sized matmul: (B*N) x D times D x D
    const int64_t M = 16 * 1024, K = 64, N = 64;
    Tensor<float> A({M, K}), Bm({K, N}), C({M, N}), Cref({M, N});
    fill(rng, A), fill(rng, Bm);
    double t_ref = time_repeats(3, [&] {
      kernels::ref::matmul(A.data(), Bm.data(), Cref.data(), M, N, K);
    });
    double t_fast = time_repeats(10, [&] {
      kernels::gemm<float>(false, false, M, N, K, 1.f, A.data(), Bm.data(), 0.f, C.data());
    });
    std::printf("%-34s %12.3f %12.3f %8.1fx %10.2e\n", "gemm 16384x64 * 64x64", t_ref * 1e3,
                t_fast * 1e3, t_ref / t_fast, (double)max_abs_diff(C, Cref));
  }

  {  // attention softmax over slots: [B, K, N]
    const int64_t outer = 16, n = 5, inner = 1024;
    Tensor<float> x({outer, n, inner}), y(x.shape()), yref(x.shape());
    fill(rng, x);
    double t_ref = time_repeats(5, [&] {
      kernels::ref::softmax_forward(x.data(), yref.data(), outer, n, inner);
    });
    double t_fast = time_repeats(20, [&] {
      kernels::softmax_forward(x.data(), y.data(), outer, n, inner);
    });
    std::printf("%-34s %12.3f %12.3f %8.1fx %10.2e\n", "softmax 16x5x1024", t_ref * 1e3,
                t_fast * 1e3, t_ref / t_fast, (double)max_abs_diff(y, yref));
  }

  return 0;
}
