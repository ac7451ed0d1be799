// Training loop: Adam with linear warmup (optional step decay), global-norm
// gradient clipping, deterministic per-step noise streams and per-epoch data
// shuffles derived from the run seed by counter mixing, periodic structured
// logging, resumable checkpoints carrying optimizer state, and a slot-order
// diagnostic comparing aligned against best-permutation slot agreement.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotvae/model.hpp"
#include "slotvae/nn.hpp"
#include "slotvae/objective.hpp"
#include "slotvae/tensor.hpp"

namespace slotvae::train {

struct LrSchedule {
  double lr = 4e-4;
  int64_t warmup_steps = 2000;
  int64_t decay_every = 0;     // 0: no decay
  double decay_factor = 1.0;

  double at(int64_t step) const {
    double v = lr;
    if (warmup_steps > 0 && step < warmup_steps) v = lr * (double)(step + 1) / (double)warmup_steps;
    if (decay_every > 0 && step >= warmup_steps)
      v *= std::pow(decay_factor, (double)((step - warmup_steps) / decay_every));
    return v;
  }
};

// Scales gradients so the global L2 norm is at most max_norm; returns the
// pre-clip norm.
template <typename T>
double clip_global_norm(const nn::ParamRefs<T>& params, double max_norm) {
  double sq = 0;
  for (auto* p : params)
    for (int64_t i = 0; i < p->grad.numel(); ++i) sq += (double)p->grad[i] * (double)p->grad[i];
  const double norm = std::sqrt(sq);
  if (std::isfinite(norm) && norm > max_norm && norm > 0) {
    const T s = (T)(max_norm / norm);
    for (auto* p : params)
      for (int64_t i = 0; i < p->grad.numel(); ++i) p->grad[i] *= s;
  }
  return norm;
}

template <typename T>
struct Adam {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  std::vector<Tensor<T>> m, v;

  void init(const nn::ParamRefs<T>& params) {
    m.clear();
    v.clear();
    for (auto* p : params) {
      m.push_back(Tensor<T>(p->value.shape()));
      v.push_back(Tensor<T>(p->value.shape()));
    }
    t = 0;
  }

  void step(const nn::ParamRefs<T>& params, double lr) {
    if (m.size() != params.size()) throw std::logic_error("Adam: not initialized for these params");
    ++t;
    const T b1 = (T)beta1, b2 = (T)beta2, one = T(1);
    const T ib1 = (T)(1.0 / (1.0 - std::pow(beta1, (double)t)));
    const T ib2 = (T)(1.0 / (1.0 - std::pow(beta2, (double)t)));
    const T lrT = (T)lr, epsT = (T)eps;
    for (size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      T* mv = m[i].data();
      T* vv = v[i].data();
      const T* gv = p->grad.data();
      T* w = p->value.data();
      const int64_t n = p->value.numel();
      for (int64_t j = 0; j < n; ++j) {
        const T g = gv[j];
        const T mj = b1 * mv[j] + (one - b1) * g;
        const T vj = b2 * vv[j] + (one - b2) * g * g;
        mv[j] = mj;
        vv[j] = vj;
        w[j] -= lrT * (mj * ib1) / (std::sqrt(vj * ib2) + epsT);
      }
    }
  }
};

// Maximum-weight assignment. Exhaustive for K <= 6, Hungarian beyond.
double assignment_max(const std::vector<double>& score, int64_t K);

struct OrderMatch {
  double aligned = 0;  // mean cosine of same-index slot pairs
  double best = 0;     // mean cosine under the best per-sample permutation
};

// q_mean, p_mean: [B, K, D] posterior and prior slot means.
template <typename T>
OrderMatch order_match_diagnostic(const Tensor<T>& q_mean, const Tensor<T>& p_mean) {
  if (!(q_mean.shape() == p_mean.shape()) || q_mean.ndim() != 3)
    throw std::invalid_argument("order_match_diagnostic: need matching [B,K,D] tensors");
  const int64_t B = q_mean.dim(0), K = q_mean.dim(1), D = q_mean.dim(2);
  OrderMatch om;
  for (int64_t b = 0; b < B; ++b) {
    std::vector<double> cos(K * K);
    for (int64_t i = 0; i < K; ++i)
      for (int64_t j = 0; j < K; ++j) {
        double dot = 0, nq = 0, np = 0;
        for (int64_t d = 0; d < D; ++d) {
          const double a = q_mean[(b * K + i) * D + d];
          const double c = p_mean[(b * K + j) * D + d];
          dot += a * c;
          nq += a * a;
          np += c * c;
        }
        cos[i * K + j] = dot / (std::sqrt(nq) * std::sqrt(np) + 1e-12);
      }
    double diag = 0;
    for (int64_t i = 0; i < K; ++i) diag += cos[i * K + i];
    om.aligned += diag / (double)K;
    om.best += assignment_max(cos, K) / (double)K;
  }
  om.aligned /= (double)B;
  om.best /= (double)B;
  return om;
}

struct TrainConfig {
  model::ModelConfig model;
  std::string data_dir;
  std::string out_dir;
  int64_t batch_size = 16;
  int64_t total_steps = 20000;
  int64_t warmup_steps = 2000;
  int64_t checkpoint_interval = 1000;
  int64_t log_interval = 50;
  double learning_rate = 4e-4;
  double lr_decay_factor = 1.0;
  int64_t lr_decay_every = 0;
  double beta = -1.0;  // <0: resolved from the dataset generator
  double sigma_x = 0.1;
  double hier_weight = 1.0;
  double aux_weight = 1.0;
  double clip_norm = 1.0;
  uint64_t seed = 0;
  // Explicit checkpoint to resume from; empty = newest checkpoint in out_dir.
  std::string resume_from;
};

// beta defaults: 0.01 for multi-sprite rooms, 0.1 for arrow scenes.
double resolve_beta(double requested, const std::string& generator);

struct TrainResult {
  int64_t final_step = 0;
  objective::LossValues last;
  OrderMatch last_order;
  std::string final_checkpoint;
  int64_t resumed_from = -1;  // -1: fresh run
};

// Runs (or resumes) training; writes checkpoints and a log into out_dir.
TrainResult train(const TrainConfig& cfg);

// Single optimization step on one batch; shared by train() and tests.
template <typename Scalar>
objective::LossValues train_step(model::Model<Scalar>& m, Adam<Scalar>& opt,
                                 const Tensor<Scalar>& batch, const objective::ObjectiveConfig& oc,
                                 double lr, double clip_norm, uint64_t noise_seed, int64_t step,
                                 double* grad_norm_out = nullptr, OrderMatch* order_out = nullptr) {
  ad::Tape<Scalar> tp;
  Rng rng(noise_seed);
  auto fw = m.forward_train(tp, batch, rng);
  auto lt = objective::total_loss(tp, tp.leaf(batch), fw, oc);
  auto values = objective::loss_values(lt);
  objective::check_finite(values, step);
  m.zero_grad();
  tp.backward(lt.total);
  auto params = m.parameters();
  const double gnorm = clip_global_norm(params, clip_norm);
  if (!std::isfinite(gnorm))
    throw std::runtime_error("non-finite loss term 'gradient' at step " + std::to_string(step) +
                             " (global norm " + std::to_string(gnorm) + ")");
  if (grad_norm_out) *grad_norm_out = gnorm;
  if (order_out)
    *order_out = order_match_diagnostic(fw.q_slots.mean.val(), fw.p_slots.mean.val());
  opt.step(params, lr);
  return values;
}

}  // namespace slotvae::train
