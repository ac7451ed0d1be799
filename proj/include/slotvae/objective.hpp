// ELBO terms. All KL divergences are between diagonal Gaussians, summed over
// latent dimensions and averaged over the batch; the reconstruction term is a
// Gaussian likelihood with fixed sigma_x, summed over pixels and channels and
// averaged over the batch.
//
//   total = recon_nll + hier_weight * KL(q(z^s|x) || p(z^s|z^g))
//         + beta * KL(q(z^g|x) || N(0,I)) + aux_weight * KL(q(z^s|x) || N(0,I))
//
// The hierarchical term is taken with gradients flowing into both paths: the
// prior parameters are trained to match the posterior and vice versa.
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "slotvae/model.hpp"

namespace slotvae::objective {

struct ObjectiveConfig {
  double beta = 0.01;       // weight on the global KL
  double sigma_x = 0.1;     // fixed reconstruction standard deviation
  double hier_weight = 1.0; // optional multiplier on the hierarchical slot KL
  double aux_weight = 1.0;  // optional multiplier on the auxiliary slot KL
};

// -sum log N(x | composed, sigma_x^2), mean over the batch.
template <typename T>
ad::Var<T> recon_nll(ad::Tape<T>& tp, const ad::Var<T>& x, const ad::Var<T>& composed,
                     double sigma_x) {
  if (!(x.shape() == composed.shape()))
    throw std::invalid_argument("recon_nll: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(composed.shape()));
  const int64_t B = x.dim(0);
  const double per_elem_const = 0.5 * std::log(2.0 * M_PI) + std::log(sigma_x);
  const double n_per_sample = (double)x.numel() / (double)B;
  ad::Var<T> sq = ad::sum_all(ad::square(ad::sub(composed, x)));
  ad::Var<T> scaled = ad::scale(sq, (T)(1.0 / (2.0 * sigma_x * sigma_x * (double)B)));
  return ad::add_scalar(scaled, (T)(n_per_sample * per_elem_const));
}

// KL(q || p) for diagonal Gaussians, sum over dims, mean over batch.
template <typename T>
ad::Var<T> kl_diag(ad::Tape<T>& tp, const model::Gauss<T>& q, const model::Gauss<T>& p) {
  using namespace ad;
  const int64_t B = q.mean.dim(0);
  Var<T> ratio = log_(div(p.std, q.std));
  Var<T> num = add(square(q.std), square(sub(q.mean, p.mean)));
  Var<T> elem = add_scalar(add(ratio, div(num, scale(square(p.std), (T)2))), (T)-0.5);
  return scale(sum_all(elem), (T)(1.0 / (double)B));
}

// KL(q || N(0, I)) — same reduction.
template <typename T>
ad::Var<T> kl_std_normal(ad::Tape<T>& tp, const model::Gauss<T>& q) {
  using namespace ad;
  const int64_t B = q.mean.dim(0);
  Var<T> elem = add_scalar(
      add(neg(log_(q.std)), scale(add(square(q.std), square(q.mean)), (T)0.5)), (T)-0.5);
  return scale(sum_all(elem), (T)(1.0 / (double)B));
}

template <typename T>
struct LossTerms {
  ad::Var<T> recon_nll, kl_slots_hier, kl_global, kl_slots_aux, total;
};

struct LossValues {
  double recon_nll = 0, kl_slots_hier = 0, kl_global = 0, kl_slots_aux = 0, total = 0;
};

template <typename T>
LossTerms<T> total_loss(ad::Tape<T>& tp, const ad::Var<T>& x,
                        const typename model::Model<T>::ForwardOut& fw,
                        const ObjectiveConfig& oc) {
  LossTerms<T> lt;
  lt.recon_nll = recon_nll(tp, x, fw.scene.composed, oc.sigma_x);
  lt.kl_slots_hier = kl_diag(tp, fw.q_slots, fw.p_slots);
  lt.kl_global = kl_std_normal(tp, fw.q_g);
  lt.kl_slots_aux = kl_std_normal(tp, fw.q_slots);
  lt.total = ad::add(
      ad::add(lt.recon_nll, ad::scale(lt.kl_slots_hier, (T)oc.hier_weight)),
      ad::add(ad::scale(lt.kl_global, (T)oc.beta), ad::scale(lt.kl_slots_aux, (T)oc.aux_weight)));
  return lt;
}

template <typename T>
LossValues loss_values(const LossTerms<T>& lt) {
  LossValues v;
  v.recon_nll = (double)lt.recon_nll.val()[0];
  v.kl_slots_hier = (double)lt.kl_slots_hier.val()[0];
  v.kl_global = (double)lt.kl_global.val()[0];
  v.kl_slots_aux = (double)lt.kl_slots_aux.val()[0];
  v.total = (double)lt.total.val()[0];
  return v;
}

// Aborts with the name of the first non-finite term.
inline void check_finite(const LossValues& v, int64_t step) {
  auto bad = [&](double x, const char* name) {
    if (!std::isfinite(x))
      throw std::runtime_error("non-finite loss term '" + std::string(name) + "' at step " +
                               std::to_string(step) + " (value " + std::to_string(x) + ")");
  };
  bad(v.recon_nll, "recon_nll");
  bad(v.kl_slots_hier, "kl_slots_hier");
  bad(v.kl_global, "kl_global");
  bad(v.kl_slots_aux, "kl_slots_aux");
  bad(v.total, "total");
}

}  // namespace slotvae::objective
