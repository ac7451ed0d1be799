// Model-variant factory: one name per ablation, applied as config deltas on a
// base configuration so every variant trains and evaluates through the same
// interfaces.
//
//   full              -- slot-attention prior, shared weights, shared init
//   mlp_prior         -- MLP maps z_g directly to K x D slots (fixed order)
//   transformer_prior -- cross-attention from shared init tokens onto z_g
//   no_weight_share   -- second slot-attention parameter group on the prior
//                        path, fresh independent init noise
//   no_init_share     -- shared weights, independent init noise per path
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "slotvae/model.hpp"

namespace slotvae::ablations {

inline const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names = {"full", "mlp_prior", "transformer_prior",
                                                 "no_weight_share", "no_init_share"};
  return names;
}

// Applies the named variant's deltas to `base`; throws std::invalid_argument
// on an unknown name.
inline model::ModelConfig apply_variant(const std::string& name, model::ModelConfig base) {
  base.prior = model::PriorKind::slot_attention;
  base.share_sa_weights = true;
  base.share_init = true;
  if (name == "full") {
    // base defaults
  } else if (name == "mlp_prior") {
    base.prior = model::PriorKind::mlp;
  } else if (name == "transformer_prior") {
    base.prior = model::PriorKind::transformer;
  } else if (name == "no_weight_share") {
    base.share_sa_weights = false;
    base.share_init = false;
  } else if (name == "no_init_share") {
    base.share_init = false;
  } else {
    std::string known;
    for (const auto& n : variant_names()) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown variant '" + name + "' (known: " + known + ")");
  }
  return base;
}

// Reverse lookup for reporting: the variant a config corresponds to.
inline std::string variant_of(const model::ModelConfig& cfg) {
  if (cfg.prior == model::PriorKind::mlp) return "mlp_prior";
  if (cfg.prior == model::PriorKind::transformer) return "transformer_prior";
  if (!cfg.share_sa_weights) return "no_weight_share";
  if (!cfg.share_init) return "no_init_share";
  return "full";
}

}  // namespace slotvae::ablations
