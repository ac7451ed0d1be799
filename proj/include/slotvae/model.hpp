// The Slot-VAE model: CNN feature backbone, shared slot attention, posterior
// and prior heads, global auto-encoder, spatial-broadcast deconv decoder and
// pixel-mixture composition. Two paths: the posterior path encodes the image
// into slots; the prior path rebuilds a feature map from the global latent and
// runs the SAME slot attention with the SAME initialization noise, which is
// what aligns slot order between q(z^s|x) and p(z^s|z^g).
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slotvae/autodiff.hpp"
#include "slotvae/nn.hpp"
#include "slotvae/rng.hpp"
#include "slotvae/tensor.hpp"

namespace slotvae::model {

enum class PriorKind { slot_attention, mlp, transformer };

inline const char* prior_kind_name(PriorKind p) {
  switch (p) {
    case PriorKind::slot_attention: return "slot_attention";
    case PriorKind::mlp: return "mlp";
    case PriorKind::transformer: return "transformer";
  }
  return "?";
}

inline std::optional<PriorKind> prior_kind_from_name(const std::string& s) {
  if (s == "slot_attention") return PriorKind::slot_attention;
  if (s == "mlp") return PriorKind::mlp;
  if (s == "transformer") return PriorKind::transformer;
  return std::nullopt;
}

struct ModelConfig {
  int64_t image_size = 64;  // H = W
  int64_t channels = 3;
  int64_t K = 5;   // slots
  int64_t D = 64;  // slot dim = feature channels
  int64_t L = 32;  // global latent dim
  int64_t enc_hidden = 32;
  int64_t global_hidden = 512;
  int64_t fm_hidden = 32;   // feature-map builder deconv channels
  int64_t dec_hidden = 32;  // decoder deconv channels
  int64_t broadcast = 8;    // starting grid for decoder / feature-map builder
  int64_t sa_iterations = 3;
  double std_floor = 1e-4;

  // ablation variants
  PriorKind prior = PriorKind::slot_attention;
  bool share_sa_weights = true;  // false: independent slot-attention group on the prior path
  bool share_init = true;        // false: independent init noise per path
  int64_t mlp_prior_hidden = 256;
  int64_t tf_layers = 2, tf_heads = 4, tf_mem_tokens = 4;

  int64_t n_upsample() const {
    int64_t n = 0, d = broadcast;
    while (d < image_size) {
      d *= 2;
      ++n;
    }
    if (d != image_size)
      throw std::invalid_argument("ModelConfig: image_size must be broadcast * 2^n");
    return n;
  }
};

template <typename T>
struct Gauss {
  ad::Var<T> mean, std;
};

template <typename T>
struct Scene {
  ad::Var<T> components;  // [B, K, C, H, W], means in [0,1]
  ad::Var<T> masks;       // [B, K, 1, H, W], softmax over K
  ad::Var<T> composed;    // [B, C, H, W]
};

// k/q/v projections, GRU and the slot-init Gaussian; one instance is shared
// by both paths unless the no-weight-share ablation is active.
template <typename T>
struct SlotAttentionGroup {
  nn::Parameter<T> slot_mu, slot_logsigma;  // [1, D]
  nn::Linear<T> k, q, v;                    // D -> D, no bias
  nn::GRUCell<T> gru;

  SlotAttentionGroup() = default;
  SlotAttentionGroup(const std::string& name, int64_t D, Rng& rng) {
    slot_mu = nn::Parameter<T>(name + ".slot_mu", nn::xavier_uniform<T>(rng, {1, D}, 1, D));
    slot_logsigma =
        nn::Parameter<T>(name + ".slot_logsigma", nn::xavier_uniform<T>(rng, {1, D}, 1, D));
    k = nn::Linear<T>(name + ".k", D, D, rng, false);
    q = nn::Linear<T>(name + ".q", D, D, rng, false);
    v = nn::Linear<T>(name + ".v", D, D, rng, false);
    gru = nn::GRUCell<T>(name + ".gru", D, D, rng);
  }
  void collect(nn::ParamRefs<T>& out) {
    out.push_back(&slot_mu);
    out.push_back(&slot_logsigma);
    k.collect(out);
    q.collect(out);
    v.collect(out);
    gru.collect(out);
  }
};

// One pre-norm transformer cross-attention block (transformer-prior variant).
template <typename T>
struct TransformerBlock {
  nn::LayerNorm<T> ln1, ln2;
  nn::Linear<T> wq, wk, wv, wo, ff1, ff2;
  int64_t heads = 4;

  TransformerBlock() = default;
  TransformerBlock(const std::string& name, int64_t D, int64_t heads_, Rng& rng) : heads(heads_) {
    ln1 = nn::LayerNorm<T>(name + ".ln1", D, rng);
    ln2 = nn::LayerNorm<T>(name + ".ln2", D, rng);
    wq = nn::Linear<T>(name + ".wq", D, D, rng);
    wk = nn::Linear<T>(name + ".wk", D, D, rng);
    wv = nn::Linear<T>(name + ".wv", D, D, rng);
    wo = nn::Linear<T>(name + ".wo", D, D, rng);
    ff1 = nn::Linear<T>(name + ".ff1", D, 4 * D, rng);
    ff2 = nn::Linear<T>(name + ".ff2", 4 * D, D, rng);
  }

  // tokens: [B, K, D] queries; mem: [B, M, D] keys/values
  ad::Var<T> apply(ad::Tape<T>& tp, const ad::Var<T>& tokens, const ad::Var<T>& mem) {
    using namespace ad;
    const int64_t B = tokens.dim(0), K = tokens.dim(1), D = tokens.dim(2), M = mem.dim(1);
    const int64_t dh = D / heads;
    auto split_heads = [&](const Var<T>& x, int64_t n) {
      // [B, n, D] -> [B*H, n, dh]
      return reshape(swap_axes(reshape(x, {B, n, heads, dh}), 1, 2), {B * heads, n, dh});
    };
    Var<T> qn = ln1.apply(tp, tokens);
    Var<T> qh = split_heads(wq.apply(tp, qn), K);
    Var<T> kh = split_heads(wk.apply(tp, mem), M);
    Var<T> vh = split_heads(wv.apply(tp, mem), M);
    Var<T> scores = scale(bmm(qh, swap_axes(kh, 1, 2)), (T)(1.0 / std::sqrt((double)dh)));
    Var<T> attn = softmax(scores, 2);                      // [B*H, K, M]
    Var<T> ctx = bmm(attn, vh);                            // [B*H, K, dh]
    ctx = reshape(swap_axes(reshape(ctx, {B, heads, K, dh}), 1, 2), {B, K, D});
    Var<T> x = add(tokens, wo.apply(tp, ctx));
    Var<T> h = ln2.apply(tp, x);
    return add(x, ff2.apply(tp, relu(ff1.apply(tp, h))));
  }
  void collect(nn::ParamRefs<T>& out) {
    ln1.collect(out);
    ln2.collect(out);
    wq.collect(out);
    wk.collect(out);
    wv.collect(out);
    wo.collect(out);
    ff1.collect(out);
    ff2.collect(out);
  }
};

template <typename T>
struct Model {
  using Var = ad::Var<T>;
  using Tape = ad::Tape<T>;

  ModelConfig cfg;

  // encoder backbone + positional embedding (shared with build_feature_map)
  std::vector<nn::Conv2d<T>> enc;
  nn::PosEmbed<T> pos;
  SlotAttentionGroup<T> sa;
  std::optional<SlotAttentionGroup<T>> sa_prior;  // no_weight_share only
  nn::Linear<T> post1, post2;                     // posterior head
  nn::Linear<T> prior1, prior2;                   // prior head
  nn::Linear<T> glob1, glob2, glob3;              // global posterior MLP
  nn::Linear<T> fm_fc;                            // z_g -> broadcast grid
  std::vector<nn::Deconv2d<T>> fm_deconvs;
  nn::PosEmbed<T> dec_pos;  // decoder's own broadcast-grid embedding
  std::vector<nn::Deconv2d<T>> dec_deconvs;
  // mlp-prior variant
  nn::Linear<T> mlp_prior1, mlp_prior2;
  // transformer-prior variant
  nn::Linear<T> tf_mem;
  std::vector<TransformerBlock<T>> tf_blocks;

  Model() = default;

  Model(ModelConfig c, uint64_t seed) : cfg(c) {
    Rng rng(seed);
    const int64_t n_up = cfg.n_upsample();
    const int64_t N = cfg.image_size * cfg.image_size;

    std::vector<int64_t> ch = {cfg.channels, cfg.enc_hidden, cfg.enc_hidden, cfg.enc_hidden,
                               cfg.D};
    for (int i = 0; i < 4; ++i)
      enc.emplace_back("enc" + std::to_string(i + 1), ch[i], ch[i + 1], 5, 1, 2, rng);
    pos = nn::PosEmbed<T>("pos", cfg.D, rng);
    sa = SlotAttentionGroup<T>("sa", cfg.D, rng);
    post1 = nn::Linear<T>("post1", cfg.D, cfg.D, rng);
    post2 = nn::Linear<T>("post2", cfg.D, 2 * cfg.D, rng);
    prior1 = nn::Linear<T>("prior1", cfg.D, cfg.D, rng);
    prior2 = nn::Linear<T>("prior2", cfg.D, 2 * cfg.D, rng);
    glob1 = nn::Linear<T>("glob1", N * cfg.D, cfg.global_hidden, rng);
    glob2 = nn::Linear<T>("glob2", cfg.global_hidden, cfg.global_hidden, rng);
    glob3 = nn::Linear<T>("glob3", cfg.global_hidden, 2 * cfg.L, rng);
    fm_fc = nn::Linear<T>("fm_fc", cfg.L, cfg.broadcast * cfg.broadcast * cfg.fm_hidden, rng);
    for (int64_t i = 0; i < n_up; ++i) {
      const int64_t cin = cfg.fm_hidden;
      const int64_t cout = (i == n_up - 1) ? cfg.D : cfg.fm_hidden;
      fm_deconvs.emplace_back("fm_deconv" + std::to_string(i + 1), cin, cout, 5, 2, 2, 1, rng);
    }
    dec_pos = nn::PosEmbed<T>("dec_pos", cfg.D, rng);
    for (int64_t i = 0; i < n_up; ++i) {
      const int64_t cin = (i == 0) ? cfg.D : cfg.dec_hidden;
      const int64_t cout = (i == n_up - 1) ? cfg.channels + 1 : cfg.dec_hidden;
      dec_deconvs.emplace_back("dec_deconv" + std::to_string(i + 1), cin, cout, 5, 2, 2, 1, rng);
    }
    if (!cfg.share_sa_weights) sa_prior.emplace("sa_prior", cfg.D, rng);
    if (cfg.prior == PriorKind::mlp) {
      mlp_prior1 = nn::Linear<T>("mlp_prior1", cfg.L, cfg.mlp_prior_hidden, rng);
      mlp_prior2 = nn::Linear<T>("mlp_prior2", cfg.mlp_prior_hidden, cfg.K * cfg.D, rng);
    }
    if (cfg.prior == PriorKind::transformer) {
      tf_mem = nn::Linear<T>("tf_mem", cfg.L, cfg.tf_mem_tokens * cfg.D, rng);
      for (int64_t i = 0; i < cfg.tf_layers; ++i)
        tf_blocks.emplace_back(TransformerBlock<T>("tf_l" + std::to_string(i), cfg.D,
                                                   cfg.tf_heads, rng));
    }
  }

  nn::ParamRefs<T> parameters() {
    nn::ParamRefs<T> out;
    for (auto& c : enc) c.collect(out);
    pos.collect(out);
    sa.collect(out);
    post1.collect(out);
    post2.collect(out);
    prior1.collect(out);
    prior2.collect(out);
    glob1.collect(out);
    glob2.collect(out);
    glob3.collect(out);
    fm_fc.collect(out);
    for (auto& d : fm_deconvs) d.collect(out);
    dec_pos.collect(out);
    for (auto& d : dec_deconvs) d.collect(out);
    if (sa_prior) sa_prior->collect(out);
    if (cfg.prior == PriorKind::mlp) {
      mlp_prior1.collect(out);
      mlp_prior2.collect(out);
    }
    if (cfg.prior == PriorKind::transformer) {
      tf_mem.collect(out);
      for (auto& b : tf_blocks) b.collect(out);
    }
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto* p : parameters()) n += p->numel();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  // ---------- forward pieces ----------

  // x: [B, C, H, W] in [0,1] -> features [B, N, D] with positional embedding.
  Var encode_features(Tape& tp, const Var& x) {
    const int64_t H = cfg.image_size;
    if (x.shape().size() != 4 || x.dim(1) != cfg.channels || x.dim(2) != H || x.dim(3) != H)
      throw std::invalid_argument("encode_features: expected [B," + std::to_string(cfg.channels) +
                                  "," + std::to_string(H) + "," + std::to_string(H) + "], got " +
                                  shape_str(x.shape()));
    const int64_t B = x.dim(0);
    Var h = x;
    for (size_t i = 0; i < enc.size(); ++i) {
      h = enc[i].apply(tp, h);
      if (i + 1 < enc.size()) h = ad::relu(h);
    }
    // [B, D, H, W] -> [B, N, D], then add the positional embedding
    Var f = ad::swap_axes(ad::reshape(h, {B, cfg.D, H * H}), 1, 2);
    return pos.apply(tp, f, H, H);
  }

  // Draws init noise eps [B, K, D] from rng (recorded by the caller).
  Tensor<T> draw_noise(Rng& rng, Shape shape) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = (T)rng.normal();
    return t;
  }

  // init = mu_init + exp(logsigma_init) * eps
  Var slot_init_from_noise(Tape& tp, const Tensor<T>& eps, bool prior_group = false) {
    SlotAttentionGroup<T>& g = (prior_group && sa_prior) ? *sa_prior : sa;
    Var mu = nn::pleaf(tp, g.slot_mu);
    Var sig = ad::exp_(nn::pleaf(tp, g.slot_logsigma));
    return ad::add(ad::mul(tp.leaf(eps), sig), mu);
  }

  // f: [B, N, D]; init: [B, K, D]. Exactly cfg.sa_iterations of the update
  // rule; no layer norms — the attention sequence is pinned.
  Var slot_attention(Tape& tp, const Var& f, const Var& init, bool prior_group = false) {
    SlotAttentionGroup<T>& g = (prior_group && sa_prior) ? *sa_prior : sa;
    const int64_t B = f.dim(0), K = init.dim(1), D = cfg.D;
    Var kf = g.k.apply(tp, f);  // [B, N, D]
    Var vf = g.v.apply(tp, f);
    Var slots = init;
    const T inv_sqrt_d = (T)(1.0 / std::sqrt((double)D));
    for (int64_t it = 0; it < cfg.sa_iterations; ++it) {
      Var qs = g.q.apply(tp, slots);                                    // [B, K, D]
      Var M = ad::scale(ad::bmm(kf, ad::swap_axes(qs, 1, 2)), inv_sqrt_d);  // [B, N, K]
      Var attn = ad::softmax(M, 2);  // over slots, per feature
      if (!all_finite(attn.val()))
        throw std::runtime_error("slot_attention: non-finite attention weights");
      Var colsum = ad::sum_axis(attn, 1, true);       // [B, 1, K]
      Var W = ad::div(attn, colsum);                  // weighted-mean weights
      Var updates = ad::bmm(ad::swap_axes(W, 1, 2), vf);  // [B, K, D]
      Var h = sa_gru(tp, g, ad::reshape(updates, {B * K, D}), ad::reshape(slots, {B * K, D}));
      slots = ad::reshape(h, {B, K, D});
    }
    return slots;
  }

  Var sa_gru(Tape& tp, SlotAttentionGroup<T>& g, const Var& x, const Var& h) {
    return g.gru.apply(tp, x, h);
  }

  // Two-layer shared-per-slot MLP head -> diagonal Gaussian over z^s.
  Gauss<T> slot_posterior_head(Tape& tp, const Var& slots) { return head(tp, slots, post1, post2); }
  Gauss<T> slot_prior_head(Tape& tp, const Var& slots) { return head(tp, slots, prior1, prior2); }

  Gauss<T> head(Tape& tp, const Var& slots, nn::Linear<T>& l1, nn::Linear<T>& l2) {
    const int64_t B = slots.dim(0), K = slots.dim(1), D = cfg.D;
    Var h = ad::relu(l1.apply(tp, ad::reshape(slots, {B * K, D})));
    Var o = l2.apply(tp, h);  // [B*K, 2D]
    Var mean = ad::reshape(ad::slice(o, 1, 0, D), {B, K, D});
    Var std = ad::add_scalar(ad::softplus(ad::reshape(ad::slice(o, 1, D, D), {B, K, D})),
                             (T)cfg.std_floor);
    return {mean, std};
  }

  // Flatten features, 3-layer MLP -> q(z^g | x) with L dims.
  Gauss<T> global_posterior(Tape& tp, const Var& f) {
    const int64_t B = f.dim(0);
    Var h = ad::reshape(f, {B, f.dim(1) * f.dim(2)});
    h = ad::relu(glob1.apply(tp, h));
    h = ad::relu(glob2.apply(tp, h));
    Var o = glob3.apply(tp, h);  // [B, 2L]
    Var mean = ad::slice(o, 1, 0, cfg.L);
    Var std = ad::add_scalar(ad::softplus(ad::slice(o, 1, cfg.L, cfg.L)), (T)cfg.std_floor);
    return {mean, std};
  }

  // Standard-Normal global prior (pluggable point for richer priors).
  Gauss<T> global_prior(Tape& tp, int64_t B) {
    return {tp.leaf(Tensor<T>({B, cfg.L})), tp.leaf(Tensor<T>::full({B, cfg.L}, T(1)))};
  }

  // z_g: [B, L] -> feature map [B, N, D] via broadcast-grid deconvs, with the
  // SAME positional-embedding parameters the encoder uses.
  Var build_feature_map(Tape& tp, const Var& z_g) {
    const int64_t B = z_g.dim(0), g = cfg.broadcast, H = cfg.image_size;
    Var h = ad::reshape(fm_fc.apply(tp, z_g), {B, cfg.fm_hidden, g, g});
    for (size_t i = 0; i < fm_deconvs.size(); ++i) {
      h = ad::relu(h);
      h = fm_deconvs[i].apply(tp, h);
    }
    Var f = ad::swap_axes(ad::reshape(h, {B, cfg.D, H * H}), 1, 2);
    return pos.apply(tp, f, H, H);
  }

  // Per-slot spatial-broadcast decoder; channels = C component means (after a
  // logistic squashing into [0,1]) + 1 mask logit, masks softmaxed over K.
  Scene<T> decode_components(Tape& tp, const Var& z_slots) {
    const int64_t B = z_slots.dim(0), K = z_slots.dim(1), D = cfg.D;
    const int64_t g = cfg.broadcast, H = cfg.image_size, C = cfg.channels;
    Var h = ad::broadcast_spatial(ad::reshape(z_slots, {B * K, D}), g, g);  // [B*K, D, g, g]
    // decoder positional embedding on the broadcast grid, in channel-first form
    Var emb = dec_pos.proj.apply(tp, tp.leaf(nn::PosEmbed<T>::grid(g, g)));  // [g*g, D]
    h = ad::add(h, ad::reshape(ad::swap_axes(emb, 0, 1), {D, g, g}));
    for (size_t i = 0; i < dec_deconvs.size(); ++i) {
      if (i > 0) h = ad::relu(h);
      h = dec_deconvs[i].apply(tp, h);
    }
    // h: [B*K, C+1, H, W]
    Var comps = ad::sigmoid(ad::reshape(ad::slice(h, 1, 0, C), {B, K, C, H, H}));
    Var mask_logits = ad::reshape(ad::slice(h, 1, C, 1), {B, K, 1, H, H});
    Var masks = ad::softmax(mask_logits, 1);  // over slots, per pixel
    Var composed = ad::sum_axis(ad::mul(masks, comps), 1, false);  // [B, C, H, W]
    if (!all_finite(composed.val()))
      throw std::runtime_error("decode_components: non-finite output");
    return {comps, masks, composed};
  }

  Var reparameterize(Tape& tp, const Gauss<T>& d, const Tensor<T>& eps) {
    return ad::add(ad::mul(d.std, tp.leaf(eps)), d.mean);
  }

  // Prior-path slots from z_g under the active variant. init is [B, K, D]
  // (ignored by the mlp variant, which has a fixed output order).
  Var prior_slots(Tape& tp, const Var& z_g, const Var& init) {
    const int64_t B = z_g.dim(0);
    switch (cfg.prior) {
      case PriorKind::slot_attention: {
        Var f = build_feature_map(tp, z_g);
        return slot_attention(tp, f, init, /*prior_group=*/true);
      }
      case PriorKind::mlp: {
        Var h = ad::relu(mlp_prior1.apply(tp, z_g));
        return ad::reshape(mlp_prior2.apply(tp, h), {B, cfg.K, cfg.D});
      }
      case PriorKind::transformer: {
        Var mem = ad::reshape(tf_mem.apply(tp, z_g), {B, cfg.tf_mem_tokens, cfg.D});
        Var tokens = init;
        for (auto& blk : tf_blocks) tokens = blk.apply(tp, tokens, mem);
        return tokens;
      }
    }
    throw std::logic_error("prior_slots: unknown prior kind");
  }

  struct ForwardOut {
    Gauss<T> q_g, q_slots, p_slots;
    Var z_g, z_slots;
    Scene<T> scene;
    Var slots_post, slots_prior;          // final slots of each path (diagnostics)
    Tensor<T> init_noise, init_noise_prior;  // equal tensors when share_init
  };

  // Fixed rng consumption order: slot-init noise, global noise, slot-sample
  // noise, then (only if the variant needs it) a fresh prior-path init noise.
  ForwardOut forward_train(Tape& tp, const Tensor<T>& x, Rng& rng) {
    const int64_t B = x.dim(0), K = cfg.K, D = cfg.D;
    ForwardOut out;
    out.init_noise = draw_noise(rng, {B, K, D});
    Tensor<T> eps_g = draw_noise(rng, {B, (int64_t)cfg.L});
    Tensor<T> eps_s = draw_noise(rng, {B, K, D});
    out.init_noise_prior =
        cfg.share_init ? out.init_noise : draw_noise(rng, {B, K, D});

    Var xv = tp.leaf(x);
    Var f_x = encode_features(tp, xv);

    // posterior path
    Var init_post = slot_init_from_noise(tp, out.init_noise, false);
    out.slots_post = slot_attention(tp, f_x, init_post, false);
    out.q_slots = slot_posterior_head(tp, out.slots_post);
    out.z_slots = reparameterize(tp, out.q_slots, eps_s);

    // prior path
    out.q_g = global_posterior(tp, f_x);
    out.z_g = reparameterize(tp, out.q_g, eps_g);
    Var init_prior = slot_init_from_noise(tp, out.init_noise_prior, !cfg.share_sa_weights);
    out.slots_prior = prior_slots(tp, out.z_g, init_prior);
    out.p_slots = slot_prior_head(tp, out.slots_prior);

    out.scene = decode_components(tp, out.z_slots);
    return out;
  }

  struct Generated {
    Tensor<T> components;  // [B, K, C, H, W]
    Tensor<T> masks;       // [B, K, 1, H, W]
    Tensor<T> composed;    // [B, C, H, W]
    Tensor<T> z_g, z_slots;
  };

  // Ancestral sampling: z_g ~ N(0, I), slots via the prior path with a fresh
  // init, z^s ~ p(z^s | z_g), decode. Returns materialized tensors; no
  // gradients are needed, so the tape is internal.
  Generated generate_scene(Rng& rng, int64_t B) {
    Tape tp;
    Generated g;
    Tensor<T> eps_init = draw_noise(rng, {B, cfg.K, cfg.D});
    Tensor<T> zg = draw_noise(rng, {B, cfg.L});
    Tensor<T> eps_s = draw_noise(rng, {B, cfg.K, cfg.D});
    Var z_g = tp.leaf(zg);
    Var init = slot_init_from_noise(tp, eps_init, !cfg.share_sa_weights);
    Var slots = prior_slots(tp, z_g, init);
    Gauss<T> p = slot_prior_head(tp, slots);
    Var z_slots = reparameterize(tp, p, eps_s);
    Scene<T> sc = decode_components(tp, z_slots);
    g.components = sc.components.val().clone();
    g.masks = sc.masks.val().clone();
    g.composed = sc.composed.val().clone();
    g.z_g = zg;
    g.z_slots = z_slots.val().clone();
    return g;
  }

  // Deterministic reconstruction: posterior path, decode the posterior MEAN
  // (no sampling; the slot init noise comes from the given seed).
  Scene<T> reconstruct(Tape& tp, const Tensor<T>& x, uint64_t init_seed = 1) {
    Rng rng(init_seed);
    Tensor<T> eps = draw_noise(rng, {x.dim(0), cfg.K, cfg.D});
    Var f = encode_features(tp, tp.leaf(x));
    Var slots = slot_attention(tp, f, slot_init_from_noise(tp, eps, false), false);
    Gauss<T> q = slot_posterior_head(tp, slots);
    return decode_components(tp, q.mean);
  }

  // Posterior-mean inference for one image -> (slots mean, per-value decodes
  // with coordinate (slot_index, dim) replaced).
  std::vector<Tensor<T>> traverse_latent(const Tensor<T>& x, int64_t slot_index, int64_t dim,
                                         const std::vector<T>& values, uint64_t init_seed = 1) {
    if (slot_index < 0 || slot_index >= cfg.K) throw std::invalid_argument("traverse: bad slot");
    if (dim < 0 || dim >= cfg.D) throw std::invalid_argument("traverse: bad dim");
    Tensor<T> z_mean;
    {
      Tape tp;
      Rng rng(init_seed);
      Tensor<T> eps = draw_noise(rng, {x.dim(0), cfg.K, cfg.D});
      Var f = encode_features(tp, tp.leaf(x));
      Var slots = slot_attention(tp, f, slot_init_from_noise(tp, eps, false), false);
      z_mean = slot_posterior_head(tp, slots).mean.val().clone();
    }
    std::vector<Tensor<T>> frames;
    for (T v : values) {
      Tensor<T> z = z_mean.clone();
      z[(0 * cfg.K + slot_index) * cfg.D + dim] = v;
      Tape tp;
      frames.push_back(decode_components(tp, tp.leaf(z)).composed.val().clone());
    }
    return frames;
  }
};

}  // namespace slotvae::model
