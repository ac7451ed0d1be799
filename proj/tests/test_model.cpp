#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "gradcheck.hpp"
#include "slotvae/checkpoint.hpp"
#include "slotvae/model.hpp"
#include "slotvae/objective.hpp"

using namespace slotvae;
using model::Model;
using model::ModelConfig;
using model::PriorKind;

namespace {

ModelConfig tiny_cfg() {
  ModelConfig c;
  c.image_size = 16;
  c.channels = 3;
  c.K = 2;
  c.D = 8;
  c.L = 4;
  c.enc_hidden = 4;
  c.global_hidden = 16;
  c.fm_hidden = 6;
  c.dec_hidden = 6;
  c.broadcast = 8;
  c.mlp_prior_hidden = 12;
  c.tf_mem_tokens = 2;
  return c;
}

template <typename T>
Tensor<T> random_image(Rng& rng, int64_t B, int64_t C, int64_t H) {
  Tensor<T> x({B, C, H, H});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = (T)rng.uniform();
  return x;
}

}  // namespace

TEST_CASE("upsample count follows image size") {
  ModelConfig c = tiny_cfg();
  c.image_size = 16;
  CHECK(c.n_upsample() == 1);
  c.image_size = 32;
  CHECK(c.n_upsample() == 2);
  c.image_size = 64;
  CHECK(c.n_upsample() == 3);
  c.image_size = 48;
  CHECK_THROWS_AS(c.n_upsample(), std::invalid_argument);
}

TEST_CASE("a 64x64 image maps to 4096 spatial features of width 64") {
  ModelConfig c;  // spec-sized encoder: hidden 32, feature width 64
  c.global_hidden = 8;  // keep the (unused here) global head small
  Model<float> m(c, 1);
  Rng rng(2);
  Tensor<float> x = random_image<float>(rng, 1, 3, 64);
  ad::Tape<float> tp;
  ad::Var<float> f = m.encode_features(tp, tp.leaf(x));
  CHECK(f.shape() == Shape{1, 4096, 64});
  CHECK(all_finite(f.val()));
  CHECK_THROWS_AS(m.encode_features(tp, tp.leaf(Tensor<float>({1, 3, 32, 32}))),
                  std::invalid_argument);
}

TEST_CASE("forward_train produces coherent shapes, simplex masks and floored stds") {
  ModelConfig c = tiny_cfg();
  Model<float> m(c, 3);
  Rng data_rng(4);
  Tensor<float> x = random_image<float>(data_rng, 2, 3, 16);
  ad::Tape<float> tp;
  Rng step_rng(5);
  auto fw = m.forward_train(tp, x, step_rng);

  CHECK(fw.slots_post.shape() == Shape{2, 2, 8});
  CHECK(fw.slots_prior.shape() == Shape{2, 2, 8});
  CHECK(fw.q_slots.mean.shape() == Shape{2, 2, 8});
  CHECK(fw.p_slots.std.shape() == Shape{2, 2, 8});
  CHECK(fw.q_g.mean.shape() == Shape{2, 4});
  CHECK(fw.z_g.shape() == Shape{2, 4});
  CHECK(fw.z_slots.shape() == Shape{2, 2, 8});
  CHECK(fw.scene.components.shape() == Shape{2, 2, 3, 16, 16});
  CHECK(fw.scene.masks.shape() == Shape{2, 2, 1, 16, 16});
  CHECK(fw.scene.composed.shape() == Shape{2, 3, 16, 16});

  const auto& masks = fw.scene.masks.val();
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t p = 0; p < 16 * 16; ++p) {
      double s = 0;
      for (int64_t k = 0; k < 2; ++k) {
        float v = masks[(b * 2 + k) * 256 + p];
        CHECK(v >= 0.0f);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
  for (int64_t i = 0; i < fw.scene.composed.numel(); ++i) {
    CHECK(fw.scene.composed.val()[i] >= 0.0f);
    CHECK(fw.scene.composed.val()[i] <= 1.0f);
  }
  for (int64_t i = 0; i < fw.q_slots.std.numel(); ++i)
    CHECK(fw.q_slots.std.val()[i] >= (float)c.std_floor);
  for (int64_t i = 0; i < fw.q_g.std.numel(); ++i)
    CHECK(fw.q_g.std.val()[i] >= (float)c.std_floor);
}

TEST_CASE("construction and forward are deterministic in the seeds") {
  ModelConfig c = tiny_cfg();
  Model<float> a(c, 11), b(c, 11), other(c, 12);
  auto pa = a.parameters(), pb = b.parameters(), po = other.parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal = true, any_diff_other = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pb[i]->name);
    if (max_abs_diff(pa[i]->value, pb[i]->value) != 0.0) all_equal = false;
    if (max_abs_diff(pa[i]->value, po[i]->value) != 0.0) any_diff_other = true;
  }
  CHECK(all_equal);
  CHECK(any_diff_other);

  Rng data_rng(13);
  Tensor<float> x = random_image<float>(data_rng, 2, 3, 16);
  auto run = [&](Model<float>& m, uint64_t s) {
    ad::Tape<float> tp;
    Rng rng(s);
    return m.forward_train(tp, x, rng).scene.composed.val().clone();
  };
  CHECK(max_abs_diff(run(a, 7), run(b, 7)) == 0.0);
  CHECK(max_abs_diff(run(a, 7), run(a, 8)) > 0.0);
}

TEST_CASE("slot attention and the heads are permutation-equivariant; composition is invariant") {
  ModelConfig c = tiny_cfg();
  c.K = 3;
  Model<double> m(c, 21);
  const int64_t B = 2, K = 3, D = c.D, N = 16 * 16;
  Rng rng(22);
  Tensor<double> f({B, N, D}), init({B, K, D});
  for (int64_t i = 0; i < f.numel(); ++i) f[i] = rng.normal();
  for (int64_t i = 0; i < init.numel(); ++i) init[i] = rng.normal();
  const int perm[3] = {2, 0, 1};
  Tensor<double> init_p({B, K, D});
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < K; ++k)
      for (int64_t d = 0; d < D; ++d)
        init_p[(b * K + k) * D + d] = init[(b * K + perm[k]) * D + d];

  ad::Tape<double> tp;
  ad::Var<double> slots = m.slot_attention(tp, tp.leaf(f), tp.leaf(init));
  ad::Var<double> slots_p = m.slot_attention(tp, tp.leaf(f), tp.leaf(init_p));
  double worst = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < K; ++k)
      for (int64_t d = 0; d < D; ++d)
        worst = std::max(worst, std::abs(slots_p.val()[(b * K + k) * D + d] -
                                         slots.val()[(b * K + perm[k]) * D + d]));
  CHECK(worst < 1e-12);

  auto q = m.slot_posterior_head(tp, slots);
  auto q_p = m.slot_posterior_head(tp, slots_p);
  auto p = m.slot_prior_head(tp, slots);
  auto p_p = m.slot_prior_head(tp, slots_p);
  worst = 0;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < K; ++k)
      for (int64_t d = 0; d < D; ++d) {
        const int64_t ip = (b * K + k) * D + d, io = (b * K + perm[k]) * D + d;
        worst = std::max(worst, std::abs(q_p.mean.val()[ip] - q.mean.val()[io]));
        worst = std::max(worst, std::abs(q_p.std.val()[ip] - q.std.val()[io]));
        worst = std::max(worst, std::abs(p_p.mean.val()[ip] - p.mean.val()[io]));
        worst = std::max(worst, std::abs(p_p.std.val()[ip] - p.std.val()[io]));
      }
  CHECK(worst < 1e-12);

  // decoding a permuted z permutes components but leaves the composition fixed
  Tensor<double> z({B, K, D}), z_p({B, K, D});
  for (int64_t i = 0; i < z.numel(); ++i) z[i] = rng.normal();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < K; ++k)
      for (int64_t d = 0; d < D; ++d) z_p[(b * K + k) * D + d] = z[(b * K + perm[k]) * D + d];
  auto sc = m.decode_components(tp, tp.leaf(z));
  auto sc_p = m.decode_components(tp, tp.leaf(z_p));
  CHECK(max_abs_diff(sc.composed.val(), sc_p.composed.val()) < 1e-12);
  worst = 0;
  const int64_t px = c.channels * 16 * 16;
  for (int64_t b = 0; b < B; ++b)
    for (int64_t k = 0; k < K; ++k)
      for (int64_t i = 0; i < px; ++i)
        worst = std::max(worst, std::abs(sc_p.components.val()[(b * K + k) * px + i] -
                                         sc.components.val()[(b * K + perm[k]) * px + i]));
  CHECK(worst < 1e-12);
}

TEST_CASE("single-slot single-iteration attention matches a dense hand computation") {
  ModelConfig c = tiny_cfg();
  c.K = 1;
  c.sa_iterations = 1;
  Model<double> m(c, 31);
  const int64_t B = 1, N = 40, D = c.D;
  Rng rng(32);
  Tensor<double> f({B, N, D}), init({B, 1, D});
  for (int64_t i = 0; i < f.numel(); ++i) f[i] = rng.normal();
  for (int64_t i = 0; i < init.numel(); ++i) init[i] = rng.normal();

  // With a single slot the attention softmax is identically one, so the
  // column-normalized weights are 1/N and the update is the mean of v(f).
  const auto& wv = m.sa.v.w.value;  // [D, D]
  std::vector<double> update(D, 0.0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < D; ++o) {
      double acc = 0;
      for (int64_t i = 0; i < D; ++i) acc += wv[o * D + i] * f[n * D + i];
      update[o] += acc / (double)N;
    }
  // GRU cell: gates ordered r, z, n.
  const auto& wx = m.sa.gru.wx.value;  // [3D, D]
  const auto& bx = m.sa.gru.bx.value;
  const auto& wh = m.sa.gru.wh.value;
  const auto& bh = m.sa.gru.bh.value;
  auto mat = [&](const Tensor<double>& w, const Tensor<double>& b, const double* in, int64_t row) {
    double acc = b[row];
    for (int64_t i = 0; i < D; ++i) acc += w[row * D + i] * in[i];
    return acc;
  };
  std::vector<double> expect(D);
  for (int64_t d = 0; d < D; ++d) {
    const double gx_r = mat(wx, bx, update.data(), d);
    const double gx_z = mat(wx, bx, update.data(), D + d);
    const double gx_n = mat(wx, bx, update.data(), 2 * D + d);
    const double gh_r = mat(wh, bh, init.data(), d);
    const double gh_z = mat(wh, bh, init.data(), D + d);
    const double gh_n = mat(wh, bh, init.data(), 2 * D + d);
    const double r = 1.0 / (1.0 + std::exp(-(gx_r + gh_r)));
    const double zg = 1.0 / (1.0 + std::exp(-(gx_z + gh_z)));
    const double n = std::tanh(gx_n + r * gh_n);
    expect[d] = (1.0 - zg) * n + zg * init[d];
  }

  ad::Tape<double> tp;
  ad::Var<double> slots = m.slot_attention(tp, tp.leaf(f), tp.leaf(init));
  for (int64_t d = 0; d < D; ++d)
    CHECK(slots.val()[d] == doctest::Approx(expect[d]).epsilon(1e-10));
}

TEST_CASE("slot init draws match the learned Gaussian moments") {
  ModelConfig c = tiny_cfg();
  Model<double> m(c, 41);
  const int64_t D = c.D, n = 100000;
  // exact identity on a known noise tensor
  {
    ad::Tape<double> tp;
    Tensor<double> eps({1, c.K, D});
    Rng rng(42);
    for (int64_t i = 0; i < eps.numel(); ++i) eps[i] = rng.normal();
    auto init = m.slot_init_from_noise(tp, eps);
    for (int64_t k = 0; k < c.K; ++k)
      for (int64_t d = 0; d < D; ++d) {
        double want = m.sa.slot_mu.value[d] + std::exp(m.sa.slot_logsigma.value[d]) * eps[k * D + d];
        CHECK(init.val()[k * D + d] == doctest::Approx(want).epsilon(1e-12));
      }
  }
  // Monte-Carlo moments over 1e5 draws, within three standard errors
  Rng rng(43);
  std::vector<double> sum(D, 0), sum2(D, 0);
  for (int64_t t = 0; t < n; ++t) {
    ad::Tape<double> tp;
    Tensor<double> eps = m.draw_noise(rng, {1, 1, D});
    auto init = m.slot_init_from_noise(tp, eps);
    for (int64_t d = 0; d < D; ++d) {
      sum[d] += init.val()[d];
      sum2[d] += init.val()[d] * init.val()[d];
    }
  }
  for (int64_t d = 0; d < D; ++d) {
    const double mu = m.sa.slot_mu.value[d];
    const double sigma = std::exp(m.sa.slot_logsigma.value[d]);
    const double emp_mean = sum[d] / n;
    const double emp_std = std::sqrt(sum2[d] / n - emp_mean * emp_mean);
    CHECK(std::abs(emp_mean - mu) <= 3.0 * sigma / std::sqrt((double)n));
    CHECK(std::abs(emp_std - sigma) <= 3.0 * sigma / std::sqrt(2.0 * n));
  }
}

TEST_CASE("reparameterize is mean + std * eps") {
  ModelConfig c = tiny_cfg();
  Model<double> m(c, 51);
  ad::Tape<double> tp;
  Rng rng(52);
  Tensor<double> mean({2, 3}), std_({2, 3}), eps({2, 3});
  for (int64_t i = 0; i < 6; ++i) {
    mean[i] = rng.normal();
    std_[i] = 0.1 + rng.uniform();
    eps[i] = rng.normal();
  }
  model::Gauss<double> g{tp.leaf(mean), tp.leaf(std_)};
  auto z = m.reparameterize(tp, g, eps);
  for (int64_t i = 0; i < 6; ++i)
    CHECK(z.val()[i] == doctest::Approx(mean[i] + std_[i] * eps[i]).epsilon(1e-14));
}

TEST_CASE("shared attention weights steer both paths; split groups are independent") {
  ModelConfig c = tiny_cfg();
  Rng data_rng(61);
  Tensor<double> x = random_image<double>(data_rng, 1, 3, 16);
  auto prior_slots_of = [&](Model<double>& m) {
    ad::Tape<double> tp;
    Rng rng(62);
    return m.forward_train(tp, x, rng).slots_prior.val().clone();
  };

  Model<double> shared(c, 63);
  Tensor<double> base = prior_slots_of(shared);
  shared.sa.q.w.value[0] += 0.05;
  CHECK(max_abs_diff(prior_slots_of(shared), base) > 0.0);

  ModelConfig c2 = c;
  c2.share_sa_weights = false;  // keep share_init so the comparison is exact
  Model<double> split(c2, 63);
  Tensor<double> base2 = prior_slots_of(split);
  split.sa.q.w.value[0] += 0.05;  // posterior-path group only
  CHECK(max_abs_diff(prior_slots_of(split), base2) == 0.0);
  split.sa.q.w.value[0] -= 0.05;
  split.sa_prior->q.w.value[0] += 0.05;
  CHECK(max_abs_diff(prior_slots_of(split), base2) > 0.0);
}

TEST_CASE("the shared group accumulates gradient from both paths") {
  // A split model with the prior group overwritten by the shared weights
  // computes the identical function, so the shared-model gradient must equal
  // the sum of the two split-group gradients — and differ from either alone.
  ModelConfig c = tiny_cfg();
  Model<double> shared(c, 71);
  ModelConfig c2 = c;
  c2.share_sa_weights = false;
  Model<double> split(c2, 71);
  // overwrite sa_prior with sa so both models compute the same function
  nn::ParamRefs<double> from, to;
  split.sa.collect(from);
  split.sa_prior->collect(to);
  for (size_t i = 0; i < from.size(); ++i)
    std::copy(from[i]->value.data(), from[i]->value.data() + from[i]->value.numel(),
              to[i]->value.data());

  Rng data_rng(72);
  Tensor<double> x = random_image<double>(data_rng, 2, 3, 16);
  objective::ObjectiveConfig oc;
  auto run = [&](Model<double>& m) {
    m.zero_grad();
    ad::Tape<double> tp;
    Rng rng(73);
    auto fw = m.forward_train(tp, x, rng);
    auto lt = objective::total_loss(tp, tp.leaf(x), fw, oc);
    tp.backward(lt.kl_slots_hier);
    return lt.kl_slots_hier.val()[0];
  };
  const double v_shared = run(shared);
  const double v_split = run(split);
  CHECK(v_shared == v_split);  // identical function by construction

  double worst = 0, norm_post = 0, norm_prior = 0;
  nn::ParamRefs<double> gs, gp, gq;
  shared.sa.collect(gs);
  split.sa.collect(gp);
  split.sa_prior->collect(gq);
  for (size_t i = 0; i < gs.size(); ++i)
    for (int64_t j = 0; j < gs[i]->grad.numel(); ++j) {
      const double a = gp[i]->grad[j], b = gq[i]->grad[j];
      worst = std::max(worst, std::abs(gs[i]->grad[j] - (a + b)));
      norm_post += a * a;
      norm_prior += b * b;
    }
  CHECK(worst < 1e-9);
  CHECK(norm_post > 0.0);   // posterior-path contribution alone is nonzero
  CHECK(norm_prior > 0.0);  // prior-path contribution alone is nonzero
}

TEST_CASE("checkpoint round-trips parameters, state and step") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "slotvae_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "model.ckpt").string();

  ModelConfig c = tiny_cfg();
  Model<float> a(c, 81);
  Tensor<float> mstate({3}, {1.f, 2.f, 3.f});
  ckpt::save<float>(path, a, 1234, {{"adam.m.post1.w", &mstate}});

  Model<float> b(c, 99);  // different init
  std::map<std::string, Tensor<float>> state;
  const int64_t step = ckpt::load<float>(path, b, &state);
  CHECK(step == 1234);
  auto pa = a.parameters(), pb = b.parameters();
  for (size_t i = 0; i < pa.size(); ++i) CHECK(max_abs_diff(pa[i]->value, pb[i]->value) == 0.0);
  REQUIRE(state.count("adam.m.post1.w") == 1);
  CHECK(max_abs_diff(state["adam.m.post1.w"], mstate) == 0.0);

  auto h = ckpt::read_header(path);
  CHECK(h.step == 1234);
  CHECK(h.config.K == c.K);
  CHECK(h.config.image_size == c.image_size);
  CHECK(h.scalar == "f32");

  // loading into a structurally different model must fail with a config error
  ModelConfig c3 = c;
  c3.K = 4;
  Model<float> wrong(c3, 1);
  CHECK_THROWS_WITH_AS(ckpt::load<float>(path, wrong), doctest::Contains("config mismatch"),
                       std::runtime_error);

  // truncation must be detected
  {
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream out((dir / "trunc.ckpt").string(), std::ios::binary);
    out.write(bytes.data(), (std::streamsize)(bytes.size() - 7));
  }
  Model<float> t(c, 1);
  CHECK_THROWS_AS(ckpt::load<float>((dir / "trunc.ckpt").string(), t), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint enforces the slot-attention group invariant") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "slotvae_ckpt_inv";
  fs::create_directories(dir);

  ModelConfig c = tiny_cfg();
  ModelConfig cs = c;
  cs.share_sa_weights = false;
  cs.share_init = false;
  Model<float> shared(c, 1), split(cs, 2);
  const std::string p_shared = (dir / "shared.ckpt").string();
  const std::string p_split = (dir / "split.ckpt").string();
  ckpt::save<float>(p_shared, shared, 0);
  ckpt::save<float>(p_split, split, 0);

  // same-variant loads succeed
  Model<float> shared2(c, 9), split2(cs, 9);
  CHECK_NOTHROW(ckpt::load<float>(p_shared, shared2));
  CHECK_NOTHROW(ckpt::load<float>(p_split, split2));
  CHECK(split2.sa_prior.has_value());

  // cross-variant loads are rejected before any parameter copy; the config
  // echo check fires first and names the mismatched key
  CHECK_THROWS_WITH_AS(ckpt::load<float>(p_split, shared2),
                       doctest::Contains("share_sa_weights"), std::runtime_error);
  CHECK_THROWS_WITH_AS(ckpt::load<float>(p_shared, split2),
                       doctest::Contains("share_sa_weights"), std::runtime_error);

  // a tampered file that claims sharing but carries two groups trips the
  // group invariant itself
  {
    auto params = split.parameters();
    std::ofstream os((dir / "bad.ckpt").string(), std::ios::binary | std::ios::trunc);
    os.write(ckpt::kMagic, 8);
    std::ostringstream hdr;
    hdr << "version=1\nscalar=f32\nstep=0\n";
    for (auto& [k, v] : ckpt::config_to_kv(c)) hdr << "config." << k << "=" << v << "\n";
    const std::string htext = hdr.str();
    ckpt::detail::write_u32(os, (uint32_t)htext.size());
    os.write(htext.data(), (std::streamsize)htext.size());
    ckpt::detail::write_u32(os, (uint32_t)params.size());
    for (auto* p : params) ckpt::detail::write_tensor(os, p->name, p->value);
    ckpt::detail::write_u32(os, 0);
    ckpt::detail::write_u32(os, ckpt::kSentinel);
  }
  CHECK_THROWS_WITH_AS(ckpt::load<float>((dir / "bad.ckpt").string(), shared2),
                       doctest::Contains("single"), std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("finite differences confirm full-model gradients across every group") {
  Rng data_rng(91);
  Tensor<double> x = random_image<double>(data_rng, 2, 3, 16);
  objective::ObjectiveConfig oc;
  oc.beta = 0.37;  // exercise all loss weights

  auto check_variant = [&](ModelConfig c, uint64_t seed) {
    Model<double> m(c, seed);
    auto loss_only = [&]() {
      ad::Tape<double> tp;
      Rng rng(92);
      auto fw = m.forward_train(tp, x, rng);
      return objective::total_loss(tp, tp.leaf(x), fw, oc).total.val()[0];
    };
    m.zero_grad();
    {
      ad::Tape<double> tp;
      Rng rng(92);
      auto fw = m.forward_train(tp, x, rng);
      auto lt = objective::total_loss(tp, tp.leaf(x), fw, oc);
      tp.backward(lt.total);
    }
    std::vector<std::pair<double*, double>> entries;
    Rng pick(93);
    for (auto* p : m.parameters()) {
      const int64_t n = p->value.numel();
      for (int64_t r = 0; r < 2; ++r) {
        const int64_t j = pick.uniform_int(n);
        entries.push_back({p->value.data() + j, p->grad[j]});
      }
    }
    auto res = gradcheck::central_diff(loss_only, entries, 1e-5);
    INFO("variant=" << model::prior_kind_name(c.prior) << " share_w=" << c.share_sa_weights
                    << " worst analytic=" << res.worst_analytic
                    << " numeric=" << res.worst_numeric);
    CHECK(res.max_rel_err < 1e-3);
  };

  ModelConfig full = tiny_cfg();
  check_variant(full, 94);
  ModelConfig mlp = tiny_cfg();
  mlp.prior = PriorKind::mlp;
  check_variant(mlp, 95);
  ModelConfig tf = tiny_cfg();
  tf.prior = PriorKind::transformer;
  check_variant(tf, 96);
  ModelConfig nws = tiny_cfg();
  nws.share_sa_weights = false;
  nws.share_init = false;
  check_variant(nws, 97);
  ModelConfig nis = tiny_cfg();
  nis.share_init = false;
  check_variant(nis, 98);
}

TEST_CASE("every parameter tensor receives gradient after one backward pass") {
  ModelConfig c = tiny_cfg();
  Model<double> m(c, 101);
  Rng data_rng(102);
  Tensor<double> x = random_image<double>(data_rng, 2, 3, 16);
  m.zero_grad();
  ad::Tape<double> tp;
  Rng rng(103);
  auto fw = m.forward_train(tp, x, rng);
  auto lt = objective::total_loss(tp, tp.leaf(x), fw, objective::ObjectiveConfig{});
  tp.backward(lt.total);
  for (auto* p : m.parameters()) {
    double mx = 0;
    for (int64_t i = 0; i < p->grad.numel(); ++i) mx = std::max(mx, std::abs(p->grad[i]));
    INFO("parameter " << p->name);
    CHECK(mx > 0.0);
  }
}

TEST_CASE("non-finite activations abort loudly") {
  ModelConfig c = tiny_cfg();
  Model<float> m(c, 111);
  // poison the final encoder conv so NaN reaches the attention weights
  // (a NaN planted earlier would be squashed by an intermediate relu)
  m.enc[3].w.value[0] = std::numeric_limits<float>::quiet_NaN();
  Tensor<float> x({1, 3, 16, 16});
  x.fill(0.5f);
  ad::Tape<float> tp;
  Rng rng(112);
  CHECK_THROWS_WITH_AS(m.forward_train(tp, x, rng), doctest::Contains("non-finite"),
                       std::runtime_error);
}

TEST_CASE("generation is deterministic in the rng and yields simplex masks") {
  ModelConfig c = tiny_cfg();
  Model<float> m(c, 121);
  auto gen = [&](uint64_t s) {
    Rng rng(s);
    return m.generate_scene(rng, 3);
  };
  auto a = gen(5), b = gen(5), d = gen(6);
  CHECK(max_abs_diff(a.composed, b.composed) == 0.0);
  CHECK(max_abs_diff(a.composed, d.composed) > 0.0);
  CHECK(a.composed.shape() == Shape{3, 3, 16, 16});
  const auto& masks = a.masks;
  for (int64_t b2 = 0; b2 < 3; ++b2)
    for (int64_t p = 0; p < 256; ++p) {
      double s = 0;
      for (int64_t k = 0; k < c.K; ++k) s += masks[(b2 * c.K + k) * 256 + p];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("latent traversal decodes one frame per requested value") {
  ModelConfig c = tiny_cfg();
  Model<float> m(c, 131);
  Rng data_rng(132);
  Tensor<float> x = random_image<float>(data_rng, 1, 3, 16);
  std::vector<float> values = {-2.f, 0.f, 2.f, 0.f};
  auto frames = m.traverse_latent(x, 1, 3, values);
  REQUIRE(frames.size() == 4);
  for (auto& fr : frames) CHECK(fr.shape() == Shape{1, 3, 16, 16});
  CHECK(max_abs_diff(frames[0], frames[2]) > 0.0);      // different values differ
  CHECK(max_abs_diff(frames[1], frames[3]) == 0.0);     // equal values agree
  CHECK_THROWS_AS(m.traverse_latent(x, 9, 0, values), std::invalid_argument);
  CHECK_THROWS_AS(m.traverse_latent(x, 0, 99, values), std::invalid_argument);
}
