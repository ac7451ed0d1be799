#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"
#include "slotvae/autodiff.hpp"
#include "slotvae/nn.hpp"
#include "slotvae/rng.hpp"

using namespace slotvae;
using ad::Var;

namespace {

Tensor<double> randt(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Runs `build` twice: once to get analytic input gradients, then re-evaluates
// it inside the finite-difference oracle while nudging input entries.
template <typename BuildFn>
void check_op(std::vector<Tensor<double>> inputs, BuildFn&& build, double tol = 1e-6) {
  bool analytic_done = false;
  std::vector<Tensor<double>> saved_grads;
  {
    ad::Tape<double> tp;
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.push_back(tp.leaf(t, true));
    Var<double> loss = build(tp, vars);
    tp.backward(loss);
    for (auto& v : vars) saved_grads.push_back(v.n->ensure_grad().clone());
    analytic_done = true;
  }
  REQUIRE(analytic_done);

  auto loss_only = [&]() {
    ad::Tape<double> tp;
    std::vector<Var<double>> vars;
    for (auto& t : inputs) vars.push_back(tp.leaf(t, false));
    return build(tp, vars).val()[0];
  };
  std::vector<std::pair<double*, double>> entries;
  Rng pick(99);
  for (size_t v = 0; v < inputs.size(); ++v) {
    const int64_t n = inputs[v].numel();
    for (int64_t r = 0; r < std::min<int64_t>(n, 12); ++r) {
      int64_t i = n <= 12 ? r : pick.uniform_int(n);
      entries.push_back({&inputs[v][i], saved_grads[v][i]});
    }
  }
  auto res = gradcheck::central_diff(loss_only, entries, 1e-5);
  INFO("max_rel_err=" << res.max_rel_err << " analytic=" << res.worst_analytic
                      << " numeric=" << res.worst_numeric);
  CHECK(res.max_rel_err < tol);
}

}  // namespace

TEST_CASE("gradients: elementwise binary ops with same shapes") {
  Rng rng(11);
  auto a = randt(rng, {3, 4});
  auto b = randt(rng, {3, 4}, 0.5, 2.0);
  check_op({a, b}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    auto x = ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], v[1]));
    return ad::sum_all(ad::div(x, v[1]));
  });
}

TEST_CASE("gradients: broadcasting add/mul reduce correctly") {
  Rng rng(12);
  auto a = randt(rng, {2, 3, 4});
  auto b = randt(rng, {3, 1});  // right-aligned broadcast over axes 0 and 2
  auto c = randt(rng, {4});
  check_op({a, b, c}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::mul(ad::add(v[0], v[1]), v[2]));
  });
}

TEST_CASE("gradients: unary chain") {
  Rng rng(13);
  auto a = randt(rng, {2, 5}, -2.0, 2.0);
  check_op({a}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    auto x = ad::tanh_(v[0]);
    x = ad::sigmoid(x);
    x = ad::softplus(x);
    x = ad::log_(ad::add_scalar(ad::square(x), 0.1));
    x = ad::sqrt_(ad::exp_(x));
    return ad::mean_all(x);
  });
}

TEST_CASE("gradients: relu (away from kink)") {
  Tensor<double> a({2, 3}, {-1.5, 0.7, -0.3, 2.0, 1.1, -2.2});
  check_op({a}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::relu(v[0]));
  });
}

TEST_CASE("gradients: reshape/swap_axes/slice/concat") {
  Rng rng(14);
  auto a = randt(rng, {2, 3, 4});
  auto b = randt(rng, {2, 2, 4});
  check_op({a, b}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    auto x = ad::swap_axes(v[0], 1, 2);          // [2,4,3]
    auto y = ad::slice(ad::reshape(v[1], Shape{2, 4, 2}), 2, 0, 2);
    auto z = ad::concat<double>({x, y}, 2);      // [2,4,5]
    return ad::sum_all(ad::square(z));
  });
}

TEST_CASE("gradients: softmax over a middle axis") {
  Rng rng(15);
  auto a = randt(rng, {2, 4, 3}, -3.0, 3.0);
  auto w = randt(rng, {2, 4, 3});
  check_op({a, w}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::mul(ad::softmax(v[0], 1), v[1]));
  });
}

TEST_CASE("gradients: sum_axis keepdim and not") {
  Rng rng(16);
  auto a = randt(rng, {3, 4, 2});
  check_op({a}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    auto s1 = ad::sum_axis(v[0], 1, true);    // [3,1,2]
    auto s2 = ad::sum_axis(v[0], 0, false);   // [4,2]
    return ad::add(ad::sum_all(ad::square(s1)), ad::sum_all(ad::square(s2)));
  });
}

TEST_CASE("gradients: linear and bmm") {
  Rng rng(17);
  auto x = randt(rng, {3, 5});
  auto w = randt(rng, {4, 5});
  auto b = randt(rng, {4});
  check_op({x, w, b}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::square(ad::linear(v[0], v[1], v[2])));
  });

  auto p = randt(rng, {2, 3, 4});
  auto q = randt(rng, {2, 4, 5});
  check_op({p, q}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::square(ad::bmm(v[0], v[1])));
  });
}

TEST_CASE("gradients: conv2d and deconv2d") {
  Rng rng(18);
  auto x = randt(rng, {2, 3, 6, 6});
  auto w = randt(rng, {4, 3, 5, 5});
  auto b = randt(rng, {4});
  check_op({x, w, b}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::square(ad::conv2d(v[0], v[1], v[2], 1, 2)));
  }, 1e-5);

  auto xd = randt(rng, {2, 3, 4, 4});
  auto wd = randt(rng, {3, 2, 5, 5});
  auto bd = randt(rng, {2});
  check_op({xd, wd, bd}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::square(ad::deconv2d(v[0], v[1], v[2], 2, 2, 1)));
  }, 1e-5);
}

TEST_CASE("gradients: broadcast_spatial") {
  Rng rng(19);
  auto z = randt(rng, {2, 3});
  auto w = randt(rng, {2, 3, 4, 4});
  check_op({z, w}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::mul(ad::broadcast_spatial(v[0], 4, 4), v[1]));
  });
}

TEST_CASE("shared parameter used twice accumulates both contributions") {
  // loss = sum((x*w)^2) + sum((y*w)^2); d/dw must include both terms.
  Rng rng(20);
  auto x = randt(rng, {3, 4});
  auto y = randt(rng, {3, 4});
  auto w = randt(rng, {3, 4});
  check_op({x, y, w}, [](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    auto t1 = ad::sum_all(ad::square(ad::mul(v[0], v[2])));
    auto t2 = ad::sum_all(ad::square(ad::mul(v[1], v[2])));
    return ad::add(t1, t2);
  });
}

TEST_CASE("parameter leaves share grad storage with Parameter::grad") {
  nn::Parameter<double> p("p", Tensor<double>({2, 2}, {1, 2, 3, 4}));
  p.zero_grad();
  ad::Tape<double> tp;
  auto v = nn::pleaf(tp, p);
  auto loss = ad::sum_all(ad::square(v));
  tp.backward(loss);
  CHECK(p.grad[0] == doctest::Approx(2.0));
  CHECK(p.grad[3] == doctest::Approx(8.0));
}

TEST_CASE("GRU cell gradients") {
  Rng rng(21);
  nn::GRUCell<double> gru("gru", 3, 4, rng);
  auto x = randt(rng, {2, 3});
  auto h = randt(rng, {2, 4});
  // check inputs and a couple of parameter tensors jointly
  auto run = [&](ad::Tape<double>& tp, const Var<double>& xv, const Var<double>& hv) {
    return ad::sum_all(ad::square(gru.apply(tp, xv, hv)));
  };
  std::vector<std::pair<double*, double>> entries;
  {
    ad::Tape<double> tp;
    auto xv = tp.leaf(x, true);
    auto hv = tp.leaf(h, true);
    for (auto* p : std::initializer_list<nn::Parameter<double>*>{&gru.wx, &gru.wh, &gru.bx, &gru.bh})
      p->zero_grad();
    auto loss = run(tp, xv, hv);
    tp.backward(loss);
    Rng pick(5);
    for (int64_t i = 0; i < x.numel(); ++i) entries.push_back({&x[i], xv.n->grad[i]});
    for (int64_t i = 0; i < h.numel(); ++i) entries.push_back({&h[i], hv.n->grad[i]});
    for (int r = 0; r < 10; ++r) {
      int64_t i = pick.uniform_int(gru.wx.numel());
      entries.push_back({&gru.wx.value[i], gru.wx.grad[i]});
      int64_t j = pick.uniform_int(gru.wh.numel());
      entries.push_back({&gru.wh.value[j], gru.wh.grad[j]});
    }
  }
  auto loss_only = [&]() {
    ad::Tape<double> tp;
    auto xv = tp.leaf(x, false);
    auto hv = tp.leaf(h, false);
    // params still tracked (pleaf sets requires_grad) but grads are reset after
    for (auto* p : std::initializer_list<nn::Parameter<double>*>{&gru.wx, &gru.wh, &gru.bx, &gru.bh})
      p->zero_grad();
    return run(tp, xv, hv).val()[0];
  };
  auto res = gradcheck::central_diff(loss_only, entries, 1e-5);
  INFO("max_rel_err=" << res.max_rel_err);
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("LayerNorm gradients") {
  Rng rng(22);
  nn::LayerNorm<double> ln("ln", 5, rng);
  auto x = randt(rng, {3, 5});
  check_op({x}, [&](ad::Tape<double>& tp, std::vector<Var<double>>& v) {
    return ad::sum_all(ad::square(ln.apply(tp, v[0])));
  });
}

TEST_CASE("PosEmbed adds a grid-projected embedding") {
  Rng rng(23);
  nn::PosEmbed<double> pe("pe", 6, rng);
  auto f = randt(rng, {2, 12, 6});
  ad::Tape<double> tp;
  auto out = pe.apply(tp, tp.leaf(f), 3, 4);
  CHECK(out.shape() == Shape{2, 12, 6});
  // same embedding added to every batch element
  for (int64_t i = 0; i < 12 * 6; ++i) {
    double d0 = out.val()[i] - f[i];
    double d1 = out.val()[12 * 6 + i] - f[12 * 6 + i];
    CHECK(d0 == doctest::Approx(d1).epsilon(1e-12));
  }
}

TEST_CASE("backward ignores non-contributing nodes") {
  ad::Tape<double> tp;
  auto a = tp.leaf(Tensor<double>({2}, {1, 2}), true);
  auto unused = ad::square(a);  // never feeds the loss
  auto loss = ad::sum_all(a);
  tp.backward(loss);
  CHECK(a.n->grad[0] == doctest::Approx(1.0));
  CHECK(a.n->grad[1] == doctest::Approx(1.0));
  (void)unused;
}
