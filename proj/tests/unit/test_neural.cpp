#include <cmath>

#include "doctest.h"
#include "land/neural.hpp"
#include "land/ops.hpp"

using namespace land;

namespace {

Volume random_volume(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return land::scale(rng_normal(rng, s), scale);
}

double dot(const Volume& a, const Volume& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Fixture that stores the layer input as a parameter so the input gradient is
// checked alongside the weights. Loss is <r, f(x)> for a fixed random r.
struct Fragment {
  ParamSet ps;
  std::size_t input = 0;
  Shape in_shape;

  Volume x(const ParamSet& p) const { return Tensor(p[input].value).to_volume(); }
  void set_input_grad(ParamSet& p, const Volume& g) const {
    auto dst = p.grad(input);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
};

Fragment make_fragment(Shape s, std::uint64_t seed) {
  Fragment f;
  f.in_shape = s;
  f.input = f.ps.add("input", Tensor::from_volume(random_volume(s, seed)));
  return f;
}

}  // namespace

TEST_CASE("silu values") {
  CHECK(silu(0.0) == 0.0);
  CHECK(silu(10.0) == doctest::Approx(9.99954602).epsilon(1e-8));
  CHECK(silu(-1.0) == doctest::Approx(-1.0 / (1.0 + std::exp(1.0))));
}

TEST_CASE("groupnorm of a constant channel is the affine shift") {
  ParamSet ps;
  Rng rng(1);
  GroupNorm gn = GroupNorm::create(ps, "gn", 4, 8);
  CHECK(gn.groups == 4);
  ps.mutable_value(gn.beta)[2] = 0.75;
  Volume x(Shape{4, 3, 3, 3}, 2.0);
  Volume y = gn.forward(ps, x);
  for (std::size_t i = 0; i < 27; ++i) CHECK(y.channel(2)[i] == 0.75);
  for (std::size_t i = 0; i < 27; ++i) CHECK(y.channel(0)[i] == 0.0);
}

TEST_CASE("groupnorm normalizes each group") {
  ParamSet ps;
  GroupNorm gn = GroupNorm::create(ps, "gn", 16, 8);
  CHECK(gn.groups == 8);
  CHECK(GroupNorm::resolve_groups(12, 8) == 6);
  CHECK(GroupNorm::resolve_groups(1, 8) == 1);
  Volume x = random_volume({16, 4, 4, 4}, 2, 3.0);
  for (double& v : x.values()) v += 5.0;
  Volume y = gn.forward(ps, x);
  const std::size_t n = 2 * 64;
  for (int g = 0; g < 8; ++g) {
    const double* p = y.channel(2 * g);
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += p[i];
    mu /= n;
    for (std::size_t i = 0; i < n; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= n;
    CHECK(std::abs(mu) < 1e-6);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("residual block with zero convolutions is the identity") {
  ParamSet ps;
  Rng rng(3);
  ResBlock b = ResBlock::create(ps, "rb", 8, 8, 16, rng);
  for (std::size_t i : {b.conv1.weight, b.conv2.weight}) {
    for (double& v : ps.mutable_value(i)) v = 0.0;
  }
  Volume x = random_volume({8, 4, 4, 4}, 4);
  Matrix temb(1, 16);
  temb.data.assign(16, 0.3);
  CHECK(b.forward(ps, x, &temb) == x);
}

TEST_CASE("linear weight gradient is g x^T") {
  ParamSet ps;
  Rng rng(5);
  Linear l = Linear::create(ps, "fc", 3, 2, rng);
  Matrix x(1, 3);
  x.data = {1.0, -2.0, 0.5};
  Matrix g(1, 2);
  g.data = {0.25, -4.0};
  l.backward(ps, x, g);
  const auto gw = ps.grad(l.weight);
  for (int o = 0; o < 2; ++o)
    for (int i = 0; i < 3; ++i) CHECK(gw[o * 3 + i] == g.data[o] * x.data[i]);
  CHECK(ps.grad(l.bias)[1] == -4.0);
}

TEST_CASE("backward without saved activations is rejected") {
  ParamSet ps;
  Rng rng(6);
  Conv3d c = Conv3d::create(ps, "c", 1, 1, 3, 1, 1, rng);
  GroupNorm gn = GroupNorm::create(ps, "gn", 4);
  ResBlock rb = ResBlock::create(ps, "rb", 4, 4, 0, rng);
  CrossAttention at = CrossAttention::create(ps, "at", 4, 3, 4, 1, rng);
  Volume g(Shape{1, 2, 2, 2});
  CHECK_THROWS_AS(c.backward(ps, Conv3d::Cache{}, g), ValidationError);
  CHECK_THROWS_AS(gn.backward(ps, GroupNorm::Cache{}, g), ValidationError);
  CHECK_THROWS_AS(rb.backward(ps, ResBlock::Cache{}, g), ValidationError);
  CHECK_THROWS_AS(at.backward(ps, CrossAttention::Cache{}, g), ValidationError);
}

TEST_CASE("gradient check: linear map is exact") {
  Rng rng(7);
  ParamSet ps;
  Linear l = Linear::create(ps, "fc", 5, 4, rng);
  Matrix x(3, 5);
  for (double& v : x.data) v = rng.normal();
  Matrix r(3, 4);
  for (double& v : r.data) v = rng.normal();
  auto loss = [&](const ParamSet& p) {
    Matrix y = l.forward(p, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.data.size(); ++i) s += y.data[i] * r.data[i];
    return s;
  };
  auto rep = grad_check("linear", ps, loss, [&](ParamSet& p) { l.backward(p, x, r); });
  CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("gradient check: every layer kind") {
  GradCheckOptions opts;

  SUBCASE("conv3d stride 1 and 2") {
    for (int stride : {1, 2}) {
      Fragment f = make_fragment({2, 5, 4, 6}, 10);
      Rng rng(11);
      Conv3d c = Conv3d::create(f.ps, "c", 2, 3, 3, stride, 1, rng);
      randomize(f.ps, rng, 0.1);
      const Volume r = random_volume(c.forward(f.ps, f.x(f.ps)).shape(), 12);
      auto loss = [&](const ParamSet& p) { return dot(c.forward(p, f.x(p)), r); };
      auto back = [&](ParamSet& p) {
        Conv3d::Cache cache;
        c.forward(p, f.x(p), &cache);
        f.set_input_grad(p, c.backward(p, cache, r));
      };
      auto rep = grad_check("conv3d", f.ps, loss, back, opts);
      CHECK(rep.passed);
    }
  }

  SUBCASE("groupnorm") {
    Fragment f = make_fragment({4, 3, 3, 3}, 13);
    Rng rng(14);
    GroupNorm gn = GroupNorm::create(f.ps, "gn", 4, 2);
    randomize(f.ps, rng, 0.3);
    const Volume r = random_volume(f.in_shape, 15);
    auto loss = [&](const ParamSet& p) { return dot(gn.forward(p, f.x(p)), r); };
    auto back = [&](ParamSet& p) {
      GroupNorm::Cache cache;
      gn.forward(p, f.x(p), &cache);
      f.set_input_grad(p, gn.backward(p, cache, r));
    };
    CHECK(grad_check("groupnorm", f.ps, loss, back, opts).passed);
  }

  SUBCASE("silu, leaky relu, tanh") {
    Fragment f = make_fragment({2, 3, 3, 3}, 16);
    const Volume r = random_volume(f.in_shape, 17);
    auto loss = [&](const ParamSet& p) {
      const Volume x = f.x(p);
      return dot(silu(x), r) + dot(leaky_relu(x, 0.2), r) + dot(land::tanh(x), r);
    };
    auto back = [&](ParamSet& p) {
      const Volume x = f.x(p);
      f.set_input_grad(p, silu_backward(x, r));
      f.set_input_grad(p, leaky_relu_backward(x, r, 0.2));
      f.set_input_grad(p, tanh_backward(land::tanh(x), r));
    };
    CHECK(grad_check("activations", f.ps, loss, back, opts).passed);
  }

  SUBCASE("residual block with time embedding and channel change") {
    Fragment f = make_fragment({4, 4, 4, 4}, 18);
    Rng rng(19);
    ResBlock b = ResBlock::create(f.ps, "rb", 4, 8, 6, rng, 2);
    const std::size_t temb_idx = f.ps.add("temb", Tensor({1, 6}));
    randomize(f.ps, rng, 0.2);
    auto temb_of = [&](const ParamSet& p) {
      Matrix t(1, 6);
      t.data = p[temb_idx].value.data;
      return t;
    };
    const Volume r = random_volume({8, 4, 4, 4}, 20);
    auto loss = [&](const ParamSet& p) {
      const Matrix t = temb_of(p);
      return dot(b.forward(p, f.x(p), &t), r);
    };
    auto back = [&](ParamSet& p) {
      ResBlock::Cache cache;
      const Matrix t = temb_of(p);
      b.forward(p, f.x(p), &t, &cache);
      Matrix gt;
      f.set_input_grad(p, b.backward(p, cache, r, &gt));
      for (std::size_t i = 0; i < 6; ++i) p.grad(temb_idx)[i] += gt.data[i];
    };
    auto rep = grad_check("resblock", f.ps, loss, back, opts);
    CHECK(rep.max_rel_error < 1e-4);
  }

  SUBCASE("cross attention, two heads") {
    Fragment f = make_fragment({4, 2, 3, 2}, 21);
    Rng rng(22);
    CrossAttention at = CrossAttention::create(f.ps, "at", 4, 5, 6, 2, rng);
    const std::size_t ctx_idx = f.ps.add("ctx", Tensor({3, 5}));
    randomize(f.ps, rng, 0.3);
    auto ctx_of = [&](const ParamSet& p) {
      Matrix c(3, 5);
      c.data = p[ctx_idx].value.data;
      return c;
    };
    const Volume r = random_volume(f.in_shape, 23);
    auto loss = [&](const ParamSet& p) { return dot(at.forward(p, f.x(p), ctx_of(p)), r); };
    auto back = [&](ParamSet& p) {
      CrossAttention::Cache cache;
      at.forward(p, f.x(p), ctx_of(p), &cache);
      Matrix gc;
      f.set_input_grad(p, at.backward(p, cache, r, &gc));
      for (std::size_t i = 0; i < gc.data.size(); ++i) p.grad(ctx_idx)[i] += gc.data[i];
    };
    CHECK(grad_check("cross-attention", f.ps, loss, back, opts).passed);
  }

  SUBCASE("chain conv -> groupnorm -> silu") {
    Fragment f = make_fragment({2, 4, 4, 4}, 24);
    Rng rng(25);
    Conv3d c = Conv3d::create(f.ps, "c", 2, 4, 3, 1, 1, rng);
    GroupNorm gn = GroupNorm::create(f.ps, "gn", 4, 2);
    randomize(f.ps, rng, 0.1);
    const Volume r = random_volume({4, 4, 4, 4}, 26);
    auto loss = [&](const ParamSet& p) { return dot(silu(gn.forward(p, c.forward(p, f.x(p)))), r); };
    auto back = [&](ParamSet& p) {
      Conv3d::Cache cc;
      GroupNorm::Cache gc;
      const Volume h = gn.forward(p, c.forward(p, f.x(p), &cc), &gc);
      Volume g = silu_backward(h, r);
      g = gn.backward(p, gc, g);
      f.set_input_grad(p, c.backward(p, cc, g));
    };
    CHECK(grad_check("chain", f.ps, loss, back, opts).passed);
  }
}

TEST_CASE("cross attention semantics") {
  ParamSet ps;
  Rng rng(30);
  CrossAttention at = CrossAttention::create(ps, "at", 4, 3, 4, 1, rng);
  Matrix x(5, 4);
  for (double& v : x.data) v = rng.normal();

  SUBCASE("single token: every query receives its value projection") {
    Matrix ctx(1, 3);
    ctx.data = {0.5, -1.0, 2.0};
    Matrix vm;
    std::vector<Matrix> probs;
    const Matrix out = at.attend(ps, x, ctx, &probs, nullptr, nullptr, &vm);
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(probs[0](i, 0) == 1.0);
      for (std::size_t d = 0; d < 4; ++d) CHECK(out(i, d) == doctest::Approx(vm(0, d)).epsilon(1e-14));
    }
  }

  SUBCASE("duplicated token equals a single token") {
    Matrix one(1, 3);
    one.data = {0.1, 0.2, -0.3};
    Matrix two(2, 3);
    two.data = {0.1, 0.2, -0.3, 0.1, 0.2, -0.3};
    CHECK(max_abs_diff(at.attend(ps, x, one), at.attend(ps, x, two)) < 1e-14);
  }

  SUBCASE("random case vs dense computation, rows sum to one") {
    CrossAttention a2 = CrossAttention::create(ps, "a2", 4, 3, 4, 2, rng);
    Matrix q4(4, 4);
    for (double& v : q4.data) v = rng.normal();
    Matrix ctx(3, 3);
    for (double& v : ctx.data) v = rng.normal();
    std::vector<Matrix> probs;
    const Matrix out = a2.attend(ps, q4, ctx, &probs);
    const Matrix qm = a2.q.forward(ps, q4), km = a2.k.forward(ps, ctx), vm = a2.v.forward(ps, ctx);
    for (int h = 0; h < 2; ++h) {
      for (std::size_t i = 0; i < 4; ++i) {
        double s[3], z = 0.0;
        for (std::size_t j = 0; j < 3; ++j) {
          s[j] = (qm(i, 2 * h) * km(j, 2 * h) + qm(i, 2 * h + 1) * km(j, 2 * h + 1)) / std::sqrt(2.0);
          z += std::exp(s[j]);
        }
        double rowsum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) rowsum += probs[h](i, j);
        CHECK(std::abs(rowsum - 1.0) < 1e-6);
        for (int d = 0; d < 2; ++d) {
          double ref = 0.0;
          for (std::size_t j = 0; j < 3; ++j) ref += std::exp(s[j]) / z * vm(j, 2 * h + d);
          CHECK(std::abs(out(i, 2 * h + d) - ref) < 1e-12);
        }
      }
    }
  }

  SUBCASE("empty context rejected") { CHECK_THROWS_AS(at.attend(ps, x, Matrix(0, 3)), ValidationError); }
  CHECK_THROWS_AS(CrossAttention::create(ps, "bad", 4, 3, 6, 4, rng), ValidationError);
}

TEST_CASE("time embedding") {
  const auto e = time_embedding(7, 16);
  CHECK(e[0] == std::sin(7.0));
  CHECK(e[1] == std::cos(7.0));
  double n2 = 0.0;
  for (double v : e) n2 += v * v;
  CHECK(n2 == doctest::Approx(8.0).epsilon(1e-14));
  CHECK_THROWS_AS(time_embedding(0, 16), ValidationError);
  CHECK_THROWS_AS(time_embedding(1001, 16), ValidationError);
  CHECK_THROWS_AS(time_embedding(3, 15), ValidationError);

  std::vector<std::vector<double>> all;
  for (int t = 1; t <= 1000; ++t) all.push_back(time_embedding(t, 32));
  double min_d = INFINITY;
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      double d = 0.0;
      for (std::size_t i = 0; i < 32; ++i) d += (all[a][i] - all[b][i]) * (all[a][i] - all[b][i]);
      min_d = std::min(min_d, d);
    }
  CHECK(min_d > 0.0);
}

TEST_CASE("adamw") {
  SUBCASE("zero gradient, zero decay leaves parameters unchanged") {
    ParamSet ps;
    ps.add("w", Tensor({3}, std::vector<double>{1.0, -2.0, 3.0}));
    adamw_step(ps, {.lr = 0.1, .weight_decay = 0.0});
    CHECK(ps[0].value.data == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(ps.step() == 1);
  }
  SUBCASE("first step moves by about lr") {
    // m = 0.1, v = 0.001; bias-corrected mhat = 1, vhat = 1 -> theta = 1 - 0.1/(1 + 1e-8).
    ParamSet ps;
    ps.add("w", Tensor({1}, 1.0));
    ps.grad(0)[0] = 1.0;
    adamw_step(ps, {.lr = 0.1, .weight_decay = 0.0});
    CHECK(ps[0].value.data[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
    CHECK(ps[0].value.data[0] == doctest::Approx(0.9).epsilon(1e-7));
    CHECK(ps[0].grad.data[0] == 0.0);
  }
  SUBCASE("decoupled decay with zero gradient") {
    ParamSet ps;
    ps.add("w", Tensor({2}, std::vector<double>{0.7, -1.3}));
    adamw_step(ps, {.lr = 0.1, .weight_decay = 0.01});
    CHECK(ps[0].value.data[0] == 0.7 * (1.0 - 0.1 * 0.01));
    CHECK(ps[0].value.data[1] == -1.3 * (1.0 - 0.1 * 0.01));
  }
  SUBCASE("lr = 0 is bitwise inert") {
    ParamSet ps;
    ps.add("w", Tensor({2}, std::vector<double>{0.123456789, -9.87}));
    ps.grad(0)[0] = 3.0;
    ps.grad(0)[1] = -0.5;
    const auto before = ps[0].value.data;
    adamw_step(ps, {.lr = 0.0});
    CHECK(ps[0].value.data == before);
  }
  SUBCASE("non-finite gradient rejected, parameters untouched") {
    ParamSet ps;
    ps.add("ok", Tensor({1}, 1.0));
    ps.add("bad", Tensor({1}, 2.0));
    ps.grad(0)[0] = 1.0;
    ps.grad(1)[0] = NAN;
    try {
      adamw_step(ps, {});
      FAIL("expected rejection");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("'bad'") != std::string::npos);
    }
    CHECK(ps[0].value.data[0] == 1.0);
    CHECK(ps.step() == 0);
  }
}

TEST_CASE("forward is referentially transparent") {
  ParamSet ps;
  Rng rng(40);
  ResBlock b = ResBlock::create(ps, "rb", 4, 4, 0, rng);
  randomize(ps, rng, 0.1);
  const Volume x = random_volume({4, 4, 4, 4}, 41);
  CHECK(b.forward(ps, x, nullptr) == b.forward(ps, x, nullptr));
}
