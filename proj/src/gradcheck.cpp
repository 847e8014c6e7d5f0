#include "land/gradcheck.hpp"

#include <functional>

#include "land/diffusion.hpp"
#include "land/mask.hpp"
#include "land/ops.hpp"
#include "land/unet.hpp"
#include "land/vae.hpp"

namespace land {

namespace {

Volume random_volume(const Shape& s, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return scale(rng_normal(rng, s), sd);
}

Matrix random_matrix(int rows, int cols, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data) v = rng.normal();
  return m;
}

double dot(const Volume& a, const Volume& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double dot(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

// The layer input lives in the ParamSet so its gradient is checked too.
struct Fragment {
  ParamSet ps;
  std::size_t input = 0;

  explicit Fragment(const Shape& s, std::uint64_t seed) {
    input = ps.add("input", Tensor::from_volume(random_volume(s, seed)));
  }
  Volume x(const ParamSet& p) const { return Tensor(p[input].value).to_volume(); }
  static void accumulate(ParamSet& p, std::size_t idx, std::span<const double> g) {
    auto dst = p.grad(idx);
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }
  void add_input_grad(ParamSet& p, const Volume& g) const { accumulate(p, input, g.values()); }
};

using Case = std::function<GradCheckReport(const GradCheckOptions&)>;

GradCheckReport linear_case(const GradCheckOptions& o) {
  Rng rng(7);
  ParamSet ps;
  Linear l = Linear::create(ps, "fc", 5, 4, rng);
  const std::size_t xi = ps.add("input", Tensor({3, 5}));
  randomize(ps, rng, 0.5);
  const Matrix r = random_matrix(3, 4, 8);
  auto x_of = [&](const ParamSet& p) {
    Matrix x(3, 5);
    x.data = p[xi].value.data;
    return x;
  };
  auto loss = [&](const ParamSet& p) { return dot(l.forward(p, x_of(p)), r); };
  auto back = [&](ParamSet& p) {
    const Matrix gx = l.backward(p, x_of(p), r);
    Fragment::accumulate(p, xi, gx.data);
  };
  return grad_check("linear", ps, loss, back, o);
}

GradCheckReport conv_case(const GradCheckOptions& o, int k, int stride) {
  Fragment f({2, 5, 4, 6}, 10 + stride + k);
  Rng rng(11);
  Conv3d c = Conv3d::create(f.ps, "conv", 2, 3, k, stride, k / 2, rng);
  randomize(f.ps, rng, 0.1);
  const Volume r = random_volume(c.forward(f.ps, f.x(f.ps)).shape(), 12);
  auto loss = [&](const ParamSet& p) { return dot(c.forward(p, f.x(p)), r); };
  auto back = [&](ParamSet& p) {
    Conv3d::Cache cache;
    c.forward(p, f.x(p), &cache);
    f.add_input_grad(p, c.backward(p, cache, r));
  };
  return grad_check(concat("conv3d k", k, " s", stride), f.ps, loss, back, o);
}

GradCheckReport groupnorm_case(const GradCheckOptions& o) {
  Fragment f({4, 3, 3, 3}, 13);
  Rng rng(14);
  GroupNorm gn = GroupNorm::create(f.ps, "gn", 4, 2);
  randomize(f.ps, rng, 0.3);
  const Volume r = random_volume({4, 3, 3, 3}, 15);
  auto loss = [&](const ParamSet& p) { return dot(gn.forward(p, f.x(p)), r); };
  auto back = [&](ParamSet& p) {
    GroupNorm::Cache cache;
    gn.forward(p, f.x(p), &cache);
    f.add_input_grad(p, gn.backward(p, cache, r));
  };
  return grad_check("groupnorm", f.ps, loss, back, o);
}

GradCheckReport activation_case(const GradCheckOptions& o) {
  Fragment f({2, 3, 3, 3}, 16);
  const Volume r = random_volume({2, 3, 3, 3}, 17);
  auto loss = [&](const ParamSet& p) {
    const Volume x = f.x(p);
    return dot(silu(x), r) + dot(leaky_relu(x, 0.2), r) + dot(land::tanh(x), r);
  };
  auto back = [&](ParamSet& p) {
    const Volume x = f.x(p);
    f.add_input_grad(p, silu_backward(x, r));
    f.add_input_grad(p, leaky_relu_backward(x, r, 0.2));
    f.add_input_grad(p, tanh_backward(land::tanh(x), r));
  };
  return grad_check("silu/leaky-relu/tanh", f.ps, loss, back, o);
}

GradCheckReport resblock_case(const GradCheckOptions& o) {
  Fragment f({4, 4, 4, 4}, 18);
  Rng rng(19);
  ResBlock b = ResBlock::create(f.ps, "rb", 4, 8, 6, rng, 2);
  const std::size_t ti = f.ps.add("temb", Tensor({1, 6}));
  randomize(f.ps, rng, 0.2);
  auto temb_of = [&](const ParamSet& p) {
    Matrix t(1, 6);
    t.data = p[ti].value.data;
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
    f.add_input_grad(p, b.backward(p, cache, r, &gt));
    Fragment::accumulate(p, ti, gt.data);
  };
  return grad_check("resblock", f.ps, loss, back, o);
}

GradCheckReport attention_case(const GradCheckOptions& o) {
  Fragment f({4, 2, 3, 2}, 21);
  Rng rng(22);
  CrossAttention at = CrossAttention::create(f.ps, "attn", 4, 5, 6, 2, rng);
  const std::size_t ci = f.ps.add("ctx", Tensor({3, 5}));
  randomize(f.ps, rng, 0.3);
  auto ctx_of = [&](const ParamSet& p) {
    Matrix c(3, 5);
    c.data = p[ci].value.data;
    return c;
  };
  const Volume r = random_volume({4, 2, 3, 2}, 23);
  auto loss = [&](const ParamSet& p) { return dot(at.forward(p, f.x(p), ctx_of(p)), r); };
  auto back = [&](ParamSet& p) {
    CrossAttention::Cache cache;
    at.forward(p, f.x(p), ctx_of(p), &cache);
    Matrix gc;
    f.add_input_grad(p, at.backward(p, cache, r, &gc));
    Fragment::accumulate(p, ci, gc.data);
  };
  return grad_check("cross-attention", f.ps, loss, back, o);
}

GradCheckReport context_case(const GradCheckOptions& o) {
  ParamSet ps;
  Rng rng(24);
  const ContextEmbedding e = ContextEmbedding::create(ps, "ctx", 5, rng);
  randomize(ps, rng, 0.2);
  const Volume grid = context_grid(scale(random_volume({1, 8, 8, 8}, 25), 0.3));
  const Matrix r = random_matrix(64, 5, 26);
  auto loss = [&](const ParamSet& p) { return dot(e.forward(p, grid), r); };
  auto back = [&](ParamSet& p) { e.backward(p, grid, r); };
  return grad_check("context-embedding", ps, loss, back, o);
}

GradCheckReport perceptual_case(const GradCheckOptions& o) {
  Fragment f({1, 8, 8, 8}, 27);
  const FeaturePyramid net({4, 4}, 3);
  const Volume x = random_volume({1, 8, 8, 8}, 28, 0.5);
  auto loss = [&](const ParamSet& p) { return perceptual_loss(x, f.x(p), net); };
  auto back = [&](ParamSet& p) {
    Volume g;
    perceptual_loss(x, f.x(p), net, &g);
    f.add_input_grad(p, g);
  };
  return grad_check("perceptual-loss", f.ps, loss, back, o);
}

GradCheckReport discriminator_case(const GradCheckOptions& o) {
  Discriminator disc({2, 3}, 29);
  Rng rng(30);
  randomize(disc.params(), rng, 0.1);
  const Volume x = random_volume({1, 8, 8, 8}, 31);
  const Volume r = random_volume(disc.forward(x).shape(), 32);
  Discriminator* d = &disc;
  auto loss = [&](const ParamSet& p) {
    d->params() = p;
    return dot(d->forward(x), r);
  };
  auto back = [&](ParamSet& p) {
    d->params() = p;
    d->params().zero_grad();
    Discriminator::Cache cache;
    d->forward(x, &cache);
    d->backward(cache, r, true);
    p = d->params();
  };
  ParamSet ps = disc.params();
  return grad_check("discriminator", ps, loss, back, o);
}

GradCheckReport vae_case(const GradCheckOptions& o) {
  VaeConfig cfg;
  cfg.widths = {2, 4, 4};
  cfg.disc_widths = {2, 2, 2};
  cfg.groups = 2;
  cfg.w_kl = 0.3;
  cfg.w_adv = 0.5;
  Vae vae(cfg, 4);
  Rng rng(5);
  randomize(vae.params(), rng, 0.1);
  Discriminator disc(cfg.disc_widths, 6);
  const FeaturePyramid lpips({4, 4}, 0);
  const Volume x = random_volume({1, 8, 8, 8}, 7, 0.5);
  const Volume eps = random_volume({4, 2, 2, 2}, 8);
  Vae* v = &vae;
  auto loss = [&](const ParamSet& p) {
    v->params() = p;
    return vae_generator_loss(*v, disc, lpips, x, eps, true, false).total;
  };
  auto back = [&](ParamSet& p) {
    v->params() = p;
    v->params().zero_grad();
    vae_generator_loss(*v, disc, lpips, x, eps, true, true);
    p = v->params();
  };
  ParamSet ps = vae.params();
  GradCheckOptions lo = o;
  lo.max_per_param = std::min<std::size_t>(o.max_per_param, 6);
  return grad_check("vae (full loss)", ps, loss, back, lo);
}

UnetConfig tiny_unet(bool conditional) {
  UnetConfig c;
  c.levels = 2;
  c.blocks_per_level = 1;
  c.base_channels = 4;
  c.max_channels = 8;
  c.conditional = conditional;
  c.attention_levels = conditional ? std::vector<int>{1} : std::vector<int>{};
  c.context_dim = 6;
  c.attention_dim = 4;
  c.heads = 2;
  c.groups = 2;
  return c;
}

// Min-SNR weighted v-prediction loss through the whole denoiser.
GradCheckReport unet_case(const GradCheckOptions& o, bool conditional) {
  Unet net(tiny_unet(conditional), 2);
  Rng rng(3);
  randomize(net.params(), rng, 0.1);
  const NoiseSchedule sched = linear_schedule();
  const int t = 37;
  const Volume x0 = random_volume({4, 4, 4, 4}, 4), eps = random_volume({4, 4, 4, 4}, 5);
  DenoiseInput in;
  in.z_t = q_sample(x0, t, eps, sched);
  in.t = t;
  if (conditional) in.mask_latent = add(Volume({1, 4, 4, 4}, 0.1), random_volume({1, 4, 4, 4}, 6, 0.1));
  const Volume v = v_target(x0, eps, t, sched);
  Unet* u = &net;
  auto loss = [&](const ParamSet& p) {
    u->params() = p;
    return diffusion_loss(u->denoise(in), v, t, sched);
  };
  auto back = [&](ParamSet& p) {
    u->params() = p;
    u->params().zero_grad();
    Unet::Cache cache;
    const Volume vh = u->forward(in, &cache);
    const double k = 2.0 * min_snr_weight(t, sched) / double(vh.size());
    u->backward(cache, scale(sub(vh, v), k));
    p = u->params();
  };
  ParamSet ps = net.params();
  GradCheckOptions lo = o;
  lo.max_per_param = std::min<std::size_t>(o.max_per_param, 12);
  return grad_check(conditional ? "unet conditional (min-snr loss)" : "unet unconditional (min-snr loss)", ps, loss,
                    back, lo);
}

const std::vector<std::pair<std::string, Case>>& cases() {
  static const std::vector<std::pair<std::string, Case>> all = {
      {"linear", linear_case},
      {"conv3d-k3-s1", [](const GradCheckOptions& o) { return conv_case(o, 3, 1); }},
      {"conv3d-k3-s2", [](const GradCheckOptions& o) { return conv_case(o, 3, 2); }},
      {"conv3d-k1-s1", [](const GradCheckOptions& o) { return conv_case(o, 1, 1); }},
      {"groupnorm", groupnorm_case},
      {"activations", activation_case},
      {"resblock", resblock_case},
      {"cross-attention", attention_case},
      {"context-embedding", context_case},
      {"perceptual-loss", perceptual_case},
      {"discriminator", discriminator_case},
      {"vae", vae_case},
      {"unet-uncond", [](const GradCheckOptions& o) { return unet_case(o, false); }},
      {"unet-cond", [](const GradCheckOptions& o) { return unet_case(o, true); }},
  };
  return all;
}

}  // namespace

std::vector<std::string> gradcheck_case_names() {
  std::vector<std::string> names;
  for (const auto& [name, fn] : cases()) names.push_back(name);
  return names;
}

std::vector<GradCheckReport> run_gradcheck_suite(const GradCheckOptions& opts, const std::string& filter) {
  std::vector<GradCheckReport> out;
  for (const auto& [name, fn] : cases()) {
    if (!filter.empty() && name.find(filter) == std::string::npos) continue;
    GradCheckReport r = fn(opts);
    r.name = name;
    out.push_back(std::move(r));
  }
  if (out.empty()) throw ValidationError(concat("gradcheck: no case matches '", filter, "'"));
  return out;
}

}  // namespace land
