#include "land/vae.hpp"

#include <algorithm>
#include <cmath>

#include "land/ops.hpp"

namespace land {

void VaeConfig::validate() const {
  if (levels != 3) throw ValidationError(concat("vae.levels must be 3 (4x compression), got ", levels));
  if (int(widths.size()) != levels) {
    throw ValidationError(concat("vae.widths needs ", levels, " entries, got ", widths.size()));
  }
  for (int w : widths)
    if (w < 1) throw ValidationError("vae.widths must be positive");
  if (blocks_per_level < 1) throw ValidationError("vae.blocks_per_level must be >= 1");
  if (latent_channels != 4) throw ValidationError(concat("vae.latent_channels is fixed at 4, got ", latent_channels));
  for (double w : {w_mae, w_lpips, w_adv, w_kl}) {
    if (!(w >= 0) || !std::isfinite(w)) throw ValidationError("vae loss weights must be finite and >= 0");
  }
  if (adv_warmup < 0) throw ValidationError("vae.adv_warmup must be >= 0");
  if (disc_widths.empty() || lpips_widths.empty()) throw ValidationError("vae feature widths must be non-empty");
}

// ---- feature pyramid -----------------------------------------------------------

FeaturePyramid::FeaturePyramid(std::vector<int> widths, std::uint64_t seed, int in_channels)
    : widths_(std::move(widths)), seed_(seed) {
  if (widths_.empty()) throw ValidationError("feature pyramid needs at least one stage");
  Rng rng(seed);
  int c = in_channels;
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    convs_.push_back(Conv3d::create(ps_, concat("stage", i), c, widths_[i], 3, 2, 1, rng));
    c = widths_[i];
  }
}

std::vector<Volume> FeaturePyramid::forward(const Volume& x, Cache* cache) const {
  std::vector<Volume> out;
  if (cache) {
    cache->convs.assign(convs_.size(), {});
    cache->pre.assign(convs_.size(), {});
  }
  const Volume* h = &x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    Volume pre = convs_[i].forward(ps_, *h, cache ? &cache->convs[i] : nullptr);
    out.push_back(silu(pre));
    if (cache) cache->pre[i] = std::move(pre);
    h = &out.back();
  }
  return out;
}

Volume FeaturePyramid::backward(const Cache& cache, const std::vector<Volume>& grads) const {
  Volume g;
  for (int i = int(convs_.size()) - 1; i >= 0; --i) {
    if (i < int(grads.size()) && !grads[i].empty()) {
      if (g.empty()) {
        g = grads[i];
      } else {
        add_inplace(g, grads[i]);
      }
    }
    if (g.empty()) continue;
    g = convs_[i].backward(ps_, cache.convs[i], silu_backward(cache.pre[i], g), false);
  }
  if (g.empty()) g = Volume(cache.convs[0].input.shape());
  return g;
}

std::vector<double> FeaturePyramid::embed(const Volume& x) const {
  const Volume last = forward(x).back();
  std::vector<double> e(last.channels());
  const std::size_t sp = last.shape().spatial();
  for (int c = 0; c < last.channels(); ++c) {
    const double* p = last.channel(c);
    double s = 0.0;
    for (std::size_t i = 0; i < sp; ++i) s += p[i];
    e[c] = s / double(sp);
  }
  return e;
}

namespace {

constexpr double kNormEps = 1e-10;

struct Normalized {
  Volume u;
  std::vector<double> norm;
};

Normalized unit_normalize(const Volume& f) {
  const std::size_t sp = f.shape().spatial();
  Normalized n{Volume(f.shape()), std::vector<double>(sp, 0.0)};
  for (int c = 0; c < f.channels(); ++c) {
    const double* p = f.channel(c);
    for (std::size_t i = 0; i < sp; ++i) n.norm[i] += p[i] * p[i];
  }
  for (auto& r : n.norm) r = std::sqrt(r);
  for (int c = 0; c < f.channels(); ++c) {
    const double* p = f.channel(c);
    double* u = n.u.channel(c);
    for (std::size_t i = 0; i < sp; ++i) u[i] = p[i] / (n.norm[i] + kNormEps);
  }
  return n;
}

Volume unit_normalize_backward(const Volume& f, const Normalized& n, const Volume& gu) {
  const std::size_t sp = f.shape().spatial();
  std::vector<double> dot(sp, 0.0);
  for (int c = 0; c < f.channels(); ++c) {
    const double* p = f.channel(c);
    const double* g = gu.channel(c);
    for (std::size_t i = 0; i < sp; ++i) dot[i] += p[i] * g[i];
  }
  Volume gf(f.shape());
  for (int c = 0; c < f.channels(); ++c) {
    const double* p = f.channel(c);
    const double* g = gu.channel(c);
    double* o = gf.channel(c);
    for (std::size_t i = 0; i < sp; ++i) {
      const double r = n.norm[i];
      const double d = r + kNormEps;
      o[i] = g[i] / d;
      if (r > 0) o[i] -= p[i] * dot[i] / (r * d * d);
    }
  }
  return gf;
}

}  // namespace

double perceptual_loss(const Volume& x, const Volume& y, const FeaturePyramid& net, Volume* grad_y) {
  require_same_shape(x, y, "perceptual_loss");
  const auto fx = net.forward(x);
  FeaturePyramid::Cache cache;
  const auto fy = net.forward(y, grad_y ? &cache : nullptr);
  const double levels = double(fx.size());
  double total = 0.0;
  std::vector<Volume> grads(fx.size());
  for (std::size_t l = 0; l < fx.size(); ++l) {
    const Normalized nx = unit_normalize(fx[l]);
    const Normalized ny = unit_normalize(fy[l]);
    const double voxels = double(fx[l].shape().spatial());
    double acc = 0.0;
    Volume gu(fy[l].shape());
    for (std::size_t i = 0; i < nx.u.size(); ++i) {
      const double d = ny.u[i] - nx.u[i];
      acc += d * d;
      gu[i] = 2.0 * d / (voxels * levels);
    }
    total += acc / voxels;
    if (grad_y) grads[l] = unit_normalize_backward(fy[l], ny, gu);
  }
  if (grad_y) *grad_y = net.backward(cache, grads);
  return total / levels;
}

// ---- discriminator -------------------------------------------------------------

namespace {
constexpr double kLeak = 0.2;
}

Discriminator::Discriminator(std::vector<int> widths, std::uint64_t seed) {
  if (widths.empty()) throw ValidationError("discriminator needs at least one layer");
  Rng rng(seed);
  int c = 1;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    convs_.push_back(Conv3d::create(ps_, concat("disc.conv", i), c, widths[i], 3, 2, 1, rng));
    c = widths[i];
  }
  head_ = Conv3d::create(ps_, "disc.head", c, 1, 3, 1, 1, rng);
}

Volume Discriminator::forward(const Volume& x, Cache* cache) const {
  if (cache) {
    cache->convs.assign(convs_.size(), {});
    cache->pre.assign(convs_.size(), {});
  }
  Volume h = x;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    Volume pre = convs_[i].forward(ps_, h, cache ? &cache->convs[i] : nullptr);
    h = leaky_relu(pre, kLeak);
    if (cache) cache->pre[i] = std::move(pre);
  }
  return head_.forward(ps_, h, cache ? &cache->head : nullptr);
}

Volume Discriminator::backward(const Cache& cache, const Volume& grad_logits, bool param_grads) {
  Volume g = head_.backward(ps_, cache.head, grad_logits, param_grads);
  for (int i = int(convs_.size()) - 1; i >= 0; --i) {
    g = leaky_relu_backward(cache.pre[i], g, kLeak);
    g = convs_[i].backward(ps_, cache.convs[i], g, param_grads);
  }
  return g;
}

AdvLosses adversarial_losses_from_logits(const Volume& real_logits, const Volume& fake_logits) {
  require_same_shape(real_logits, fake_logits, "adversarial_losses");
  double d = 0.0, g = 0.0;
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    const double r = real_logits[i] - 1.0, f = fake_logits[i];
    d += r * r + f * f;
    g += (f - 1.0) * (f - 1.0);
  }
  const double n = double(real_logits.size());
  return {0.5 * d / n, 0.5 * g / n};
}

AdvLosses adversarial_losses(const Volume& real, const Volume& fake, const Discriminator& disc) {
  require_same_shape(real, fake, "adversarial_losses");
  return adversarial_losses_from_logits(disc.forward(real), disc.forward(fake));
}

// ---- KL / reparameterization ---------------------------------------------------

double kl_loss(const Volume& mu, const Volume& logvar) {
  require_same_shape(mu, logvar, "kl_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    acc += 0.5 * (mu[i] * mu[i] + std::exp(logvar[i]) - 1.0 - logvar[i]);
  }
  return acc / double(mu.size());
}

Volume reparameterize(const Volume& mu, const Volume& logvar, const Volume& eps) {
  require_same_shape(mu, logvar, "reparameterize");
  require_same_shape(mu, eps, "reparameterize");
  Volume z(mu.shape());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = mu[i] + std::exp(0.5 * logvar[i]) * eps[i];
  return z;
}

Volume reparameterize(const Volume& mu, const Volume& logvar, Rng& rng) {
  require_same_shape(mu, logvar, "reparameterize");
  return reparameterize(mu, logvar, rng_normal(rng, mu.shape()));
}

// ---- VAE -------------------------------------------------------------------------

Vae::Vae(const VaeConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int L = cfg_.levels;
  const auto& w = cfg_.widths;
  const int g = cfg_.groups;
  enc_in_ = Conv3d::create(ps_, "enc.conv_in", 1, w[0], 3, 1, 1, rng);
  enc_blocks_.resize(L);
  for (int l = 0; l < L; ++l) {
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      enc_blocks_[l].push_back(ResBlock::create(ps_, concat("enc.level", l, ".block", b), w[l], w[l], 0, rng, g));
    }
    if (l < L - 1) enc_downs_.push_back(Conv3d::create(ps_, concat("enc.down", l), w[l], w[l + 1], 3, 2, 1, rng));
  }
  enc_norm_ = GroupNorm::create(ps_, "enc.norm_out", w[L - 1], g);
  enc_out_ = Conv3d::create(ps_, "enc.conv_out", w[L - 1], 2 * cfg_.latent_channels, 3, 1, 1, rng);

  dec_in_ = Conv3d::create(ps_, "dec.conv_in", cfg_.latent_channels, w[L - 1], 3, 1, 1, rng);
  dec_blocks_.resize(L);
  dec_ups_.resize(L);
  for (int l = L - 1; l >= 0; --l) {
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      dec_blocks_[l].push_back(ResBlock::create(ps_, concat("dec.level", l, ".block", b), w[l], w[l], 0, rng, g));
    }
    if (l > 0) dec_ups_[l] = Conv3d::create(ps_, concat("dec.up", l), w[l], w[l - 1], 3, 1, 1, rng);
  }
  dec_norm_ = GroupNorm::create(ps_, "dec.norm_out", w[0], g);
  dec_out_ = Conv3d::create(ps_, "dec.conv_out", w[0], 1, 3, 1, 1, rng);
}

Shape Vae::latent_shape(const Shape& s) const {
  const int f = cfg_.compression();
  if (s.c != 1) throw ShapeError(concat("vae expects a 1-channel volume, got ", s.str()));
  if (s.d % f || s.h % f || s.w % f) throw ShapeError(concat("volume dims ", s.str(), " not divisible by ", f));
  return {cfg_.latent_channels, s.d / f, s.h / f, s.w / f};
}

Encoded Vae::encode(const Volume& x, EncoderCache* cache) const {
  latent_shape(x.shape());
  require_finite(x, "encode input");
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  const int L = cfg_.levels;
  c.blocks.assign(L, {});
  c.downs.assign(L - 1, {});
  Volume h = enc_in_.forward(ps_, x, &c.in);
  for (int l = 0; l < L; ++l) {
    c.blocks[l].resize(enc_blocks_[l].size());
    for (std::size_t b = 0; b < enc_blocks_[l].size(); ++b) h = enc_blocks_[l][b].forward(ps_, h, nullptr, &c.blocks[l][b]);
    if (l < L - 1) h = enc_downs_[l].forward(ps_, h, &c.downs[l]);
  }
  c.pre_act = enc_norm_.forward(ps_, h, &c.norm);
  const Volume out = enc_out_.forward(ps_, silu(c.pre_act), &c.out);
  Encoded e;
  e.mu = slice_channels(out, 0, cfg_.latent_channels);
  c.raw_logvar = slice_channels(out, cfg_.latent_channels, cfg_.latent_channels);
  e.logvar = c.raw_logvar;
  for (double& v : e.logvar.storage()) v = std::clamp(v, kLogvarMin, kLogvarMax);
  c.filled = true;
  require_finite(e.mu, "encode mu");
  return e;
}

Volume Vae::encode_backward(const EncoderCache& c, const Volume& grad_mu, const Volume& grad_logvar) {
  if (!c.filled) throw ValidationError("encoder backward: missing saved activations");
  Volume glv = grad_logvar;
  for (std::size_t i = 0; i < glv.size(); ++i) {
    if (c.raw_logvar[i] < kLogvarMin || c.raw_logvar[i] > kLogvarMax) glv[i] = 0.0;
  }
  Volume g = enc_out_.backward(ps_, c.out, concat_channels(grad_mu, glv));
  g = silu_backward(c.pre_act, g);
  g = enc_norm_.backward(ps_, c.norm, g);
  for (int l = cfg_.levels - 1; l >= 0; --l) {
    if (l < cfg_.levels - 1) g = enc_downs_[l].backward(ps_, c.downs[l], g);
    for (int b = int(enc_blocks_[l].size()) - 1; b >= 0; --b) g = enc_blocks_[l][b].backward(ps_, c.blocks[l][b], g);
  }
  return enc_in_.backward(ps_, c.in, g);
}

Volume Vae::decode(const Volume& z, DecoderCache* cache) const {
  const Shape& s = z.shape();
  if (s.c != cfg_.latent_channels) {
    throw ShapeError(concat("decode expects ", cfg_.latent_channels, " latent channels, got ", s.str()));
  }
  require_finite(z, "decode input");
  DecoderCache local;
  DecoderCache& c = cache ? *cache : local;
  const int L = cfg_.levels;
  c.blocks.assign(L, {});
  c.ups.assign(L, {});
  Volume h = dec_in_.forward(ps_, z, &c.in);
  for (int l = L - 1; l >= 0; --l) {
    c.blocks[l].resize(dec_blocks_[l].size());
    for (std::size_t b = 0; b < dec_blocks_[l].size(); ++b) h = dec_blocks_[l][b].forward(ps_, h, nullptr, &c.blocks[l][b]);
    if (l > 0) h = dec_ups_[l].forward(ps_, upsample_nearest3d(h, 2), &c.ups[l]);
  }
  c.pre_act = dec_norm_.forward(ps_, h, &c.norm);
  c.y = land::tanh(dec_out_.forward(ps_, silu(c.pre_act), &c.out));
  c.filled = true;
  return c.y;
}

Volume Vae::decode_backward(const DecoderCache& c, const Volume& grad_x) {
  if (!c.filled) throw ValidationError("decoder backward: missing saved activations");
  Volume g = dec_out_.backward(ps_, c.out, tanh_backward(c.y, grad_x));
  g = silu_backward(c.pre_act, g);
  g = dec_norm_.backward(ps_, c.norm, g);
  for (int l = 0; l < cfg_.levels; ++l) {
    if (l > 0) g = upsample_nearest3d_backward(dec_ups_[l].backward(ps_, c.ups[l], g), 2);
    for (int b = int(dec_blocks_[l].size()) - 1; b >= 0; --b) g = dec_blocks_[l][b].backward(ps_, c.blocks[l][b], g);
  }
  return dec_in_.backward(ps_, c.in, g);
}

// ---- training ------------------------------------------------------------------

namespace {

void require_term(double v, const char* name) {
  if (!std::isfinite(v)) throw NumericalError(concat("vae: non-finite ", name, " loss, step aborted"));
}

}  // namespace

VaeLosses vae_generator_loss(Vae& vae, Discriminator& disc, const FeaturePyramid& lpips, const Volume& x,
                             const Volume& eps, bool adversarial, bool backward) {
  const VaeConfig& cfg = vae.config();
  VaeLosses r;
  r.step = vae.params().step();
  Vae::EncoderCache ec;
  const Encoded e = vae.encode(x, &ec);
  const Volume z = reparameterize(e.mu, e.logvar, eps);
  Vae::DecoderCache dc;
  const Volume xhat = vae.decode(z, &dc);

  r.mae = mean_abs_diff(x, xhat);
  Volume g_lpips;
  r.lpips = cfg.w_lpips > 0 || !backward ? perceptual_loss(x, xhat, lpips, backward ? &g_lpips : nullptr) : 0.0;
  r.kl = kl_loss(e.mu, e.logvar);
  Discriminator::Cache fc;
  Volume fake_logits;
  if (adversarial) {
    fake_logits = disc.forward(xhat, &fc);
    double acc = 0.0;
    for (double v : fake_logits.values()) acc += (v - 1.0) * (v - 1.0);
    r.adv_g = 0.5 * acc / double(fake_logits.size());
  }
  require_term(r.mae, "mae");
  require_term(r.lpips, "lpips");
  require_term(r.adv_g, "adv");
  require_term(r.kl, "kl");
  r.total = cfg.w_mae * r.mae + cfg.w_lpips * r.lpips + cfg.w_adv * r.adv_g + cfg.w_kl * r.kl;
  if (!backward) return r;

  const double n = double(x.size());
  Volume gx(xhat.shape());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    const double d = xhat[i] - x[i];
    gx[i] = cfg.w_mae * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n;
  }
  if (cfg.w_lpips > 0) add_inplace(gx, scale(g_lpips, cfg.w_lpips));
  if (adversarial && cfg.w_adv > 0) {
    Volume gl(fake_logits.shape());
    const double k = cfg.w_adv / double(fake_logits.size());
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] = k * (fake_logits[i] - 1.0);
    add_inplace(gx, disc.backward(fc, gl, false));
  }
  const Volume gz = vae.decode_backward(dc, gx);
  const double m = double(e.mu.size());
  Volume gmu(e.mu.shape()), glv(e.mu.shape());
  for (std::size_t i = 0; i < gmu.size(); ++i) {
    const double sd = std::exp(0.5 * e.logvar[i]);
    gmu[i] = gz[i] + cfg.w_kl * e.mu[i] / m;
    glv[i] = gz[i] * eps[i] * 0.5 * sd + cfg.w_kl * 0.5 * (sd * sd - 1.0) / m;
  }
  vae.encode_backward(ec, gmu, glv);
  return r;
}

VaeLosses vae_train_step(const Volume& x, Vae& vae, Discriminator& disc, const FeaturePyramid& lpips, Rng& rng,
                         const VaeTrainOptions& opts) {
  const Shape ls = vae.latent_shape(x.shape());
  const Volume eps = rng_normal(rng, ls);
  const bool adversarial = vae.params().step() >= vae.config().adv_warmup;
  vae.params().zero_grad();
  VaeLosses r;
  try {
    r = vae_generator_loss(vae, disc, lpips, x, eps, adversarial, true);
    adamw_step(vae.params(), opts.gen);
  } catch (const NumericalError&) {
    vae.params().zero_grad();
    throw;
  }
  if (!adversarial) return r;

  // Discriminator update on the post-step reconstruction of the same draw.
  const Encoded e = vae.encode(x);
  const Volume fake = vae.decode(reparameterize(e.mu, e.logvar, eps));
  Discriminator::Cache rc, fc;
  const Volume real_logits = disc.forward(x, &rc);
  const Volume fake_logits = disc.forward(fake, &fc);
  const AdvLosses adv = adversarial_losses_from_logits(real_logits, fake_logits);
  r.adv_d = adv.d_loss;
  if (!std::isfinite(adv.d_loss)) throw NumericalError("vae: non-finite discriminator loss, step aborted");
  disc.params().zero_grad();
  const double k = 1.0 / double(real_logits.size());
  Volume gr(real_logits.shape()), gf(fake_logits.shape());
  for (std::size_t i = 0; i < gr.size(); ++i) {
    gr[i] = k * (real_logits[i] - 1.0);
    gf[i] = k * fake_logits[i];
  }
  disc.backward(rc, gr, true);
  disc.backward(fc, gf, true);
  adamw_step(disc.params(), opts.disc);
  return r;
}

// ---- latent statistics -----------------------------------------------------------

Volume LatentStats::standardize(const Volume& z) const {
  if (std::size_t(z.channels()) != mean.size()) throw ShapeError("latent stats channel mismatch");
  Volume out = z;
  const std::size_t sp = z.shape().spatial();
  for (int c = 0; c < z.channels(); ++c) {
    double* p = out.channel(c);
    for (std::size_t i = 0; i < sp; ++i) p[i] = (p[i] - mean[c]) / std[c];
  }
  return out;
}

Volume LatentStats::destandardize(const Volume& z) const {
  if (std::size_t(z.channels()) != mean.size()) throw ShapeError("latent stats channel mismatch");
  Volume out = z;
  const std::size_t sp = z.shape().spatial();
  for (int c = 0; c < z.channels(); ++c) {
    double* p = out.channel(c);
    for (std::size_t i = 0; i < sp; ++i) p[i] = p[i] * std[c] + mean[c];
  }
  return out;
}

LatentStats compute_latent_stats(std::span<const Volume> latents) {
  if (latents.empty()) throw ValidationError("latent stats: no latents");
  const int C = latents[0].channels();
  LatentStats s;
  s.mean.assign(C, 0.0);
  s.std.assign(C, 0.0);
  std::vector<double> count(C, 0.0);
  for (const auto& z : latents) {
    if (z.channels() != C) throw ShapeError("latent stats: channel counts differ");
    const std::size_t sp = z.shape().spatial();
    for (int c = 0; c < C; ++c) {
      const double* p = z.channel(c);
      for (std::size_t i = 0; i < sp; ++i) s.mean[c] += p[i];
      count[c] += double(sp);
    }
  }
  for (int c = 0; c < C; ++c) s.mean[c] /= count[c];
  for (const auto& z : latents) {
    const std::size_t sp = z.shape().spatial();
    for (int c = 0; c < C; ++c) {
      const double* p = z.channel(c);
      for (std::size_t i = 0; i < sp; ++i) s.std[c] += (p[i] - s.mean[c]) * (p[i] - s.mean[c]);
    }
  }
  for (int c = 0; c < C; ++c) s.std[c] = std::max(std::sqrt(s.std[c] / count[c]), kLatentStdFloor);
  return s;
}

LatentStats compute_latent_stats(const Vae& vae, std::span<const Volume> volumes) {
  if (volumes.size() < 2) throw ValidationError(concat("latent stats need >= 2 volumes, got ", volumes.size()));
  std::vector<Volume> mus;
  for (const auto& v : volumes) mus.push_back(vae.encode(v).mu);
  return compute_latent_stats(mus);
}

}  // namespace land
