#include "land/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace land {

void NoiseSchedule::check_t(int t) const {
  if (t < 1 || t > T) throw ValidationError(concat("timestep ", t, " outside [1, ", T, "]"));
}

NoiseSchedule linear_schedule(int T, double beta1, double betaT) {
  if (T < 2) throw ValidationError(concat("schedule needs T >= 2, got ", T));
  if (!(beta1 > 0 && beta1 < betaT && betaT < 1)) {
    throw ValidationError(concat("schedule needs 0 < beta1 < betaT < 1, got ", beta1, ", ", betaT));
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha.assign(T + 1, 1.0);
  s.alpha_bar.assign(T + 1, 1.0);
  s.sqrt_alpha_bar.assign(T + 1, 1.0);
  s.sqrt_one_minus_alpha_bar.assign(T + 1, 0.0);
  s.snr.assign(T + 1, INFINITY);
  for (int t = 1; t <= T; ++t) {
    s.beta[t] = beta1 + double(t - 1) / double(T - 1) * (betaT - beta1);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.sqrt_alpha_bar[t] = std::sqrt(s.alpha_bar[t]);
    s.sqrt_one_minus_alpha_bar[t] = std::sqrt(1.0 - s.alpha_bar[t]);
    s.snr[t] = s.alpha_bar[t] / (1.0 - s.alpha_bar[t]);
  }
  return s;
}

Volume q_sample(const Volume& x0, int t, const Volume& eps, const NoiseSchedule& s) {
  s.check_t(t);
  return lincomb(s.sqrt_alpha_bar[t], x0, s.sqrt_one_minus_alpha_bar[t], eps);
}

Volume v_target(const Volume& x0, const Volume& eps, int t, const NoiseSchedule& s) {
  s.check_t(t);
  return lincomb(s.sqrt_alpha_bar[t], eps, -s.sqrt_one_minus_alpha_bar[t], x0);
}

Volume x0_from_v(const Volume& z_t, const Volume& v, int t, const NoiseSchedule& s) {
  s.check_t(t);
  return lincomb(s.sqrt_alpha_bar[t], z_t, -s.sqrt_one_minus_alpha_bar[t], v);
}

Volume eps_from_v(const Volume& z_t, const Volume& v, int t, const NoiseSchedule& s) {
  s.check_t(t);
  return lincomb(s.sqrt_one_minus_alpha_bar[t], z_t, s.sqrt_alpha_bar[t], v);
}

double min_snr_weight(int t, const NoiseSchedule& s, double gamma) {
  s.check_t(t);
  if (!(gamma > 0)) throw ValidationError(concat("min-SNR gamma must be > 0, got ", gamma));
  return std::min(s.snr[t], gamma) / (s.snr[t] + 1.0);
}

double diffusion_loss(const Volume& v_hat, const Volume& v, int t, const NoiseSchedule& s, double gamma) {
  require_same_shape(v_hat, v, "diffusion_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double d = v_hat[i] - v[i];
    acc += d * d;
  }
  return min_snr_weight(t, s, gamma) * acc / double(v.size());
}

Volume ddpm_step(const Volume& z_t, const Volume& v_hat, int t, const NoiseSchedule& s, const Volume* noise) {
  s.check_t(t);
  require_same_shape(z_t, v_hat, "ddpm_step");
  const Volume x0 = x0_from_v(z_t, v_hat, t, s);
  if (t == 1) return x0;
  if (!noise) throw ValidationError(concat("ddpm_step: noise required at t=", t));
  require_same_shape(z_t, *noise, "ddpm_step noise");
  const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[t - 1];
  const double c0 = std::sqrt(ab_prev) * s.beta[t] / (1.0 - ab);
  const double ct = std::sqrt(s.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
  const double sigma = std::sqrt(s.beta[t] * (1.0 - ab_prev) / (1.0 - ab));
  Volume out(z_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c0 * x0[i] + ct * z_t[i] + sigma * (*noise)[i];
  return out;
}

Volume sample(const Denoiser& denoiser, const NoiseSchedule& s, const Shape& shape, Rng& rng,
              const SampleOptions& opts) {
  validate_shape(shape);
  Volume z = rng_normal(rng, shape);
  for (int t = s.T; t >= 1; --t) {
    Volume v = denoiser(z, t);
    if (opts.clamp_x0) {
      // Re-express the prediction so that x0 is clamped but eps is kept.
      Volume x0 = x0_from_v(z, v, t, s);
      const Volume eps = eps_from_v(z, v, t, s);
      for (double& x : x0.storage()) x = std::clamp(x, -opts.clamp_value, opts.clamp_value);
      v = v_target(x0, eps, t, s);
    }
    if (t > 1) {
      const Volume noise = rng_normal(rng, shape);
      z = ddpm_step(z, v, t, s, &noise);
    } else {
      z = ddpm_step(z, v, t, s, nullptr);
    }
    require_finite(z, "sample");
  }
  return z;
}

Volume sample(const Unet& unet, const NoiseSchedule& s, const Shape& shape, const std::optional<Volume>& mask_latent,
              Rng& rng, const SampleOptions& opts) {
  if (unet.config().max_t < s.T) throw ValidationError("schedule length exceeds the model's time range");
  std::optional<Matrix> ctx;
  if (unet.config().conditional) {
    if (!mask_latent) throw ValidationError("conditional model requires a mask latent for sampling");
    ctx = unet.context(*mask_latent);
  }
  Denoiser f = [&](const Volume& z, int t) {
    DenoiseInput in;
    in.z_t = z;
    in.t = t;
    in.mask_latent = mask_latent;
    in.context = ctx;
    return unet.denoise(in);
  };
  return sample(f, s, shape, rng, opts);
}

TrainStepResult diffusion_train_step(const TrainBatch& batch, Unet& unet, const NoiseSchedule& s, Rng& rng,
                                     double gamma, const AdamWConfig& opt) {
  TrainStepResult r;
  r.t = rng.uniform_int(1, s.T);
  const Volume eps = rng_normal(rng, batch.x0.shape());
  DenoiseInput in;
  in.z_t = q_sample(batch.x0, r.t, eps, s);
  in.t = r.t;
  in.mask_latent = batch.mask_latent;
  const Volume v = v_target(batch.x0, eps, r.t, s);
  Unet::Cache cache;
  const Volume vhat = unet.forward(in, &cache);
  r.loss = diffusion_loss(vhat, v, r.t, s, gamma);
  ParamSet& ps = unet.params();
  ps.zero_grad();
  if (!std::isfinite(r.loss)) {
    std::cerr << "diffusion: non-finite loss at step " << ps.step() << " (t=" << r.t << "), update skipped\n";
    r.skipped = true;
    return r;
  }
  const double w = min_snr_weight(r.t, s, gamma);
  Volume g(vhat.shape());
  const double k = 2.0 * w / double(v.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = k * (vhat[i] - v[i]);
  unet.backward(cache, g);
  try {
    adamw_step(ps, opt);
  } catch (const NumericalError& e) {
    std::cerr << "diffusion: " << e.what() << ", update skipped\n";
    ps.zero_grad();
    r.skipped = true;
  }
  return r;
}

}  // namespace land
