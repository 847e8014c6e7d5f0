#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "land/neural.hpp"
#include "land/unet.hpp"

namespace land {

// Tables are indexed by t = 0..T; entry 0 is the clean state (alpha_bar = 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sqrt_alpha_bar;
  std::vector<double> sqrt_one_minus_alpha_bar;
  std::vector<double> snr;

  void check_t(int t) const;
};

NoiseSchedule linear_schedule(int T = 1000, double beta1 = 1e-4, double betaT = 0.02);

Volume q_sample(const Volume& x0, int t, const Volume& eps, const NoiseSchedule& s);
Volume v_target(const Volume& x0, const Volume& eps, int t, const NoiseSchedule& s);
// Inverses of (z_t, v) -> x0 and -> eps.
Volume x0_from_v(const Volume& z_t, const Volume& v, int t, const NoiseSchedule& s);
Volume eps_from_v(const Volume& z_t, const Volume& v, int t, const NoiseSchedule& s);

double min_snr_weight(int t, const NoiseSchedule& s, double gamma = 5.0);
double diffusion_loss(const Volume& v_hat, const Volume& v, int t, const NoiseSchedule& s, double gamma = 5.0);

// One reverse step. `noise` is required for t > 1 and ignored at t = 1, where
// the predicted clean latent is returned.
Volume ddpm_step(const Volume& z_t, const Volume& v_hat, int t, const NoiseSchedule& s, const Volume* noise);

using Denoiser = std::function<Volume(const Volume& z_t, int t)>;

struct SampleOptions {
  // Clamp the predicted clean latent to +-clamp_value (debugging aid).
  bool clamp_x0 = false;
  double clamp_value = 3.0;
};

// z_T ~ N(0, I) from rng, then T ancestral steps.
Volume sample(const Denoiser& denoiser, const NoiseSchedule& s, const Shape& shape, Rng& rng,
              const SampleOptions& opts = {});
Volume sample(const Unet& unet, const NoiseSchedule& s, const Shape& shape, const std::optional<Volume>& mask_latent,
              Rng& rng, const SampleOptions& opts = {});

struct TrainBatch {
  Volume x0;
  std::optional<Volume> mask_latent;
};

struct TrainStepResult {
  double loss = 0.0;
  int t = 0;
  bool skipped = false;
};

// Draws t uniform in 1..T then eps, predicts v, backpropagates the weighted
// loss and takes one AdamW step. A non-finite loss or gradient skips the
// update (parameters untouched) and is reported on stderr.
TrainStepResult diffusion_train_step(const TrainBatch& batch, Unet& unet, const NoiseSchedule& s, Rng& rng,
                                     double gamma, const AdamWConfig& opt);

}  // namespace land
