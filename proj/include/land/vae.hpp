#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "land/neural.hpp"

namespace land {

struct VaeConfig {
  int levels = 3;
  int blocks_per_level = 1;
  std::vector<int> widths{16, 32, 64};
  int latent_channels = 4;
  int groups = 8;
  double w_mae = 1.0;
  double w_lpips = 1.0;
  double w_adv = 0.1;
  double w_kl = 1e-6;
  long adv_warmup = 1000;
  std::vector<int> disc_widths{16, 32, 64};
  std::vector<int> lpips_widths{8, 16, 32};
  std::uint64_t lpips_seed = 0;

  int compression() const { return 1 << (levels - 1); }
  void validate() const;
};

struct Encoded {
  Volume mu;
  Volume logvar;
};

constexpr double kLogvarMin = -30.0;
constexpr double kLogvarMax = 20.0;

// Frozen stride-2 conv pyramid with SiLU after every stage. Serves as the
// perceptual-loss network and as the default metrics extractor.
class FeaturePyramid {
 public:
  FeaturePyramid(std::vector<int> widths, std::uint64_t seed, int in_channels = 1);

  struct Cache {
    std::vector<Conv3d::Cache> convs;
    std::vector<Volume> pre;
  };

  // SiLU outputs of every stage.
  std::vector<Volume> forward(const Volume& x, Cache* cache = nullptr) const;
  // Input gradient from per-level feature gradients (empty entries allowed).
  Volume backward(const Cache& cache, const std::vector<Volume>& grads) const;
  // Global average pool of the last stage.
  std::vector<double> embed(const Volume& x) const;

  int dim() const { return widths_.back(); }
  std::uint64_t seed() const { return seed_; }
  const std::vector<int>& widths() const { return widths_; }

 private:
  std::vector<int> widths_;
  std::uint64_t seed_;
  mutable ParamSet ps_;
  std::vector<Conv3d> convs_;
};

// Mean over levels of the mean squared distance between unit-normalized
// (across channels, per voxel) features. grad_y, when given, receives the
// gradient with respect to y.
double perceptual_loss(const Volume& x, const Volume& y, const FeaturePyramid& net, Volume* grad_y = nullptr);

// Strided conv stack with LeakyReLU(0.2) and a 1-channel patch-logit head.
class Discriminator {
 public:
  Discriminator(std::vector<int> widths, std::uint64_t seed);

  struct Cache {
    std::vector<Conv3d::Cache> convs;
    std::vector<Volume> pre;
    Conv3d::Cache head;
  };

  Volume forward(const Volume& x, Cache* cache = nullptr) const;
  // Returns the input gradient; parameter gradients only when param_grads.
  Volume backward(const Cache& cache, const Volume& grad_logits, bool param_grads);

  ParamSet& params() { return ps_; }
  const ParamSet& params() const { return ps_; }

 private:
  ParamSet ps_;
  std::vector<Conv3d> convs_;
  Conv3d head_;
};

struct AdvLosses {
  double d_loss = 0.0;
  double g_loss = 0.0;
};

// Least-squares GAN losses from patch logits.
AdvLosses adversarial_losses_from_logits(const Volume& real_logits, const Volume& fake_logits);
AdvLosses adversarial_losses(const Volume& real, const Volume& fake, const Discriminator& disc);

double kl_loss(const Volume& mu, const Volume& logvar);
Volume reparameterize(const Volume& mu, const Volume& logvar, const Volume& eps);
Volume reparameterize(const Volume& mu, const Volume& logvar, Rng& rng);

class Vae {
 public:
  Vae(const VaeConfig& cfg, std::uint64_t seed);

  const VaeConfig& config() const { return cfg_; }
  ParamSet& params() { return ps_; }
  const ParamSet& params() const { return ps_; }

  struct EncoderCache {
    Conv3d::Cache in;
    std::vector<std::vector<ResBlock::Cache>> blocks;
    std::vector<Conv3d::Cache> downs;
    GroupNorm::Cache norm;
    Volume pre_act;
    Conv3d::Cache out;
    Volume raw_logvar;
    bool filled = false;
  };
  struct DecoderCache {
    Conv3d::Cache in;
    std::vector<std::vector<ResBlock::Cache>> blocks;
    std::vector<Conv3d::Cache> ups;
    GroupNorm::Cache norm;
    Volume pre_act;
    Conv3d::Cache out;
    Volume y;
    bool filled = false;
  };

  Encoded encode(const Volume& x, EncoderCache* cache = nullptr) const;
  Volume decode(const Volume& z, DecoderCache* cache = nullptr) const;
  // Accumulate parameter gradients; return the input gradient.
  Volume encode_backward(const EncoderCache& cache, const Volume& grad_mu, const Volume& grad_logvar);
  Volume decode_backward(const DecoderCache& cache, const Volume& grad_x);

  Shape latent_shape(const Shape& image) const;

 private:
  VaeConfig cfg_;
  ParamSet ps_;
  Conv3d enc_in_;
  std::vector<std::vector<ResBlock>> enc_blocks_;
  std::vector<Conv3d> enc_downs_;
  GroupNorm enc_norm_;
  Conv3d enc_out_;
  Conv3d dec_in_;
  std::vector<std::vector<ResBlock>> dec_blocks_;
  std::vector<Conv3d> dec_ups_;  // dec_ups_[l] maps level l to level l - 1 (l >= 1)
  GroupNorm dec_norm_;
  Conv3d dec_out_;
};

struct VaeLosses {
  long step = 0;
  double mae = 0.0;
  double lpips = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

// Weighted generator loss for a fixed reparameterization noise eps. With
// `adversarial` false the adversarial term is exactly 0. When `backward` is
// set, parameter gradients of the weighted sum are accumulated into the VAE
// (discriminator gradients are untouched). Non-finite terms throw
// NumericalError naming the term, before any gradient is written.
VaeLosses vae_generator_loss(Vae& vae, Discriminator& disc, const FeaturePyramid& lpips, const Volume& x,
                             const Volume& eps, bool adversarial, bool backward);

struct VaeTrainOptions {
  AdamWConfig gen;
  AdamWConfig disc;
};

// One generator AdamW step, then one discriminator step once the generator
// step index reaches the warmup length.
VaeLosses vae_train_step(const Volume& x, Vae& vae, Discriminator& disc, const FeaturePyramid& lpips, Rng& rng,
                         const VaeTrainOptions& opts);

struct LatentStats {
  std::vector<double> mean;
  std::vector<double> std;

  Volume standardize(const Volume& z) const;
  Volume destandardize(const Volume& z) const;
};

constexpr double kLatentStdFloor = 1e-6;

// Per-channel statistics pooled over every voxel of every latent.
LatentStats compute_latent_stats(std::span<const Volume> latents);
// Encodes each volume and pools the statistics of mu.
LatentStats compute_latent_stats(const Vae& vae, std::span<const Volume> volumes);

}  // namespace land
