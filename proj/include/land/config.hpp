#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "land/checkpoint.hpp"
#include "land/mask.hpp"
#include "land/phantom.hpp"
#include "land/unet.hpp"
#include "land/vae.hpp"

namespace land {

struct DiffusionSettings {
  int T = 1000;
  double beta1 = 1e-4;
  double betaT = 0.02;
  double gamma = 5.0;
  bool standardize_latents = true;
};

struct TrainSettings {
  double lr_vae = 1e-4;
  double lr_unet = 1e-5;
  long steps = 2000;
  long checkpoint_every = 500;
};

struct EvalSettings {
  std::size_t pairs = 100;
  std::uint64_t extractor_seed = 1;
};

struct RunConfig {
  PhantomConfig data;
  VaeConfig vae;
  UnetConfig unet;
  DiffusionSettings diffusion;
  TrainSettings train;
  EvalSettings eval;
  std::uint64_t seed = 0;
  CondMode mode = CondMode::nodule_lung_texture;

  // Cross-section checks (latent channels, timesteps, spatial divisibility).
  void validate() const;
  // The U-Net config with `conditional` and `max_t` filled in for `m`.
  UnetConfig unet_for(CondMode m) const;
};

// Missing keys take defaults; unknown keys are rejected.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
std::string dump_config(const RunConfig& cfg);

// SHA-256 of the canonical JSON of the sections that define the models and
// data (data, vae, unet, diffusion). The seed, step counts, learning rates,
// evaluation knobs and conditioning mode are excluded: a checkpoint can be
// resumed under a different run length or sampled under another seed.
Digest config_hash(const RunConfig& cfg);

}  // namespace land
