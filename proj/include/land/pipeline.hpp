#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "land/config.hpp"

namespace land {

namespace fs = std::filesystem;
using Json = nlohmann::json;

// Sub-streams of the global seed.
Rng seed_stream(std::uint64_t seed, std::string_view name);

// {config_hash, seed, build_id}, merged into every report and sidecar.
Json provenance(const RunConfig& cfg);

// Writes the report atomically as pretty JSON.
void write_report(const fs::path& path, const Json& report);

// phantom_0000.{vol,msk,json} ... plus manifest.jsonl and dataset.json.
Json phantom_gen(const RunConfig& cfg, int n, const fs::path& out, int threads);

struct TrainRunOptions {
  // Total step count; negative means train.steps from the config.
  long steps = -1;
  // Negative means train.checkpoint_every.
  long checkpoint_every = -1;
  bool resume = false;
  // JSONL loss log, one record per step (none when empty).
  fs::path log;
  // Progress to stderr every this many steps (0: silent).
  long print_every = 50;
};

// Checkpoint records: vae.*, disc.*, rng train, u64 step, string config.
Json vae_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, const TrainRunOptions& opts);

// Encodes to the posterior mean and decodes. The config comes from the
// checkpoint unless `cfg` is given, in which case the hashes must agree.
Json vae_reconstruct(const std::optional<RunConfig>& cfg, const fs::path& ckpt, const fs::path& in,
                     const fs::path& out);

struct DiffusionRunOptions : TrainRunOptions {
  CondMode mode = CondMode::nodule_lung_texture;
  // Writes the encoded full-resolution mask of the first record here.
  fs::path dump_mask;
};

// Checkpoint records: unet.*, rng train, u64 step, latent.mean/std,
// strings mode and config.
Json diffusion_train(const RunConfig& cfg, const fs::path& data, const fs::path& vae_ckpt, const fs::path& out,
                     const DiffusionRunOptions& opts);

struct SampleRunOptions {
  int n = 1;
  std::optional<fs::path> mask;
  int threads = 1;
  bool clamp_x0 = false;
  // Overrides the seed of the checkpoint's config.
  std::optional<std::uint64_t> seed;
};

// sample_000.vol ... plus samples.json in `out`.
Json sample_run(const std::optional<RunConfig>& cfg, const fs::path& ckpt, const fs::path& vae_ckpt,
                const fs::path& out, const SampleRunOptions& opts);

Json eval_fid_run(const std::optional<RunConfig>& cfg, const fs::path& real, const fs::path& synth, int threads);
Json eval_msssim_run(const std::optional<RunConfig>& cfg, const fs::path& set, std::optional<std::size_t> pairs,
                     int threads);

// Table rows {name, checked, max_rel_error, passed} plus overall status.
Json gradcheck_run(const std::string& filter, std::size_t max_per_param);

}  // namespace land
