#include "land/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "land/diffusion.hpp"
#include "land/gradcheck.hpp"
#include "land/io.hpp"
#include "land/metrics.hpp"
#include "land/parallel.hpp"

namespace land {

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

std::string stem_name(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%04zu", prefix, i);
  return buf;
}

void write_sidecar(const fs::path& artifact, const Json& info) {
  write_report(fs::path(artifact.string() + ".json"), info);
}

DatasetManifest load_dataset(const fs::path& p) {
  if (fs::is_regular_file(p)) return load_manifest(p);
  if (fs::is_directory(p) && fs::exists(p / "manifest.jsonl")) return load_manifest(p / "manifest.jsonl");
  DatasetManifest m = build_manifest(p);
  for (auto& r : m) {
    r.volume_path = (p / r.volume_path).string();
    r.mask_path = (p / r.mask_path).string();
  }
  return m;
}

std::vector<Volume> read_volumes(const std::vector<fs::path>& paths, int threads) {
  std::vector<Volume> out(paths.size());
  parallel_for(paths.size(), threads, [&](std::size_t i) { out[i] = read_volume(paths[i]); });
  return out;
}

Checkpoint new_checkpoint(const RunConfig& cfg) {
  Checkpoint c;
  c.config_hash = config_hash(cfg);
  c.add_string("config", dump_config(cfg));
  c.add_string("build_id", build_id());
  c.add_u64("seed", cfg.seed);
  return c;
}

// The explicit config wins but must describe the same models.
RunConfig config_from(const Checkpoint& ck, const std::optional<RunConfig>& explicit_cfg, const std::string& what) {
  if (explicit_cfg) {
    require_hash(ck, config_hash(*explicit_cfg), what);
    return *explicit_cfg;
  }
  return parse_config(ck.string("config"));
}

NoiseSchedule schedule_of(const RunConfig& cfg) {
  return linear_schedule(cfg.diffusion.T, cfg.diffusion.beta1, cfg.diffusion.betaT);
}

Vae load_vae(const RunConfig& cfg, const Checkpoint& ck) {
  Vae vae(cfg.vae, 0);
  load_params(ck, "vae", vae.params(), false);
  return vae;
}

void add_stats(Checkpoint& ck, const LatentStats& s) {
  ck.add("latent.mean", {std::uint32_t(s.mean.size())}, s.mean);
  ck.add("latent.std", {std::uint32_t(s.std.size())}, s.std);
}

LatentStats read_stats(const Checkpoint& ck) {
  LatentStats s;
  const auto& m = ck.get("latent.mean");
  const auto& d = ck.get("latent.std");
  s.mean.assign(m.data.begin(), m.data.end());
  s.std.assign(d.data.begin(), d.data.end());
  return s;
}

LatentStats identity_stats(int channels) {
  LatentStats s;
  s.mean.assign(channels, 0.0);
  s.std.assign(channels, 1.0);
  return s;
}

long total_steps(const RunConfig& cfg, const TrainRunOptions& o) { return o.steps >= 0 ? o.steps : cfg.train.steps; }

long cadence(const RunConfig& cfg, const TrainRunOptions& o) {
  const long every = o.checkpoint_every > 0 ? o.checkpoint_every : cfg.train.checkpoint_every;
  if (o.checkpoint_every == 0) throw ValidationError("--checkpoint-every must be > 0");
  return every;
}

// Appends one JSON object per line; the file is reopened per write so an
// interrupted run leaves every completed line intact.
class LossLog {
 public:
  LossLog(const fs::path& p, bool append) : path_(p) {
    if (!path_.empty() && !append) std::ofstream(path_, std::ios::trunc);
  }
  void write(const Json& j) {
    if (path_.empty()) return;
    std::ofstream f(path_, std::ios::app);
    f << j.dump() << "\n";
  }

 private:
  fs::path path_;
};

std::vector<double> unique_values(const Volume& v) {
  std::set<double> s(v.values().begin(), v.values().end());
  return {s.begin(), s.end()};
}

}  // namespace

Rng seed_stream(std::uint64_t seed, std::string_view name) { return Rng(seed).fork(name); }

Json provenance(const RunConfig& cfg) {
  return {{"config_hash", to_hex(config_hash(cfg))}, {"seed", cfg.seed}, {"build_id", build_id()}};
}

void write_report(const fs::path& path, const Json& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, report.dump(2) + "\n");
}

// ---- phantom gen -----------------------------------------------------------

Json phantom_gen(const RunConfig& cfg, int n, const fs::path& out, int threads) {
  if (n < 0) throw ValidationError("phantom gen: --n must be >= 0");
  cfg.data.validate();
  fs::create_directories(out);
  const Rng data = seed_stream(cfg.seed, "data");
  std::vector<std::size_t> nodules(n);
  parallel_for(n, threads, [&](std::size_t i) {
    const std::uint64_t seed = data.fork(i).seed();
    Rng rng(seed);
    const Phantom p = generate_phantom(cfg.data, rng);
    write_phantom(out, stem_name("phantom", i), p, seed);
    nodules[i] = p.nodules.size();
  });
  const DatasetManifest m = build_manifest(out);
  write_manifest(out / "manifest.jsonl", m);
  Json rep = provenance(cfg);
  rep["command"] = "phantom gen";
  rep["count"] = n;
  rep["nodules"] = nodules;
  rep["manifest"] = (out / "manifest.jsonl").string();
  write_report(out / "dataset.json", rep);
  log_line(concat("phantom gen: wrote ", n, " phantoms to ", out.string()));
  return rep;
}

// ---- vae -------------------------------------------------------------------

Json vae_train(const RunConfig& cfg, const fs::path& data, const fs::path& out, const TrainRunOptions& opts) {
  cfg.validate();
  const long steps = total_steps(cfg, opts);
  const long every = cadence(cfg, opts);
  const std::vector<Volume> volumes = read_volumes(list_volumes(data), 1);
  if (volumes.empty()) throw ValidationError(concat("vae train: no volumes in ", data.string()));
  const Shape want{1, cfg.data.depth, cfg.data.height, cfg.data.width};
  for (const Volume& v : volumes)
    if (v.shape() != want)
      throw ShapeError(concat("vae train: volume shape ", v.shape().str(), " != config ", want.str()));

  const Rng init = seed_stream(cfg.seed, "init");
  Vae vae(cfg.vae, init.fork("vae").seed());
  Discriminator disc(cfg.vae.disc_widths, init.fork("disc").seed());
  const FeaturePyramid lpips(cfg.vae.lpips_widths, cfg.vae.lpips_seed);
  Rng rng = seed_stream(cfg.seed, "train").fork("vae");
  long step = 0;
  if (opts.resume && fs::exists(out)) {
    const Checkpoint ck = read_checkpoint(out);
    require_hash(ck, config_hash(cfg), "vae train --resume");
    load_params(ck, "vae", vae.params());
    load_params(ck, "disc", disc.params());
    rng = ck.rng("train");
    step = long(ck.u64("step"));
    log_line(concat("vae train: resumed at step ", step));
  }
  VaeTrainOptions to;
  to.gen.lr = cfg.train.lr_vae;
  to.disc.lr = cfg.train.lr_vae;

  auto save = [&]() {
    vae.params().round_to_float();
    disc.params().round_to_float();
    Checkpoint ck = new_checkpoint(cfg);
    ck.add_string("kind", "vae");
    ck.add_u64("step", std::uint64_t(step));
    ck.add_rng("train", rng);
    append_params(ck, "vae", vae.params());
    append_params(ck, "disc", disc.params());
    write_checkpoint(out, ck);
  };

  LossLog log(opts.log, opts.resume && step > 0);
  VaeLosses last;
  for (; step < steps;) {
    const int idx = rng.uniform_int(0, int(volumes.size()) - 1);
    last = vae_train_step(volumes[idx], vae, disc, lpips, rng, to);
    ++step;
    log.write({{"step", step}, {"index", idx}, {"mae", last.mae}, {"lpips", last.lpips}, {"adv_g", last.adv_g},
               {"adv_d", last.adv_d}, {"kl", last.kl}, {"total", last.total}});
    if (opts.print_every > 0 && step % opts.print_every == 0)
      log_line(concat("vae train: step ", step, " mae ", last.mae, " lpips ", last.lpips, " kl ", last.kl));
    if (step % every == 0 && step < steps) save();
  }
  save();
  Json rep = provenance(cfg);
  rep["command"] = "vae train";
  rep["steps"] = step;
  rep["checkpoint"] = out.string();
  rep["last"] = {{"mae", last.mae}, {"lpips", last.lpips}, {"kl", last.kl}, {"total", last.total}};
  write_sidecar(out, rep);
  return rep;
}

Json vae_reconstruct(const std::optional<RunConfig>& cfg_in, const fs::path& ckpt, const fs::path& in,
                     const fs::path& out) {
  const Checkpoint ck = read_checkpoint(ckpt);
  const RunConfig cfg = config_from(ck, cfg_in, "vae reconstruct");
  const Vae vae = load_vae(cfg, ck);
  const Volume x = read_volume(in);
  if (x.channels() != 1) throw ShapeError(concat("vae reconstruct: expected 1 channel, got ", x.channels()));
  const Volume y = vae.decode(vae.encode(x).mu);
  write_volume(out, y);
  double mae = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mae += std::abs(x[i] - y[i]);
  mae /= double(x.size());
  Json rep = provenance(cfg);
  rep["command"] = "vae reconstruct";
  rep["input"] = in.string();
  rep["output"] = out.string();
  rep["mae"] = mae;
  write_sidecar(out, rep);
  return rep;
}

// ---- diffusion -------------------------------------------------------------

Json diffusion_train(const RunConfig& cfg_in, const fs::path& data, const fs::path& vae_ckpt, const fs::path& out,
                     const DiffusionRunOptions& opts) {
  RunConfig cfg = cfg_in;
  cfg.mode = opts.mode;
  cfg.validate();
  const long steps = total_steps(cfg, opts);
  const long every = cadence(cfg, opts);
  const Checkpoint vck = read_checkpoint(vae_ckpt);
  require_hash(vck, config_hash(cfg), "diffusion train --vae-ckpt");
  const Vae vae = load_vae(cfg, vck);
  const bool conditional = cfg.mode != CondMode::uncond;
  const int factor = cfg.vae.compression();

  const DatasetManifest records = load_dataset(data);
  if (records.empty()) throw ValidationError(concat("diffusion train: no data in ", data.string()));
  const std::size_t n = records.size();
  std::vector<Volume> latents(n), masks(n);
  parallel_for(n, default_threads(), [&](std::size_t i) {
    latents[i] = vae.encode(read_volume(records[i].volume_path)).mu;
    if (conditional) masks[i] = downsample_mask(encode_mask(read_mask(records[i].mask_path), cfg.mode), factor);
  });
  const LatentStats stats =
      cfg.diffusion.standardize_latents ? compute_latent_stats(latents) : identity_stats(cfg.vae.latent_channels);
  for (Volume& z : latents) z = stats.standardize(z);

  Json codebook = Json::array();
  if (!opts.dump_mask.empty() && !conditional)
    throw ValidationError("diffusion train: --dump-mask needs a conditional mode");
  if (conditional) {
    const Volume enc = encode_mask(read_mask(records[0].mask_path), cfg.mode);
    codebook = unique_values(enc);
    if (!opts.dump_mask.empty()) write_volume(opts.dump_mask, enc);
  }

  const NoiseSchedule sched = schedule_of(cfg);
  Unet unet(cfg.unet_for(cfg.mode), seed_stream(cfg.seed, "init").fork("unet").seed());
  Rng rng = seed_stream(cfg.seed, "train").fork("diffusion");
  long step = 0;
  if (opts.resume && fs::exists(out)) {
    const Checkpoint ck = read_checkpoint(out);
    require_hash(ck, config_hash(cfg), "diffusion train --resume");
    if (ck.string("mode") != mode_name(cfg.mode))
      throw ValidationError(
          concat("diffusion train --resume: checkpoint mode ", ck.string("mode"), " != ", mode_name(cfg.mode)));
    load_params(ck, "unet", unet.params());
    rng = ck.rng("train");
    step = long(ck.u64("step"));
    log_line(concat("diffusion train: resumed at step ", step));
  }
  AdamWConfig opt;
  opt.lr = cfg.train.lr_unet;

  auto save = [&]() {
    unet.params().round_to_float();
    Checkpoint ck = new_checkpoint(cfg);
    ck.add_string("kind", "diffusion");
    ck.add_string("mode", mode_name(cfg.mode));
    ck.add_u64("step", std::uint64_t(step));
    ck.add_rng("train", rng);
    add_stats(ck, stats);
    append_params(ck, "unet", unet.params());
    write_checkpoint(out, ck);
  };

  LossLog log(opts.log, opts.resume && step > 0);
  double last = 0.0;
  long skipped = 0;
  for (; step < steps;) {
    const int idx = rng.uniform_int(0, int(n) - 1);
    TrainBatch batch{latents[idx], std::nullopt};
    if (conditional) batch.mask_latent = masks[idx];
    const TrainStepResult r = diffusion_train_step(batch, unet, sched, rng, cfg.diffusion.gamma, opt);
    ++step;
    skipped += r.skipped;
    last = r.loss;
    log.write({{"step", step}, {"index", idx}, {"t", r.t}, {"loss", r.loss}, {"skipped", r.skipped}});
    if (opts.print_every > 0 && step % opts.print_every == 0)
      log_line(concat("diffusion train: step ", step, " t ", r.t, " loss ", r.loss));
    if (step % every == 0 && step < steps) save();
  }
  save();
  Json rep = provenance(cfg);
  rep["command"] = "diffusion train";
  rep["mode"] = mode_name(cfg.mode);
  rep["steps"] = step;
  rep["skipped_steps"] = skipped;
  rep["last_loss"] = last;
  rep["mask_codebook"] = codebook;
  rep["latent_mean"] = stats.mean;
  rep["latent_std"] = stats.std;
  rep["checkpoint"] = out.string();
  write_sidecar(out, rep);
  return rep;
}

Json sample_run(const std::optional<RunConfig>& cfg_in, const fs::path& ckpt, const fs::path& vae_ckpt,
                const fs::path& out, const SampleRunOptions& opts) {
  if (opts.n < 1) throw ValidationError("sample: --n must be >= 1");
  const Checkpoint ck = read_checkpoint(ckpt);
  if (ck.string("kind") != "diffusion") throw ValidationError(concat("sample: ", ckpt.string(), " is not a diffusion checkpoint"));
  RunConfig cfg = config_from(ck, cfg_in, "sample --ckpt");
  cfg.mode = parse_mode(ck.string("mode"));
  if (opts.seed) cfg.seed = *opts.seed;
  const bool conditional = cfg.mode != CondMode::uncond;
  if (!conditional && opts.mask)
    throw ValidationError("sample: mode conflict: the checkpoint was trained unconditionally (mode uncond) but --mask was given");
  if (conditional && !opts.mask)
    throw ValidationError(concat("sample: mode conflict: the checkpoint was trained with mode ", mode_name(cfg.mode),
                                 " and needs --mask"));
  const Checkpoint vck = read_checkpoint(vae_ckpt);
  require_hash(vck, ck.config_hash, "sample --vae-ckpt");
  const Vae vae = load_vae(cfg, vck);
  Unet unet(cfg.unet_for(cfg.mode), 0);
  load_params(ck, "unet", unet.params(), false);
  const LatentStats stats = read_stats(ck);
  const NoiseSchedule sched = schedule_of(cfg);
  const Shape image{1, cfg.data.depth, cfg.data.height, cfg.data.width};
  const Shape latent = vae.latent_shape(image);

  std::optional<Volume> mask_latent;
  if (opts.mask) {
    const MaskVolume m = read_mask(*opts.mask);
    if (m.shape() != image)
      throw ShapeError(concat("sample: mask shape ", m.shape().str(), " != volume shape ", image.str()));
    mask_latent = downsample_mask(encode_mask(m, cfg.mode), cfg.vae.compression());
  }

  fs::create_directories(out);
  const Rng stream = seed_stream(cfg.seed, "sample");
  SampleOptions so;
  so.clamp_x0 = opts.clamp_x0;
  std::vector<std::string> files(opts.n);
  parallel_for(opts.n, opts.threads, [&](std::size_t i) {
    Rng rng = stream.fork(i);
    const Volume z = sample(unet, sched, latent, mask_latent, rng, so);
    const fs::path p = out / (stem_name("sample", i) + ".vol");
    write_volume(p, vae.decode(stats.destandardize(z)));
    files[i] = p.string();
  });
  Json rep = provenance(cfg);
  rep["command"] = "sample";
  rep["mode"] = mode_name(cfg.mode);
  rep["n"] = opts.n;
  rep["mask"] = opts.mask ? opts.mask->string() : "";
  rep["files"] = files;
  write_report(out / "samples.json", rep);
  return rep;
}

// ---- evaluation ------------------------------------------------------------

Json eval_fid_run(const std::optional<RunConfig>& cfg_in, const fs::path& real, const fs::path& synth, int threads) {
  const RunConfig cfg = cfg_in.value_or(RunConfig{});
  const std::vector<Volume> a = read_volumes(list_volumes(real), threads);
  const std::vector<Volume> b = read_volumes(list_volumes(synth), threads);
  const PyramidExtractor ex(cfg.eval.extractor_seed);
  const FidResult r = fid(a, b, ex, threads);
  Json rep = provenance(cfg);
  rep["command"] = "eval fid";
  rep["fid"] = r.value;
  rep["n_real"] = r.n_real;
  rep["n_synth"] = r.n_synth;
  rep["feature_dim"] = r.dim;
  rep["extractor_seed"] = r.extractor_seed;
  rep["real"] = real.string();
  rep["synth"] = synth.string();
  return rep;
}

Json eval_msssim_run(const std::optional<RunConfig>& cfg_in, const fs::path& set, std::optional<std::size_t> pairs,
                     int threads) {
  const RunConfig cfg = cfg_in.value_or(RunConfig{});
  const std::vector<Volume> v = read_volumes(list_volumes(set), threads);
  Rng rng = seed_stream(cfg.seed, "eval");
  const MsSsimResult r = ms_ssim_diversity(v, pairs.value_or(cfg.eval.pairs), rng, threads);
  Json rep = provenance(cfg);
  rep["command"] = "eval msssim";
  rep["ms_ssim"] = r.mean;
  rep["pairs"] = r.pairs;
  rep["n"] = r.n;
  rep["set"] = set.string();
  return rep;
}

Json gradcheck_run(const std::string& filter, std::size_t max_per_param) {
  GradCheckOptions o;
  o.max_per_param = max_per_param;
  Json rows = Json::array();
  bool ok = true;
  double worst = 0.0;
  for (const GradCheckReport& r : run_gradcheck_suite(o, filter)) {
    rows.push_back({{"name", r.name}, {"checked", r.checked}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
    ok = ok && r.passed;
    worst = std::max(worst, r.max_rel_error);
  }
  return {{"command", "gradcheck"}, {"tolerance", o.tolerance}, {"max_rel_error", worst},
          {"passed", ok}, {"cases", rows}, {"build_id", build_id()}};
}

}  // namespace land
