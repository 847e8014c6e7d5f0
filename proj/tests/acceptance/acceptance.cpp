// Acceptance suite. Usage: acceptance [c1 ... c10 | cli | all]
// Prints one PASS/FAIL line per criterion; exit status 1 if any failed.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "land/checkpoint.hpp"
#include "land/config.hpp"
#include "land/diffusion.hpp"
#include "land/gradcheck.hpp"
#include "land/io.hpp"
#include "land/metrics.hpp"
#include "land/ops.hpp"
#include "land/phantom.hpp"
#include "land/vae.hpp"

using namespace land;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  std::string failed;
  int failures = 0;

  // Records a failed sub-check; the first few are kept for the report line.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (failures < 4) failed += " [failed: " + what + "]";
    pass = false;
    ++failures;
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

// ---- C1 gradient integrity -------------------------------------------------

void c1(Outcome& o) {
  const std::vector<GradCheckReport> reps = run_gradcheck_suite();
  double worst = 0.0;
  std::size_t checked = 0;
  for (const auto& r : reps) {
    o.require(r.passed && r.max_rel_error < 1e-4, r.name + " max rel error " + fmt(r.max_rel_error));
    o.require(r.checked > 0, r.name + " checked nothing");
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  std::set<std::string> names;
  for (const auto& r : reps) names.insert(r.name);
  for (const char* kind : {"linear", "conv3d-k3-s1", "conv3d-k3-s2", "groupnorm", "activations", "resblock",
                           "cross-attention", "context-embedding", "perceptual-loss", "discriminator", "vae",
                           "unet-uncond", "unet-cond"})
    o.require(names.count(kind) > 0, std::string("missing case ") + kind);
  o.detail << reps.size() << " cases, " << checked << " entries, worst rel error " << fmt(worst) << " (< 1e-4)";
}

// ---- C2 diffusion algebra --------------------------------------------------

void c2(Outcome& o) {
  const NoiseSchedule s = linear_schedule(1000, 1e-4, 0.02);
  // Independent oracle for the tables: running product of (1 - beta_t).
  double ab = 1.0, table_err = 0.0, unit_err = 0.0;
  bool mono = true;
  for (int t = 1; t <= 1000; ++t) {
    const double beta = 1e-4 + (0.02 - 1e-4) * double(t - 1) / 999.0;
    ab *= 1.0 - beta;
    table_err = std::max({table_err, std::abs(s.beta[t] - beta), std::abs(s.alpha_bar[t] - ab)});
    const double a = s.sqrt_alpha_bar[t], b = s.sqrt_one_minus_alpha_bar[t];
    unit_err = std::max(unit_err, std::abs(a * a + b * b - 1.0));
    if (t > 1) mono = mono && s.beta[t] > s.beta[t - 1] && s.alpha_bar[t] < s.alpha_bar[t - 1] && s.snr[t] < s.snr[t - 1];
  }
  o.require(table_err < 1e-12, "tables differ from the product oracle by " + fmt(table_err));
  o.require(unit_err < 1e-12, "sqrt identity error " + fmt(unit_err));
  o.require(mono, "schedule not monotone");

  Rng rng(2024);
  double x0_err = 0.0, eps_err = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const int t = rng.uniform_int(1, 1000);
    const Volume x0 = rng_normal(rng, {4, 4, 4, 4});
    const Volume eps = rng_normal(rng, {4, 4, 4, 4});
    const Volume z = q_sample(x0, t, eps, s);
    const Volume v = v_target(x0, eps, t, s);
    x0_err = std::max(x0_err, max_abs_diff(x0_from_v(z, v, t, s), x0));
    eps_err = std::max(eps_err, max_abs_diff(eps_from_v(z, v, t, s), eps));
  }
  o.require(x0_err < 1e-10, "x0 recovery " + fmt(x0_err));
  o.require(eps_err < 1e-10, "eps recovery " + fmt(eps_err));
  o.detail << "1000 triples: x0 err " << fmt(x0_err) << ", eps err " << fmt(eps_err) << "; table err "
           << fmt(table_err) << ", identity err " << fmt(unit_err) << ", monotone " << (mono ? "yes" : "no");
}

// ---- C3 sampler oracle -----------------------------------------------------

void c3(Outcome& o) {
  const NoiseSchedule s = linear_schedule();
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng data(100 + seed);
    const Volume target = rng_normal(data, {4, 16, 16, 16});
    // Point mass at `target`: x0 is known, so eps and v follow from z_t.
    const Denoiser oracle = [&](const Volume& z, int t) {
      const double a = s.sqrt_alpha_bar[t], b = s.sqrt_one_minus_alpha_bar[t];
      Volume v(z.shape());
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double eps = (z[i] - a * target[i]) / b;
        v[i] = a * eps - b * target[i];
      }
      return v;
    };
    Rng rng(seed);
    const double mae = mean_abs_diff(sample(oracle, s, target.shape(), rng), target);
    o.require(mae < 1e-2, "seed " + std::to_string(seed) + " mae " + fmt(mae));
    worst = std::max(worst, mae);
  }
  o.detail << "5 seeds, T=1000, worst mean abs error " << fmt(worst) << " (< 1e-2)";
}

// ---- C4 min-SNR weighting --------------------------------------------------

void c4(Outcome& o) {
  const NoiseSchedule s = linear_schedule();
  long checked = 0;
  for (double gamma : {1.0, 5.0, 20.0}) {
    bool clipped = false, unclipped = false;
    for (int t = 1; t <= 1000; ++t) {
      const double snr = s.snr[t];
      const double w = min_snr_weight(t, s, gamma);
      const double want = snr <= gamma ? snr / (snr + 1.0) : gamma / (snr + 1.0);
      o.require(w > 0.0 && w < 1.0, "w outside (0,1) at t=" + std::to_string(t));
      o.require(w == want, "w mismatch at t=" + std::to_string(t) + " gamma=" + fmt(gamma));
      (snr <= gamma ? unclipped : clipped) = true;
      ++checked;
    }
    o.require(clipped && unclipped, "sweep did not cover both branches at gamma " + fmt(gamma));
  }
  o.detail << checked << " (t, gamma) pairs checked exactly against both branches";
}

// ---- C5 mask pipeline ------------------------------------------------------

void c5(Outcome& o) {
  // Codebook oracle: raw code / 5, lung raw 0.5 (absent in nodule-only mode),
  // nodule raw 3 or its texture score.
  const CondMode modes[] = {CondMode::nodule, CondMode::nodule_lung, CondMode::nodule_lung_texture};
  int entries = 0;
  for (CondMode m : modes) {
    for (int label = 0; label <= kMaxLabel; ++label) {
      double raw = 0.0;
      if (label == 1) raw = m == CondMode::nodule ? 0.0 : 0.5;
      if (label >= 2) raw = m == CondMode::nodule_lung_texture ? double(label - 1) : 3.0;
      o.require(std::abs(encode_label(std::uint8_t(label), m) - raw / 5.0) < 1e-15,
                "codebook " + mode_name(m) + " label " + std::to_string(label));
      ++entries;
    }
    bool threw = false;
    try {
      encode_label(kMaxLabel + 1, m);
    } catch (const ValidationError&) {
      threw = true;
    }
    o.require(threw, "label 7 accepted in " + mode_name(m));
  }
  bool uncond_threw = false;
  try {
    encode_label(1, CondMode::uncond);
  } catch (const ValidationError&) {
    uncond_threw = true;
  }
  o.require(uncond_threw, "uncond mode encoded a label");

  PhantomConfig pc;  // desk 64^3
  pc.min_nodules = 1;
  const VaeConfig vc;
  const Vae vae(vc, 0);
  const Shape latent = vae.latent_shape({1, pc.depth, pc.height, pc.width});
  const int f = vc.compression();
  long nodule_blocks = 0;
  for (int k = 0; k < 100; ++k) {
    Rng rng(5000 + k);
    const MaskVolume mask = generate_phantom(pc, rng).mask;
    for (CondMode m : modes) {
      const Volume enc = encode_mask(mask, m);
      const Volume down = downsample_mask(enc, f);
      o.require(down.shape().same_spatial(latent), "downsampled dims != latent dims");
      if (!down.shape().same_spatial(latent)) return;
      for (int z = 0; z < down.depth(); ++z)
        for (int y = 0; y < down.height(); ++y)
          for (int x = 0; x < down.width(); ++x) {
            double block_max = 0.0, nodule_max = -1.0;
            for (int dz = 0; dz < f; ++dz)
              for (int dy = 0; dy < f; ++dy)
                for (int dx = 0; dx < f; ++dx) {
                  const int zz = z * f + dz, yy = y * f + dy, xx = x * f + dx;
                  const double e = enc.at(0, zz, yy, xx);
                  block_max = std::max(block_max, e);
                  if (mask.at(zz, yy, xx) >= 2) nodule_max = std::max(nodule_max, e);
                }
            const double d = down.at(0, z, y, x);
            o.require(d == block_max, "pooled value is not the block maximum");
            if (nodule_max >= 0.0) {
              ++nodule_blocks;
              o.require(d == nodule_max && d > encode_label(1, m), "nodule not dominant in " + mode_name(m));
            }
          }
    }
  }
  o.require(nodule_blocks > 0, "no nodule blocks generated");
  o.detail << entries << " codebook entries; 100 phantoms x 3 modes, " << nodule_blocks
           << " nodule blocks dominant; mask " << pc.depth << "^3 -> " << latent.d << "^3 = latent dims";
}

// ---- C6 VAE overfit --------------------------------------------------------

void c6(Outcome& o) {
  PhantomConfig pc;
  pc.depth = pc.height = pc.width = 32;
  pc.min_nodules = 1;
  pc.max_radius = 2.5;
  std::vector<Volume> xs;
  for (int k = 0; k < 4; ++k) {
    Rng r(600 + k);
    xs.push_back(generate_phantom(pc, r).volume);
  }
  VaeConfig vc;
  vc.widths = {8, 16, 32};
  vc.disc_widths = {8, 16, 16};
  vc.lpips_widths = {8, 16, 16};
  Vae vae(vc, 1);
  Discriminator disc(vc.disc_widths, 2);
  const FeaturePyramid lpips(vc.lpips_widths, vc.lpips_seed);
  VaeTrainOptions opts;
  opts.gen.lr = opts.disc.lr = 1e-4;
  Rng rng(3);
  double first = 0.0, last = 0.0;
  bool kl_finite = true;
  const int steps = 2000;
  for (int s = 0; s < steps; ++s) {
    const VaeLosses l = vae_train_step(xs[s % 4], vae, disc, lpips, rng, opts);
    if (s < 10) first += l.mae / 10.0;
    if (s >= steps - 10) last += l.mae / 10.0;
    kl_finite = kl_finite && std::isfinite(l.kl);
  }
  double recon = 0.0;
  bool shape_ok = true;
  for (const Volume& x : xs) {
    const Encoded e = vae.encode(x);
    const Volume y = vae.decode(e.mu);
    shape_ok = shape_ok && y.shape() == x.shape() && e.mu.shape() == Shape{4, 8, 8, 8};
    recon += mean_abs_diff(x, y) / 4.0;
  }
  o.require(last < 0.5 * first, "final mae " + fmt(last) + " not < 50% of " + fmt(first));
  o.require(kl_finite, "kl not finite");
  o.require(shape_ok, "reconstruction shape contract");
  o.detail << "mae steps 1-10 " << fmt(first) << " -> last 10 " << fmt(last) << " (ratio " << fmt(last / first)
           << "), posterior-mean recon mae " << fmt(recon);
}

// ---- C7 diffusion overfit --------------------------------------------------

// Desk phantom encoded by a seeded desk VAE, standardized (4 x 16^3).
Volume desk_latent() {
  const RunConfig cfg;
  Rng pr(12);
  const Volume phantom = generate_phantom(cfg.data, pr).volume;
  const Vae vae(cfg.vae, 11);
  const Volume mu = vae.encode(phantom).mu;
  const Volume latents[] = {mu};
  return compute_latent_stats(latents).standardize(mu);
}

// Weighted loss on a fixed grid of t and noise; a low-variance view of progress.
double grid_loss(const Unet& net, const Volume& x0, const NoiseSchedule& s) {
  double total = 0.0;
  int n = 0;
  for (int t = 25; t <= s.T; t += 50, ++n) {
    Rng r(1000 + std::uint64_t(t));
    const Volume eps = rng_normal(r, x0.shape());
    const Volume v_hat = net.forward({q_sample(x0, t, eps, s), t, std::nullopt, std::nullopt});
    total += diffusion_loss(v_hat, v_target(x0, eps, t, s), t, s);
  }
  return total / n;
}

struct Trajectory {
  std::vector<double> losses;
  double grid_before = 0.0;
  double grid_after = 0.0;
};

Trajectory diffusion_trajectory(const Volume& z, int steps) {
  const RunConfig cfg;
  Unet net(cfg.unet_for(CondMode::uncond), 11);
  const NoiseSchedule s = linear_schedule();
  AdamWConfig opt;
  opt.lr = 1e-5;
  Rng rng(13);
  Trajectory tr;
  tr.grid_before = grid_loss(net, z, s);
  for (int k = 0; k < steps; ++k)
    tr.losses.push_back(diffusion_train_step({z, std::nullopt}, net, s, rng, 5.0, opt).loss);
  tr.grid_after = grid_loss(net, z, s);
  return tr;
}

void c7(Outcome& o) {
  const Volume z = desk_latent();
  const Trajectory a = diffusion_trajectory(z, 500);
  double first = 0.0, last = 0.0;
  for (int k = 0; k < 10; ++k) {
    first += a.losses[k] / 10.0;
    last += a.losses[a.losses.size() - 10 + k] / 10.0;
  }
  const double ratio = first / last;
  const Trajectory b = diffusion_trajectory(z, 20);
  o.require(std::equal(b.losses.begin(), b.losses.end(), a.losses.begin()), "loss trajectory not reproducible");
  o.require(ratio >= 10.0, "reduction " + fmt(ratio) + "x < 10x");
  o.detail << "min-SNR loss steps 1-10 " << fmt(first) << " -> last 10 " << fmt(last) << " (" << fmt(ratio)
           << "x); fixed-grid loss " << fmt(a.grid_before) << " -> " << fmt(a.grid_after)
           << "; first 20 steps bitwise reproducible";
}

// ---- C8 metric oracles -----------------------------------------------------

std::vector<Volume> phantom_set(const PhantomConfig& pc, std::uint64_t seed, int n) {
  std::vector<Volume> out;
  for (int k = 0; k < n; ++k) {
    Rng r = Rng(seed).fork(std::uint64_t(k));
    out.push_back(generate_phantom(pc, r).volume);
  }
  return out;
}

GaussianStats gauss1d(double mean, double var) {
  GaussianStats g;
  g.mean = {mean};
  g.cov = Matrix(1, 1);
  g.cov(0, 0) = var;
  return g;
}

void c8(Outcome& o) {
  const PhantomConfig a_cfg;
  Rng r(1);
  const Volume x = generate_phantom(a_cfg, r).volume;
  const double self = ms_ssim3d(x, x);
  o.require(std::abs(self - 1.0) < 1e-9, "ms_ssim(x,x) " + fmt(self));

  const double f9 = frechet_distance(gauss1d(0.0, 1.0), gauss1d(3.0, 1.0));
  const double f1 = frechet_distance(gauss1d(0.0, 1.0), gauss1d(0.0, 4.0));
  o.require(std::abs(f9 - 9.0) < 1e-10, "1-D shifted case " + fmt(f9));
  o.require(std::abs(f1 - 1.0) < 1e-10, "1-D scaled case " + fmt(f1));

  const PyramidExtractor ex;
  const std::vector<Volume> a0 = phantom_set(a_cfg, 7000, 32);
  const double same = fid(a0, a0, ex).value;
  o.require(std::abs(same) < 1e-6, "FID(A,A) " + fmt(same));

  // B: denser lungs carrying more and larger nodules.
  PhantomConfig b_cfg;
  b_cfg.lung = -0.55;
  b_cfg.min_nodules = 2;
  b_cfg.min_radius = 4.0;
  int separated = 0;
  double worst_margin = 1e300;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto a1 = phantom_set(a_cfg, 100 + seed, 32);
    const auto a2 = phantom_set(a_cfg, 200 + seed, 32);
    const auto b1 = phantom_set(b_cfg, 300 + seed, 32);
    const double within = fid(a1, a2, ex).value, cross = fid(a1, b1, ex).value;
    separated += within < cross;
    worst_margin = std::min(worst_margin, cross / within);
    o.require(within < cross, "seed " + std::to_string(seed) + " within " + fmt(within) + " >= cross " + fmt(cross));
  }
  o.detail << "ms_ssim(x,x)-1 " << fmt(self - 1.0) << "; frechet 1-D " << f9 << ", " << f1 << "; FID(A,A) "
           << fmt(same) << "; separation " << separated << "/5 seeds, min cross/within " << fmt(worst_margin);
}

// ---- C9 end-to-end through the CLI ------------------------------------------

int run(const std::string& cmd, const fs::path& out = {}) {
  std::string full = std::string(LAND_CLI_PATH) + " " + cmd;
  full += out.empty() ? " > /dev/null" : " > '" + out.string() + "'";
  full += " 2>> '" + (fs::temp_directory_path() / "land_acceptance_stderr.log").string() + "'";
  const int st = std::system(full.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

bool provenance_ok(const json& j) {
  return j.contains("config_hash") && j["config_hash"].get<std::string>().size() == 64 && j.contains("seed") &&
         j.contains("build_id");
}

// Runs the whole pipeline in `dir`; returns false (with a reason) on any
// non-zero exit or malformed report.
bool pipeline(const fs::path& dir, Outcome& o) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = std::string("--config '") + LAND_SOURCE_DIR + "/configs/smoke.json'";
  const std::string d = "'" + dir.string() + "'";
  struct Step {
    std::string name, cmd;
    fs::path out;
  };
  const std::vector<Step> steps = {
      {"phantom gen", cfg + " phantom gen --n 16 --out " + d + "/data", {}},
      {"held-out mask", cfg + " --seed 4242 phantom gen --n 1 --out " + d + "/heldout", {}},
      {"vae train", cfg + " vae train --data " + d + "/data --out " + d + "/vae.ckpt --steps 200 --log " + d +
                        "/vae.log",
       {}},
      {"diffusion train", cfg + " diffusion train --mode nodule+lung+texture --data " + d + "/data --vae-ckpt " + d +
                              "/vae.ckpt --out " + d + "/diff.ckpt --steps 200 --log " + d + "/diff.log",
       {}},
      {"sample", "sample --ckpt " + d + "/diff.ckpt --vae-ckpt " + d + "/vae.ckpt --mask " + d +
                     "/heldout/phantom_0000.msk --n 2 --out " + d + "/samples",
       {}},
      {"eval fid", cfg + " eval fid --real " + d + "/data --synth " + d + "/samples --out " + d + "/fid.json", {}},
      {"eval msssim", cfg + " eval msssim --set " + d + "/samples --out " + d + "/msssim.json", {}},
  };
  for (const Step& s : steps) {
    const int rc = run(s.cmd, s.out);
    o.require(rc == 0, s.name + " exit " + std::to_string(rc));
    if (rc != 0) return false;
  }
  try {
    const json fidr = read_json(dir / "fid.json"), msr = read_json(dir / "msssim.json");
    const json samp = read_json(dir / "samples" / "samples.json");
    o.require(provenance_ok(fidr) && provenance_ok(msr) && provenance_ok(samp), "report without provenance");
    o.require(fidr["fid"].is_number() && std::isfinite(fidr["fid"].get<double>()), "fid not a finite number");
    o.require(msr["ms_ssim"].is_number(), "ms_ssim missing");
    o.require(provenance_ok(read_json(dir / "vae.ckpt.json")) && provenance_ok(read_json(dir / "diff.ckpt.json")),
              "checkpoint sidecar without provenance");
    o.require(read_checkpoint(dir / "diff.ckpt").config_hash == read_checkpoint(dir / "vae.ckpt").config_hash,
              "checkpoint hashes differ");
  } catch (const std::exception& e) {
    o.require(false, std::string("malformed report: ") + e.what());
    return false;
  }
  return true;
}

void c9(Outcome& o) {
  const fs::path root = fs::temp_directory_path() / "land_acceptance_c9";
  if (!pipeline(root / "a", o) || !pipeline(root / "b", o)) return;
  const char* artifacts[] = {"data/phantom_0000.vol", "data/phantom_0015.msk", "vae.ckpt", "diff.ckpt",
                             "samples/sample_0000.vol", "samples/sample_0001.vol", "vae.log", "diff.log"};
  for (const char* a : artifacts)
    o.require(read_file(root / "a" / a) == read_file(root / "b" / a), std::string(a) + " differs between runs");
  for (const char* rep : {"fid.json", "msssim.json"}) {
    json ja = read_json(root / "a" / rep), jb = read_json(root / "b" / rep);
    for (json* j : {&ja, &jb})
      for (const char* k : {"real", "synth", "set"}) j->erase(k);
    o.require(ja == jb, std::string(rep) + " differs between runs");
  }
  const json fidr = read_json(root / "a" / "fid.json"), msr = read_json(root / "a" / "msssim.json");
  o.detail << "pipeline x2 exit 0, reports well-formed, artifacts bitwise identical; fid " << fmt(fidr["fid"].get<double>())
           << ", sample ms-ssim " << fmt(msr["ms_ssim"].get<double>());
}

// ---- C10 texture monotonicity ----------------------------------------------

void c10(Outcome& o) {
  PhantomConfig pc;  // desk 64^3
  int runs = 0;
  double center1 = 0.0, center5 = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Anatomy an = sample_anatomy(pc, rng);
    const Ellipsoid& lung = an.lungs[seed % 2];
    NoduleRecord nod;
    nod.center = {int(std::lround(lung.center[0])), int(std::lround(lung.center[1])), int(std::lround(lung.center[2]))};
    nod.radius = 3.0 + 0.25 * double(seed % 4);
    double prev = -1e300;
    for (int tex = 1; tex <= 5; ++tex) {
      nod.texture = tex;
      const Phantom p = render_phantom(pc, an, {nod});
      double sum = 0.0;
      long n = 0;
      for (int z = 0; z < pc.depth; ++z)
        for (int y = 0; y < pc.height; ++y)
          for (int x = 0; x < pc.width; ++x)
            if (p.mask.at(z, y, x) >= 2) {
              sum += p.volume.at(0, z, y, x);
              ++n;
            }
      o.require(n > 0, "no nodule voxels");
      const double mean = sum / double(std::max(n, 1L));
      o.require(mean > prev, "mean not increasing at texture " + std::to_string(tex));
      prev = mean;
      const double c = p.volume.at(0, nod.center[0], nod.center[1], nod.center[2]);
      if (tex == 1) center1 = c;
      if (tex == 5) center5 = c;
    }
    o.require(std::abs(center1 - (-0.5)) < 1e-12, "texture 1 centre " + fmt(center1));
    o.require(std::abs(center5 - 0.3) < 1e-12, "texture 5 centre " + fmt(center5));
    ++runs;
  }
  o.detail << runs << " geometries, mean nodule intensity strictly increasing over textures 1-5; centres "
           << center1 << " (tex 1), " << center5 << " (tex 5)";
}

// ---- CLI contracts (not a numbered criterion) ------------------------------

void cli(Outcome& o) {
  const fs::path dir = fs::temp_directory_path() / "land_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = std::string("--config '") + LAND_SOURCE_DIR + "/configs/smoke.json'";
  const std::string d = "'" + dir.string() + "'";
  o.require(run("gradcheck", dir / "gc.txt") == 0, "gradcheck exit");
  o.require(read_file(dir / "gc.txt").find("PASS") != std::string::npos, "gradcheck table");
  o.require(run(cfg + " phantom gen --n 3 --out " + d + "/data") == 0, "phantom gen");
  o.require(run(cfg + " vae train --data " + d + "/data --out " + d + "/vae.ckpt --steps 2") == 0, "vae train");
  o.require(run(cfg + " vae reconstruct --ckpt " + d + "/vae.ckpt --in " + d + "/data/phantom_0000.vol --out " + d +
                "/rec.vol") == 0,
            "vae reconstruct");
  std::map<std::string, json> reps;
  for (const char* mode : {"uncond", "nodule", "nodule+lung"}) {
    const std::string m = mode, tag = m == "nodule+lung" ? "lung" : m;
    const std::string dump = m == "uncond" ? "" : " --dump-mask " + d + "/" + tag + ".vol";
    o.require(run(cfg + " diffusion train --mode " + m + " --data " + d + "/data --vae-ckpt " + d + "/vae.ckpt --out " +
                      d + "/" + tag + ".ckpt --steps 2" + dump,
                  dir / (tag + ".json")) == 0,
              "diffusion train " + m);
    reps[m] = read_json(dir / (tag + ".json"));
  }
  o.require(reps["nodule"]["mask_codebook"] != reps["nodule+lung"]["mask_codebook"], "codebooks identical");
  o.require(read_volume(dir / "nodule.vol") != read_volume(dir / "lung.vol"), "mask dumps identical");
  // Mode exclusivity: an unconditional checkpoint refuses a mask.
  o.require(run("sample --ckpt " + d + "/uncond.ckpt --vae-ckpt " + d + "/vae.ckpt --mask " + d +
                "/data/phantom_0000.msk --n 1 --out " + d + "/s") == 1,
            "uncond + --mask must exit 1");
  o.require(run("sample --ckpt " + d + "/nodule.ckpt --vae-ckpt " + d + "/vae.ckpt --n 1 --out " + d + "/s") == 1,
            "conditional without --mask must exit 1");
  o.require(run("--config /nonexistent.json phantom gen --n 1 --out " + d + "/x") == 1, "missing config exit 1");
  o.detail << "gradcheck table, reconstruct, codebook dumps differ by mode, mode conflicts exit 1";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::pair<std::string, std::function<void(Outcome&)>>>> all = {
      {"c1", {"gradient integrity", c1}},   {"c2", {"diffusion algebra", c2}}, {"c3", {"sampler oracle", c3}},
      {"c4", {"min-snr weighting", c4}},    {"c5", {"mask pipeline", c5}},     {"c6", {"vae overfit", c6}},
      {"c7", {"diffusion overfit", c7}},    {"c8", {"metric oracles", c8}},    {"c9", {"end-to-end smoke", c9}},
      {"c10", {"texture monotonicity", c10}}, {"cli", {"cli contracts", cli}},
  };
  std::set<std::string> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(argv[i]);
  const bool every = wanted.empty() || wanted.count("all");
  int failed = 0, ran = 0;
  for (const auto& [id, entry] : all) {
    if (!every && !wanted.count(id)) continue;
    if (every && id == "cli") continue;
    ++ran;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      entry.second(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string upper = id;
    std::transform(upper.begin(), upper.end(), upper.begin(), ::toupper);
    std::printf("%-4s %s  %s: %s%s [%.1f s]\n", upper.c_str(), o.pass ? "PASS" : "FAIL", entry.first.c_str(),
                o.detail.str().c_str(), o.failed.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  if (ran == 0) {
    std::fprintf(stderr, "unknown criterion\n");
    return 2;
  }
  return failed ? 1 : 0;
}
