// land: phantom generation, VAE and diffusion training, sampling, evaluation.
//
// Exit status: 0 success, 1 configuration or validation error, 2 numerical
// failure (non-finite loss, failed gradient check).

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "land/parallel.hpp"
#include "land/pipeline.hpp"

using namespace land;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 0;

  std::optional<RunConfig> explicit_config() const {
    if (config.empty()) return std::nullopt;
    RunConfig c = load_config(config);
    if (seed) c.seed = *seed;
    return c;
  }
  RunConfig config_or_default() const {
    if (auto c = explicit_config()) return *c;
    RunConfig c;
    if (seed) c.seed = *seed;
    return c;
  }
  int workers() const { return threads > 0 ? threads : default_threads(); }
};

void emit(const Json& report, const std::string& out) {
  std::cout << report.dump(2) << std::endl;
  if (!out.empty()) write_report(out, report);
}

void print_gradcheck_table(const Json& rep) {
  std::printf("%-34s %8s %14s  %s\n", "case", "checked", "max rel error", "status");
  for (const Json& row : rep["cases"]) {
    std::printf("%-34s %8zu %14.3e  %s\n", row["name"].get<std::string>().c_str(), row["checked"].get<std::size_t>(),
                row["max_rel_error"].get<double>(), row["passed"].get<bool>() ? "ok" : "FAIL");
  }
  std::printf("tolerance %.0e, worst %.3e: %s\n", rep["tolerance"].get<double>(), rep["max_rel_error"].get<double>(),
              rep["passed"].get<bool>() ? "PASS" : "FAIL");
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent diffusion for 3D phantom volumes"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed (overrides the config)");
  app.add_option("--threads", g.threads, "Worker threads (default: LAND_THREADS or all cores)");

  int rc = 0;

  // phantom gen
  auto* phantom = app.add_subcommand("phantom", "Procedural lung phantoms");
  phantom->require_subcommand(1);
  auto* pgen = phantom->add_subcommand("gen", "Generate volume/mask pairs and a manifest");
  int pn = 16;
  std::string pout;
  pgen->add_option("--n", pn, "Number of phantoms")->capture_default_str();
  pgen->add_option("--out", pout, "Output directory")->required();
  pgen->callback([&] { emit(phantom_gen(g.config_or_default(), pn, pout, g.workers()), ""); });

  // vae train / reconstruct
  auto* vae = app.add_subcommand("vae", "3D VAE");
  vae->require_subcommand(1);
  auto* vtrain = vae->add_subcommand("train", "Train the VAE");
  std::string vdata, vout, vlog;
  TrainRunOptions vopts;
  vtrain->add_option("--data", vdata, "Manifest or directory of volumes")->required();
  vtrain->add_option("--out", vout, "Checkpoint path")->required();
  vtrain->add_option("--steps", vopts.steps, "Total steps (default: train.steps)");
  vtrain->add_option("--checkpoint-every", vopts.checkpoint_every, "Checkpoint cadence (default: config)");
  vtrain->add_flag("--resume", vopts.resume, "Continue from --out if it exists");
  vtrain->add_option("--log", vlog, "JSONL loss log");
  vtrain->add_option("--print-every", vopts.print_every, "Progress interval (0: silent)")->capture_default_str();
  vtrain->callback([&] {
    vopts.log = vlog;
    emit(vae_train(g.config_or_default(), vdata, vout, vopts), "");
  });

  auto* vrec = vae->add_subcommand("reconstruct", "Encode and decode one volume");
  std::string rckpt, rin, rout;
  vrec->add_option("--ckpt", rckpt, "VAE checkpoint")->required()->check(CLI::ExistingFile);
  vrec->add_option("--in", rin, "Input volume")->required()->check(CLI::ExistingFile);
  vrec->add_option("--out", rout, "Output volume")->required();
  vrec->callback([&] { emit(vae_reconstruct(g.explicit_config(), rckpt, rin, rout), ""); });

  // diffusion train
  auto* diff = app.add_subcommand("diffusion", "Latent diffusion");
  diff->require_subcommand(1);
  auto* dtrain = diff->add_subcommand("train", "Train the denoiser on VAE latents");
  std::string ddata, dvae, dout, dlog, dmode, ddump;
  DiffusionRunOptions dopts;
  dtrain->add_option("--data", ddata, "Manifest or phantom directory")->required();
  dtrain->add_option("--vae-ckpt", dvae, "VAE checkpoint")->required()->check(CLI::ExistingFile);
  dtrain->add_option("--out", dout, "Checkpoint path")->required();
  dtrain->add_option("--mode", dmode, "uncond | nodule | nodule+lung | nodule+lung+texture (default: config)");
  dtrain->add_option("--steps", dopts.steps, "Total steps (default: train.steps)");
  dtrain->add_option("--checkpoint-every", dopts.checkpoint_every, "Checkpoint cadence (default: config)");
  dtrain->add_flag("--resume", dopts.resume, "Continue from --out if it exists");
  dtrain->add_option("--log", dlog, "JSONL loss log");
  dtrain->add_option("--dump-mask", ddump, "Write the encoded mask of the first record here");
  dtrain->add_option("--print-every", dopts.print_every, "Progress interval (0: silent)")->capture_default_str();
  dtrain->callback([&] {
    const RunConfig cfg = g.config_or_default();
    dopts.mode = dmode.empty() ? cfg.mode : parse_mode(dmode);
    dopts.log = dlog;
    dopts.dump_mask = ddump;
    emit(diffusion_train(cfg, ddata, dvae, dout, dopts), "");
  });

  // sample
  auto* samp = app.add_subcommand("sample", "Ancestral sampling and decoding");
  std::string sckpt, svae, smask, sout;
  SampleRunOptions sopts;
  samp->add_option("--ckpt", sckpt, "Diffusion checkpoint")->required()->check(CLI::ExistingFile);
  samp->add_option("--vae-ckpt", svae, "VAE checkpoint")->required()->check(CLI::ExistingFile);
  samp->add_option("--mask", smask, "Conditioning mask (.msk)")->check(CLI::ExistingFile);
  samp->add_option("--n", sopts.n, "Number of samples")->capture_default_str();
  samp->add_option("--out", sout, "Output directory")->required();
  samp->add_flag("--clamp-x0", sopts.clamp_x0, "Clamp the predicted clean latent");
  samp->callback([&] {
    if (!smask.empty()) sopts.mask = smask;
    sopts.threads = g.workers();
    sopts.seed = g.seed;
    emit(sample_run(g.explicit_config(), sckpt, svae, sout, sopts), "");
  });

  // eval fid / msssim
  auto* ev = app.add_subcommand("eval", "Fidelity and diversity metrics");
  ev->require_subcommand(1);
  auto* efid = ev->add_subcommand("fid", "Frechet distance between feature embeddings");
  std::string freal, fsynth, fout;
  efid->add_option("--real", freal, "Reference set")->required();
  efid->add_option("--synth", fsynth, "Generated set")->required();
  efid->add_option("--out", fout, "JSON report path");
  efid->callback([&] { emit(eval_fid_run(g.config_or_default(), freal, fsynth, g.workers()), fout); });

  auto* ems = ev->add_subcommand("msssim", "Mean pairwise 3D MS-SSIM");
  std::string mset, mout;
  std::optional<std::size_t> mpairs;
  ems->add_option("--set", mset, "Volume set")->required();
  ems->add_option("--pairs", mpairs, "Number of random pairs (default: eval.pairs)");
  ems->add_option("--out", mout, "JSON report path");
  ems->callback([&] { emit(eval_msssim_run(g.config_or_default(), mset, mpairs, g.workers()), mout); });

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every layer and model");
  std::string gfilter, gout;
  std::size_t gper = 24;
  gc->add_option("--filter", gfilter, "Only cases whose name contains this");
  gc->add_option("--per-param", gper, "Entries sampled per parameter tensor")->capture_default_str();
  gc->add_option("--out", gout, "JSON report path");
  gc->callback([&] {
    const Json rep = gradcheck_run(gfilter, gper);
    print_gradcheck_table(rep);
    if (!gout.empty()) write_report(gout, rep);
    if (!rep["passed"].get<bool>()) rc = 2;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << std::endl;
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 2;
  }
  return rc;
}
