#include "land/config.hpp"

#include <set>

#include "json.hpp"
#include "land/io.hpp"

namespace land {

using nlohmann::json;

namespace {

// Reads the keys of one section, remembering which were consumed so that
// typos surface as errors instead of silently falling back to defaults.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(concat("config: '", path_, "' must be an object"));
  }
  ~Section() = default;

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(concat("config: '", path_, ".", key, "' has the wrong type: ", e.what()));
    }
  }
  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ValidationError(concat("config: unknown key '", path_, ".", it.key(), "'"));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json data_json(const PhantomConfig& c) {
  return {{"depth", c.depth},
          {"height", c.height},
          {"width", c.width},
          {"body", c.body},
          {"lung", c.lung},
          {"background", c.background},
          {"solid", c.solid},
          {"min_nodules", c.min_nodules},
          {"max_nodules", c.max_nodules},
          {"min_radius", c.min_radius},
          {"max_radius", c.max_radius},
          {"softness", c.softness},
          {"jitter", c.jitter}};
}

json vae_json(const VaeConfig& c) {
  return {{"levels", c.levels},
          {"blocks_per_level", c.blocks_per_level},
          {"widths", c.widths},
          {"latent_channels", c.latent_channels},
          {"groups", c.groups},
          {"w_mae", c.w_mae},
          {"w_lpips", c.w_lpips},
          {"w_adv", c.w_adv},
          {"w_kl", c.w_kl},
          {"adv_warmup", c.adv_warmup},
          {"disc_widths", c.disc_widths},
          {"lpips_widths", c.lpips_widths},
          {"lpips_seed", c.lpips_seed}};
}

json unet_json(const UnetConfig& c) {
  return {{"levels", c.levels},
          {"blocks_per_level", c.blocks_per_level},
          {"base_channels", c.base_channels},
          {"max_channels", c.max_channels},
          {"attention_levels", c.attention_levels},
          {"context_dim", c.context_dim},
          {"attention_dim", c.attention_dim},
          {"heads", c.heads},
          {"latent_channels", c.latent_channels},
          {"groups", c.groups}};
}

json diffusion_json(const DiffusionSettings& d) {
  return {{"T", d.T},
          {"beta1", d.beta1},
          {"betaT", d.betaT},
          {"gamma", d.gamma},
          {"standardize_latents", d.standardize_latents}};
}

json to_json(const RunConfig& c) {
  return {{"data", data_json(c.data)},
          {"vae", vae_json(c.vae)},
          {"unet", unet_json(c.unet)},
          {"diffusion", diffusion_json(c.diffusion)},
          {"train",
           {{"lr_vae", c.train.lr_vae},
            {"lr_unet", c.train.lr_unet},
            {"steps", c.train.steps},
            {"checkpoint_every", c.train.checkpoint_every}}},
          {"eval", {{"pairs", c.eval.pairs}, {"extractor_seed", c.eval.extractor_seed}}},
          {"seed", c.seed},
          {"mode", mode_name(c.mode)}};
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  vae.validate();
  unet_for(mode).validate();
  if (vae.latent_channels != unet.latent_channels)
    throw ValidationError(concat("config: vae.latent_channels (", vae.latent_channels, ") != unet.latent_channels (",
                                 unet.latent_channels, ")"));
  const int f = vae.compression();
  const int mult = f * unet.spatial_multiple();
  for (int d : {data.depth, data.height, data.width})
    if (d % mult != 0)
      throw ValidationError(concat("config: volume dim ", d, " must be divisible by ", mult,
                                   " (vae compression x unet downsampling)"));
  if (diffusion.T < 2) throw ValidationError("config: diffusion.T must be >= 2");
  if (!(diffusion.beta1 > 0.0 && diffusion.beta1 < diffusion.betaT && diffusion.betaT < 1.0))
    throw ValidationError("config: need 0 < beta1 < betaT < 1");
  if (!(diffusion.gamma > 0.0)) throw ValidationError("config: diffusion.gamma must be > 0");
  if (!(train.lr_vae >= 0.0) || !(train.lr_unet >= 0.0)) throw ValidationError("config: learning rates must be >= 0");
  if (train.steps < 0) throw ValidationError("config: train.steps must be >= 0");
  if (train.checkpoint_every <= 0) throw ValidationError("config: train.checkpoint_every must be > 0");
}

UnetConfig RunConfig::unet_for(CondMode m) const {
  UnetConfig u = unet;
  u.conditional = m != CondMode::uncond;
  if (!u.conditional) u.attention_levels.clear();
  u.max_t = diffusion.T;
  return u;
}

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(concat("config: invalid JSON: ", e.what()));
  }
  RunConfig c;
  Section root(j, "config");
  if (const json* d = root.child("data")) {
    Section s(*d, "data");
    PhantomConfig& p = c.data;
    s.get("depth", p.depth);
    s.get("height", p.height);
    s.get("width", p.width);
    s.get("body", p.body);
    s.get("lung", p.lung);
    s.get("background", p.background);
    s.get("solid", p.solid);
    s.get("min_nodules", p.min_nodules);
    s.get("max_nodules", p.max_nodules);
    s.get("min_radius", p.min_radius);
    s.get("max_radius", p.max_radius);
    s.get("softness", p.softness);
    s.get("jitter", p.jitter);
    s.finish();
  }
  if (const json* d = root.child("vae")) {
    Section s(*d, "vae");
    VaeConfig& v = c.vae;
    s.get("levels", v.levels);
    s.get("blocks_per_level", v.blocks_per_level);
    s.get("widths", v.widths);
    s.get("latent_channels", v.latent_channels);
    s.get("groups", v.groups);
    s.get("w_mae", v.w_mae);
    s.get("w_lpips", v.w_lpips);
    s.get("w_adv", v.w_adv);
    s.get("w_kl", v.w_kl);
    s.get("adv_warmup", v.adv_warmup);
    s.get("disc_widths", v.disc_widths);
    s.get("lpips_widths", v.lpips_widths);
    s.get("lpips_seed", v.lpips_seed);
    s.finish();
  }
  if (const json* d = root.child("unet")) {
    Section s(*d, "unet");
    UnetConfig& u = c.unet;
    s.get("levels", u.levels);
    s.get("blocks_per_level", u.blocks_per_level);
    s.get("base_channels", u.base_channels);
    s.get("max_channels", u.max_channels);
    s.get("attention_levels", u.attention_levels);
    s.get("context_dim", u.context_dim);
    s.get("attention_dim", u.attention_dim);
    s.get("heads", u.heads);
    s.get("latent_channels", u.latent_channels);
    s.get("groups", u.groups);
    s.finish();
  }
  if (const json* d = root.child("diffusion")) {
    Section s(*d, "diffusion");
    s.get("T", c.diffusion.T);
    s.get("beta1", c.diffusion.beta1);
    s.get("betaT", c.diffusion.betaT);
    s.get("gamma", c.diffusion.gamma);
    s.get("standardize_latents", c.diffusion.standardize_latents);
    s.finish();
  }
  if (const json* d = root.child("train")) {
    Section s(*d, "train");
    s.get("lr_vae", c.train.lr_vae);
    s.get("lr_unet", c.train.lr_unet);
    s.get("steps", c.train.steps);
    s.get("checkpoint_every", c.train.checkpoint_every);
    s.finish();
  }
  if (const json* d = root.child("eval")) {
    Section s(*d, "eval");
    s.get("pairs", c.eval.pairs);
    s.get("extractor_seed", c.eval.extractor_seed);
    s.finish();
  }
  root.get("seed", c.seed);
  std::string mode = mode_name(c.mode);
  root.get("mode", mode);
  c.mode = parse_mode(mode);
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ValidationError(concat("config: no such file ", path.string()));
  return parse_config(read_file(path));
}

std::string dump_config(const RunConfig& cfg) { return to_json(cfg).dump(2); }

Digest config_hash(const RunConfig& cfg) {
  json j = to_json(cfg);
  j.erase("train");
  j.erase("eval");
  j.erase("mode");
  j.erase("seed");
  // nlohmann objects keep keys sorted, so dump() is canonical.
  return sha256(j.dump());
}

}  // namespace land
