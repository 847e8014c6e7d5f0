#include "land/unet.hpp"

#include <algorithm>

#include "land/ops.hpp"

namespace land {

int UnetConfig::channels_at(int level) const {
  return std::min(base_channels << level, max_channels);
}

bool UnetConfig::has_attention(int level) const {
  return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void UnetConfig::validate() const {
  if (levels < 1 || levels > 6) throw ValidationError(concat("unet.levels must be in 1..6, got ", levels));
  if (blocks_per_level < 1) throw ValidationError("unet.blocks_per_level must be >= 1");
  if (base_channels < 1 || max_channels < base_channels) throw ValidationError("unet channel widths invalid");
  if (latent_channels < 1) throw ValidationError("unet.latent_channels must be >= 1");
  if (base_channels % 2) throw ValidationError("unet.base_channels must be even (time embedding)");
  if (!conditional && !attention_levels.empty()) {
    throw ValidationError("unconditional unet cannot have attention levels (there is no context to attend to)");
  }
  for (int l : attention_levels) {
    if (l < 0 || l >= levels) throw ValidationError(concat("attention level ", l, " outside 0..", levels - 1));
  }
  if (conditional && (context_dim < 1 || attention_dim < 1 || heads < 1 || attention_dim % heads)) {
    throw ValidationError(concat("attention heads ", heads, " must divide attention width ", attention_dim));
  }
}

Volume additive_skip_merge(const Volume& decoder_feat, const Volume& encoder_feat) {
  if (decoder_feat.shape() != encoder_feat.shape()) {
    throw ShapeError(concat("skip merge shape mismatch: decoder ", decoder_feat.shape().str(), " vs encoder ",
                            encoder_feat.shape().str()));
  }
  return add(decoder_feat, encoder_feat);
}

Unet::Unet(const UnetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int td = cfg_.time_dim();
  t1_ = Linear::create(ps_, "time.fc1", cfg_.base_channels, td, rng);
  t2_ = Linear::create(ps_, "time.fc2", td, td, rng);
  if (cfg_.conditional) embed_ = ContextEmbedding::create(ps_, "context", cfg_.context_dim, rng);
  conv_in_ = Conv3d::create(ps_, "conv_in", cfg_.in_channels(), cfg_.channels_at(0), 3, 1, 1, rng);
  const int L = cfg_.levels;
  down_blocks_.resize(L);
  up_blocks_.resize(L);
  down_attn_.resize(L);
  up_attn_.resize(L);
  int ch = cfg_.channels_at(0);
  for (int l = 0; l < L; ++l) {
    const int c = cfg_.channels_at(l);
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      down_blocks_[l].push_back(
          ResBlock::create(ps_, concat("down", l, ".block", b), b == 0 ? ch : c, c, td, rng, cfg_.groups));
    }
    ch = c;
    if (cfg_.has_attention(l)) {
      down_attn_[l] =
          CrossAttention::create(ps_, concat("down", l, ".attn"), c, cfg_.context_dim, cfg_.attention_dim, cfg_.heads, rng);
    }
    if (l < L - 1) downs_.push_back(Conv3d::create(ps_, concat("down", l, ".downsample"), c, c, 3, 2, 1, rng));
  }
  for (int l = L - 1; l >= 0; --l) {
    const int c = cfg_.channels_at(l);
    if (l < L - 1) {
      ups_.push_back(Conv3d::create(ps_, concat("up", l, ".upsample"), cfg_.channels_at(l + 1), c, 3, 1, 1, rng));
    }
    for (int b = 0; b < cfg_.blocks_per_level; ++b) {
      up_blocks_[l].push_back(ResBlock::create(ps_, concat("up", l, ".block", b), c, c, td, rng, cfg_.groups));
    }
    if (cfg_.has_attention(l)) {
      up_attn_[l] =
          CrossAttention::create(ps_, concat("up", l, ".attn"), c, cfg_.context_dim, cfg_.attention_dim, cfg_.heads, rng);
    }
  }
  // ups_ was filled from the coarsest level down; index it by level.
  std::reverse(ups_.begin(), ups_.end());
  norm_out_ = GroupNorm::create(ps_, "norm_out", cfg_.channels_at(0), cfg_.groups);
  conv_out_ = Conv3d::create(ps_, "conv_out", cfg_.channels_at(0), cfg_.latent_channels, 3, 1, 1, rng, true);
}

void Unet::check_input(const DenoiseInput& in) const {
  const Shape& s = in.z_t.shape();
  if (s.c != cfg_.latent_channels) {
    throw ShapeError(concat("denoise: expected ", cfg_.latent_channels, " latent channels, got ", s.str()));
  }
  const int m = cfg_.spatial_multiple();
  if (s.d % m || s.h % m || s.w % m) {
    throw ShapeError(concat("denoise: latent dims ", s.str(), " not divisible by ", m));
  }
  if (in.t < 1 || in.t > cfg_.max_t) throw ValidationError(concat("denoise: t=", in.t, " outside [1, ", cfg_.max_t, "]"));
  if (cfg_.conditional) {
    if (!in.mask_latent) throw ValidationError("denoise: conditional model requires a mask latent");
    if (in.mask_latent->channels() != 1 || !in.mask_latent->shape().same_spatial(s)) {
      throw ShapeError(concat("denoise: mask latent ", in.mask_latent->shape().str(), " does not match latent ", s.str()));
    }
  } else if (in.mask_latent || in.context) {
    throw ValidationError("denoise: unconditional model does not accept a mask or context");
  }
  require_finite(in.z_t, "denoise input");
}

Matrix Unet::context(const Volume& mask_latent) const {
  if (!embed_) throw ValidationError("unconditional model has no context embedding");
  return build_context(mask_latent, ps_, *embed_);
}

Volume Unet::forward(const DenoiseInput& in, Cache* cache) const {
  check_input(in);
  Cache local;
  Cache& c = cache ? *cache : local;
  const int L = cfg_.levels;

  const auto e = time_embedding(in.t, cfg_.base_channels, cfg_.max_t);
  c.e0 = Matrix(1, e.size());
  c.e0.data = e;
  c.h1 = t1_.forward(ps_, c.e0);
  c.temb = t2_.forward(ps_, silu(c.h1));

  Volume x = in.z_t;
  c.learned_ctx = false;
  if (cfg_.conditional) {
    x = concat_condition(in.z_t, *in.mask_latent);
    if (in.context) {
      c.ctx = *in.context;
    } else {
      c.grid = context_grid(*in.mask_latent);
      c.ctx = embed_->forward(ps_, c.grid);
      c.learned_ctx = true;
    }
  }

  c.down_blocks.assign(L, {});
  c.up_blocks.assign(L, {});
  c.down_attn.assign(L, {});
  c.up_attn.assign(L, {});
  c.downs.assign(L > 1 ? L - 1 : 0, {});
  c.ups.assign(L > 1 ? L - 1 : 0, {});
  c.merges.clear();

  Volume h = conv_in_.forward(ps_, x, &c.in);
  std::vector<Volume> skips(L);
  for (int l = 0; l < L; ++l) {
    c.down_blocks[l].resize(down_blocks_[l].size());
    for (std::size_t b = 0; b < down_blocks_[l].size(); ++b) {
      h = down_blocks_[l][b].forward(ps_, h, &c.temb, &c.down_blocks[l][b]);
    }
    if (down_attn_[l]) h = down_attn_[l]->forward(ps_, h, c.ctx, &c.down_attn[l]);
    if (l < L - 1) {
      skips[l] = h;
      h = downs_[l].forward(ps_, h, &c.downs[l]);
    }
  }
  for (int l = L - 1; l >= 0; --l) {
    if (l < L - 1) {
      h = ups_[l].forward(ps_, upsample_nearest3d(h, 2), &c.ups[l]);
      const int before = h.channels();
      h = additive_skip_merge(h, skips[l]);
      c.merges.emplace_back(before, h.channels());
    }
    c.up_blocks[l].resize(up_blocks_[l].size());
    for (std::size_t b = 0; b < up_blocks_[l].size(); ++b) {
      h = up_blocks_[l][b].forward(ps_, h, &c.temb, &c.up_blocks[l][b]);
    }
    if (up_attn_[l]) h = up_attn_[l]->forward(ps_, h, c.ctx, &c.up_attn[l]);
  }
  c.pre_act = norm_out_.forward(ps_, h, &c.norm);
  Volume out = conv_out_.forward(ps_, silu(c.pre_act), &c.out);
  c.filled = true;
  return out;
}

Volume Unet::backward(const Cache& c, const Volume& grad_out) {
  if (!c.filled) throw ValidationError("unet backward: missing saved activations");
  const int L = cfg_.levels;
  Matrix gtemb(1, std::size_t(cfg_.time_dim()));
  Matrix gctx;

  Volume g = conv_out_.backward(ps_, c.out, grad_out);
  g = silu_backward(c.pre_act, g);
  g = norm_out_.backward(ps_, c.norm, g);

  std::vector<Volume> gskip(L);
  for (int l = 0; l < L; ++l) {
    if (up_attn_[l]) g = up_attn_[l]->backward(ps_, c.up_attn[l], g, &gctx);
    for (int b = int(up_blocks_[l].size()) - 1; b >= 0; --b) {
      g = up_blocks_[l][b].backward(ps_, c.up_blocks[l][b], g, &gtemb);
    }
    if (l < L - 1) {
      gskip[l] = g;
      g = upsample_nearest3d_backward(ups_[l].backward(ps_, c.ups[l], g), 2);
    }
  }
  for (int l = L - 1; l >= 0; --l) {
    if (l < L - 1) {
      g = downs_[l].backward(ps_, c.downs[l], g);
      add_inplace(g, gskip[l]);
    }
    if (down_attn_[l]) g = down_attn_[l]->backward(ps_, c.down_attn[l], g, &gctx);
    for (int b = int(down_blocks_[l].size()) - 1; b >= 0; --b) {
      g = down_blocks_[l][b].backward(ps_, c.down_blocks[l][b], g, &gtemb);
    }
  }
  Volume gx = conv_in_.backward(ps_, c.in, g);

  const Matrix ga = t2_.backward(ps_, silu(c.h1), gtemb);
  t1_.backward(ps_, c.e0, silu_backward(c.h1, ga));
  if (c.learned_ctx && !gctx.data.empty()) embed_->backward(ps_, c.grid, gctx);

  return slice_channels(gx, 0, cfg_.latent_channels);
}

}  // namespace land
