#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "land/mask.hpp"
#include "land/neural.hpp"

namespace land {

struct UnetConfig {
  int levels = 3;
  int blocks_per_level = 2;
  int base_channels = 32;
  int max_channels = 128;
  std::vector<int> attention_levels{1, 2};
  int context_dim = 64;
  int attention_dim = 64;
  int heads = 1;
  bool conditional = false;
  int latent_channels = 4;
  int groups = 8;
  int max_t = 1000;

  int channels_at(int level) const;
  int in_channels() const { return latent_channels + (conditional ? 1 : 0); }
  int time_dim() const { return 4 * base_channels; }
  bool has_attention(int level) const;
  // Spatial dims must be divisible by this.
  int spatial_multiple() const { return 1 << (levels - 1); }
  void validate() const;
};

// Conditional models take a mask latent and build context tokens from it;
// `context` overrides the learned tokens when given.
struct DenoiseInput {
  Volume z_t;
  int t = 1;
  std::optional<Volume> mask_latent;
  std::optional<Matrix> context;
};

Volume additive_skip_merge(const Volume& decoder_feat, const Volume& encoder_feat);

class Unet {
 public:
  Unet(const UnetConfig& cfg, std::uint64_t seed);

  const UnetConfig& config() const { return cfg_; }
  ParamSet& params() { return ps_; }
  const ParamSet& params() const { return ps_; }

  struct Cache {
    Matrix e0, h1, temb;
    Volume grid;
    bool learned_ctx = false;
    Matrix ctx;
    Conv3d::Cache in;
    std::vector<std::vector<ResBlock::Cache>> down_blocks, up_blocks;
    std::vector<CrossAttention::Cache> down_attn, up_attn;
    std::vector<Conv3d::Cache> downs, ups;
    // Decoder channels before and after each skip merge.
    std::vector<std::pair<int, int>> merges;
    GroupNorm::Cache norm;
    Volume pre_act;
    Conv3d::Cache out;
    bool filled = false;
  };

  Volume forward(const DenoiseInput& in, Cache* cache = nullptr) const;
  Volume denoise(const DenoiseInput& in) const { return forward(in); }
  // Accumulates parameter gradients; returns dL/dz_t.
  Volume backward(const Cache& cache, const Volume& grad_out);
  // Learned context tokens for a downsampled mask.
  Matrix context(const Volume& mask_latent) const;

 private:
  void check_input(const DenoiseInput& in) const;

  UnetConfig cfg_;
  ParamSet ps_;
  Linear t1_, t2_;
  std::optional<ContextEmbedding> embed_;
  Conv3d conv_in_;
  std::vector<std::vector<ResBlock>> down_blocks_, up_blocks_;
  std::vector<std::optional<CrossAttention>> down_attn_, up_attn_;
  std::vector<Conv3d> downs_, ups_;
  GroupNorm norm_out_;
  Conv3d conv_out_;
};

}  // namespace land
