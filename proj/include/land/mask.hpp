#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "land/linalg.hpp"
#include "land/neural.hpp"
#include "land/volume.hpp"

namespace land {

enum class CondMode { uncond, nodule, nodule_lung, nodule_lung_texture };

CondMode parse_mode(std::string_view s);
std::string mode_name(CondMode m);

// Labels: 0 background, 1 lung, 2..6 nodule with texture score label - 1.
struct MaskVolume {
  int d = 0;
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> labels;

  MaskVolume() = default;
  MaskVolume(int d_, int h_, int w_, std::uint8_t fill = 0);

  std::size_t index(int z, int y, int x) const { return (std::size_t(z) * h + y) * w + x; }
  std::uint8_t& at(int z, int y, int x) { return labels[index(z, y, x)]; }
  std::uint8_t at(int z, int y, int x) const { return labels[index(z, y, x)]; }
  Shape shape() const { return {1, d, h, w}; }
  // Rejects labels outside 0..6, naming the first offending voxel.
  void validate() const;
  bool operator==(const MaskVolume&) const = default;
};

constexpr std::uint8_t kMaxLabel = 6;

// Raw code (lung 0.5, nodule 3 or its texture score) divided by 5.
double encode_label(std::uint8_t label, CondMode mode);
Volume encode_mask(const MaskVolume& mask, CondMode mode);
// max_pool3d by the VAE compression factor.
Volume downsample_mask(const Volume& encoded, int factor = 4);
// [C, d, h, w] + [1, d, h, w] -> [C+1, d, h, w], mask channel last.
Volume concat_condition(const Volume& z_t, const Volume& downsampled);

// Average-pools a [1, d, h, w] mask onto a grid of min(4, dim) cells per
// axis. Requires each dim to be divisible by its cell count.
Volume context_grid(const Volume& downsampled, int grid = 4);

// Scalar token s_i -> s_i * scale + bias + pos_i, tokens in z-major order.
struct ContextEmbedding {
  int dim = 0;
  int max_tokens = 64;
  std::size_t scale = 0;
  std::size_t bias = 0;
  std::size_t pos = 0;

  static ContextEmbedding create(ParamSet& ps, const std::string& name, int dim, Rng& rng, int max_tokens = 64);
  Matrix forward(const ParamSet& ps, const Volume& grid) const;
  void backward(ParamSet& ps, const Volume& grid, const Matrix& grad_tokens) const;
};

// context_grid followed by the learned embedding.
Matrix build_context(const Volume& downsampled, const ParamSet& ps, const ContextEmbedding& embed);

}  // namespace land
