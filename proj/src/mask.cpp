#include "land/mask.hpp"

#include <algorithm>

#include "land/ops.hpp"

namespace land {

CondMode parse_mode(std::string_view s) {
  if (s == "uncond") return CondMode::uncond;
  if (s == "nodule") return CondMode::nodule;
  if (s == "nodule+lung") return CondMode::nodule_lung;
  if (s == "nodule+lung+texture") return CondMode::nodule_lung_texture;
  throw ValidationError(
      concat("unknown conditioning mode '", s, "' (expected uncond, nodule, nodule+lung, nodule+lung+texture)"));
}

std::string mode_name(CondMode m) {
  switch (m) {
    case CondMode::uncond: return "uncond";
    case CondMode::nodule: return "nodule";
    case CondMode::nodule_lung: return "nodule+lung";
    case CondMode::nodule_lung_texture: return "nodule+lung+texture";
  }
  return "?";
}

MaskVolume::MaskVolume(int d_, int h_, int w_, std::uint8_t fill) : d(d_), h(h_), w(w_) {
  validate_shape({1, d, h, w});
  labels.assign(std::size_t(d) * h * w, fill);
}

void MaskVolume::validate() const {
  validate_shape(shape());
  if (labels.size() != shape().size()) {
    throw ShapeError(concat("mask has ", labels.size(), " labels, expected ", shape().size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > kMaxLabel) {
      const std::size_t x = i % w, y = (i / w) % h, z = i / (std::size_t(w) * h);
      throw ValidationError(concat("invalid mask label ", int(labels[i]), " at voxel (z=", z, ", y=", y, ", x=", x, ")"));
    }
  }
}

double encode_label(std::uint8_t label, CondMode mode) {
  if (label > kMaxLabel) throw ValidationError(concat("invalid mask label ", int(label)));
  if (mode == CondMode::uncond) throw ValidationError("unconditional mode has no mask encoding");
  double raw = 0.0;
  if (label == 1) {
    raw = mode == CondMode::nodule ? 0.0 : 0.5;
  } else if (label >= 2) {
    raw = mode == CondMode::nodule_lung_texture ? double(label - 1) : 3.0;
  }
  return raw / 5.0;
}

Volume encode_mask(const MaskVolume& mask, CondMode mode) {
  mask.validate();
  double table[kMaxLabel + 1];
  for (int l = 0; l <= kMaxLabel; ++l) table[l] = encode_label(std::uint8_t(l), mode);
  Volume out(mask.shape());
  for (std::size_t i = 0; i < mask.labels.size(); ++i) out[i] = table[mask.labels[i]];
  return out;
}

Volume downsample_mask(const Volume& encoded, int factor) {
  if (encoded.channels() != 1) throw ShapeError(concat("mask volume must have 1 channel, got ", encoded.shape().str()));
  return max_pool3d(encoded, factor);
}

Volume concat_condition(const Volume& z_t, const Volume& downsampled) {
  if (downsampled.channels() != 1) throw ShapeError("mask latent must have 1 channel");
  if (!z_t.shape().same_spatial(downsampled.shape())) {
    throw ShapeError(concat("mask latent ", downsampled.shape().str(), " does not match latent ", z_t.shape().str()));
  }
  return concat_channels(z_t, downsampled);
}

namespace {

int cells(int dim, int grid) {
  const int n = std::min(dim, grid);
  if (dim % n != 0) throw ShapeError(concat("mask dim ", dim, " not divisible into ", n, " context cells"));
  return n;
}

}  // namespace

Volume context_grid(const Volume& downsampled, int grid) {
  if (downsampled.channels() != 1) throw ShapeError("context grid expects a 1-channel mask");
  if (grid < 1) throw ValidationError("context grid must be >= 1");
  const Shape& s = downsampled.shape();
  const int gd = cells(s.d, grid), gh = cells(s.h, grid), gw = cells(s.w, grid);
  return avg_pool3d(downsampled, s.d / gd, s.h / gh, s.w / gw);
}

ContextEmbedding ContextEmbedding::create(ParamSet& ps, const std::string& name, int dim, Rng& rng, int max_tokens) {
  if (dim < 1 || max_tokens < 1) throw ValidationError("context embedding needs positive dims");
  ContextEmbedding e;
  e.dim = dim;
  e.max_tokens = max_tokens;
  Tensor scale({std::size_t(dim)});
  for (auto& v : scale.data) v = rng.normal();
  Tensor pos({std::size_t(max_tokens), std::size_t(dim)});
  for (auto& v : pos.data) v = 0.1 * rng.normal();
  e.scale = ps.add(name + ".scale", std::move(scale));
  e.bias = ps.add(name + ".bias", Tensor({std::size_t(dim)}));
  e.pos = ps.add(name + ".pos", std::move(pos));
  return e;
}

Matrix ContextEmbedding::forward(const ParamSet& ps, const Volume& grid) const {
  const std::size_t n = grid.size();
  if (n == 0 || int(n) > max_tokens) throw ShapeError(concat("context has ", n, " tokens, limit ", max_tokens));
  const auto sc = ps.value(scale), b = ps.value(bias), p = ps.value(pos);
  Matrix t(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) t(i, j) = grid[i] * sc[j] + b[j] + p[i * dim + j];
  }
  return t;
}

void ContextEmbedding::backward(ParamSet& ps, const Volume& grid, const Matrix& g) const {
  const std::size_t n = grid.size();
  if (g.rows != n || g.cols != std::size_t(dim)) throw ShapeError("context gradient shape mismatch");
  auto gs = ps.grad(scale), gb = ps.grad(bias), gp = ps.grad(pos);
  for (std::size_t i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) {
      gs[j] += g(i, j) * grid[i];
      gb[j] += g(i, j);
      gp[i * dim + j] += g(i, j);
    }
  }
}

Matrix build_context(const Volume& downsampled, const ParamSet& ps, const ContextEmbedding& embed) {
  return embed.forward(ps, context_grid(downsampled));
}

}  // namespace land
