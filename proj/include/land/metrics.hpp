#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "land/linalg.hpp"
#include "land/vae.hpp"
#include "land/volume.hpp"

namespace land {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double c1 = 0.02 * 0.02;  // (0.01 L)^2 with data range L = 2
  double c2 = 0.06 * 0.06;  // (0.03 L)^2
};

struct SsimParts {
  double ssim = 0.0;
  // Mean contrast-structure term.
  double cs = 0.0;
};

// Gaussian-windowed SSIM averaged over the valid region (no padding).
SsimParts ssim3d_parts(const Volume& x, const Volume& y, const SsimOptions& opts = {});
double ssim3d(const Volume& x, const Volume& y, const SsimOptions& opts = {});

inline constexpr double kMsSsimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

// Usable scales: halvings keep the smallest dim >= window, at most 5.
int ms_ssim_scales(const Shape& s, int window = 11);
std::vector<double> ms_ssim_weights(int scales);
double ms_ssim3d(const Volume& x, const Volume& y, const SsimOptions& opts = {});

// Pluggable feature extractor: one row of `dim()` features per volume.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<double> features(const Volume& v) const = 0;
  virtual int dim() const = 0;
  virtual std::uint64_t seed() const = 0;
};

// Frozen seeded conv pyramid, global-average-pooled.
class PyramidExtractor final : public FeatureExtractor {
 public:
  explicit PyramidExtractor(std::uint64_t seed = 1, std::vector<int> widths = {16, 32, 64});
  std::vector<double> features(const Volume& v) const override { return net_.embed(v); }
  int dim() const override { return net_.dim(); }
  std::uint64_t seed() const override { return net_.seed(); }

 private:
  FeaturePyramid net_;
};

Matrix extract_features(std::span<const Volume> volumes, const FeatureExtractor& ex, int threads = 1);

struct GaussianStats {
  std::vector<double> mean;
  Matrix cov;
};

GaussianStats gaussian_stats(const Matrix& features);
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

struct FidResult {
  double value = 0.0;
  std::size_t n_real = 0;
  std::size_t n_synth = 0;
  int dim = 0;
  std::uint64_t extractor_seed = 0;
};

FidResult fid(std::span<const Volume> real, std::span<const Volume> synth, const FeatureExtractor& ex, int threads = 1);

struct MsSsimResult {
  double mean = 0.0;
  std::size_t pairs = 0;
  std::size_t n = 0;
};

// Mean MS-SSIM over `pairs` distinct pairs drawn from rng (all pairs when
// fewer exist).
MsSsimResult ms_ssim_diversity(std::span<const Volume> set, std::size_t pairs, Rng& rng, int threads = 1);

}  // namespace land
