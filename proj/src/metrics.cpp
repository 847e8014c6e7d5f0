#include "land/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "land/parallel.hpp"

namespace land {

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double c = 0.5 * (size - 1);
  double s = 0.0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-0.5 * (i - c) * (i - c) / (sigma * sigma));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable valid-mode filter of a single-channel volume.
Volume filter_valid(const Volume& v, const std::vector<double>& w) {
  const int k = int(w.size());
  const Shape s = v.shape();
  Volume a({1, s.d, s.h, s.w - k + 1});
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < a.width(); ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i) acc += w[i] * v.at(0, z, y, x + i);
        a.at(0, z, y, x) = acc;
      }
  Volume b({1, s.d, s.h - k + 1, a.width()});
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < b.height(); ++y)
      for (int x = 0; x < b.width(); ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i) acc += w[i] * a.at(0, z, y + i, x);
        b.at(0, z, y, x) = acc;
      }
  Volume c({1, s.d - k + 1, b.height(), b.width()});
  for (int z = 0; z < c.depth(); ++z)
    for (int y = 0; y < c.height(); ++y)
      for (int x = 0; x < c.width(); ++x) {
        double acc = 0.0;
        for (int i = 0; i < k; ++i) acc += w[i] * b.at(0, z + i, y, x);
        c.at(0, z, y, x) = acc;
      }
  return c;
}

void check_ssim_inputs(const Volume& x, const Volume& y, const SsimOptions& o) {
  require_same_shape(x, y, "ssim3d");
  if (x.channels() != 1) throw ShapeError(concat("ssim3d expects single-channel volumes, got ", x.shape().str()));
  const Shape& s = x.shape();
  if (std::min({s.d, s.h, s.w}) < o.window) {
    throw ShapeError(concat("ssim3d: dims ", s.str(), " smaller than the ", o.window, "-voxel window"));
  }
}

// 2x average pooling, dropping a trailing odd slice.
Volume halve(const Volume& v) {
  const Shape s = v.shape();
  Volume out({s.c, s.d / 2, s.h / 2, s.w / 2});
  for (int c = 0; c < s.c; ++c)
    for (int z = 0; z < out.depth(); ++z)
      for (int y = 0; y < out.height(); ++y)
        for (int x = 0; x < out.width(); ++x) {
          double acc = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) acc += v.at(c, 2 * z + dz, 2 * y + dy, 2 * x + dx);
          out.at(c, z, y, x) = acc / 8.0;
        }
  return out;
}

}  // namespace

SsimParts ssim3d_parts(const Volume& x, const Volume& y, const SsimOptions& o) {
  check_ssim_inputs(x, y, o);
  const auto w = gaussian_window(o.window, o.sigma);
  const Volume mx = filter_valid(x, w), my = filter_valid(y, w);
  const Volume sxx = filter_valid(mul(x, x), w), syy = filter_valid(mul(y, y), w), sxy = filter_valid(mul(x, y), w);
  double ssim = 0.0, cs = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double ux = mx[i], uy = my[i];
    const double vx = sxx[i] - ux * ux, vy = syy[i] - uy * uy, cxy = sxy[i] - ux * uy;
    const double l = (2 * ux * uy + o.c1) / (ux * ux + uy * uy + o.c1);
    const double c = (2 * cxy + o.c2) / (vx + vy + o.c2);
    ssim += l * c;
    cs += c;
  }
  const double n = double(mx.size());
  return {ssim / n, cs / n};
}

double ssim3d(const Volume& x, const Volume& y, const SsimOptions& o) { return ssim3d_parts(x, y, o).ssim; }

int ms_ssim_scales(const Shape& s, int window) {
  int m = std::min({s.d, s.h, s.w});
  int scales = 0;
  while (scales < 5 && m >= window) {
    ++scales;
    m /= 2;
  }
  return scales;
}

std::vector<double> ms_ssim_weights(int scales) {
  if (scales < 1 || scales > 5) throw ValidationError(concat("ms-ssim needs 1..5 scales, got ", scales));
  std::vector<double> w(kMsSsimWeights, kMsSsimWeights + scales);
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return w;
}

double ms_ssim3d(const Volume& x, const Volume& y, const SsimOptions& o) {
  require_same_shape(x, y, "ms_ssim3d");
  const int scales = ms_ssim_scales(x.shape(), o.window);
  if (scales < 1) {
    throw ShapeError(concat("ms_ssim3d: dims ", x.shape().str(), " too small for one ", o.window, "-voxel scale"));
  }
  const auto w = ms_ssim_weights(scales);
  Volume a = x, b = y;
  double result = 1.0;
  for (int j = 0; j < scales; ++j) {
    const SsimParts p = ssim3d_parts(a, b, o);
    const double term = std::max(0.0, j == scales - 1 ? p.ssim : p.cs);
    result *= std::pow(term, w[j]);
    if (j + 1 < scales) {
      a = halve(a);
      b = halve(b);
    }
  }
  return std::clamp(result, 0.0, 1.0);
}

PyramidExtractor::PyramidExtractor(std::uint64_t seed, std::vector<int> widths) : net_(std::move(widths), seed) {}

Matrix extract_features(std::span<const Volume> volumes, const FeatureExtractor& ex, int threads) {
  if (volumes.empty()) throw ValidationError("extract_features: no volumes");
  for (const auto& v : volumes) {
    if (v.shape() != volumes[0].shape()) {
      throw ShapeError(concat("extract_features: shape ", v.shape().str(), " differs from ", volumes[0].shape().str()));
    }
  }
  const int d = ex.dim();
  Matrix f(volumes.size(), std::size_t(d));
  parallel_for(volumes.size(), threads, [&](std::size_t i) {
    const auto row = ex.features(volumes[i]);
    std::copy(row.begin(), row.end(), f.row(i));
  });
  return f;
}

GaussianStats gaussian_stats(const Matrix& f) {
  if (f.rows < 2) throw ValidationError(concat("gaussian_stats needs n >= 2 rows, got ", f.rows));
  const std::size_t n = f.rows, d = f.cols;
  GaussianStats g;
  g.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) g.mean[j] += f(i, j);
  for (auto& m : g.mean) m /= double(n);
  g.cov = Matrix(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = f.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      const double da = r[a] - g.mean[a];
      for (std::size_t b = 0; b < d; ++b) g.cov(a, b) += da * (r[b] - g.mean[b]);
    }
  }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      const double s = 0.5 * (g.cov(a, b) + g.cov(b, a)) / double(n - 1);
      g.cov(a, b) = s;
      g.cov(b, a) = s;
    }
  return g;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size() || a.cov.rows != b.cov.rows) {
    throw ShapeError(concat("frechet_distance: dims ", a.mean.size(), " vs ", b.mean.size()));
  }
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.mean.size(); ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Matrix sa = psd_sqrt(a.cov);
  Matrix m = matmul(matmul(sa, b.cov), sa);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = i + 1; j < m.cols; ++j) {
      const double s = 0.5 * (m(i, j) + m(j, i));
      m(i, j) = s;
      m(j, i) = s;
    }
  const double value = mean_term + trace(a.cov) + trace(b.cov) - 2.0 * trace(psd_sqrt(m));
  if (value < 0) {
    if (value > -1e-8) return 0.0;
    throw NumericalError(concat("frechet_distance: negative value ", value));
  }
  return value;
}

FidResult fid(std::span<const Volume> real, std::span<const Volume> synth, const FeatureExtractor& ex, int threads) {
  if (real.size() < 2 || synth.size() < 2) {
    throw ValidationError(concat("fid needs >= 2 volumes per set, got ", real.size(), " and ", synth.size()));
  }
  if (real[0].shape() != synth[0].shape()) {
    throw ShapeError(concat("fid: real shape ", real[0].shape().str(), " vs synthetic ", synth[0].shape().str()));
  }
  FidResult r;
  r.value = frechet_distance(gaussian_stats(extract_features(real, ex, threads)),
                             gaussian_stats(extract_features(synth, ex, threads)));
  r.n_real = real.size();
  r.n_synth = synth.size();
  r.dim = ex.dim();
  r.extractor_seed = ex.seed();
  return r;
}

MsSsimResult ms_ssim_diversity(std::span<const Volume> set, std::size_t pairs, Rng& rng, int threads) {
  const std::size_t n = set.size();
  if (n < 2) throw ValidationError(concat("ms-ssim diversity needs >= 2 volumes, got ", n));
  if (pairs < 1) throw ValidationError("ms-ssim diversity needs >= 1 pair");
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  const std::size_t total = n * (n - 1) / 2;
  if (pairs >= total) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) chosen.emplace_back(i, j);
  } else {
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (chosen.size() < pairs) {
      std::size_t i = std::size_t(rng.uniform_int(0, int(n) - 1));
      std::size_t j = std::size_t(rng.uniform_int(0, int(n) - 1));
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      if (seen.insert({i, j}).second) chosen.emplace_back(i, j);
    }
  }
  std::vector<double> vals(chosen.size());
  parallel_for(chosen.size(), threads, [&](std::size_t k) {
    vals[k] = ms_ssim3d(set[chosen[k].first], set[chosen[k].second]);
  });
  MsSsimResult r;
  for (double v : vals) r.mean += v;
  r.mean /= double(vals.size());
  r.pairs = vals.size();
  r.n = n;
  return r;
}

}  // namespace land
