#include "land/ops.hpp"

#include <algorithm>
#include <limits>
#include <vector>

namespace land {

int conv_out_dim(int dim, int k, int stride, int padding) {
  if (k < 1 || stride < 1 || padding < 0) {
    throw ShapeError(concat("invalid window parameters k=", k, " stride=", stride, " padding=", padding));
  }
  const int span = dim + 2 * padding - k;
  if (span < 0) {
    throw ShapeError(concat("window k=", k, " does not fit dim ", dim, " with padding ", padding));
  }
  return span / stride + 1;
}

namespace {

struct Range {
  int lo;
  int hi;  // exclusive
};

// Output indices o with 0 <= o*stride + off < in_dim.
Range valid_range(int out_dim, int in_dim, int stride, int off) {
  int lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  int hi = out_dim;
  const int last = in_dim - 1 - off;
  if (last < 0) return {0, 0};
  hi = std::min(hi, last / stride + 1);
  return {lo, std::max(lo, hi)};
}


// Four interleaved partial sums so the reduction vectorizes; the order is
// fixed, so results stay reproducible.
double dot(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

// Same-size 3x3x3 convolution (stride 1, padding 1), the hot path of every
// residual block. The three x-taps of a kernel row are applied in registers;
// the per-voxel accumulation order (in_c, kz, ky, kx) is unchanged.
void conv3x3_forward(const Volume& input, std::span<const double> weight, Volume& out) {
  const Shape s = input.shape();
  const int out_c = out.channels();
  const int W = s.w;
  for (int oc = 0; oc < out_c; ++oc) {
    double* o = out.channel(oc);
    for (int ic = 0; ic < s.c; ++ic) {
      const double* in = input.channel(ic);
      const double* wk = weight.data() + (std::size_t(oc) * s.c + ic) * 27;
      for (int kz = 0; kz < 3; ++kz) {
        for (int ky = 0; ky < 3; ++ky) {
          const double w0 = wk[(kz * 3 + ky) * 3];
          const double w1 = wk[(kz * 3 + ky) * 3 + 1];
          const double w2 = wk[(kz * 3 + ky) * 3 + 2];
          const int z_lo = kz == 0 ? 1 : 0, z_hi = kz == 2 ? s.d - 1 : s.d;
          const int y_lo = ky == 0 ? 1 : 0, y_hi = ky == 2 ? s.h - 1 : s.h;
          for (int z = z_lo; z < z_hi; ++z) {
            for (int y = y_lo; y < y_hi; ++y) {
              const double* src = in + (std::size_t(z + kz - 1) * s.h + (y + ky - 1)) * W;
              double* dst = o + (std::size_t(z) * s.h + y) * W;
              if (W == 1) {
                dst[0] += w1 * src[0];
                continue;
              }
              {
                double t = dst[0];
                t += w1 * src[0];
                t += w2 * src[1];
                dst[0] = t;
              }
              for (int x = 1; x < W - 1; ++x) {
                double t = dst[x];
                t += w0 * src[x - 1];
                t += w1 * src[x];
                t += w2 * src[x + 1];
                dst[x] = t;
              }
              {
                double t = dst[W - 1];
                t += w0 * src[W - 2];
                t += w1 * src[W - 1];
                dst[W - 1] = t;
              }
            }
          }
        }
      }
    }
  }
}

void conv3x3_backward(const Volume& input, std::span<const double> weight, const Volume& grad_out,
                      Volume* grad_input, std::span<double> grad_weight) {
  const Shape s = input.shape();
  const int out_c = grad_out.channels();
  const int W = s.w;
  const bool want_w = !grad_weight.empty();
  for (int oc = 0; oc < out_c; ++oc) {
    const double* go = grad_out.channel(oc);
    for (int ic = 0; ic < s.c; ++ic) {
      const double* in = input.channel(ic);
      double* gi = grad_input ? grad_input->channel(ic) : nullptr;
      const std::size_t wbase = (std::size_t(oc) * s.c + ic) * 27;
      for (int kz = 0; kz < 3; ++kz) {
        for (int ky = 0; ky < 3; ++ky) {
          const std::size_t wi = wbase + (kz * 3 + ky) * 3;
          const double w0 = weight[wi], w1 = weight[wi + 1], w2 = weight[wi + 2];
          double a0 = 0.0, a1 = 0.0, a2 = 0.0;
          const int z_lo = kz == 0 ? 1 : 0, z_hi = kz == 2 ? s.d - 1 : s.d;
          const int y_lo = ky == 0 ? 1 : 0, y_hi = ky == 2 ? s.h - 1 : s.h;
          for (int z = z_lo; z < z_hi; ++z) {
            for (int y = y_lo; y < y_hi; ++y) {
              const std::size_t ioff = (std::size_t(z + kz - 1) * s.h + (y + ky - 1)) * W;
              const double* g = go + (std::size_t(z) * s.h + y) * W;
              const double* src = in + ioff;
              if (want_w) {
                // output x reads input x-1, x, x+1 through taps 0, 1, 2
                a0 += dot(g + 1, src, W - 1);
                a1 += dot(g, src, W);
                a2 += dot(g, src + 1, W - 1);
              }
              if (gi) {
                double* dst = gi + ioff;
                // input ix receives tap 0 from output ix+1, tap 1 from ix, tap 2 from ix-1
                if (W == 1) {
                  dst[0] += w1 * g[0];
                  continue;
                }
                {
                  double t = dst[0];
                  t += w0 * g[1];
                  t += w1 * g[0];
                  dst[0] = t;
                }
                for (int x = 1; x < W - 1; ++x) {
                  double t = dst[x];
                  t += w0 * g[x + 1];
                  t += w1 * g[x];
                  t += w2 * g[x - 1];
                  dst[x] = t;
                }
                {
                  double t = dst[W - 1];
                  t += w1 * g[W - 1];
                  t += w2 * g[W - 2];
                  dst[W - 1] = t;
                }
              }
            }
          }
          if (want_w) {
            grad_weight[wi] += a0;
            grad_weight[wi + 1] += a1;
            grad_weight[wi + 2] += a2;
          }
        }
      }
    }
  }
}

}  // namespace

Volume conv3d_raw(const Volume& input, std::span<const double> weight, std::span<const double> bias,
                  int out_c, int k, int stride, int padding) {
  const Shape is = input.shape();
  const int od = conv_out_dim(is.d, k, stride, padding);
  const int oh = conv_out_dim(is.h, k, stride, padding);
  const int ow = conv_out_dim(is.w, k, stride, padding);
  const std::size_t k3 = std::size_t(k) * k * k;
  if (weight.size() != std::size_t(out_c) * is.c * k3) {
    throw ShapeError(concat("conv3d: weight has ", weight.size(), " entries, expected ",
                            std::size_t(out_c) * is.c * k3));
  }
  if (!bias.empty() && bias.size() != std::size_t(out_c)) {
    throw ShapeError(concat("conv3d: bias has ", bias.size(), " entries, expected ", out_c));
  }
  Volume out(Shape{out_c, od, oh, ow});
  const std::size_t in_plane = std::size_t(is.h) * is.w;
  if (k == 3 && stride == 1 && padding == 1) {
    conv3x3_forward(input, weight, out);
    if (!bias.empty()) {
      for (int oc = 0; oc < out_c; ++oc) {
        double* o = out.channel(oc);
        for (std::size_t i = 0; i < out.shape().spatial(); ++i) o[i] += bias[oc];
      }
    }
    return out;
  }

  for (int oc = 0; oc < out_c; ++oc) {
    double* o = out.channel(oc);
    for (int ic = 0; ic < is.c; ++ic) {
      const double* in = input.channel(ic);
      const double* wk = weight.data() + (std::size_t(oc) * is.c + ic) * k3;
      for (int kz = 0; kz < k; ++kz) {
        const Range rz = valid_range(od, is.d, stride, kz - padding);
        for (int ky = 0; ky < k; ++ky) {
          const Range ry = valid_range(oh, is.h, stride, ky - padding);
          for (int kx = 0; kx < k; ++kx) {
            const Range rx = valid_range(ow, is.w, stride, kx - padding);
            const double w = wk[(kz * k + ky) * k + kx];
            const int xoff = kx - padding;
            for (int z = rz.lo; z < rz.hi; ++z) {
              const int iz = z * stride + kz - padding;
              for (int y = ry.lo; y < ry.hi; ++y) {
                const int iy = y * stride + ky - padding;
                const double* irow = in + std::size_t(iz) * in_plane + std::size_t(iy) * is.w;
                double* orow = o + (std::size_t(z) * oh + y) * ow;
                if (stride == 1) {
                  const double* src = irow + xoff;
                  for (int x = rx.lo; x < rx.hi; ++x) orow[x] += w * src[x];
                } else {
                  for (int x = rx.lo; x < rx.hi; ++x) orow[x] += w * irow[x * stride + xoff];
                }
              }
            }
          }
        }
      }
    }
    if (!bias.empty()) {
      const double b = bias[oc];
      const std::size_t n = out.shape().spatial();
      for (std::size_t i = 0; i < n; ++i) o[i] += b;
    }
  }
  return out;
}

void conv3d_backward_raw(const Volume& input, std::span<const double> weight, const Volume& grad_out,
                         int k, int stride, int padding, Volume* grad_input,
                         std::span<double> grad_weight, std::span<double> grad_bias) {
  const Shape is = input.shape();
  const Shape os = grad_out.shape();
  const int out_c = os.c;
  const std::size_t k3 = std::size_t(k) * k * k;
  if (os.d != conv_out_dim(is.d, k, stride, padding) || os.h != conv_out_dim(is.h, k, stride, padding) ||
      os.w != conv_out_dim(is.w, k, stride, padding) || weight.size() != std::size_t(out_c) * is.c * k3) {
    throw ShapeError(concat("conv3d backward: inconsistent shapes input ", is.str(), " grad_out ", os.str()));
  }
  if (grad_input && grad_input->shape() != is) {
    throw ShapeError(concat("conv3d backward: grad_input shape ", grad_input->shape().str(), " != ", is.str()));
  }
  const bool want_w = !grad_weight.empty();
  if (want_w && grad_weight.size() != weight.size()) {
    throw ShapeError("conv3d backward: grad_weight size mismatch");
  }
  const std::size_t in_plane = std::size_t(is.h) * is.w;
  const std::size_t out_spatial = os.spatial();

  if (!grad_bias.empty()) {
    if (grad_bias.size() != std::size_t(out_c)) throw ShapeError("conv3d backward: grad_bias size mismatch");
    for (int oc = 0; oc < out_c; ++oc) {
      const double* g = grad_out.channel(oc);
      double s = 0.0;
      for (std::size_t i = 0; i < out_spatial; ++i) s += g[i];
      grad_bias[oc] += s;
    }
  }
  if (!grad_input && !want_w) return;
  if (k == 3 && stride == 1 && padding == 1) {
    conv3x3_backward(input, weight, grad_out, grad_input, grad_weight);
    return;
  }

  for (int oc = 0; oc < out_c; ++oc) {
    const double* go = grad_out.channel(oc);
    for (int ic = 0; ic < is.c; ++ic) {
      const double* in = input.channel(ic);
      double* gi = grad_input ? grad_input->channel(ic) : nullptr;
      const std::size_t wbase = (std::size_t(oc) * is.c + ic) * k3;
      for (int kz = 0; kz < k; ++kz) {
        const Range rz = valid_range(os.d, is.d, stride, kz - padding);
        for (int ky = 0; ky < k; ++ky) {
          const Range ry = valid_range(os.h, is.h, stride, ky - padding);
          for (int kx = 0; kx < k; ++kx) {
            const Range rx = valid_range(os.w, is.w, stride, kx - padding);
            const std::size_t widx = wbase + (kz * k + ky) * k + kx;
            const double w = weight[widx];
            const int xoff = kx - padding;
            double acc = 0.0;
            for (int z = rz.lo; z < rz.hi; ++z) {
              const int iz = z * stride + kz - padding;
              for (int y = ry.lo; y < ry.hi; ++y) {
                const int iy = y * stride + ky - padding;
                const std::size_t ioff = std::size_t(iz) * in_plane + std::size_t(iy) * is.w;
                const double* grow = go + (std::size_t(z) * os.h + y) * os.w;
                const double* irow = in + ioff;
                if (stride == 1) {
                  const double* src = irow + xoff;
                  if (want_w) {
                    for (int x = rx.lo; x < rx.hi; ++x) acc += grow[x] * src[x];
                  }
                  if (gi) {
                    double* dst = gi + ioff + xoff;
                    for (int x = rx.lo; x < rx.hi; ++x) dst[x] += w * grow[x];
                  }
                } else {
                  if (want_w) {
                    for (int x = rx.lo; x < rx.hi; ++x) acc += grow[x] * irow[x * stride + xoff];
                  }
                  if (gi) {
                    double* dst = gi + ioff;
                    for (int x = rx.lo; x < rx.hi; ++x) dst[x * stride + xoff] += w * grow[x];
                  }
                }
              }
            }
            if (want_w) grad_weight[widx] += acc;
          }
        }
      }
    }
  }
}

Volume conv3d(const Volume& input, const Tensor& kernel, std::span<const double> bias, int stride,
              int padding) {
  if (kernel.dims.size() != 5 || kernel.dims[2] != kernel.dims[3] || kernel.dims[3] != kernel.dims[4]) {
    throw ShapeError(concat("conv3d: kernel must be [out_c, in_c, k, k, k], got ", kernel.dims_str()));
  }
  if (int(kernel.dims[1]) != input.channels()) {
    throw ShapeError(concat("conv3d: kernel expects ", kernel.dims[1], " input channels, input has shape ",
                            input.shape().str()));
  }
  if (stride < 1) throw ShapeError(concat("conv3d: stride must be >= 1, got ", stride));
  if (padding < 0) throw ShapeError(concat("conv3d: padding must be >= 0, got ", padding));
  require_finite(input, "conv3d input");
  return conv3d_raw(input, kernel.data, bias, int(kernel.dims[0]), int(kernel.dims[2]), stride, padding);
}

namespace {

void require_divisible(const Shape& s, int kd, int kh, int kw, const char* op) {
  if (kd < 1 || kh < 1 || kw < 1) throw ShapeError(concat(op, ": window must be >= 1"));
  if (s.d % kd || s.h % kh || s.w % kw) {
    throw ShapeError(concat(op, ": spatial dims of ", s.str(), " not divisible by window [", kd, ", ", kh, ", ",
                            kw, "]"));
  }
}

// Pairwise summation: exact for 2^n copies of one value, which makes
// avg_pool3d(upsample_nearest3d(v, f), f) == v bitwise for power-of-two f.
double pairwise_sum(const double* v, std::size_t n) {
  if (n == 1) return v[0];
  if (n == 2) return v[0] + v[1];
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

template <typename Reduce>
Volume pool(const Volume& input, int kd, int kh, int kw, Reduce reduce, const char* op) {
  const Shape is = input.shape();
  require_divisible(is, kd, kh, kw, op);
  Volume out(Shape{is.c, is.d / kd, is.h / kh, is.w / kw});
  const Shape os = out.shape();
  std::vector<double> window(std::size_t(kd) * kh * kw);
  for (int c = 0; c < os.c; ++c) {
    for (int z = 0; z < os.d; ++z) {
      for (int y = 0; y < os.h; ++y) {
        for (int x = 0; x < os.w; ++x) {
          std::size_t n = 0;
          for (int dz = 0; dz < kd; ++dz) {
            for (int dy = 0; dy < kh; ++dy) {
              const double* row = input.data() + input.index(c, z * kd + dz, y * kh + dy, x * kw);
              for (int dx = 0; dx < kw; ++dx) window[n++] = row[dx];
            }
          }
          out.at(c, z, y, x) = reduce(window);
        }
      }
    }
  }
  return out;
}

}  // namespace

Volume max_pool3d(const Volume& input, int k) {
  return pool(
      input, k, k, k,
      [](const std::vector<double>& w) {
        double m = -std::numeric_limits<double>::infinity();
        for (double v : w) m = std::max(m, v);
        return m;
      },
      "max_pool3d");
}

Volume avg_pool3d(const Volume& input, int kd, int kh, int kw) {
  return pool(
      input, kd, kh, kw,
      [](const std::vector<double>& w) { return pairwise_sum(w.data(), w.size()) / double(w.size()); },
      "avg_pool3d");
}

Volume avg_pool3d(const Volume& input, int k) { return avg_pool3d(input, k, k, k); }

Volume avg_pool3d_backward(const Volume& grad_out, const Shape& input_shape, int kd, int kh, int kw) {
  require_divisible(input_shape, kd, kh, kw, "avg_pool3d backward");
  const Shape os = grad_out.shape();
  if (os != Shape{input_shape.c, input_shape.d / kd, input_shape.h / kh, input_shape.w / kw}) {
    throw ShapeError("avg_pool3d backward: grad shape inconsistent with input shape");
  }
  const double inv = 1.0 / (double(kd) * kh * kw);
  Volume g(input_shape);
  for (int c = 0; c < input_shape.c; ++c) {
    for (int z = 0; z < input_shape.d; ++z) {
      for (int y = 0; y < input_shape.h; ++y) {
        for (int x = 0; x < input_shape.w; ++x) g.at(c, z, y, x) = grad_out.at(c, z / kd, y / kh, x / kw) * inv;
      }
    }
  }
  return g;
}

Volume upsample_nearest3d(const Volume& input, int factor) {
  if (factor < 1) throw ShapeError(concat("upsample_nearest3d: factor must be >= 1, got ", factor));
  const Shape is = input.shape();
  Volume out(Shape{is.c, is.d * factor, is.h * factor, is.w * factor});
  const Shape os = out.shape();
  for (int c = 0; c < os.c; ++c) {
    for (int z = 0; z < os.d; ++z) {
      for (int y = 0; y < os.h; ++y) {
        const double* src = input.data() + input.index(c, z / factor, y / factor, 0);
        double* dst = out.data() + out.index(c, z, y, 0);
        for (int x = 0; x < os.w; ++x) dst[x] = src[x / factor];
      }
    }
  }
  return out;
}

Volume upsample_nearest3d_backward(const Volume& grad_out, int factor) {
  if (factor < 1) throw ShapeError(concat("upsample_nearest3d backward: factor must be >= 1, got ", factor));
  const Shape os = grad_out.shape();
  if (os.d % factor || os.h % factor || os.w % factor) {
    throw ShapeError("upsample_nearest3d backward: grad dims not divisible by factor");
  }
  Volume g(Shape{os.c, os.d / factor, os.h / factor, os.w / factor});
  for (int c = 0; c < os.c; ++c) {
    for (int z = 0; z < os.d; ++z) {
      for (int y = 0; y < os.h; ++y) {
        const double* src = grad_out.data() + grad_out.index(c, z, y, 0);
        double* dst = g.data() + g.index(c, z / factor, y / factor, 0);
        for (int x = 0; x < os.w; ++x) dst[x / factor] += src[x];
      }
    }
  }
  return g;
}

}  // namespace land
