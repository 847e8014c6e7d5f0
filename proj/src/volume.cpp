#include "land/volume.hpp"

#include <algorithm>
#include <cmath>

namespace land {

std::string Shape::str() const { return concat("[", c, ", ", d, ", ", h, ", ", w, "]"); }

void validate_shape(const Shape& s) {
  if (s.c <= 0 || s.d <= 0 || s.h <= 0 || s.w <= 0) {
    throw ShapeError(concat("volume shape must be positive, got ", s.str()));
  }
}

Volume::Volume(Shape shape, double fill) : shape_(shape) {
  validate_shape(shape);
  data_.assign(shape.size(), fill);
}

Volume::Volume(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  validate_shape(shape);
  if (data_.size() != shape.size()) {
    throw ShapeError(concat("data length ", data_.size(), " does not match shape ", shape.str()));
  }
}

void require_same_shape(const Volume& a, const Volume& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(concat(what, ": shape mismatch ", a.shape().str(), " vs ", b.shape().str()));
  }
}

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(const Volume& v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NumericalError(concat(what, ": non-finite value at flat index ", i));
    }
  }
}

namespace {

template <typename F>
Volume zip(const Volume& a, const Volume& b, const char* what, F f) {
  require_same_shape(a, b, what);
  Volume out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

Volume add(const Volume& a, const Volume& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Volume sub(const Volume& a, const Volume& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Volume mul(const Volume& a, const Volume& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Volume scale(const Volume& a, double s) {
  Volume out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * s;
  return out;
}

Volume lincomb(double a, const Volume& x, double b, const Volume& y) {
  return zip(x, y, "lincomb", [a, b](double u, double v) { return a * u + b * v; });
}

void add_inplace(Volume& acc, const Volume& v) {
  require_same_shape(acc, v, "add_inplace");
  for (std::size_t i = 0; i < v.size(); ++i) acc[i] += v[i];
}

double sum(const Volume& v) {
  double s = 0.0;
  for (double x : v.values()) s += x;
  return s;
}

double mean(const Volume& v) { return v.empty() ? 0.0 : sum(v) / double(v.size()); }

double max_abs(const Volume& v) {
  double m = 0.0;
  for (double x : v.values()) m = std::max(m, std::abs(x));
  return m;
}

double max_abs_diff(const Volume& a, const Volume& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double mean_abs_diff(const Volume& a, const Volume& b) {
  require_same_shape(a, b, "mean_abs_diff");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return a.empty() ? 0.0 : s / double(a.size());
}

Volume slice_channels(const Volume& v, int begin, int count) {
  if (begin < 0 || count <= 0 || begin + count > v.channels()) {
    throw ShapeError(concat("slice_channels: [", begin, ", ", begin + count, ") out of range for ",
                            v.shape().str()));
  }
  Shape s = v.shape();
  s.c = count;
  Volume out(s);
  std::copy_n(v.channel(begin), s.size(), out.data());
  return out;
}

Volume concat_channels(const Volume& a, const Volume& b) {
  if (!a.shape().same_spatial(b.shape())) {
    throw ShapeError(concat("concat_channels: spatial mismatch ", a.shape().str(), " vs ", b.shape().str()));
  }
  Shape s = a.shape();
  s.c = a.channels() + b.channels();
  Volume out(s);
  std::copy_n(a.data(), a.size(), out.data());
  std::copy_n(b.data(), b.size(), out.data() + a.size());
  return out;
}

}  // namespace land
