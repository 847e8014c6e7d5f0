#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "land/error.hpp"

namespace land {

// (channels, depth, height, width); all positive.
struct Shape {
  int c = 0;
  int d = 0;
  int h = 0;
  int w = 0;

  std::size_t spatial() const { return std::size_t(d) * h * w; }
  std::size_t size() const { return std::size_t(c) * spatial(); }
  bool same_spatial(const Shape& o) const { return d == o.d && h == o.h && w == o.w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

// Dense rank-4 voxel grid, row-major with index ((c*D + z)*H + y)*W + x.
class Volume {
 public:
  Volume() = default;
  explicit Volume(Shape shape, double fill = 0.0);
  Volume(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.c; }
  int depth() const { return shape_.d; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  std::size_t index(int c, int z, int y, int x) const {
    return ((std::size_t(c) * shape_.d + z) * shape_.h + y) * shape_.w + x;
  }
  double& at(int c, int z, int y, int x) { return data_[index(c, z, y, x)]; }
  double at(int c, int z, int y, int x) const { return data_[index(c, z, y, x)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Pointer to channel c's first voxel.
  double* channel(int c) { return data_.data() + std::size_t(c) * shape_.spatial(); }
  const double* channel(int c) const { return data_.data() + std::size_t(c) * shape_.spatial(); }

  bool operator==(const Volume&) const = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

void validate_shape(const Shape& s);
void require_same_shape(const Volume& a, const Volume& b, const char* what);
void require_finite(const Volume& v, const char* what);
bool all_finite(std::span<const double> v);

// Elementwise helpers. Shapes must match exactly; there is no broadcasting.
Volume add(const Volume& a, const Volume& b);
Volume sub(const Volume& a, const Volume& b);
Volume mul(const Volume& a, const Volume& b);
Volume scale(const Volume& a, double s);
// a*x + b*y
Volume lincomb(double a, const Volume& x, double b, const Volume& y);
void add_inplace(Volume& acc, const Volume& v);

double sum(const Volume& v);
double mean(const Volume& v);
double max_abs(const Volume& v);
double max_abs_diff(const Volume& a, const Volume& b);
double mean_abs_diff(const Volume& a, const Volume& b);

// Channel slicing and concatenation (channel axis only).
Volume slice_channels(const Volume& v, int begin, int count);
Volume concat_channels(const Volume& a, const Volume& b);

}  // namespace land
