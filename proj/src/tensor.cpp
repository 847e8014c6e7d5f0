#include "land/tensor.hpp"

#include <functional>
#include <numeric>

namespace land {

std::size_t product(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> dims_, double fill) : dims(std::move(dims_)) {
  data.assign(product(dims), fill);
}

Tensor::Tensor(std::vector<std::size_t> dims_, std::vector<double> data_)
    : dims(std::move(dims_)), data(std::move(data_)) {
  if (data.size() != product(dims)) {
    throw ShapeError(concat("tensor data length ", data.size(), " does not match dims ", dims_str()));
  }
}

std::string Tensor::dims_str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor Tensor::from_volume(const Volume& v) {
  const Shape& s = v.shape();
  return Tensor({std::size_t(s.c), std::size_t(s.d), std::size_t(s.h), std::size_t(s.w)}, v.storage());
}

Volume Tensor::to_volume() const {
  if (dims.empty() || dims.size() > 4) {
    throw ShapeError(concat("tensor of rank ", dims.size(), " cannot be viewed as a volume"));
  }
  int d[4] = {1, 1, 1, 1};
  for (std::size_t i = 0; i < dims.size(); ++i) d[4 - dims.size() + i] = int(dims[i]);
  return Volume(Shape{d[0], d[1], d[2], d[3]}, data);
}

}  // namespace land
