#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "land/volume.hpp"

namespace land {

// Arbitrary-rank parameter storage (conv kernels are rank 5, linear weights
// rank 2, biases rank 1). Activations use Volume.
struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims_, double fill = 0.0);
  Tensor(std::vector<std::size_t> dims_, std::vector<double> data_);

  std::size_t size() const { return data.size(); }
  std::span<double> values() { return data; }
  std::span<const double> values() const { return data; }
  std::string dims_str() const;
  bool operator==(const Tensor&) const = default;

  static Tensor from_volume(const Volume& v);
  Volume to_volume() const;  // requires rank <= 4
};

std::size_t product(std::span<const std::size_t> dims);

}  // namespace land
