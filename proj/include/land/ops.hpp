#pragma once

#include <span>

#include "land/tensor.hpp"
#include "land/volume.hpp"

namespace land {

// Output extent of a strided, padded window op; throws ShapeError when < 1.
int conv_out_dim(int dim, int k, int stride, int padding);

// 3D cross-correlation. kernel is [out_c, in_c, k, k, k]; bias has out_c
// entries (or is empty for no bias). Each output voxel accumulates over
// (in_c, kz, ky, kx) in that fixed order, then adds the bias.
Volume conv3d(const Volume& input, const Tensor& kernel, std::span<const double> bias, int stride,
              int padding);

// Raw-span variants used by the layer library. No validation beyond sizes.
Volume conv3d_raw(const Volume& input, std::span<const double> weight, std::span<const double> bias,
                  int out_c, int k, int stride, int padding);

// Reverse pass of conv3d_raw. Any of grad_input / grad_weight / grad_bias may
// be null; gradients are accumulated, not overwritten.
void conv3d_backward_raw(const Volume& input, std::span<const double> weight, const Volume& grad_out,
                         int k, int stride, int padding, Volume* grad_input,
                         std::span<double> grad_weight, std::span<double> grad_bias);

Volume max_pool3d(const Volume& input, int k);
Volume avg_pool3d(const Volume& input, int k);
// Per-axis average pooling (non-cubic windows).
Volume avg_pool3d(const Volume& input, int kd, int kh, int kw);
Volume avg_pool3d_backward(const Volume& grad_out, const Shape& input_shape, int kd, int kh, int kw);

Volume upsample_nearest3d(const Volume& input, int factor);
// Adjoint of upsample_nearest3d: sums each factor^3 block.
Volume upsample_nearest3d_backward(const Volume& grad_out, int factor);

}  // namespace land
