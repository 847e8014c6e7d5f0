#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "land/linalg.hpp"
#include "land/rng.hpp"
#include "land/tensor.hpp"
#include "land/volume.hpp"

namespace land {

// A named parameter with its gradient and AdamW moments, all of identical dims.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
};

// Ordered parameter store. Layers hold indices into it, so a model is a plain
// value: copying the ParamSet copies the model.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor init);

  Param& operator[](std::size_t i) { return params_.at(i); }
  const Param& operator[](std::size_t i) const { return params_.at(i); }
  std::size_t index_of(std::string_view name) const;
  const Param* find(std::string_view name) const;
  Param* find(std::string_view name);

  std::span<Param> params() { return params_; }
  std::span<const Param> params() const { return params_; }
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  std::span<const double> value(std::size_t i) const { return params_[i].value.data; }
  std::span<double> mutable_value(std::size_t i) { return params_[i].value.data; }
  std::span<double> grad(std::size_t i) { return params_[i].grad.data; }

  long step() const { return step_; }
  void set_step(long s) { step_ = s; }

  void zero_grad();
  // Rounds values and moments to the nearest float, matching what a
  // checkpoint stores, so a resumed run continues bit-identically.
  void round_to_float();

 private:
  std::vector<Param> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
  long step_ = 0;
};

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay with bias correction. Rejects non-finite gradients
// (parameters untouched, message names the parameter); zeroes gradients after
// a successful step.
void adamw_step(ParamSet& ps, const AdamWConfig& cfg);

// Adds N(0, stddev) noise to every parameter. Used to move zero-initialized
// layers off their degenerate point before gradient checks.
void randomize(ParamSet& ps, Rng& rng, double stddev);

// ---- activations -----------------------------------------------------------

double silu(double x);
Volume silu(const Volume& x);
Volume silu_backward(const Volume& x, const Volume& grad_out);
Matrix silu(const Matrix& x);
Matrix silu_backward(const Matrix& x, const Matrix& grad_out);

Volume leaky_relu(const Volume& x, double slope);
Volume leaky_relu_backward(const Volume& x, const Volume& grad_out, double slope);

Volume tanh(const Volume& x);
// Takes the forward output y = tanh(x).
Volume tanh_backward(const Volume& y, const Volume& grad_out);

// Volume [C, D, H, W] <-> rows [D*H*W, C].
Matrix to_rows(const Volume& v);
Volume from_rows(const Matrix& m, const Shape& shape);

// ---- layers ----------------------------------------------------------------

struct Conv3d {
  int in_c = 0;
  int out_c = 0;
  int k = 1;
  int stride = 1;
  int pad = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;

  struct Cache {
    Volume input;
  };

  // Weights ~ N(0, 1/sqrt(fan_in)), bias zero; zero_init zeroes the weights.
  static Conv3d create(ParamSet& ps, const std::string& name, int in_c, int out_c, int k, int stride, int pad,
                       Rng& rng, bool zero_init = false);
  Volume forward(const ParamSet& ps, const Volume& x, Cache* cache = nullptr) const;
  Volume backward(ParamSet& ps, const Cache& cache, const Volume& grad_out, bool param_grads = true) const;
};

struct GroupNorm {
  int channels = 0;
  int groups = 1;
  double eps = 1e-5;
  std::size_t gamma = 0;
  std::size_t beta = 0;

  struct Cache {
    Volume xhat;
    std::vector<double> inv_std;
  };

  // Largest divisor of channels that is <= preferred.
  static int resolve_groups(int channels, int preferred = 8);
  static GroupNorm create(ParamSet& ps, const std::string& name, int channels, int preferred_groups = 8);
  Volume forward(const ParamSet& ps, const Volume& x, Cache* cache = nullptr) const;
  Volume backward(ParamSet& ps, const Cache& cache, const Volume& grad_out) const;
};

// y = x W^T + b over the rows of x.
struct Linear {
  int in = 0;
  int out = 0;
  bool has_bias = true;
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Linear create(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, bool zero_init = false,
                       bool with_bias = true);
  Matrix forward(const ParamSet& ps, const Matrix& x) const;
  Matrix backward(ParamSet& ps, const Matrix& x, const Matrix& grad_out) const;
};

// Pre-activation residual block:
//   h = conv1(silu(norm1(x)))
//   h = norm2(h) * (1 + scale) + shift      (scale, shift from the time embedding)
//   out = skip(x) + conv2(silu(h))
// conv2 starts at zero, so a fresh block is skip(x).
struct ResBlock {
  int in_c = 0;
  int out_c = 0;
  int temb_dim = 0;
  GroupNorm norm1;
  Conv3d conv1;
  GroupNorm norm2;
  Conv3d conv2;
  std::optional<Linear> temb_proj;
  std::optional<Conv3d> skip;

  struct Cache {
    Volume x;
    GroupNorm::Cache n1;
    Volume a0;
    Conv3d::Cache c1;
    GroupNorm::Cache n2;
    Volume a2;
    Volume a3;
    Conv3d::Cache c2;
    Conv3d::Cache cs;
    Matrix temb;
    Matrix temb_act;
    std::vector<double> scale;
    bool filled = false;
  };

  static ResBlock create(ParamSet& ps, const std::string& name, int in_c, int out_c, int temb_dim, Rng& rng,
                         int groups = 8);
  Volume forward(const ParamSet& ps, const Volume& x, const Matrix* temb, Cache* cache = nullptr) const;
  // Accumulates into grad_temb (1 x temb_dim) when the block is time-conditioned.
  Volume backward(ParamSet& ps, const Cache& cache, const Volume& grad_out, Matrix* grad_temb = nullptr) const;
};

// Multi-head cross-attention from volume positions (queries) to context
// tokens, output-projected and added back to the input.
struct CrossAttention {
  int dim = 0;
  int ctx_dim = 0;
  int inner = 64;
  int heads = 1;
  Linear q;
  Linear k;
  Linear v;
  Linear o;

  struct Cache {
    Shape shape;
    Matrix x;
    Matrix ctx;
    Matrix qm;
    Matrix km;
    Matrix vm;
    Matrix om;
    std::vector<Matrix> probs;
    bool filled = false;
  };

  static CrossAttention create(ParamSet& ps, const std::string& name, int dim, int ctx_dim, int inner, int heads,
                               Rng& rng);
  // softmax(Q K^T / sqrt(d_head)) V per head, concatenated (before the output
  // projection). probs receives one [N, n_ctx] matrix per head.
  Matrix attend(const ParamSet& ps, const Matrix& x_rows, const Matrix& ctx, std::vector<Matrix>* probs = nullptr,
                Matrix* qm = nullptr, Matrix* km = nullptr, Matrix* vm = nullptr) const;
  Volume forward(const ParamSet& ps, const Volume& x, const Matrix& ctx, Cache* cache = nullptr) const;
  Volume backward(ParamSet& ps, const Cache& cache, const Volume& grad_out, Matrix* grad_ctx = nullptr) const;
};

// Sinusoidal embedding: component 2i = sin(t w_i), 2i+1 = cos(t w_i),
// w_i = 10000^(-2i/dim). Requires 1 <= t <= max_t and even dim.
std::vector<double> time_embedding(int t, int dim, int max_t = 1000);

// ---- gradient checking -----------------------------------------------------

struct GradCheckOptions {
  double tolerance = 1e-4;
  // Entries sampled per parameter tensor (all entries when the tensor is smaller).
  std::size_t max_per_param = 24;
  // Denominator floor for the relative error; gradients smaller than this
  // are compared absolutely.
  double rel_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string param;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::string name;
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

// Compares the analytic gradients written by `backward` (called after
// zero_grad) with fourth-order central differences of `loss`, using
// h = 1e-4 * (1 + |theta|).
GradCheckReport grad_check(const std::string& name, ParamSet& ps,
                           const std::function<double(const ParamSet&)>& loss,
                           const std::function<void(ParamSet&)>& backward, const GradCheckOptions& opts = {});

}  // namespace land
