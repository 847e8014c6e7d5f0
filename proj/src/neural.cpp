#include "land/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "land/ops.hpp"

namespace land {

// ---- ParamSet ----------------------------------------------------------------

std::size_t ParamSet::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ValidationError(concat("duplicate parameter name '", name, "'"));
  const std::size_t i = params_.size();
  Param p;
  p.name = name;
  p.grad = Tensor(init.dims);
  p.m = Tensor(init.dims);
  p.v = Tensor(init.dims);
  p.value = std::move(init);
  params_.push_back(std::move(p));
  index_.emplace(std::move(name), i);
  return i;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ValidationError(concat("unknown parameter '", name, "'"));
  return it->second;
}

const Param* ParamSet::find(std::string_view name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Param* ParamSet::find(std::string_view name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

void ParamSet::round_to_float() {
  for (auto& p : params_) {
    for (Tensor* t : {&p.value, &p.m, &p.v}) {
      for (double& x : t->data) x = double(float(x));
    }
  }
}

void adamw_step(ParamSet& ps, const AdamWConfig& cfg) {
  for (const auto& p : ps.params()) {
    if (!all_finite(p.grad.data)) {
      throw NumericalError(concat("adamw_step: non-finite gradient in parameter '", p.name, "'"));
    }
  }
  const long t = ps.step() + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(t));
  const double decay = 1.0 - cfg.lr * cfg.weight_decay;
  for (auto& p : ps.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      double& m = p.m.data[i];
      double& v = p.v.data[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      double& theta = p.value.data[i];
      theta *= decay;
      theta -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  ps.set_step(t);
  ps.zero_grad();
}

void randomize(ParamSet& ps, Rng& rng, double stddev) {
  for (auto& p : ps.params()) {
    for (double& x : p.value.data) x += stddev * rng.normal();
  }
}

// ---- activations -------------------------------------------------------------

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

}  // namespace

double silu(double x) { return x * sigmoid(x); }

Volume silu(const Volume& x) {
  Volume y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = silu(x[i]);
  return y;
}

Volume silu_backward(const Volume& x, const Volume& grad_out) {
  require_same_shape(x, grad_out, "silu backward");
  Volume g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = grad_out[i] * silu_grad(x[i]);
  return g;
}

Matrix silu(const Matrix& x) {
  Matrix y(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) y.data[i] = silu(x.data[i]);
  return y;
}

Matrix silu_backward(const Matrix& x, const Matrix& grad_out) {
  Matrix g(x.rows, x.cols);
  for (std::size_t i = 0; i < x.data.size(); ++i) g.data[i] = grad_out.data[i] * silu_grad(x.data[i]);
  return g;
}

Volume leaky_relu(const Volume& x, double slope) {
  Volume y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0 ? x[i] : slope * x[i];
  return y;
}

Volume leaky_relu_backward(const Volume& x, const Volume& grad_out, double slope) {
  require_same_shape(x, grad_out, "leaky_relu backward");
  Volume g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0 ? grad_out[i] : slope * grad_out[i];
  return g;
}

Volume tanh(const Volume& x) {
  Volume y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
  return y;
}

Volume tanh_backward(const Volume& y, const Volume& grad_out) {
  require_same_shape(y, grad_out, "tanh backward");
  Volume g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) g[i] = grad_out[i] * (1.0 - y[i] * y[i]);
  return g;
}

Matrix to_rows(const Volume& v) {
  const std::size_t n = v.shape().spatial();
  Matrix m(n, std::size_t(v.channels()));
  for (int c = 0; c < v.channels(); ++c) {
    const double* src = v.channel(c);
    for (std::size_t i = 0; i < n; ++i) m(i, c) = src[i];
  }
  return m;
}

Volume from_rows(const Matrix& m, const Shape& shape) {
  if (m.rows != shape.spatial() || m.cols != std::size_t(shape.c)) {
    throw ShapeError(concat("from_rows: ", m.rows, "x", m.cols, " does not fit ", shape.str()));
  }
  Volume v(shape);
  for (int c = 0; c < shape.c; ++c) {
    double* dst = v.channel(c);
    for (std::size_t i = 0; i < m.rows; ++i) dst[i] = m(i, c);
  }
  return v;
}

// ---- Conv3d ------------------------------------------------------------------

Conv3d Conv3d::create(ParamSet& ps, const std::string& name, int in_c, int out_c, int k, int stride, int pad,
                      Rng& rng, bool zero_init) {
  if (in_c < 1 || out_c < 1 || k < 1 || stride < 1 || pad < 0) {
    throw ValidationError(concat("conv '", name, "': invalid hyperparameters"));
  }
  Conv3d c;
  c.in_c = in_c;
  c.out_c = out_c;
  c.k = k;
  c.stride = stride;
  c.pad = pad;
  Tensor w({std::size_t(out_c), std::size_t(in_c), std::size_t(k), std::size_t(k), std::size_t(k)});
  if (!zero_init) {
    const double std = 1.0 / std::sqrt(double(in_c) * k * k * k);
    for (double& x : w.data) x = std * rng.normal();
  }
  c.weight = ps.add(name + ".weight", std::move(w));
  c.bias = ps.add(name + ".bias", Tensor({std::size_t(out_c)}));
  return c;
}

Volume Conv3d::forward(const ParamSet& ps, const Volume& x, Cache* cache) const {
  if (x.channels() != in_c) {
    throw ShapeError(concat("conv: expected ", in_c, " input channels, got shape ", x.shape().str()));
  }
  if (cache) cache->input = x;
  return conv3d_raw(x, ps.value(weight), ps.value(bias), out_c, k, stride, pad);
}

Volume Conv3d::backward(ParamSet& ps, const Cache& cache, const Volume& grad_out, bool param_grads) const {
  if (cache.input.empty()) throw ValidationError("conv backward: missing saved activations");
  Volume gx(cache.input.shape());
  conv3d_backward_raw(cache.input, ps.value(weight), grad_out, k, stride, pad, &gx,
                      param_grads ? ps.grad(weight) : std::span<double>{},
                      param_grads ? ps.grad(bias) : std::span<double>{});
  return gx;
}

// ---- GroupNorm ---------------------------------------------------------------

int GroupNorm::resolve_groups(int channels, int preferred) {
  int g = std::max(1, std::min(preferred, channels));
  while (channels % g) --g;
  return g;
}

GroupNorm GroupNorm::create(ParamSet& ps, const std::string& name, int channels, int preferred_groups) {
  GroupNorm n;
  n.channels = channels;
  n.groups = resolve_groups(channels, preferred_groups);
  n.gamma = ps.add(name + ".gamma", Tensor({std::size_t(channels)}, 1.0));
  n.beta = ps.add(name + ".beta", Tensor({std::size_t(channels)}));
  return n;
}

Volume GroupNorm::forward(const ParamSet& ps, const Volume& x, Cache* cache) const {
  if (x.channels() != channels) {
    throw ShapeError(concat("groupnorm: expected ", channels, " channels, got shape ", x.shape().str()));
  }
  const int cpg = channels / groups;
  const std::size_t sp = x.shape().spatial();
  const std::size_t n = sp * cpg;
  const auto g = ps.value(gamma);
  const auto b = ps.value(beta);
  Volume y(x.shape());
  Volume xhat(x.shape());
  std::vector<double> inv(groups);
  for (int gi = 0; gi < groups; ++gi) {
    const double* src = x.channel(gi * cpg);
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += src[i];
    mu /= double(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= double(n);
    inv[gi] = 1.0 / std::sqrt(var + eps);
    double* xh = xhat.channel(gi * cpg);
    for (std::size_t i = 0; i < n; ++i) xh[i] = (src[i] - mu) * inv[gi];
  }
  for (int c = 0; c < channels; ++c) {
    const double* xh = xhat.channel(c);
    double* dst = y.channel(c);
    for (std::size_t i = 0; i < sp; ++i) dst[i] = g[c] * xh[i] + b[c];
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Volume GroupNorm::backward(ParamSet& ps, const Cache& cache, const Volume& grad_out) const {
  if (cache.xhat.empty()) throw ValidationError("groupnorm backward: missing saved activations");
  require_same_shape(cache.xhat, grad_out, "groupnorm backward");
  const int cpg = channels / groups;
  const std::size_t sp = grad_out.shape().spatial();
  const std::size_t n = sp * cpg;
  const auto g = ps.value(gamma);
  auto gg = ps.grad(gamma);
  auto gb = ps.grad(beta);
  Volume dxhat(grad_out.shape());
  for (int c = 0; c < channels; ++c) {
    const double* go = grad_out.channel(c);
    const double* xh = cache.xhat.channel(c);
    double* d = dxhat.channel(c);
    double sg = 0.0;
    double sb = 0.0;
    for (std::size_t i = 0; i < sp; ++i) {
      sg += go[i] * xh[i];
      sb += go[i];
      d[i] = go[i] * g[c];
    }
    gg[c] += sg;
    gb[c] += sb;
  }
  Volume gx(grad_out.shape());
  for (int gi = 0; gi < groups; ++gi) {
    const double* d = dxhat.channel(gi * cpg);
    const double* xh = cache.xhat.channel(gi * cpg);
    double s1 = 0.0;
    double s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s1 += d[i];
      s2 += d[i] * xh[i];
    }
    const double k = cache.inv_std[gi] / double(n);
    double* dst = gx.channel(gi * cpg);
    for (std::size_t i = 0; i < n; ++i) dst[i] = k * (double(n) * d[i] - s1 - xh[i] * s2);
  }
  return gx;
}

// ---- Linear ------------------------------------------------------------------

Linear Linear::create(ParamSet& ps, const std::string& name, int in, int out, Rng& rng, bool zero_init,
                      bool with_bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.has_bias = with_bias;
  Tensor w({std::size_t(out), std::size_t(in)});
  if (!zero_init) {
    const double std = 1.0 / std::sqrt(double(in));
    for (double& x : w.data) x = std * rng.normal();
  }
  l.weight = ps.add(name + ".weight", std::move(w));
  if (with_bias) l.bias = ps.add(name + ".bias", Tensor({std::size_t(out)}));
  return l;
}

Matrix Linear::forward(const ParamSet& ps, const Matrix& x) const {
  if (x.cols != std::size_t(in)) throw ShapeError(concat("linear: expected ", in, " inputs, got ", x.cols));
  const auto w = ps.value(weight);
  Matrix y(x.rows, std::size_t(out));
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    double* yr = y.row(r);
    for (int o = 0; o < out; ++o) {
      const double* wr = w.data() + std::size_t(o) * in;
      double s = 0.0;
      for (int i = 0; i < in; ++i) s += wr[i] * xr[i];
      yr[o] = s + (has_bias ? ps.value(bias)[o] : 0.0);
    }
  }
  return y;
}

Matrix Linear::backward(ParamSet& ps, const Matrix& x, const Matrix& grad_out) const {
  if (grad_out.rows != x.rows || grad_out.cols != std::size_t(out)) {
    throw ShapeError("linear backward: gradient shape mismatch");
  }
  const auto w = ps.value(weight);
  auto gw = ps.grad(weight);
  Matrix gx(x.rows, std::size_t(in));
  for (std::size_t r = 0; r < x.rows; ++r) {
    const double* xr = x.row(r);
    const double* gr = grad_out.row(r);
    double* gxr = gx.row(r);
    for (int o = 0; o < out; ++o) {
      const double g = gr[o];
      const double* wr = w.data() + std::size_t(o) * in;
      double* gwr = gw.data() + std::size_t(o) * in;
      for (int i = 0; i < in; ++i) {
        gwr[i] += g * xr[i];
        gxr[i] += g * wr[i];
      }
      if (has_bias) ps.grad(bias)[o] += g;
    }
  }
  return gx;
}

// ---- ResBlock ----------------------------------------------------------------

ResBlock ResBlock::create(ParamSet& ps, const std::string& name, int in_c, int out_c, int temb_dim, Rng& rng,
                          int groups) {
  ResBlock b;
  b.in_c = in_c;
  b.out_c = out_c;
  b.temb_dim = temb_dim;
  b.norm1 = GroupNorm::create(ps, name + ".norm1", in_c, groups);
  b.conv1 = Conv3d::create(ps, name + ".conv1", in_c, out_c, 3, 1, 1, rng);
  b.norm2 = GroupNorm::create(ps, name + ".norm2", out_c, groups);
  if (temb_dim > 0) b.temb_proj = Linear::create(ps, name + ".temb", temb_dim, 2 * out_c, rng);
  b.conv2 = Conv3d::create(ps, name + ".conv2", out_c, out_c, 3, 1, 1, rng, /*zero_init=*/true);
  if (in_c != out_c) b.skip = Conv3d::create(ps, name + ".skip", in_c, out_c, 1, 1, 0, rng);
  return b;
}

Volume ResBlock::forward(const ParamSet& ps, const Volume& x, const Matrix* temb, Cache* cache) const {
  if (temb_proj && !temb) throw ValidationError("resblock: time embedding required");
  if (!temb_proj && temb) throw ValidationError("resblock: block has no time-embedding projection");
  Cache local;
  Cache& c = cache ? *cache : local;
  c.x = x;
  c.a0 = norm1.forward(ps, x, &c.n1);
  Volume h = conv1.forward(ps, silu(c.a0), &c.c1);
  c.a2 = norm2.forward(ps, h, &c.n2);
  c.a3 = c.a2;
  if (temb_proj) {
    if (temb->rows != 1 || temb->cols != std::size_t(temb_dim)) throw ShapeError("resblock: bad time embedding");
    c.temb = *temb;
    c.temb_act = silu(*temb);
    const Matrix st = temb_proj->forward(ps, c.temb_act);
    c.scale.assign(out_c, 0.0);
    const std::size_t sp = x.shape().spatial();
    for (int ch = 0; ch < out_c; ++ch) {
      const double s = st(0, ch);
      const double t = st(0, out_c + ch);
      c.scale[ch] = s;
      double* d = c.a3.channel(ch);
      for (std::size_t i = 0; i < sp; ++i) d[i] = d[i] * (1.0 + s) + t;
    }
  }
  Volume out = conv2.forward(ps, silu(c.a3), &c.c2);
  if (skip) {
    add_inplace(out, skip->forward(ps, x, &c.cs));
  } else {
    add_inplace(out, x);
  }
  c.filled = true;
  return out;
}

Volume ResBlock::backward(ParamSet& ps, const Cache& c, const Volume& grad_out, Matrix* grad_temb) const {
  if (!c.filled) throw ValidationError("resblock backward: missing saved activations");
  Volume g = conv2.backward(ps, c.c2, grad_out);
  g = silu_backward(c.a3, g);
  if (temb_proj) {
    Matrix gst(1, std::size_t(2 * out_c));
    const std::size_t sp = g.shape().spatial();
    for (int ch = 0; ch < out_c; ++ch) {
      double* d = g.channel(ch);
      const double* a2 = c.a2.channel(ch);
      double gs = 0.0;
      double gt = 0.0;
      for (std::size_t i = 0; i < sp; ++i) {
        gs += d[i] * a2[i];
        gt += d[i];
        d[i] *= (1.0 + c.scale[ch]);
      }
      gst(0, ch) = gs;
      gst(0, out_c + ch) = gt;
    }
    const Matrix gact = temb_proj->backward(ps, c.temb_act, gst);
    if (grad_temb) {
      const Matrix gt = silu_backward(c.temb, gact);
      if (grad_temb->data.empty()) *grad_temb = Matrix(1, std::size_t(temb_dim));
      for (std::size_t i = 0; i < gt.data.size(); ++i) grad_temb->data[i] += gt.data[i];
    }
  }
  g = norm2.backward(ps, c.n2, g);
  g = conv1.backward(ps, c.c1, g);
  g = silu_backward(c.a0, g);
  Volume gx = norm1.backward(ps, c.n1, g);
  if (skip) {
    add_inplace(gx, skip->backward(ps, c.cs, grad_out));
  } else {
    add_inplace(gx, grad_out);
  }
  return gx;
}

// ---- CrossAttention ----------------------------------------------------------

CrossAttention CrossAttention::create(ParamSet& ps, const std::string& name, int dim, int ctx_dim, int inner,
                                      int heads, Rng& rng) {
  if (heads < 1 || inner % heads) {
    throw ValidationError(concat("attention '", name, "': ", heads, " heads do not divide width ", inner));
  }
  CrossAttention a;
  a.dim = dim;
  a.ctx_dim = ctx_dim;
  a.inner = inner;
  a.heads = heads;
  a.q = Linear::create(ps, name + ".q", dim, inner, rng, false, false);
  a.k = Linear::create(ps, name + ".k", ctx_dim, inner, rng, false, false);
  a.v = Linear::create(ps, name + ".v", ctx_dim, inner, rng, false, false);
  a.o = Linear::create(ps, name + ".o", inner, dim, rng, /*zero_init=*/true);
  return a;
}

Matrix CrossAttention::attend(const ParamSet& ps, const Matrix& x_rows, const Matrix& ctx, std::vector<Matrix>* probs,
                              Matrix* qm_out, Matrix* km_out, Matrix* vm_out) const {
  if (ctx.rows == 0) throw ValidationError("cross-attention: empty context");
  if (ctx.cols != std::size_t(ctx_dim)) {
    throw ShapeError(concat("cross-attention: context width ", ctx.cols, " != ", ctx_dim));
  }
  const Matrix qm = q.forward(ps, x_rows);
  const Matrix km = k.forward(ps, ctx);
  const Matrix vm = v.forward(ps, ctx);
  const std::size_t n = x_rows.rows;
  const std::size_t m = ctx.rows;
  const std::size_t dh = std::size_t(inner / heads);
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  Matrix out(n, std::size_t(inner));
  if (probs) probs->assign(heads, Matrix());
  std::vector<double> row(m);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    Matrix p(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      const double* qi = qm.row(i) + off;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < m; ++j) {
        const double* kj = km.row(j) + off;
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
        row[j] = s * inv_sqrt;
        mx = std::max(mx, row[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      double* oi = out.row(i) + off;
      for (std::size_t j = 0; j < m; ++j) {
        const double pj = row[j] / z;
        p(i, j) = pj;
        const double* vj = vm.row(j) + off;
        for (std::size_t d = 0; d < dh; ++d) oi[d] += pj * vj[d];
      }
    }
    if (probs) (*probs)[h] = std::move(p);
  }
  if (qm_out) *qm_out = qm;
  if (km_out) *km_out = km;
  if (vm_out) *vm_out = vm;
  return out;
}

Volume CrossAttention::forward(const ParamSet& ps, const Volume& x, const Matrix& ctx, Cache* cache) const {
  if (x.channels() != dim) {
    throw ShapeError(concat("cross-attention: expected ", dim, " channels, got shape ", x.shape().str()));
  }
  Matrix xr = to_rows(x);
  Cache local;
  Cache& c = cache ? *cache : local;
  c.om = attend(ps, xr, ctx, &c.probs, &c.qm, &c.km, &c.vm);
  const Matrix y = o.forward(ps, c.om);
  Volume out = from_rows(y, x.shape());
  add_inplace(out, x);
  c.shape = x.shape();
  c.x = std::move(xr);
  c.ctx = ctx;
  c.filled = true;
  return out;
}

Volume CrossAttention::backward(ParamSet& ps, const Cache& c, const Volume& grad_out, Matrix* grad_ctx) const {
  if (!c.filled) throw ValidationError("cross-attention backward: missing saved activations");
  const Matrix gy = to_rows(grad_out);
  const Matrix gom = o.backward(ps, c.om, gy);
  const std::size_t n = c.x.rows;
  const std::size_t m = c.ctx.rows;
  const std::size_t dh = std::size_t(inner / heads);
  const double inv_sqrt = 1.0 / std::sqrt(double(dh));
  Matrix gq(n, std::size_t(inner));
  Matrix gk(m, std::size_t(inner));
  Matrix gv(m, std::size_t(inner));
  std::vector<double> gp(m);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = h * dh;
    const Matrix& p = c.probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      const double* goi = gom.row(i) + off;
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double* vj = c.vm.row(j) + off;
        double s = 0.0;
        for (std::size_t d = 0; d < dh; ++d) s += goi[d] * vj[d];
        gp[j] = s;
        dot += s * p(i, j);
        double* gvj = gv.row(j) + off;
        for (std::size_t d = 0; d < dh; ++d) gvj[d] += p(i, j) * goi[d];
      }
      const double* qi = c.qm.row(i) + off;
      double* gqi = gq.row(i) + off;
      for (std::size_t j = 0; j < m; ++j) {
        const double gs = p(i, j) * (gp[j] - dot) * inv_sqrt;
        const double* kj = c.km.row(j) + off;
        double* gkj = gk.row(j) + off;
        for (std::size_t d = 0; d < dh; ++d) {
          gqi[d] += gs * kj[d];
          gkj[d] += gs * qi[d];
        }
      }
    }
  }
  const Matrix gx = q.backward(ps, c.x, gq);
  const Matrix gc1 = k.backward(ps, c.ctx, gk);
  const Matrix gc2 = v.backward(ps, c.ctx, gv);
  if (grad_ctx) {
    if (grad_ctx->data.empty()) *grad_ctx = Matrix(m, std::size_t(ctx_dim));
    for (std::size_t i = 0; i < gc1.data.size(); ++i) grad_ctx->data[i] += gc1.data[i] + gc2.data[i];
  }
  Volume g = from_rows(gx, c.shape);
  add_inplace(g, grad_out);
  return g;
}

// ---- time embedding ----------------------------------------------------------

std::vector<double> time_embedding(int t, int dim, int max_t) {
  if (t < 1 || t > max_t) throw ValidationError(concat("time_embedding: t=", t, " outside [1, ", max_t, "]"));
  if (dim < 2 || dim % 2) throw ValidationError(concat("time_embedding: dim must be even, got ", dim));
  std::vector<double> e(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / double(dim));
    e[2 * i] = std::sin(t * w);
    e[2 * i + 1] = std::cos(t * w);
  }
  return e;
}

// ---- gradient check ----------------------------------------------------------

GradCheckReport grad_check(const std::string& name, ParamSet& ps,
                           const std::function<double(const ParamSet&)>& loss,
                           const std::function<void(ParamSet&)>& backward, const GradCheckOptions& opts) {
  ps.zero_grad();
  backward(ps);
  GradCheckReport report;
  report.name = name;
  report.tolerance = opts.tolerance;
  Rng rng(opts.seed);
  for (std::size_t pi = 0; pi < ps.size(); ++pi) {
    Param& p = ps[pi];
    const std::size_t n = p.value.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (n > opts.max_per_param) {
      // Partial Fisher-Yates: first max_per_param entries are a uniform sample.
      for (std::size_t i = 0; i < opts.max_per_param; ++i) {
        const std::size_t j = i + std::size_t(rng.next_u64() % (n - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(opts.max_per_param);
    }
    GradCheckEntry e;
    e.param = p.name;
    for (std::size_t i : idx) {
      double& theta = ps[pi].value.data[i];
      const double orig = theta;
      const double h = 1e-4 * (1.0 + std::abs(orig));
      auto at = [&](double offset) {
        theta = orig + offset;
        return loss(ps);
      };
      // Fourth-order central stencil; the plain two-point rule leaves O(h^2)
      // truncation error that swamps small gradients of deep composites.
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      theta = orig;
      const double analytic = ps[pi].grad.data[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opts.rel_floor});
      e.max_rel_error = std::max(e.max_rel_error, std::abs(analytic - numeric) / denom);
      ++e.checked;
    }
    report.checked += e.checked;
    report.max_rel_error = std::max(report.max_rel_error, e.max_rel_error);
    report.entries.push_back(std::move(e));
  }
  report.passed = report.max_rel_error < opts.tolerance;
  ps.zero_grad();
  return report;
}

}  // namespace land
