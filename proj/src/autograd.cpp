#include "steflow/autograd.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "steflow/errors.hpp"

namespace steflow::ad {

namespace {

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda,
          const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda,
          const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, a, lda, b, ldb, beta, c, ldc);
}

struct ConvGeom {
  int channels, height, width;  // image side
  int kernel, stride, pad;
  int out_h, out_w;              // column-grid side
};

// col[(c*k*k + ky*k + kx), oy*out_w + ox] = img[c, oy*s - p + ky, ox*s - p + kx]
template <typename T>
void im2col(const T* img, const ConvGeom& g, T* col) {
  const int n = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * n;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* row = dst + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            row[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, T* img) {
  const int n = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    T* dst = img + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* src = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * n;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const T* row = src + static_cast<std::size_t>(oy) * g.out_w;
          T* drow = dst + static_cast<std::size_t>(iy) * g.width;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_same_graph(Var<T> a, Var<T> b) {
  if (!a.defined() || !b.defined() || a.graph != b.graph)
    throw UsageError("autograd: vars from different graphs or undefined");
}

template <typename T>
void check_same_shape(Var<T> a, Var<T> b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw ArgumentError(std::string(op) + ": shape mismatch " + shape_string(a.value()) + " vs " +
                        shape_string(b.value()));
}

template <typename T>
bool needs(Var<T> v) {
  return v.graph->requires_grad(v.id);
}

template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src, T alpha = T(1)) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += alpha * src.data[i];
}

}  // namespace

// ---------------------------------------------------------------------------
// ParameterSet

template <typename T>
Parameter<T>& ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
  index_.emplace(name, params_.size());
  Tensor<T> grad(value.c, value.h, value.w);
  params_.push_back(Parameter<T>{std::move(name), std::move(value), std::move(grad)});
  return params_.back();
}

template <typename T>
Parameter<T>& ParameterSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
  return params_[it->second];
}

template <typename T>
const Parameter<T>& ParameterSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
  return params_[it->second];
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.grad.fill(T(0));
}

// ---------------------------------------------------------------------------
// Graph

template <typename T>
Var<T> Graph<T>::push(Tensor<T> value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr);
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return Var<T>{this, it->second};
  Var<T> v = leaf(p.value);
  bound_.emplace(&p, v.id);
  return v;
}

template <typename T>
Tensor<T>& Graph<T>::grad(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.c, n.value.h, n.value.w);
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> out) {
  if (!record_) throw UsageError("backward on a non-recording graph");
  if (out.graph != this) throw UsageError("backward: var from another graph");
  if (nodes_[out.id].value.size() != 1) throw UsageError("backward: output must be a scalar");
  grad(out.id).data[0] = T(1);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) n.backward(*this, i);
  }
}

template <typename T>
void Graph<T>::flush_parameter_grads() {
  for (auto& [param, id] : bound_) {
    if (!has_grad(id)) continue;
    axpy(param->grad, nodes_[id].grad);
  }
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int kernel, int stride, int pad) {
  check_same_graph(x, weight);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  if (wv.h != xv.c || wv.w != kernel * kernel)
    throw ArgumentError("conv2d: weight " + shape_string(wv) + " incompatible with input " +
                        shape_string(xv));
  const int cout = wv.c;
  ConvGeom g{xv.c, xv.h, xv.w, kernel, stride, pad, (xv.h + 2 * pad - kernel) / stride + 1,
             (xv.w + 2 * pad - kernel) / stride + 1};
  if (g.out_h <= 0 || g.out_w <= 0) throw ArgumentError("conv2d: input too small");
  const int n = g.out_h * g.out_w;
  const int kk = xv.c * kernel * kernel;

  std::vector<T> col(static_cast<std::size_t>(kk) * n);
  im2col(xv.data.data(), g, col.data());
  Tensor<T> out(cout, g.out_h, g.out_w);
  gemm(false, false, cout, n, kk, T(1), wv.data.data(), kk, col.data(), n, T(0), out.data.data(),
       n);
  const bool has_bias = bias.defined();
  if (has_bias) {
    const Tensor<T>& bv = bias.value();
    if (static_cast<int>(bv.size()) != cout) throw ArgumentError("conv2d: bias size mismatch");
    for (int co = 0; co < cout; ++co) {
      T* o = out.channel(co);
      for (int i = 0; i < n; ++i) o[i] += bv.data[co];
    }
  }
  const bool rg = needs(x) || needs(weight) || (has_bias && needs(bias));
  const int xi = x.id, wi = weight.id, bi = has_bias ? bias.id : -1;
  return x.graph->push(std::move(out), rg, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    const Tensor<T>& xval = gr.value(xi);
    const Tensor<T>& wval = gr.value(wi);
    std::vector<T> colb(static_cast<std::size_t>(kk) * n);
    if (gr.requires_grad(wi)) {
      im2col(xval.data.data(), g, colb.data());
      gemm(false, true, cout, kk, n, T(1), go.data.data(), n, colb.data(), n, T(1),
           gr.grad(wi).data.data(), kk);
    }
    if (bi >= 0 && gr.requires_grad(bi)) {
      Tensor<T>& gb = gr.grad(bi);
      for (int co = 0; co < cout; ++co) {
        const T* o = go.channel(co);
        T s = 0;
        for (int i = 0; i < n; ++i) s += o[i];
        gb.data[co] += s;
      }
    }
    if (gr.requires_grad(xi)) {
      gemm(true, false, kk, n, cout, T(1), wval.data.data(), kk, go.data.data(), n, T(0),
           colb.data(), n);
      col2im(colb.data(), g, gr.grad(xi).data.data());
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias, int kernel, int stride, int pad) {
  check_same_graph(x, weight);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& wv = weight.value();
  if (wv.c != xv.c || wv.w != kernel * kernel)
    throw ArgumentError("conv_transpose2d: weight " + shape_string(wv) +
                        " incompatible with input " + shape_string(xv));
  const int cout = wv.h;
  const int oh = (xv.h - 1) * stride - 2 * pad + kernel;
  const int ow = (xv.w - 1) * stride - 2 * pad + kernel;
  // Geometry of the equivalent forward conv applied to the output image.
  ConvGeom g{cout, oh, ow, kernel, stride, pad, xv.h, xv.w};
  const int n = xv.h * xv.w;
  const int kk = cout * kernel * kernel;
  const int cin = xv.c;

  std::vector<T> col(static_cast<std::size_t>(kk) * n);
  gemm(true, false, kk, n, cin, T(1), wv.data.data(), kk, xv.data.data(), n, T(0), col.data(), n);
  Tensor<T> out(cout, oh, ow);
  col2im(col.data(), g, out.data.data());
  const bool has_bias = bias.defined();
  if (has_bias) {
    const Tensor<T>& bv = bias.value();
    if (static_cast<int>(bv.size()) != cout)
      throw ArgumentError("conv_transpose2d: bias size mismatch");
    for (int co = 0; co < cout; ++co) {
      T* o = out.channel(co);
      for (int i = 0; i < oh * ow; ++i) o[i] += bv.data[co];
    }
  }
  const bool rg = needs(x) || needs(weight) || (has_bias && needs(bias));
  const int xi = x.id, wi = weight.id, bi = has_bias ? bias.id : -1;
  return x.graph->push(std::move(out), rg, [=](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad(self);
    std::vector<T> dcol(static_cast<std::size_t>(kk) * n);
    im2col(go.data.data(), g, dcol.data());
    if (gr.requires_grad(xi)) {
      gemm(false, false, cin, n, kk, T(1), gr.value(wi).data.data(), kk, dcol.data(), n, T(1),
           gr.grad(xi).data.data(), n);
    }
    if (gr.requires_grad(wi)) {
      gemm(false, true, cin, kk, n, T(1), gr.value(xi).data.data(), n, dcol.data(), n, T(1),
           gr.grad(wi).data.data(), kk);
    }
    if (bi >= 0 && gr.requires_grad(bi)) {
      Tensor<T>& gb = gr.grad(bi);
      for (int co = 0; co < cout; ++co) {
        const T* o = go.channel(co);
        T s = 0;
        for (int i = 0; i < go.plane(); ++i) s += o[i];
        gb.data[co] += s;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  check_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  axpy(out, b.value());
  const int ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), needs(a) || needs(b), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    if (g.requires_grad(ai)) axpy(g.grad(ai), go);
    if (g.requires_grad(bi)) axpy(g.grad(bi), go);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  check_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  axpy(out, b.value(), T(-1));
  const int ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), needs(a) || needs(b), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    if (g.requires_grad(ai)) axpy(g.grad(ai), go);
    if (g.requires_grad(bi)) axpy(g.grad(bi), go, T(-1));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  check_same_graph(a, b);
  check_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= bv.data[i];
  const int ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), needs(a) || needs(b), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    if (g.requires_grad(ai)) {
      Tensor<T>& ga = g.grad(ai);
      const Tensor<T>& bv2 = g.value(bi);
      for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += go.data[i] * bv2.data[i];
    }
    if (g.requires_grad(bi)) {
      Tensor<T>& gb = g.grad(bi);
      const Tensor<T>& av = g.value(ai);
      for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += go.data[i] * av.data[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v *= s;
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    axpy(g.grad(ai), g.grad(self), s);
  });
}

template <typename T>
Var<T> lerp(Var<T> a, Var<T> b, Var<T> z) {
  check_same_graph(a, b);
  check_same_graph(a, z);
  check_same_shape(a, b, "lerp");
  check_same_shape(a, z, "lerp");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const Tensor<T>& zv = z.value();
  Tensor<T> out(av.c, av.h, av.w);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = (T(1) - zv.data[i]) * av.data[i] + zv.data[i] * bv.data[i];
  const int ai = a.id, bi = b.id, zi = z.id;
  return a.graph->push(std::move(out), needs(a) || needs(b) || needs(z),
                       [=](Graph<T>& g, int self) {
                         const Tensor<T>& go = g.grad(self);
                         const Tensor<T>& a2 = g.value(ai);
                         const Tensor<T>& b2 = g.value(bi);
                         const Tensor<T>& z2 = g.value(zi);
                         if (g.requires_grad(ai)) {
                           Tensor<T>& ga = g.grad(ai);
                           for (std::size_t i = 0; i < ga.size(); ++i)
                             ga.data[i] += go.data[i] * (T(1) - z2.data[i]);
                         }
                         if (g.requires_grad(bi)) {
                           Tensor<T>& gb = g.grad(bi);
                           for (std::size_t i = 0; i < gb.size(); ++i)
                             gb.data[i] += go.data[i] * z2.data[i];
                         }
                         if (g.requires_grad(zi)) {
                           Tensor<T>& gz = g.grad(zi);
                           for (std::size_t i = 0; i < gz.size(); ++i)
                             gz.data[i] += go.data[i] * (b2.data[i] - a2.data[i]);
                         }
                       });
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& y = g.value(self);
    Tensor<T>& ga = g.grad(ai);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga.data[i] += go.data[i] * y.data[i] * (T(1) - y.data[i]);
  });
}

template <typename T>
Var<T> tanh(Var<T> a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = std::tanh(v);
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& y = g.value(self);
    Tensor<T>& ga = g.grad(ai);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga.data[i] += go.data[i] * (T(1) - y.data[i] * y.data[i]);
  });
}

template <typename T>
Var<T> leaky_relu(Var<T> a, T slope) {
  Tensor<T> out = a.value();
  for (auto& v : out.data) v = v > T(0) ? v : slope * v;
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& x = g.value(ai);
    Tensor<T>& ga = g.grad(ai);
    for (std::size_t i = 0; i < ga.size(); ++i)
      ga.data[i] += x.data[i] > T(0) ? go.data[i] : slope * go.data[i];
  });
}

// ---------------------------------------------------------------------------
// Channel plumbing

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat: no inputs");
  const int h = parts[0].h(), w = parts[0].w();
  int channels = 0;
  bool rg = false;
  for (const auto& p : parts) {
    check_same_graph(parts[0], p);
    if (p.h() != h || p.w() != w) throw ArgumentError("concat: spatial size mismatch");
    channels += p.c();
    rg = rg || needs(p);
  }
  Tensor<T> out(channels, h, w);
  std::vector<int> ids;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.size();
    ids.push_back(p.id);
  }
  return parts[0].graph->push(std::move(out), rg, [ids](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    std::size_t o = 0;
    for (int id : ids) {
      const std::size_t n = g.value(id).size();
      if (g.requires_grad(id)) {
        Tensor<T>& gi = g.grad(id);
        for (std::size_t i = 0; i < n; ++i) gi.data[i] += go.data[o + i];
      }
      o += n;
    }
  });
}

template <typename T>
Var<T> slice(Var<T> a, int begin, int end) {
  const Tensor<T>& av = a.value();
  if (begin < 0 || end > av.c || begin >= end) throw ArgumentError("slice: bad channel range");
  Tensor<T> out(end - begin, av.h, av.w);
  std::copy(av.channel(begin), av.channel(begin) + out.size(), out.data.begin());
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    Tensor<T>& ga = g.grad(ai);
    T* dst = ga.channel(begin);
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go.data[i];
  });
}

// ---------------------------------------------------------------------------
// Resampling

template <typename T>
Var<T> avg_pool2(Var<T> a) {
  const Tensor<T>& av = a.value();
  if (av.h % 2 != 0 || av.w % 2 != 0) throw ArgumentError("avg_pool2: odd spatial size");
  Tensor<T> out(av.c, av.h / 2, av.w / 2);
  for (int c = 0; c < av.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out(c, y, x) = T(0.25) * (av(c, 2 * y, 2 * x) + av(c, 2 * y, 2 * x + 1) +
                                  av(c, 2 * y + 1, 2 * x) + av(c, 2 * y + 1, 2 * x + 1));
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    Tensor<T>& ga = g.grad(ai);
    for (int c = 0; c < go.c; ++c)
      for (int y = 0; y < go.h; ++y)
        for (int x = 0; x < go.w; ++x) {
          const T v = T(0.25) * go(c, y, x);
          ga(c, 2 * y, 2 * x) += v;
          ga(c, 2 * y, 2 * x + 1) += v;
          ga(c, 2 * y + 1, 2 * x) += v;
          ga(c, 2 * y + 1, 2 * x + 1) += v;
        }
  });
}

namespace {

// Source taps for x2 upsampling with half-pixel centers: output index o maps
// to source coordinate (o + 0.5) / 2 - 0.5, clamped at the edges.
struct Taps {
  int i0, i1;
  double w1;
};

Taps upsample_taps(int o, int n) {
  double s = (o + 0.5) / 2.0 - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(n - 1));
  const int i0 = static_cast<int>(std::floor(s));
  const int i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, s - i0};
}

}  // namespace

template <typename T>
Var<T> upsample2(Var<T> a) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.c, av.h * 2, av.w * 2);
  for (int c = 0; c < av.c; ++c)
    for (int y = 0; y < out.h; ++y) {
      const Taps ty = upsample_taps(y, av.h);
      for (int x = 0; x < out.w; ++x) {
        const Taps tx = upsample_taps(x, av.w);
        const T wy = static_cast<T>(ty.w1), wx = static_cast<T>(tx.w1);
        out(c, y, x) = (1 - wy) * ((1 - wx) * av(c, ty.i0, tx.i0) + wx * av(c, ty.i0, tx.i1)) +
                       wy * ((1 - wx) * av(c, ty.i1, tx.i0) + wx * av(c, ty.i1, tx.i1));
      }
    }
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    Tensor<T>& ga = g.grad(ai);
    for (int c = 0; c < go.c; ++c)
      for (int y = 0; y < go.h; ++y) {
        const Taps ty = upsample_taps(y, ga.h);
        for (int x = 0; x < go.w; ++x) {
          const Taps tx = upsample_taps(x, ga.w);
          const T wy = static_cast<T>(ty.w1), wx = static_cast<T>(tx.w1);
          const T v = go(c, y, x);
          ga(c, ty.i0, tx.i0) += (1 - wy) * (1 - wx) * v;
          ga(c, ty.i0, tx.i1) += (1 - wy) * wx * v;
          ga(c, ty.i1, tx.i0) += wy * (1 - wx) * v;
          ga(c, ty.i1, tx.i1) += wy * wx * v;
        }
      }
  });
}

namespace {

template <typename T>
struct Sample {
  int x0, x1, y0, y1;
  T ax, ay;
  bool free_x, free_y;  // coordinate strictly inside, so d/dp is nonzero
};

template <typename T>
Sample<T> clamped_sample(T px, T py, int w, int h) {
  Sample<T> s;
  const T cx = std::clamp(px, T(0), static_cast<T>(w - 1));
  const T cy = std::clamp(py, T(0), static_cast<T>(h - 1));
  s.free_x = px > T(0) && px < static_cast<T>(w - 1);
  s.free_y = py > T(0) && py < static_cast<T>(h - 1);
  s.x0 = static_cast<int>(std::floor(cx));
  s.y0 = static_cast<int>(std::floor(cy));
  s.x1 = std::min(s.x0 + 1, w - 1);
  s.y1 = std::min(s.y0 + 1, h - 1);
  s.ax = cx - s.x0;
  s.ay = cy - s.y0;
  return s;
}

template <typename T>
Tensor<T> warp_forward(const Tensor<T>& a, const Tensor<T>& flow, Tensor<T>* mask) {
  Tensor<T> out(a.c, a.h, a.w);
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      const T px = x + flow(0, y, x);
      const T py = y + flow(1, y, x);
      if (mask) {
        const bool valid = px >= T(0) && px <= static_cast<T>(a.w - 1) && py >= T(0) &&
                           py <= static_cast<T>(a.h - 1);
        (*mask)(0, y, x) = valid ? T(1) : T(0);
        if (!valid) continue;
      }
      const Sample<T> s = clamped_sample(px, py, a.w, a.h);
      for (int c = 0; c < a.c; ++c)
        out(c, y, x) = (1 - s.ay) * ((1 - s.ax) * a(c, s.y0, s.x0) + s.ax * a(c, s.y0, s.x1)) +
                       s.ay * ((1 - s.ax) * a(c, s.y1, s.x0) + s.ax * a(c, s.y1, s.x1));
    }
  return out;
}

template <typename T>
void warp_backward(const Tensor<T>& a, const Tensor<T>& flow, const Tensor<T>* mask,
                   const Tensor<T>& go, Tensor<T>* ga, Tensor<T>* gflow) {
  for (int y = 0; y < a.h; ++y)
    for (int x = 0; x < a.w; ++x) {
      if (mask && (*mask)(0, y, x) == T(0)) continue;
      const T px = x + flow(0, y, x);
      const T py = y + flow(1, y, x);
      const Sample<T> s = clamped_sample(px, py, a.w, a.h);
      T dpx = 0, dpy = 0;
      for (int c = 0; c < a.c; ++c) {
        const T gv = go(c, y, x);
        if (gv == T(0)) continue;
        const T v00 = a(c, s.y0, s.x0), v01 = a(c, s.y0, s.x1);
        const T v10 = a(c, s.y1, s.x0), v11 = a(c, s.y1, s.x1);
        if (ga) {
          (*ga)(c, s.y0, s.x0) += gv * (1 - s.ay) * (1 - s.ax);
          (*ga)(c, s.y0, s.x1) += gv * (1 - s.ay) * s.ax;
          (*ga)(c, s.y1, s.x0) += gv * s.ay * (1 - s.ax);
          (*ga)(c, s.y1, s.x1) += gv * s.ay * s.ax;
        }
        dpx += gv * ((1 - s.ay) * (v01 - v00) + s.ay * (v11 - v10));
        dpy += gv * ((1 - s.ax) * (v10 - v00) + s.ax * (v11 - v01));
      }
      if (gflow) {
        if (s.free_x) (*gflow)(0, y, x) += dpx;
        if (s.free_y) (*gflow)(1, y, x) += dpy;
      }
    }
}

}  // namespace

template <typename T>
Var<T> warp_clamped(Var<T> a, Var<T> flow) {
  check_same_graph(a, flow);
  const Tensor<T>& av = a.value();
  const Tensor<T>& fv = flow.value();
  if (fv.c != 2 || fv.h != av.h || fv.w != av.w)
    throw ArgumentError("warp: flow " + shape_string(fv) + " does not match " + shape_string(av));
  Tensor<T> out = warp_forward<T>(av, fv, nullptr);
  const int ai = a.id, fi = flow.id;
  return a.graph->push(std::move(out), needs(a) || needs(flow), [=](Graph<T>& g, int self) {
    Tensor<T>* ga = g.requires_grad(ai) ? &g.grad(ai) : nullptr;
    Tensor<T>* gf = g.requires_grad(fi) ? &g.grad(fi) : nullptr;
    warp_backward<T>(g.value(ai), g.value(fi), nullptr, g.grad(self), ga, gf);
  });
}

template <typename T>
std::pair<Var<T>, Tensor<T>> warp_masked(Var<T> a, Var<T> flow) {
  check_same_graph(a, flow);
  const Tensor<T>& av = a.value();
  const Tensor<T>& fv = flow.value();
  if (fv.c != 2 || fv.h != av.h || fv.w != av.w)
    throw ArgumentError("warp: flow " + shape_string(fv) + " does not match " + shape_string(av));
  Tensor<T> mask(1, av.h, av.w);
  Tensor<T> out = warp_forward<T>(av, fv, &mask);
  const int ai = a.id, fi = flow.id;
  auto var = a.graph->push(std::move(out), needs(a) || needs(flow),
                           [=](Graph<T>& g, int self) {
                             Tensor<T>* ga = g.requires_grad(ai) ? &g.grad(ai) : nullptr;
                             Tensor<T>* gf = g.requires_grad(fi) ? &g.grad(fi) : nullptr;
                             warp_backward<T>(g.value(ai), g.value(fi), &mask, g.grad(self), ga,
                                              gf);
                           });
  return {var, std::move(mask)};
}

// ---------------------------------------------------------------------------
// Correlation and normalization

template <typename T>
Var<T> correlation(Var<T> a, Var<T> b, int radius) {
  check_same_graph(a, b);
  check_same_shape(a, b, "correlation");
  if (radius < 0) throw ArgumentError("correlation: negative radius");
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const int side = 2 * radius + 1;
  const int h = av.h, w = av.w;
  Tensor<T> out(side * side, h, w);
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      T* o = out.channel((dy + radius) * side + (dx + radius));
      const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
      const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
      for (int c = 0; c < av.c; ++c) {
        const T* ac = av.channel(c);
        const T* bc = bv.channel(c);
        for (int y = y_lo; y < y_hi; ++y) {
          const T* arow = ac + (y + dy) * w + dx;
          const T* brow = bc + y * w;
          T* orow = o + y * w;
          for (int x = x_lo; x < x_hi; ++x) orow[x] += arow[x] * brow[x];
        }
      }
    }
  const int ai = a.id, bi = b.id;
  return a.graph->push(std::move(out), needs(a) || needs(b), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& a2 = g.value(ai);
    const Tensor<T>& b2 = g.value(bi);
    Tensor<T>* ga = g.requires_grad(ai) ? &g.grad(ai) : nullptr;
    Tensor<T>* gb = g.requires_grad(bi) ? &g.grad(bi) : nullptr;
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const T* o = go.channel((dy + radius) * side + (dx + radius));
        const int y_lo = std::max(0, -dy), y_hi = std::min(h, h - dy);
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int c = 0; c < a2.c; ++c) {
          for (int y = y_lo; y < y_hi; ++y) {
            const T* orow = o + y * w;
            if (ga) {
              T* garow = ga->channel(c) + (y + dy) * w + dx;
              const T* brow = b2.channel(c) + y * w;
              for (int x = x_lo; x < x_hi; ++x) garow[x] += orow[x] * brow[x];
            }
            if (gb) {
              T* gbrow = gb->channel(c) + y * w;
              const T* arow = a2.channel(c) + (y + dy) * w + dx;
              for (int x = x_lo; x < x_hi; ++x) gbrow[x] += orow[x] * arow[x];
            }
          }
        }
      }
  });
}

namespace {
template <typename T>
constexpr T kNormFloor = T(1e-12);
}

template <typename T>
Var<T> l2_normalize(Var<T> a) {
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.c, av.h, av.w);
  const int n = av.plane();
  for (int i = 0; i < n; ++i) {
    T ss = 0;
    for (int c = 0; c < av.c; ++c) ss += av.data[c * n + i] * av.data[c * n + i];
    const T norm = std::sqrt(ss);
    if (norm <= kNormFloor<T>) continue;
    for (int c = 0; c < av.c; ++c) out.data[c * n + i] = av.data[c * n + i] / norm;
  }
  const int ai = a.id;
  return a.graph->push(std::move(out), needs(a), [=](Graph<T>& g, int self) {
    const Tensor<T>& go = g.grad(self);
    const Tensor<T>& x = g.value(ai);
    const Tensor<T>& y = g.value(self);
    Tensor<T>& ga = g.grad(ai);
    for (int i = 0; i < n; ++i) {
      T ss = 0, dot = 0;
      for (int c = 0; c < x.c; ++c) {
        ss += x.data[c * n + i] * x.data[c * n + i];
        dot += y.data[c * n + i] * go.data[c * n + i];
      }
      const T norm = std::sqrt(ss);
      if (norm <= kNormFloor<T>) continue;
      for (int c = 0; c < x.c; ++c)
        ga.data[c * n + i] += (go.data[c * n + i] - y.data[c * n + i] * dot) / norm;
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> charbonnier_sum(Var<T> residual, const Tensor<T>& mask, T eta, T r) {
  const Tensor<T>& rv = residual.value();
  if (mask.h != rv.h || mask.w != rv.w || mask.c != 1)
    throw ArgumentError("charbonnier_sum: mask shape mismatch");
  const int n = rv.plane();
  T total = 0;
  const T eta2 = eta * eta;
  for (int c = 0; c < rv.c; ++c)
    for (int i = 0; i < n; ++i)
      if (mask.data[i] != T(0)) {
        const T d = rv.data[c * n + i];
        total += std::pow(d * d + eta2, r);
      }
  const int ri = residual.id;
  return residual.graph->push(
      Tensor<T>::scalar(total), needs(residual), [=](Graph<T>& g, int self) {
        const T go = g.grad(self).data[0];
        const Tensor<T>& x = g.value(ri);
        Tensor<T>& gx = g.grad(ri);
        for (int c = 0; c < x.c; ++c)
          for (int i = 0; i < n; ++i)
            if (mask.data[i] != T(0)) {
              const T d = x.data[c * n + i];
              gx.data[c * n + i] += go * r * std::pow(d * d + eta2, r - T(1)) * T(2) * d;
            }
      });
}

namespace {
template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}
}  // namespace

template <typename T>
Var<T> smoothness_l1(Var<T> a) {
  const Tensor<T>& av = a.value();
  T total = 0;
  for (int c = 0; c < av.c; ++c)
    for (int y = 0; y < av.h; ++y)
      for (int x = 0; x < av.w; ++x) {
        if (x + 1 < av.w) total += std::abs(av(c, y, x + 1) - av(c, y, x));
        if (y + 1 < av.h) total += std::abs(av(c, y + 1, x) - av(c, y, x));
      }
  const int ai = a.id;
  return a.graph->push(Tensor<T>::scalar(total), needs(a), [=](Graph<T>& g, int self) {
    const T go = g.grad(self).data[0];
    const Tensor<T>& x = g.value(ai);
    Tensor<T>& gx = g.grad(ai);
    for (int c = 0; c < x.c; ++c)
      for (int y = 0; y < x.h; ++y)
        for (int xx = 0; xx < x.w; ++xx) {
          if (xx + 1 < x.w) {
            const T s = go * sign(x(c, y, xx + 1) - x(c, y, xx));
            gx(c, y, xx + 1) += s;
            gx(c, y, xx) -= s;
          }
          if (y + 1 < x.h) {
            const T s = go * sign(x(c, y + 1, xx) - x(c, y, xx));
            gx(c, y + 1, xx) += s;
            gx(c, y, xx) -= s;
          }
        }
  });
}

template <typename T>
Var<T> sum(Var<T> a) {
  T total = 0;
  for (T v : a.value().data) total += v;
  const int ai = a.id;
  return a.graph->push(Tensor<T>::scalar(total), needs(a), [=](Graph<T>& g, int self) {
    const T go = g.grad(self).data[0];
    for (auto& v : g.grad(ai).data) v += go;
  });
}

// ---------------------------------------------------------------------------

#define STEFLOW_INSTANTIATE(T)                                                                  \
  template class ParameterSet<T>;                                                               \
  template class Graph<T>;                                                                      \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int, int);                                \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, Var<T>, int, int, int);                      \
  template Var<T> add(Var<T>, Var<T>);                                                          \
  template Var<T> sub(Var<T>, Var<T>);                                                          \
  template Var<T> mul(Var<T>, Var<T>);                                                          \
  template Var<T> scale(Var<T>, T);                                                             \
  template Var<T> lerp(Var<T>, Var<T>, Var<T>);                                                 \
  template Var<T> sigmoid(Var<T>);                                                              \
  template Var<T> tanh(Var<T>);                                                                 \
  template Var<T> leaky_relu(Var<T>, T);                                                        \
  template Var<T> concat(const std::vector<Var<T>>&);                                           \
  template Var<T> slice(Var<T>, int, int);                                                      \
  template Var<T> avg_pool2(Var<T>);                                                            \
  template Var<T> upsample2(Var<T>);                                                            \
  template Var<T> warp_clamped(Var<T>, Var<T>);                                                 \
  template std::pair<Var<T>, Tensor<T>> warp_masked(Var<T>, Var<T>);                            \
  template Var<T> correlation(Var<T>, Var<T>, int);                                             \
  template Var<T> l2_normalize(Var<T>);                                                         \
  template Var<T> charbonnier_sum(Var<T>, const Tensor<T>&, T, T);                              \
  template Var<T> smoothness_l1(Var<T>);                                                        \
  template Var<T> sum(Var<T>);

STEFLOW_INSTANTIATE(float)
STEFLOW_INSTANTIATE(double)

#undef STEFLOW_INSTANTIATE

}  // namespace steflow::ad
