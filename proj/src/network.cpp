#include "steflow/network.hpp"

#include <cmath>
#include <string>

#include "steflow/errors.hpp"

namespace steflow {

void NetworkConfig::validate() const {
  if (n_levels != kLevels) throw ArgumentError("n_levels must be 4");
  if (base_channels < 1) throw ArgumentError("base_channels must be >= 1");
  if (use_correlation && corr_radius < 1)
    throw ArgumentError("corr_radius must be >= 1 when correlation is enabled");
  if (n_irr < 1) throw ArgumentError("n_irr must be >= 1");
  if (input_channels < 1) throw ArgumentError("input_channels must be >= 1");
  if (residual_blocks < 0) throw ArgumentError("residual_blocks must be >= 0");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ArgumentError("leaky_slope must be in [0, 1)");
}

namespace {

template <typename T>
int kernel_of(Var<T> w) {
  const int k = static_cast<int>(std::lround(std::sqrt(static_cast<double>(w.value().w))));
  if (k * k != w.value().w) throw ArgumentError("weight tensor does not hold a square kernel");
  return k;
}

template <typename T>
void require_spatial(Var<T> a, Var<T> b, const char* what) {
  if (a.h() != b.h() || a.w() != b.w())
    throw ArgumentError(std::string(what) + ": spatial shapes differ " + shape_string(a.value()) +
                        " vs " + shape_string(b.value()));
}

struct SplitMix {
  std::uint64_t state;
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

enum class Init { kaiming, xavier, head };

template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(ad::ParameterSet<T>& set, std::uint64_t seed, double slope)
      : set_(set), rng_{seed}, slope_(slope) {}

  void conv(const std::string& name, int cin, int cout, int k, Init init) {
    const double fan_in = static_cast<double>(cin) * k * k;
    const double fan_out = static_cast<double>(cout) * k * k;
    add(name, Tensor<T>(cout, cin, k * k), bound(init, fan_in, fan_out), cout);
  }

  // Stride-2 transposed convolution: each output pixel sees a quarter of the kernel.
  void conv_transpose(const std::string& name, int cin, int cout, int k) {
    const double fan_in = static_cast<double>(cin) * k * k / 4.0;
    add(name, Tensor<T>(cin, cout, k * k), bound(Init::kaiming, fan_in, fan_in), cout);
  }

 private:
  double bound(Init init, double fan_in, double fan_out) const {
    switch (init) {
      case Init::kaiming:
        return std::sqrt(6.0 / ((1.0 + slope_ * slope_) * fan_in));
      case Init::xavier:
        return std::sqrt(6.0 / (fan_in + fan_out));
      case Init::head:
        return 0.1 * std::sqrt(6.0 / (fan_in + fan_out));
    }
    return 0.0;
  }

  void add(const std::string& name, Tensor<T> w, double b, int cout) {
    for (auto& v : w.data) v = static_cast<T>((2.0 * rng_.uniform() - 1.0) * b);
    set_.add(name + ".w", std::move(w));
    set_.add(name + ".b", Tensor<T>(cout, 1, 1));
  }

  ad::ParameterSet<T>& set_;
  SplitMix rng_;
  double slope_;
};

std::string lname(const char* prefix, int i, const char* suffix) {
  return std::string(prefix) + std::to_string(i) + "." + suffix;
}

}  // namespace

template <typename T>
GruOutput<T> convgru_step(Var<T> h_prev, Var<T> corr, Var<T> feat, const GruWeights<T>& w) {
  require_spatial(h_prev, feat, "convgru_step");
  if (corr.defined()) require_spatial(h_prev, corr, "convgru_step");
  const int c = h_prev.c();
  if (w.gate_w.value().c != 2 * c || w.cand_w.value().c != c)
    throw ArgumentError("convgru_step: weights do not match hidden channels " + std::to_string(c));

  std::vector<Var<T>> parts{h_prev};
  if (corr.defined()) parts.push_back(corr);
  parts.push_back(feat);
  const int k = kernel_of(w.gate_w);
  Var<T> gates = ad::sigmoid(ad::conv2d(ad::concat(parts), w.gate_w, w.gate_b, k, 1, k / 2));

  GruOutput<T> out;
  out.update = ad::slice(gates, 0, c);
  out.reset = ad::slice(gates, c, 2 * c);
  parts[0] = ad::mul(out.reset, h_prev);
  const int kc = kernel_of(w.cand_w);
  out.candidate = ad::tanh(ad::conv2d(ad::concat(parts), w.cand_w, w.cand_b, kc, 1, kc / 2));
  out.hidden = ad::lerp(h_prev, out.candidate, out.update);
  return out;
}

template <typename T>
Var<T> correlate(Var<T> feat_t, Var<T> feat_first, Var<T> flow_star, int radius) {
  if (feat_t.c() != feat_first.c()) throw ArgumentError("correlate: channel counts differ");
  require_spatial(feat_t, feat_first, "correlate");
  Var<T> warped = feat_t;
  if (flow_star.defined()) {
    require_spatial(feat_t, flow_star, "correlate");
    warped = ad::warp_clamped(feat_t, flow_star);
  }
  return ad::correlation(warped, feat_first, radius);
}

template <typename T>
SteFlowNet<T>::SteFlowNet(NetworkConfig cfg, ad::ParameterSet<T> params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  const auto reference = init_parameters(cfg_, 0);
  if (reference.size() != params_.size())
    throw ArgumentError("parameter set has " + std::to_string(params_.size()) +
                        " tensors, configuration needs " + std::to_string(reference.size()));
  for (const auto& p : reference) {
    if (!params_.contains(p.name)) throw ArgumentError("missing parameter '" + p.name + "'");
    if (!params_.get(p.name).value.same_shape(p.value))
      throw ArgumentError("parameter '" + p.name + "' has shape " +
                          shape_string(params_.get(p.name).value) + ", expected " +
                          shape_string(p.value));
  }
}

template <typename T>
ad::ParameterSet<T> SteFlowNet<T>::init_parameters(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ad::ParameterSet<T> set;
  ParamBuilder<T> b(set, seed, cfg.leaky_slope);
  const int corr = cfg.corr_channels();

  if (cfg.use_correlation) {
    int cin = cfg.input_channels;
    for (int l = 1; l <= kLevels; ++l) {
      b.conv(lname("pyr", l, "conv"), cin, cfg.level_channels(l), 3, Init::kaiming);
      cin = cfg.level_channels(l);
    }
  }

  int cin = cfg.input_channels + cfg.flow_input_channels();
  for (int l = 1; l <= kLevels; ++l) {
    const int c = cfg.level_channels(l);
    b.conv(lname("enc", l, "down"), cin, c, 3, Init::kaiming);
    if (cfg.use_convgru) {
      b.conv(lname("enc", l, "gate"), 2 * c + corr, 2 * c, 3, Init::xavier);
      b.conv(lname("enc", l, "cand"), 2 * c + corr, c, 3, Init::xavier);
    } else {
      b.conv(lname("enc", l, "plain"), c + corr, c, 3, Init::kaiming);
    }
    cin = c;
  }

  const int cb = cfg.level_channels(kLevels);
  for (int j = 1; j <= cfg.residual_blocks; ++j) {
    b.conv(lname("res", j, "conv1"), cb, cb, 3, Init::kaiming);
    b.conv(lname("res", j, "conv2"), cb, cb, 3, Init::kaiming);
  }

  // Decoder k runs at 1/2^(4-k) with skip from encoder level 4-k (input for k=4).
  int prev = cb;
  for (int k = 1; k <= kLevels; ++k) {
    const int level = kLevels - k;
    const int dc = cfg.level_channels(std::max(level, 1));
    const int skip = level > 0 ? cfg.level_channels(level) : cfg.input_channels + cfg.flow_input_channels();
    const int flow_in = k > 1 ? 2 : 0;
    b.conv_transpose(lname("dec", k, "up"), prev, dc, 4);
    b.conv(lname("dec", k, "fuse"), dc + skip + flow_in, dc, 3, Init::kaiming);
    b.conv(lname("dec", k, "head"), dc, 2, 3, Init::head);
    prev = dc;
  }
  return set;
}

template <typename T>
Var<T> SteFlowNet<T>::p(ad::Graph<T>& g, const std::string& name) {
  return g.param(params_.get(name));
}

template <typename T>
Var<T> SteFlowNet<T>::conv(Var<T> x, const std::string& name, int stride) {
  ad::Graph<T>& g = *x.graph;
  Var<T> w = p(g, name + ".w");
  const int k = kernel_of(w);
  return ad::conv2d(x, w, p(g, name + ".b"), k, stride, k / 2);
}

template <typename T>
Var<T> SteFlowNet<T>::level_flow(const FlowPyramid<T>& pyr, int level) {
  switch (level) {
    case 1:
      return ad::scale(pyr.flows[2], static_cast<T>(0.5));
    case 2:
      return ad::scale(pyr.flows[1], static_cast<T>(0.25));
    case 3:
      return ad::scale(pyr.flows[0], static_cast<T>(0.125));
    default:
      return ad::scale(ad::avg_pool2(pyr.flows[0]), static_cast<T>(1.0 / 16.0));
  }
}

template <typename T>
FeaturePyramid<T> SteFlowNet<T>::spatial_pyramid(Var<T> image) {
  if (!cfg_.use_correlation) throw UsageError("spatial pyramid requires the correlation layer");
  if (image.c() != cfg_.input_channels)
    throw ArgumentError("expected " + std::to_string(cfg_.input_channels) +
                        " input channels, got " + std::to_string(image.c()));
  FeaturePyramid<T> out;
  Var<T> x = image;
  for (int l = 1; l <= kLevels; ++l) {
    x = act(conv(x, lname("pyr", l, "conv"), 2));
    out.levels[l - 1] = ad::l2_normalize(x);
  }
  return out;
}

template <typename T>
ModelState<T> SteFlowNet<T>::initial_state(ad::Graph<T>& g, int height, int width) const {
  const int m = NetworkConfig::size_multiple();
  if (height <= 0 || width <= 0 || height % m != 0 || width % m != 0)
    throw ArgumentError("input size " + std::to_string(width) + "x" + std::to_string(height) +
                        " must be a positive multiple of " + std::to_string(m));
  ModelState<T> s;
  for (int l = 1; l <= kLevels; ++l)
    s.hidden.push_back(g.constant(Tensor<T>(cfg_.level_channels(l), height >> l, width >> l)));
  return s;
}

template <typename T>
std::pair<FlowPyramid<T>, ModelState<T>> SteFlowNet<T>::forward_step(
    const ModelState<T>& state, Var<T> image, const FeaturePyramid<T>* first,
    const FlowPyramid<T>* prior, const FeaturePyramid<T>* current) {
  if (!state.initialized()) throw UsageError("forward_step called with an uninitialized state");
  if (image.c() != cfg_.input_channels)
    throw ArgumentError("expected " + std::to_string(cfg_.input_channels) +
                        " input channels, got " + std::to_string(image.c()));
  if (state.hidden[0].h() * 2 != image.h() || state.hidden[0].w() * 2 != image.w())
    throw ArgumentError("state does not match the input size " + shape_string(image.value()));
  if (cfg_.use_correlation && first == nullptr)
    throw UsageError("correlation needs the first image's feature pyramid");
  ad::Graph<T>& g = *image.graph;

  Var<T> x = image;
  if (cfg_.flow_input_channels() > 0) {
    Var<T> f = prior ? prior->flows[3] : g.constant(Tensor<T>(2, image.h(), image.w()));
    x = ad::concat(std::vector<Var<T>>{image, f});
  }

  FeaturePyramid<T> own;
  if (cfg_.use_correlation && current == nullptr) {
    own = spatial_pyramid(image);
    current = &own;
  }

  ModelState<T> next;
  std::array<Var<T>, kLevels> enc;
  Var<T> e = x;
  for (int l = 1; l <= kLevels; ++l) {
    Var<T> feat = act(conv(e, lname("enc", l, "down"), 2));
    Var<T> corr;
    if (cfg_.use_correlation) {
      Var<T> fstar = prior ? level_flow(*prior, l) : Var<T>{};
      corr = correlate(current->levels[l - 1], first->levels[l - 1], fstar, cfg_.corr_radius);
    }
    if (cfg_.use_convgru) {
      GruWeights<T> w{p(g, lname("enc", l, "gate.w")), p(g, lname("enc", l, "gate.b")),
                      p(g, lname("enc", l, "cand.w")), p(g, lname("enc", l, "cand.b"))};
      e = convgru_step(state.hidden[l - 1], corr, feat, w).hidden;
      next.hidden.push_back(e);
    } else {
      Var<T> in = corr.defined() ? ad::concat(std::vector<Var<T>>{feat, corr}) : feat;
      e = act(conv(in, lname("enc", l, "plain")));
      next.hidden.push_back(state.hidden[l - 1]);
    }
    enc[l - 1] = e;
  }

  Var<T> d = e;
  for (int j = 1; j <= cfg_.residual_blocks; ++j)
    d = ad::add(d, conv(act(conv(d, lname("res", j, "conv1"))), lname("res", j, "conv2")));

  FlowPyramid<T> flows;
  for (int k = 1; k <= kLevels; ++k) {
    const int level = kLevels - k;
    Var<T> w = p(g, lname("dec", k, "up.w"));
    Var<T> up = act(ad::conv_transpose2d(d, w, p(g, lname("dec", k, "up.b")), 4, 2, 1));
    std::vector<Var<T>> parts{up, level > 0 ? enc[level - 1] : x};
    Var<T> coarse;
    if (k > 1) {
      coarse = ad::upsample2(flows.flows[k - 2]);
      parts.push_back(coarse);
    }
    d = act(conv(ad::concat(parts), lname("dec", k, "fuse")));
    Var<T> head = conv(d, lname("dec", k, "head"));
    flows.flows[k - 1] = cfg_.residual_decoder && coarse.defined() ? ad::add(coarse, head) : head;
  }
  return {flows, next};
}

template <typename T>
IrrResult<T> SteFlowNet<T>::irr_estimate(ad::Graph<T>& g, std::span<const Tensor<T>> images) {
  if (images.empty()) throw ArgumentError("irr_estimate needs at least one event image");
  std::vector<Var<T>> inputs;
  if (cfg_.use_convgru) {
    for (const auto& img : images) inputs.push_back(g.constant(img));
  } else {
    Tensor<T> total = images[0];
    for (std::size_t i = 1; i < images.size(); ++i) {
      if (!images[i].same_shape(total)) throw ArgumentError("event images differ in shape");
      for (std::size_t j = 0; j < total.data.size(); ++j) total.data[j] += images[i].data[j];
    }
    inputs.push_back(g.constant(std::move(total)));
  }
  const int h = inputs[0].h();
  const int w = inputs[0].w();
  for (const auto& in : inputs)
    if (in.h() != h || in.w() != w) throw ArgumentError("event images differ in shape");

  std::vector<FeaturePyramid<T>> pyramids;
  if (cfg_.use_correlation)
    for (const auto& in : inputs) pyramids.push_back(spatial_pyramid(in));

  IrrResult<T> r;
  r.timesteps = static_cast<int>(inputs.size());
  const int iters = cfg_.iterations();
  r.accumulated.resize(iters);
  r.residuals.resize(iters);
  for (int k = 0; k < iters; ++k) {
    ModelState<T> state = initial_state(g, h, w);
    for (int t = 0; t < r.timesteps; ++t) {
      const FlowPyramid<T>* prior = k > 0 ? &r.accumulated[k - 1][t] : nullptr;
      const FeaturePyramid<T>* first = cfg_.use_correlation ? &pyramids[0] : nullptr;
      const FeaturePyramid<T>* current = cfg_.use_correlation ? &pyramids[t] : nullptr;
      auto [delta, next] = forward_step(state, inputs[t], first, prior, current);
      state = std::move(next);
      FlowPyramid<T> acc = delta;
      if (prior)
        for (int i = 0; i < kLevels; ++i) acc.flows[i] = ad::add(prior->flows[i], delta.flows[i]);
      r.residuals[k].push_back(delta);
      r.accumulated[k].push_back(acc);
    }
  }
  r.final_flow = r.accumulated.back().back().flows[kLevels - 1];
  return r;
}

template <typename T>
FlowField to_flow_field(const Tensor<T>& flow) {
  if (flow.c != 2) throw ArgumentError("flow tensor must have 2 channels, got " + shape_string(flow));
  FlowField f;
  f.width = flow.w;
  f.height = flow.h;
  const std::size_t n = static_cast<std::size_t>(flow.h) * flow.w;
  f.u.resize(n);
  f.v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    f.u[i] = static_cast<float>(flow.data[i]);
    f.v[i] = static_cast<float>(flow.data[n + i]);
  }
  return f;
}

template <typename T>
Tensor<T> to_tensor(const FlowField& flow) {
  Tensor<T> t(2, flow.height, flow.width);
  const std::size_t n = flow.pixel_count();
  for (std::size_t i = 0; i < n; ++i) {
    t.data[i] = static_cast<T>(flow.u[i]);
    t.data[n + i] = static_cast<T>(flow.v[i]);
  }
  return t;
}

#define STEFLOW_INSTANTIATE(T)                                                              \
  template GruOutput<T> convgru_step(Var<T>, Var<T>, Var<T>, const GruWeights<T>&);       \
  template Var<T> correlate(Var<T>, Var<T>, Var<T>, int);                                 \
  template class SteFlowNet<T>;                                                            \
  template FlowField to_flow_field(const Tensor<T>&);                                      \
  template Tensor<T> to_tensor<T>(const FlowField&);

STEFLOW_INSTANTIATE(float)
STEFLOW_INSTANTIATE(double)

}  // namespace steflow
