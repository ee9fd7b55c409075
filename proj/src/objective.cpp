#include "steflow/objective.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "steflow/errors.hpp"

namespace steflow {

void LossConfig::validate() const {
  if (!(smoothness_weight >= 0.0)) throw ArgumentError("smoothness_weight must be >= 0");
  if (!(charbonnier_r > 0.0 && charbonnier_r <= 1.0))
    throw ArgumentError("charbonnier_r must be in (0, 1]");
  if (!(charbonnier_eta > 0.0)) throw ArgumentError("charbonnier_eta must be positive");
  if (level_weights.size() != static_cast<std::size_t>(kLevels))
    throw ArgumentError("level_weights needs one entry per pyramid level");
  double total = 0.0;
  for (double w : level_weights) {
    if (!(w >= 0.0)) throw ArgumentError("level weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ArgumentError("level weights must not all be zero");
}

std::size_t WarpResult::valid_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

void require_same_size(const GrayImage& img, const FlowField& flow) {
  if (img.width != flow.width || img.height != flow.height)
    throw ArgumentError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                        " but flow is " + std::to_string(flow.width) + "x" +
                        std::to_string(flow.height));
}

}  // namespace

template <typename T>
Tensor<T> image_tensor(const GrayImage& img, int factor) {
  if (factor < 1 || img.width % factor != 0 || img.height % factor != 0)
    throw ArgumentError("image size is not divisible by pooling factor " + std::to_string(factor));
  const int h = img.height / factor;
  const int w = img.width / factor;
  Tensor<T> out(1, h, w);
  const double inv = 1.0 / (static_cast<double>(factor) * factor);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) acc += img.at(x * factor + dx, y * factor + dy);
      out(0, y, x) = static_cast<T>(acc * inv);
    }
  return out;
}

WarpResult bilinear_warp(const GrayImage& img, const FlowField& flow) {
  require_same_size(img, flow);
  ad::Graph<double> g(false);
  auto [warped, mask] = ad::warp_masked(g.constant(image_tensor<double>(img)),
                                        g.constant(to_tensor<double>(flow)));
  WarpResult r;
  r.image = GrayImage(img.width, img.height);
  r.mask.resize(mask.data.size());
  for (std::size_t i = 0; i < mask.data.size(); ++i) {
    r.image.pixels[i] = static_cast<float>(warped.value().data[i]);
    r.mask[i] = mask.data[i] != 0.0 ? 1 : 0;
  }
  return r;
}

double photometric_loss(const FlowField& flow, const GrayImage& i_t, const GrayImage& i_next,
                        const LossConfig& cfg) {
  cfg.validate();
  require_same_size(i_t, flow);
  require_same_size(i_next, flow);
  ad::Graph<double> g(false);
  auto [warped, mask] = ad::warp_masked(g.constant(image_tensor<double>(i_next)),
                                        g.constant(to_tensor<double>(flow)));
  auto residual = ad::sub(g.constant(image_tensor<double>(i_t)), warped);
  return ad::charbonnier_sum(residual, mask, cfg.charbonnier_eta, cfg.charbonnier_r)
      .value()
      .data[0];
}

double smoothness_loss(const FlowField& flow) {
  ad::Graph<double> g(false);
  return ad::smoothness_l1(g.constant(to_tensor<double>(flow))).value().data[0];
}

std::vector<WindowTarget> window_alignment(int timesteps, int dt, bool mil_enabled) {
  if (timesteps < 1 || dt < 1) throw UsageError("window needs at least one timestep and interval");
  if (!mil_enabled) return {{timesteps - 1, dt}};
  if (timesteps % dt != 0)
    throw UsageError(std::to_string(timesteps) + " timesteps cannot be aligned with " +
                     std::to_string(dt) + " frame intervals");
  const int per = timesteps / dt;
  std::vector<WindowTarget> out;
  for (int j = 1; j <= dt; ++j) out.push_back({j * per - 1, j});
  return out;
}

template <typename T>
std::pair<ad::Var<T>, LossBreakdown> total_loss(const IrrResult<T>& result,
                                                std::span<const GrayImage> frames,
                                                std::span<const WindowTarget> alignment,
                                                const LossConfig& cfg) {
  cfg.validate();
  if (alignment.empty()) throw UsageError("no supervised windows");
  if (result.accumulated.empty() || !result.final_flow.defined())
    throw UsageError("empty refinement result");
  ad::Graph<T>& g = *result.final_flow.graph;
  const int height = result.final_flow.h();
  const int width = result.final_flow.w();
  for (const auto& f : frames)
    if (f.width != width || f.height != height)
      throw UsageError("frame size does not match the predicted flow");
  for (const auto& a : alignment) {
    if (a.timestep < 0 || a.timestep >= result.timesteps)
      throw UsageError("window aligned to timestep " + std::to_string(a.timestep) + " of " +
                       std::to_string(result.timesteps));
    if (a.frame < 1 || a.frame >= static_cast<int>(frames.size()))
      throw UsageError("window aligned to frame " + std::to_string(a.frame) + " of " +
                       std::to_string(frames.size()));
  }

  // Pooled grayscale targets per frame and level.
  std::vector<std::array<Var<T>, kLevels>> pooled(frames.size());
  auto target = [&](int frame, int level) {
    Var<T>& v = pooled[frame][level];
    if (!v.defined())
      v = g.constant(image_tensor<T>(frames[frame], FlowPyramid<T>::factor(level)));
    return v;
  };

  const double weight_sum =
      std::accumulate(cfg.level_weights.begin(), cfg.level_weights.end(), 0.0);
  const int k_first = cfg.supervise_all_iterations ? 0 : static_cast<int>(result.accumulated.size()) - 1;
  const int n_iter = static_cast<int>(result.accumulated.size()) - k_first;
  const double norm = 1.0 / (static_cast<double>(n_iter) * alignment.size());
  const T eta = static_cast<T>(cfg.charbonnier_eta);
  const T r = static_cast<T>(cfg.charbonnier_r);

  LossBreakdown br;
  br.per_level.assign(kLevels, 0.0);
  br.per_window.assign(alignment.size(), 0.0);
  Var<T> photo_sum, smooth_sum;
  auto accumulate = [](Var<T>& acc, Var<T> term) { acc = acc.defined() ? ad::add(acc, term) : term; };

  for (int k = k_first; k < static_cast<int>(result.accumulated.size()); ++k) {
    for (std::size_t wi = 0; wi < alignment.size(); ++wi) {
      const WindowTarget& a = alignment[wi];
      const FlowPyramid<T>& pyr = result.accumulated[k][a.timestep];
      for (int i = 0; i < kLevels; ++i) {
        if (cfg.level_weights[i] == 0.0) continue;
        const int f = FlowPyramid<T>::factor(i);
        Var<T> flow = f == 1 ? pyr.flows[i] : ad::scale(pyr.flows[i], static_cast<T>(1.0 / f));
        auto [warped, mask] = ad::warp_masked(target(a.frame, i), flow);
        const double valid = std::accumulate(mask.data.begin(), mask.data.end(), 0.0);
        const double w = cfg.level_weights[i] / weight_sum * norm;
        Var<T> photo = ad::charbonnier_sum(ad::sub(target(0, i), warped), mask, eta, r);
        photo = ad::scale(photo, static_cast<T>(w / std::max(valid, 1.0)));
        Var<T> smooth = ad::scale(ad::smoothness_l1(flow),
                                  static_cast<T>(w / (static_cast<double>(flow.h()) * flow.w())));
        accumulate(photo_sum, photo);
        accumulate(smooth_sum, smooth);
        const double p = photo.value().data[0];
        const double s = smooth.value().data[0];
        br.photometric += p;
        br.smoothness += s;
        const double combined = p + cfg.smoothness_weight * s;
        br.per_level[i] += combined;
        br.per_window[wi] += combined * static_cast<double>(alignment.size());
      }
    }
  }
  br.total = br.photometric + cfg.smoothness_weight * br.smoothness;
  Var<T> total = ad::add(photo_sum, ad::scale(smooth_sum, static_cast<T>(cfg.smoothness_weight)));
  return {total, br};
}

#define STEFLOW_INSTANTIATE(T)                                                                 \
  template Tensor<T> image_tensor<T>(const GrayImage&, int);                                  \
  template std::pair<ad::Var<T>, LossBreakdown> total_loss(                                   \
      const IrrResult<T>&, std::span<const GrayImage>, std::span<const WindowTarget>,         \
      const LossConfig&);

STEFLOW_INSTANTIATE(float)
STEFLOW_INSTANTIATE(double)

}  // namespace steflow
