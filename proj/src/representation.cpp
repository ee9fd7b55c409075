#include "steflow/representation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "steflow/errors.hpp"

namespace steflow {

namespace {

// Weights within this distance above an integer round down to it, so that
// exact unit weights computed with rounding noise still count once.
constexpr double kCeilSlack = 1e-9;

}  // namespace

double GaussianFit::pdf(double t) const {
  if (degenerate) return 1.0;
  const double z = (t - mu) / sigma;
  return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

double GaussianFit::weight(double t) const {
  if (degenerate) return 1.0;
  return lambda * pdf(t);
}

std::int64_t EventImage::mass() const {
  std::int64_t total = 0;
  for (auto v : pos) total += v;
  for (auto v : neg) total += v;
  return total;
}

EventImage& EventImage::operator+=(const EventImage& other) {
  if (other.width != width || other.height != height)
    throw ArgumentError("event image size mismatch");
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos[i] += other.pos[i];
    neg[i] += other.neg[i];
  }
  return *this;
}

std::string to_string(RepresentationKind kind) {
  switch (kind) {
    case RepresentationKind::gaussian:
      return "gaussian";
    case RepresentationKind::counts:
      return "counts";
    case RepresentationKind::counts_time_surface:
      return "counts_time_surface";
  }
  return "unknown";
}

RepresentationKind representation_from_string(const std::string& name) {
  if (name == "gaussian") return RepresentationKind::gaussian;
  if (name == "counts") return RepresentationKind::counts;
  if (name == "counts_time_surface") return RepresentationKind::counts_time_surface;
  throw ArgumentError("unknown representation '" + name + "'");
}

void RepresentationConfig::validate() const {
  if (n_splits < 1) throw ArgumentError("n_splits must be >= 1");
  if (!(sigma_floor > 0)) throw ArgumentError("sigma_floor must be positive");
  if (width <= 0 || height <= 0) throw ArgumentError("representation size must be positive");
}

std::vector<EventStream> split_by_count(const EventStream& stream, int n) {
  if (n < 1) throw ArgumentError("split count must be >= 1, got " + std::to_string(n));
  const std::size_t m = stream.events.size();
  const std::size_t base = m / n;
  const std::size_t extra = m % n;
  std::vector<EventStream> splits(n);
  std::size_t begin = 0;
  for (int i = 0; i < n; ++i) {
    const std::size_t len = base + (static_cast<std::size_t>(i) < extra ? 1 : 0);
    splits[i].width = stream.width;
    splits[i].height = stream.height;
    splits[i].events.assign(stream.events.begin() + begin, stream.events.begin() + begin + len);
    begin += len;
  }
  return splits;
}

GaussianFit fit_temporal_gaussian(std::span<const double> ts, double sigma_floor) {
  if (ts.empty()) throw ArgumentError("cannot fit a Gaussian to zero timestamps");
  GaussianFit fit;
  fit.m = ts.size();
  // Centre on the first timestamp; absolute recording clocks are large.
  const double origin = ts.front();
  double mean = 0.0;
  for (double t : ts) mean += t - origin;
  mean /= static_cast<double>(fit.m);
  double var = 0.0;
  for (double t : ts) {
    const double d = (t - origin) - mean;
    var += d * d;
  }
  var /= static_cast<double>(fit.m);
  fit.mu = origin + mean;
  fit.sigma = std::sqrt(var);
  if (!(fit.sigma >= sigma_floor)) {
    fit.degenerate = true;
    fit.lambda = 1.0;
    return fit;
  }
  double density_sum = 0.0;
  for (double t : ts) density_sum += fit.pdf(t);
  fit.lambda = static_cast<double>(fit.m) / density_sum;
  return fit;
}

GaussianFit fit_temporal_gaussian(const EventStream& split, double sigma_floor) {
  std::vector<double> ts(split.events.size());
  std::transform(split.events.begin(), split.events.end(), ts.begin(),
                 [](const Event& e) { return e.t; });
  return fit_temporal_gaussian(ts, sigma_floor);
}

std::int32_t event_weight(const GaussianFit& fit, double t) {
  const double w = fit.weight(t);
  // Underflowed tail densities are positive in exact arithmetic, so they
  // still round up to one.
  if (!(w > 1.0 + kCeilSlack)) return 1;
  return static_cast<std::int32_t>(std::ceil(w - kCeilSlack));
}

EventImage build_event_image(const EventStream& split, const GaussianFit& fit, int width,
                             int height) {
  if (split.width != width || split.height != height)
    throw ArgumentError("split is " + std::to_string(split.width) + "x" +
                        std::to_string(split.height) + " but the image is " +
                        std::to_string(width) + "x" + std::to_string(height));
  EventImage img(width, height);
  for (const Event& e : split.events) {
    const std::int32_t w = event_weight(fit, e.t);
    auto& channel = e.p > 0 ? img.pos : img.neg;
    channel[img.index(e.x, e.y)] += w;
  }
  return img;
}

EventImage count_image(const EventStream& split, int width, int height) {
  if (split.width != width || split.height != height)
    throw ArgumentError("split size does not match the requested image size");
  EventImage img(width, height);
  for (const Event& e : split.events) (e.p > 0 ? img.pos : img.neg)[img.index(e.x, e.y)] += 1;
  return img;
}

std::vector<EventImage> represent(const EventStream& stream, const RepresentationConfig& cfg) {
  cfg.validate();
  std::vector<EventImage> images;
  images.reserve(cfg.n_splits);
  for (const EventStream& split : split_by_count(stream, cfg.n_splits)) {
    if (split.empty()) {
      images.emplace_back(cfg.width, cfg.height);
    } else if (cfg.kind == RepresentationKind::gaussian) {
      images.push_back(build_event_image(split, fit_temporal_gaussian(split, cfg.sigma_floor),
                                         cfg.width, cfg.height));
    } else {
      images.push_back(count_image(split, cfg.width, cfg.height));
    }
  }
  return images;
}

Tensor<float> to_tensor(const EventImage& image) {
  Tensor<float> t(2, image.height, image.width);
  for (std::size_t i = 0; i < image.pos.size(); ++i) {
    t.data[i] = static_cast<float>(image.pos[i]);
    t.data[image.pos.size() + i] = static_cast<float>(image.neg[i]);
  }
  return t;
}

std::vector<Tensor<float>> encode_inputs(const EventStream& stream,
                                         const RepresentationConfig& cfg) {
  cfg.validate();
  std::vector<Tensor<float>> out;
  if (cfg.kind != RepresentationKind::counts_time_surface) {
    for (const EventImage& img : represent(stream, cfg)) out.push_back(to_tensor(img));
    return out;
  }
  for (const EventStream& split : split_by_count(stream, cfg.n_splits)) {
    Tensor<float> t(4, cfg.height, cfg.width);
    if (!split.empty()) {
      const double t0 = split.events.front().t;
      const double span = split.events.back().t - t0;
      for (const Event& e : split.events) {
        const int c = e.p > 0 ? 0 : 1;
        t(c, e.y, e.x) += 1.0f;
        t(c + 2, e.y, e.x) = span > 0 ? static_cast<float>((e.t - t0) / span) : 1.0f;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace steflow
