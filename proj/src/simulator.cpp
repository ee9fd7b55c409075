#include "steflow/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "steflow/errors.hpp"

namespace steflow {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double lattice_value(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h =
      splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(ix) * 0x632BE59BD9B4E019ull ^
                                   splitmix64(static_cast<std::uint64_t>(iy))));
  // Binary lattice: the B-spline smoothing below supplies the grey levels.
  return (h >> 63) ? 1.0 : 0.0;
}

void bspline_weights(double f, double w[4]) {
  const double f2 = f * f, f3 = f2 * f;
  w[0] = (1 - f) * (1 - f) * (1 - f) / 6.0;
  w[1] = (3 * f3 - 6 * f2 + 4) / 6.0;
  w[2] = (-3 * f3 + 3 * f2 + 3 * f + 1) / 6.0;
  w[3] = f3 / 6.0;
}

std::int64_t wrap(std::int64_t i, std::int64_t period) {
  if (period <= 0) return i;
  const std::int64_t r = i % period;
  return r < 0 ? r + period : r;
}

Displacement flow_for_interval(const SceneConfig& cfg, std::size_t k) {
  return cfg.flow[std::min(k, cfg.flow.size() - 1)];
}

Displacement offset_at_interval(const SceneConfig& cfg, std::size_t k, double frac) {
  Displacement d;
  for (std::size_t j = 0; j < k; ++j) {
    const Displacement f = flow_for_interval(cfg, j);
    d.u += f.u;
    d.v += f.v;
  }
  if (frac != 0.0) {
    const Displacement f = flow_for_interval(cfg, k);
    d.u += frac * f.u;
    d.v += frac * f.v;
  }
  return d;
}

GrayImage render_at_offset(const SceneConfig& cfg, Displacement off) {
  GrayImage img(cfg.width, cfg.height);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      img.at(x, y) = static_cast<float>(0.1 + 0.8 * texture_value(cfg, x - off.u, y - off.v));
  return img;
}

}  // namespace

void SceneConfig::validate() const {
  if (width <= 0 || height <= 0) throw ArgumentError("scene size must be positive");
  if (!(contrast_threshold > 0)) throw ArgumentError("contrast_threshold must be positive");
  if (n_frames < 2) throw ArgumentError("n_frames must be >= 2");
  if (!(frame_dt > 0)) throw ArgumentError("frame_dt must be positive");
  if (flow.empty()) throw ArgumentError("flow schedule is empty");
  if (!(texture_scale > 0)) throw ArgumentError("texture_scale must be positive");
  if (bandwidth_limit < 0 || noise_rate < 0)
    throw ArgumentError("bandwidth_limit and noise_rate must be non-negative");
  if (texture_period > 0) {
    const double cells = texture_period / texture_scale;
    if (std::abs(cells - std::round(cells)) > 1e-9 || cells < 1)
      throw ArgumentError("texture_period must be a whole multiple of texture_scale");
  }
}

Displacement SceneConfig::offset_at(double t) const {
  const double pos = t / frame_dt;
  const double k = std::floor(pos);
  if (k < 0) return {};
  return offset_at_interval(*this, static_cast<std::size_t>(k), pos - k);
}

double texture_value(const SceneConfig& cfg, double x, double y) {
  const double sx = x / cfg.texture_scale, sy = y / cfg.texture_scale;
  const double fx0 = std::floor(sx), fy0 = std::floor(sy);
  double wx[4], wy[4];
  bspline_weights(sx - fx0, wx);
  bspline_weights(sy - fy0, wy);
  const std::int64_t ix = static_cast<std::int64_t>(fx0), iy = static_cast<std::int64_t>(fy0);
  const std::int64_t period =
      cfg.texture_period > 0
          ? static_cast<std::int64_t>(std::llround(cfg.texture_period / cfg.texture_scale))
          : 0;
  double v = 0.0;
  for (int b = 0; b < 4; ++b) {
    const std::int64_t ly = wrap(iy - 1 + b, period);
    double row = 0.0;
    for (int a = 0; a < 4; ++a) row += wx[a] * lattice_value(cfg.texture_seed, wrap(ix - 1 + a, period), ly);
    v += wy[b] * row;
  }
  return v;
}

GrayImage render_frame(const SceneConfig& cfg, double t) {
  return render_at_offset(cfg, cfg.offset_at(t));
}

FrameSequence render_sequence(const SceneConfig& cfg) {
  cfg.validate();
  FrameSequence seq;
  for (int i = 0; i < cfg.n_frames; ++i) {
    seq.frames.push_back(render_at_offset(cfg, offset_at_interval(cfg, i, 0.0)));
    seq.timestamps.push_back(i * cfg.frame_dt);
  }
  return seq;
}

EventSensor::EventSensor(int width, int height, double threshold, double bandwidth_limit,
                         double noise_rate, std::uint64_t noise_seed, double log_eps)
    : width_(width),
      height_(height),
      threshold_(threshold),
      refractory_(bandwidth_limit > 0 ? 1.0 / bandwidth_limit : 0.0),
      noise_rate_(noise_rate),
      log_eps_(log_eps),
      rng_state_(splitmix64(noise_seed)) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  last_log_.assign(n, 0.0);
  reference_.assign(n, 0.0);
  last_emit_.assign(n, -std::numeric_limits<double>::infinity());
}

double EventSensor::uniform() {
  rng_state_ = splitmix64(rng_state_);
  return static_cast<double>(rng_state_ >> 11) * 0x1.0p-53;
}

void EventSensor::feed(const GrayImage& image, double t, std::vector<Event>& out) {
  if (image.width != width_ || image.height != height_)
    throw ArgumentError("sensor fed an image of the wrong size");
  const std::size_t n = last_log_.size();
  if (!initialized_) {
    for (std::size_t i = 0; i < n; ++i) {
      last_log_[i] = std::log(image.pixels[i] + log_eps_);
      reference_[i] = last_log_[i];
    }
    last_t_ = t;
    initialized_ = true;
    return;
  }
  const double t0 = last_t_;
  const double span = t - t0;
  if (!(span > 0)) throw ArgumentError("sensor timestamps must increase");
  // Slack absorbs rounding when a ramp lands exactly on a threshold multiple.
  const double reach = threshold_ * (1.0 - 1e-9);
  const std::size_t first_new = out.size();
  std::vector<Event> pixel_events;
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
      const double l0 = last_log_[i];
      const double l1 = std::log(image.pixels[i] + log_eps_);
      pixel_events.clear();
      double& ref = reference_[i];
      while (l1 - ref >= reach) {
        ref += threshold_;
        const double a = std::clamp((ref - l0) / (l1 - l0), 0.0, 1.0);
        pixel_events.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                                     t0 + a * span, 1});
      }
      while (ref - l1 >= reach) {
        ref -= threshold_;
        const double a = std::clamp((ref - l0) / (l1 - l0), 0.0, 1.0);
        pixel_events.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                                     t0 + a * span, -1});
      }
      if (noise_rate_ > 0) {
        // Poisson count by inversion, then uniform times and polarities.
        const double lambda = noise_rate_ * span;
        double p = std::exp(-lambda), cdf = p, u = uniform();
        int k = 0;
        while (u > cdf && k < 1000) {
          ++k;
          p *= lambda / k;
          cdf += p;
        }
        for (int j = 0; j < k; ++j) {
          const double tn = t0 + uniform() * span;
          const std::int8_t pol = uniform() < 0.5 ? -1 : 1;
          pixel_events.push_back(
              Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), tn, pol});
        }
        std::stable_sort(pixel_events.begin(), pixel_events.end(),
                         [](const Event& a, const Event& b) { return a.t < b.t; });
      }
      for (const Event& e : pixel_events) {
        if (refractory_ > 0 && e.t - last_emit_[i] < refractory_) continue;
        last_emit_[i] = e.t;
        out.push_back(e);
      }
      last_log_[i] = l1;
    }
  std::stable_sort(out.begin() + static_cast<std::ptrdiff_t>(first_new), out.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  last_t_ = t;
}

EventStream emit_events(const FrameSequence& frames, const SceneConfig& cfg, int substeps) {
  if (substeps < 1) throw ArgumentError("substeps must be >= 1");
  validate(frames);
  EventStream stream;
  if (frames.frames.empty()) return stream;
  stream.width = frames.frames[0].width;
  stream.height = frames.frames[0].height;
  EventSensor sensor(stream.width, stream.height, cfg.contrast_threshold, cfg.bandwidth_limit,
                     cfg.noise_rate, cfg.noise_seed, cfg.log_eps);
  sensor.feed(frames.frames[0], frames.timestamps[0], stream.events);
  for (std::size_t i = 0; i + 1 < frames.frames.size(); ++i) {
    const GrayImage& a = frames.frames[i];
    const GrayImage& b = frames.frames[i + 1];
    const double ta = frames.timestamps[i], tb = frames.timestamps[i + 1];
    for (int j = 1; j <= substeps; ++j) {
      if (j == substeps) {
        sensor.feed(b, tb, stream.events);
        continue;
      }
      const double s = static_cast<double>(j) / substeps;
      GrayImage mid(a.width, a.height);
      for (std::size_t k = 0; k < mid.pixels.size(); ++k) {
        const double la = std::log(a.pixels[k] + cfg.log_eps);
        const double lb = std::log(b.pixels[k] + cfg.log_eps);
        mid.pixels[k] = static_cast<float>(std::exp((1 - s) * la + s * lb) - cfg.log_eps);
      }
      sensor.feed(mid, ta + s * (tb - ta), stream.events);
    }
  }
  return stream;
}

SyntheticSample simulate(const SceneConfig& cfg, int substeps) {
  cfg.validate();
  if (substeps < 1) throw ArgumentError("substeps must be >= 1");
  SyntheticSample sample;
  sample.events.width = cfg.width;
  sample.events.height = cfg.height;
  EventSensor sensor(cfg.width, cfg.height, cfg.contrast_threshold, cfg.bandwidth_limit,
                     cfg.noise_rate, cfg.noise_seed, cfg.log_eps);
  for (int i = 0; i < cfg.n_frames; ++i) {
    const int last_j = (i + 1 < cfg.n_frames) ? substeps : 1;
    for (int j = 0; j < last_j; ++j) {
      const double frac = static_cast<double>(j) / substeps;
      GrayImage img = render_at_offset(cfg, offset_at_interval(cfg, i, frac));
      const double t = (i + frac) * cfg.frame_dt;
      sensor.feed(img, t, sample.events.events);
      if (j == 0) {
        sample.frames.frames.push_back(std::move(img));
        sample.frames.timestamps.push_back(i * cfg.frame_dt);
      }
    }
  }
  for (int i = 0; i + 1 < cfg.n_frames; ++i) sample.gt_flow.push_back(gt_flow(cfg, i, 1));
  return sample;
}

FlowField gt_flow(const SceneConfig& cfg, std::size_t i, std::size_t dt) {
  if (dt == 0 || i + dt >= static_cast<std::size_t>(cfg.n_frames))
    throw RangeError("ground-truth window [" + std::to_string(i) + ", " +
                     std::to_string(i + dt) + "] leaves a sequence of " +
                     std::to_string(cfg.n_frames) + " frames");
  const Displacement a = offset_at_interval(cfg, i, 0.0);
  const Displacement b = offset_at_interval(cfg, i + dt, 0.0);
  return FlowField(cfg.width, cfg.height, static_cast<float>(b.u - a.u),
                   static_cast<float>(b.v - a.v));
}

}  // namespace steflow
