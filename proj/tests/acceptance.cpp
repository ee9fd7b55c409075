// Acceptance suite. Prints one PASS/FAIL line per criterion; pass criterion
// numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "steflow/evaluation.hpp"
#include "steflow/network.hpp"
#include "steflow/objective.hpp"
#include "steflow/representation.hpp"
#include "steflow/simulator.hpp"
#include "steflow/trainer.hpp"

using namespace steflow;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Tensor<double> random_tensor(int c, int h, int w, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(c, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

// ---------------------------------------------------------------------------
// 1-2: representation

EventStream random_split(std::mt19937_64& rng, bool degenerate) {
  std::uniform_int_distribution<int> size(1, 500), coord(0, 15), coin(0, 1), shape(0, 3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  EventStream s;
  s.width = 16;
  s.height = 16;
  const int m = size(rng);
  const double t0 = 10.0 * u(rng), span = std::pow(10.0, -4.0 + 4.0 * u(rng));
  const int kind = shape(rng);
  std::exponential_distribution<double> expo(1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int i = 0; i < m; ++i) {
    double t = t0;
    if (!degenerate) {
      switch (kind) {
        case 0: t += span * u(rng); break;
        case 1: t += span * expo(rng); break;
        case 2: t += span * (coin(rng) ? 0.1 * u(rng) : 1.0 + 0.05 * normal(rng)); break;
        default: t += span * std::floor(4.0 * u(rng)); break;  // few distinct stamps
      }
    }
    Event e;
    e.x = static_cast<std::uint16_t>(coord(rng));
    e.y = static_cast<std::uint16_t>(coord(rng));
    e.t = t;
    e.p = coin(rng) ? 1 : -1;
    s.events.push_back(e);
  }
  std::sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  return s;
}

// Direct evaluation of the weighted accumulation in long double.
EventImage oracle_image(const EventStream& s) {
  using LD = long double;
  const LD m = static_cast<LD>(s.size());
  LD mu = 0;
  for (const auto& e : s.events) mu += e.t;
  mu /= m;
  LD var = 0;
  for (const auto& e : s.events) var += (e.t - mu) * (e.t - mu);
  const LD sigma = std::sqrt(var / m);
  const bool degenerate = sigma < 1e-9L;
  auto pdf = [&](LD t) {
    const LD z = (t - mu) / sigma;
    return std::exp(-0.5L * z * z) / (sigma * std::sqrt(2.0L * 3.14159265358979323846264338327950288L));
  };
  LD norm = 0;
  if (!degenerate)
    for (const auto& e : s.events) norm += pdf(e.t);
  EventImage img(s.width, s.height);
  for (const auto& e : s.events) {
    std::int32_t w = 1;
    if (!degenerate) {
      const LD k = m * pdf(e.t) / norm;
      w = std::max<std::int32_t>(1, static_cast<std::int32_t>(std::ceil(k - 1e-9L)));
    }
    auto& plane = e.p > 0 ? img.pos : img.neg;
    plane[static_cast<std::size_t>(e.y) * s.width + e.x] += w;
  }
  return img;
}

std::pair<Outcome, Outcome> representation_criteria() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1001);
  int mismatches = 0, degenerate_mismatches = 0, degenerate_count = 0, compressed = 0;
  std::int64_t min_surplus = std::numeric_limits<std::int64_t>::max();
  for (int i = 0; i < 1000; ++i) {
    const bool degenerate = i % 10 == 0;
    const EventStream split = random_split(rng, degenerate);
    const GaussianFit fit = fit_temporal_gaussian(split);
    const EventImage img = build_event_image(split, fit, split.width, split.height);
    if (!(img == oracle_image(split))) ++mismatches;
    if (fit.degenerate) {
      ++degenerate_count;
      if (!(img == count_image(split, split.width, split.height))) ++degenerate_mismatches;
    }
    const std::int64_t surplus = img.mass() - static_cast<std::int64_t>(split.size());
    min_surplus = std::min(min_surplus, surplus);
    if (surplus < 0) ++compressed;
  }
  const double secs = seconds_since(t0);
  Outcome c1{mismatches == 0 && degenerate_mismatches == 0 && degenerate_count >= 100 && secs < 60.0,
             fmt("1000 splits, %d oracle mismatches, %d degenerate splits with %d count mismatches, %.1f s",
                 mismatches, degenerate_count, degenerate_mismatches, secs)};
  Outcome c2{compressed == 0, fmt("1000 splits, %d compressed, minimum mass surplus %lld", compressed,
                                  static_cast<long long>(min_surplus))};
  return {c1, c2};
}

// ---------------------------------------------------------------------------
// 3: ConvGRU bounds

Outcome convgru_bounds() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(3003);
  std::uniform_int_distribution<int> chan(1, 8), extra(0, 25), side(3, 12);
  std::uniform_real_distribution<double> scale(0.5, 2.0);
  std::size_t checked = 0, violations = 0;
  double z_lo = 1, z_hi = 0, r_lo = 1, r_hi = 0, h_max = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int c = chan(rng), e = extra(rng), n = side(rng);
    const double fan_in = (2.0 * c + e) * 9.0;
    const double bound = scale(rng) * std::sqrt(6.0 / fan_in);
    ad::Graph<double> g(false);
    GruWeights<double> w;
    w.gate_w = g.constant(random_tensor(2 * c, 2 * c + e, 9, rng, -bound, bound));
    w.gate_b = g.constant(random_tensor(2 * c, 1, 1, rng));
    w.cand_w = g.constant(random_tensor(c, 2 * c + e, 9, rng, -bound, bound));
    w.cand_b = g.constant(random_tensor(c, 1, 1, rng));
    ad::Var<double> h = g.constant(Tensor<double>(c, n, n));
    for (int step = 0; step < 5; ++step) {
      ad::Var<double> corr = e > 0 ? g.constant(random_tensor(e, n, n, rng)) : ad::Var<double>{};
      auto out = convgru_step(h, corr, g.constant(random_tensor(c, n, n, rng, -2.0, 2.0)), w);
      for (double z : out.update.value().data) {
        violations += !(z > 0.0 && z < 1.0);
        z_lo = std::min(z_lo, z);
        z_hi = std::max(z_hi, z);
      }
      for (double r : out.reset.value().data) {
        violations += !(r > 0.0 && r < 1.0);
        r_lo = std::min(r_lo, r);
        r_hi = std::max(r_hi, r);
      }
      for (double v : out.hidden.value().data) {
        violations += !(std::abs(v) < 1.0);
        h_max = std::max(h_max, std::abs(v));
      }
      checked += out.update.value().size() + out.reset.value().size() + out.hidden.value().size();
      h = out.hidden;
    }
  }
  const double secs = seconds_since(t0);
  return {violations == 0 && secs < 60.0,
          fmt("100 parameterizations, %zu values, %zu out of range; z in [%.4f, %.4f], r in [%.4f, %.4f], "
              "max |h| %.4f, %.1f s",
              checked, violations, z_lo, z_hi, r_lo, r_hi, h_max, secs)};
}

// ---------------------------------------------------------------------------
// 4: gradient check through the full objective

GrayImage smooth_image(int w, int h, double phase) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(x, y) = static_cast<float>(0.5 + 0.3 * std::sin(0.7 * x + phase) * std::cos(0.5 * y - phase));
  return img;
}

Outcome gradient_check() {
  const auto t0 = Clock::now();
  NetworkConfig cfg;
  cfg.base_channels = 4;
  cfg.n_irr = 2;
  SteFlowNet<double> net(cfg, SteFlowNet<double>::init_parameters(cfg, 4004));
  std::mt19937_64 rng(4005);
  std::vector<Tensor<double>> images;
  for (int t = 0; t < 3; ++t) images.push_back(random_tensor(2, 16, 16, rng, 0.0, 3.0));
  const std::vector<GrayImage> frames{smooth_image(16, 16, 0.0), smooth_image(16, 16, 0.6)};
  const auto alignment = window_alignment(3, 1, false);
  const LossConfig loss_cfg;

  auto objective = [&](bool record) {
    ad::Graph<double> g(record);
    auto result = net.irr_estimate(g, images);
    auto loss = total_loss<double>(result, frames, alignment, loss_cfg).first;
    if (record) {
      g.backward(loss);
      g.flush_parameter_grads();
    }
    return loss.value().data[0];
  };
  net.parameters().zero_grad();
  objective(true);

  // Two entries of every tensor, the rest uniformly over all scalars.
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::vector<std::size_t> owner;
  for (std::size_t p = 0; p < net.parameters().size(); ++p) {
    const std::size_t n = net.parameters()[p].value.size();
    for (int j = 0; j < 2; ++j) picks.emplace_back(p, std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    for (std::size_t i = 0; i < n; ++i) owner.push_back(p);
  }
  std::vector<std::size_t> offsets(net.parameters().size() + 1, 0);
  for (std::size_t p = 0; p < net.parameters().size(); ++p)
    offsets[p + 1] = offsets[p] + net.parameters()[p].value.size();
  std::uniform_int_distribution<std::size_t> any(0, owner.size() - 1);
  while (picks.size() < 240) {
    const std::size_t k = any(rng);
    picks.emplace_back(owner[k], k - offsets[owner[k]]);
  }

  const double h = 1e-5;
  double worst = 0.0;
  std::size_t failures = 0;
  for (const auto& [p, i] : picks) {
    auto& param = net.parameters()[p];
    const double analytic = param.grad.data[i];
    const double orig = param.value.data[i];
    param.value.data[i] = orig + h;
    const double fp = objective(false);
    param.value.data[i] = orig - h;
    const double fm = objective(false);
    param.value.data[i] = orig;
    const double numeric = (fp - fm) / (2 * h);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, rel);
    failures += rel >= 1e-3;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 600.0,
          fmt("%zu parameters, worst relative error %.2e, %zu above 1e-3, %.1f s", picks.size(), worst, failures,
              secs)};
}

// ---------------------------------------------------------------------------
// 5: warping identity and the Charbonnier floor

Outcome warp_identity() {
  std::mt19937_64 rng(5005);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  double worst_warp = 0.0, worst_floor = 0.0;
  for (auto [w, h] : {std::pair{64, 48}, std::pair{17, 33}, std::pair{1, 1}, std::pair{128, 128}}) {
    GrayImage img(w, h);
    for (auto& p : img.pixels) p = u(rng);
    const FlowField zero(w, h);
    const WarpResult warped = bilinear_warp(img, zero);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      worst_warp = std::max(worst_warp, std::abs(static_cast<double>(warped.image.pixels[i]) - img.pixels[i]));
    const double expected = static_cast<double>(warped.valid_count()) * std::pow(1e-6, 0.45);
    const double got = photometric_loss(zero, img, img);
    worst_floor = std::max(worst_floor, std::abs(got - expected) / expected);
    if (warped.valid_count() != img.pixels.size()) worst_floor = 1.0;
  }
  return {worst_warp < 1e-6 && worst_floor <= 1e-9,
          fmt("max warp error %.2e, photometric floor relative error %.2e", worst_warp, worst_floor)};
}

// ---------------------------------------------------------------------------
// 6: metric oracles

Outcome metric_oracles() {
  std::mt19937_64 rng(6006);
  std::uniform_real_distribution<double> flow(-10.0, 10.0), err(0.0, 6.0), angle(0.0, 6.283185307179586);
  std::uniform_int_distribution<int> coin(0, 3);
  double worst_aee = 0.0, worst_out = 0.0;
  int pairs = 0;
  while (pairs < 1000) {
    FlowField gt(8, 8), pred(8, 8);
    PixelMask mask(64, 0);
    for (int i = 0; i < 64; ++i) {
      gt.u[i] = static_cast<float>(flow(rng));
      gt.v[i] = static_cast<float>(flow(rng));
      const double e = err(rng), a = angle(rng);
      pred.u[i] = static_cast<float>(gt.u[i] + e * std::cos(a));
      pred.v[i] = static_cast<float>(gt.v[i] + e * std::sin(a));
      mask[i] = coin(rng) != 0;
    }
    if (std::count(mask.begin(), mask.end(), 1) == 0) continue;
    double sum = 0.0;
    int n = 0, outliers = 0;
    for (int i = 0; i < 64; ++i) {
      if (!mask[i]) continue;
      const double du = double(pred.u[i]) - gt.u[i], dv = double(pred.v[i]) - gt.v[i];
      const double e = std::sqrt(du * du + dv * dv);
      const double mag = std::sqrt(double(gt.u[i]) * gt.u[i] + double(gt.v[i]) * gt.v[i]);
      sum += e;
      ++n;
      outliers += e > 3.0 && e > 0.05 * mag;
    }
    worst_aee = std::max(worst_aee, std::abs(aee(pred, gt, mask) - sum / n));
    worst_out = std::max(worst_out, std::abs(outlier_pct(pred, gt, mask) - 100.0 * outliers / n));
    ++pairs;
  }
  FlowField gt(8, 8, 1.25f, -2.5f), pred(8, 8, 4.25f, 1.5f);
  const double offset = aee(pred, gt, PixelMask(64, 1));
  return {worst_aee <= 1e-6 && worst_out <= 1e-6 && offset == 5.0,
          fmt("1000 pairs, max AEE deviation %.2e, max outlier deviation %.2e, (3,4) offset AEE %.17g", worst_aee,
              worst_out, offset)};
}

// ---------------------------------------------------------------------------
// 7: correlation maximality

int argmax_channel(const Tensor<double>& t, int y, int x) {
  int best = 0;
  for (int c = 1; c < t.c; ++c)
    if (t(c, y, x) > t(best, y, x)) best = c;
  return best;
}

Outcome correlation_maximality() {
  std::mt19937_64 rng(7007);
  NetworkConfig cfg;
  cfg.base_channels = 8;
  cfg.corr_radius = 3;
  SteFlowNet<double> net(cfg, SteFlowNet<double>::init_parameters(cfg, 7008));
  const int r = cfg.corr_radius, centre = r * (2 * r + 1) + r, plus_x = r * (2 * r + 1) + r + 1;
  ad::Graph<double> g(false);
  std::size_t interior = 0, zero_misses = 0, shift_pixels = 0, shift_misses = 0;

  // Encoder pyramids of random event images, and raw random features.
  std::vector<ad::Var<double>> features;
  for (int trial = 0; trial < 3; ++trial) {
    auto pyr = net.spatial_pyramid(g.constant(random_tensor(2, 128, 128, rng, 0.0, 4.0)));
    for (const auto& level : pyr.levels) features.push_back(level);
  }
  for (int trial = 0; trial < 8; ++trial)
    features.push_back(ad::l2_normalize(g.constant(random_tensor(6, 12, 12, rng))));

  for (const auto& feat : features) {
    const auto corr = correlate(feat, feat, ad::Var<double>{}, r).value();
    for (int y = r; y < corr.h - r; ++y)
      for (int x = r; x < corr.w - r; ++x) {
        ++interior;
        zero_misses += argmax_channel(corr, y, x) != centre;
      }

    // Current features are the first ones moved one pixel along +x.
    const auto& base = feat.value();
    Tensor<double> shifted(base.c, base.h, base.w);
    for (int c = 0; c < base.c; ++c)
      for (int y = 0; y < base.h; ++y)
        for (int x = 1; x < base.w; ++x) shifted(c, y, x) = base(c, y, x - 1);
    const auto moved = correlate(ad::l2_normalize(g.constant(shifted)), feat, ad::Var<double>{}, r).value();
    for (int y = r; y < moved.h - r; ++y)
      for (int x = r; x < moved.w - r; ++x) {
        ++shift_pixels;
        shift_misses += argmax_channel(moved, y, x) != plus_x;
      }
  }
  return {interior > 0 && zero_misses == 0 && shift_pixels > 0 && shift_misses == 0,
          fmt("%zu feature maps; zero displacement wins at %zu/%zu interior pixels, (+1,0) wins at %zu/%zu",
              features.size(), interior - zero_misses, interior, shift_pixels - shift_misses, shift_pixels)};
}

// ---------------------------------------------------------------------------
// 8-10: training on the simulator fixture

Displacement random_flow(std::mt19937_64& rng, double lo = 0.0, double hi = 3.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double mag = std::sqrt(lo * lo + (hi * hi - lo * lo) * u(rng));  // uniform over the annulus
  const double a = 2.0 * 3.14159265358979323846 * u(rng);
  return {mag * std::cos(a), mag * std::sin(a)};
}

using SceneSetup = std::function<void(SceneConfig&, std::mt19937_64&)>;

std::vector<Recording> synthetic_set(int n, std::uint64_t seed, int frames, const SceneSetup& setup) {
  std::mt19937_64 rng(seed);
  std::vector<Recording> out;
  for (int i = 0; i < n; ++i) {
    SceneConfig sc;
    sc.texture_seed = rng();
    sc.n_frames = frames;
    setup(sc, rng);
    out.push_back(make_recording(sc, simulate(sc), {1}, fmt("seq_%04d", i)));
  }
  return out;
}

struct Fixture {
  std::vector<TrainingSample> train;
  std::vector<TrainingSample> test;
};

Fixture constant_flow_fixture(const TrainConfig& cfg) {
  const SceneSetup setup = [](SceneConfig& sc, std::mt19937_64& rng) { sc.flow = {random_flow(rng)}; };
  return {build_dataset(synthetic_set(100, 8001, 3, setup), cfg),
          build_dataset(synthetic_set(20, 8999, 2, setup), cfg)};
}

constexpr int kSteps = 600;

TrainConfig desk_config(std::uint64_t seed, Ablation ablation = Ablation::full,
                        RepresentationKind rep = RepresentationKind::gaussian) {
  TrainConfig c = TrainConfig::desk_profile(1);
  c.max_steps = kSteps;
  c.epochs = 1000;
  c.seed = seed;
  c.ablation = ablation;
  c.representation = rep;
  return c;
}

struct Trained {
  Checkpoint checkpoint;
  double aee = 0.0;
  double seconds = 0.0;
};

Trained train_and_evaluate(const Fixture& fx, const TrainConfig& cfg, const std::string& label) {
  const auto t0 = Clock::now();
  TrainOptions opt;
  opt.on_step = [&](const MetricsRow& m) {
    if (m.step % 100 == 0)
      std::fprintf(stderr, "  [%s] step %lld loss %.4f (%.0f s)\n", label.c_str(), m.step, m.total,
                   seconds_since(t0));
  };
  auto result = train(fx.train, cfg, opt);
  if (result.diverged) std::fprintf(stderr, "  [%s] diverged: %s\n", label.c_str(), result.message.c_str());
  SteFlowNet<float> net(result.checkpoint.network, result.checkpoint.params);
  const double a = evaluate(net, fx.test).aee;
  const double secs = seconds_since(t0);
  std::fprintf(stderr, "  [%s] held-out AEE %.3f (%.0f s)\n", label.c_str(), a, secs);
  return {result.checkpoint, a, secs};
}

class TrainingCriteria {
 public:
  Outcome convergence() {
    const Trained& t = full(1);
    return {t.aee < 1.0, fmt("desk model, %d steps, held-out AEE %.3f px on %zu windows of 20 sequences, %.0f s",
                             kSteps, t.aee, fixture().test.size(), t.seconds)};
  }

  Outcome irr_benefit() {
    const Trained& t = full(1);
    Checkpoint single = t.checkpoint;
    single.network.n_irr = 1;
    SteFlowNet<float> one(single.network, single.params);
    const double aee1 = evaluate(one, fixture().test).aee;
    const bool trend = t.aee <= aee1 + 0.05;

    std::vector<double> f, i, g;
    for (std::uint64_t seed : {1, 2, 3}) {
      f.push_back(full(seed).aee);
      i.push_back(train_and_evaluate(fixture(), desk_config(seed, Ablation::no_irr),
                                     fmt("STE-I seed %d", int(seed))).aee);
      g.push_back(train_and_evaluate(fixture(), desk_config(seed, Ablation::no_convgru),
                                     fmt("STE-G seed %d", int(seed))).aee);
    }
    const double mf = median(f), mi = median(i), mg = median(g);
    const bool ordering = mg > mf && mg > mi;
    return {trend && ordering,
            fmt("same weights: n_irr=3 AEE %.3f vs n_irr=1 AEE %.3f; median AEE over 3 seeds: full %.3f, "
                "STE-I %.3f, STE-G %.3f",
                t.aee, aee1, mf, mi, mg)};
  }

 private:
  const Fixture& fixture() {
    if (!fixture_) fixture_ = constant_flow_fixture(desk_config(1));
    return *fixture_;
  }
  const Trained& full(std::uint64_t seed) {
    auto it = full_.find(seed);
    if (it == full_.end())
      it = full_.emplace(seed, train_and_evaluate(fixture(), desk_config(seed), fmt("full seed %d", int(seed))))
               .first;
    return it->second;
  }

  std::optional<Fixture> fixture_;
  std::map<std::uint64_t, Trained> full_;
};

// Slow lead-in followed by a fast interval whose events the sensor bandwidth
// truncates.
constexpr double kBandwidth = 25.0;

SceneSetup burst_setup(double bandwidth) {
  return [bandwidth](SceneConfig& sc, std::mt19937_64& rng) {
    const Displacement fast = random_flow(rng, 1.5, 3.0);
    sc.flow = {{0.25 * fast.u, 0.25 * fast.v}, fast};
    sc.bandwidth_limit = bandwidth;
  };
}

double fast_segment_loss() {
  std::size_t limited = 0, unlimited = 0;
  for (double bw : {kBandwidth, 0.0})
    for (const auto& rec : synthetic_set(20, 10999, 3, burst_setup(bw)))
      for (const auto& e : rec.events.events)
        if (e.t >= rec.frames.timestamps[1]) (bw > 0 ? limited : unlimited) += 1;
  return 1.0 - static_cast<double>(limited) / static_cast<double>(unlimited);
}

Outcome representation_benefit() {
  const double loss = fast_segment_loss();
  std::vector<double> gauss, counts;
  for (auto kind : {RepresentationKind::gaussian, RepresentationKind::counts}) {
    for (std::uint64_t seed : {1, 2, 3}) {
      TrainConfig cfg = desk_config(seed, Ablation::full, kind);
      cfg.n_irr = 1;
      const Fixture fx{build_dataset(synthetic_set(100, 10001, 3, burst_setup(kBandwidth)), cfg),
                       build_dataset(synthetic_set(20, 10999, 3, burst_setup(kBandwidth)), cfg)};
      const double a = train_and_evaluate(fx, cfg, fmt("%s seed %d", to_string(kind).c_str(), int(seed))).aee;
      (kind == RepresentationKind::gaussian ? gauss : counts).push_back(a);
    }
  }
  const double mg = median(gauss), mc = median(counts);
  return {loss >= 0.3 && mg <= mc,
          fmt("fast-segment event loss %.1f%%; median AEE over 3 seeds: gaussian %.3f, counts %.3f", 100.0 * loss,
              mg, mc)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return wanted.empty() || wanted.count(id) != 0; };

  int failures = 0;
  auto report = [&](int id, const char* name, const Outcome& o) {
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  };

  if (want(1) || want(2)) {
    auto [c1, c2] = representation_criteria();
    if (want(1)) report(1, "representation oracle", c1);
    if (want(2)) report(2, "mass conservation", c2);
  }
  if (want(3)) report(3, "convgru bounds", convgru_bounds());
  if (want(4)) report(4, "gradient check", gradient_check());
  if (want(5)) report(5, "warping identity", warp_identity());
  if (want(6)) report(6, "metric oracles", metric_oracles());
  if (want(7)) report(7, "correlation maximality", correlation_maximality());
  TrainingCriteria training;
  if (want(8)) report(8, "synthetic convergence", training.convergence());
  if (want(9)) report(9, "refinement benefit", training.irr_benefit());
  if (want(10)) report(10, "representation benefit", representation_benefit());
  if (want(11))
    std::printf("NOTE 11 absolute real-data accuracy: not reproducible at desk scale; requires the paper profile "
                "trained on the full driving recording\n");
  return failures == 0 ? 0 : 1;
}
