#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "helpers.hpp"
#include "steflow/errors.hpp"
#include "steflow/objective.hpp"

using namespace steflow;
using testing::random_tensor;

namespace {

GrayImage random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.1f, 0.9f);
  GrayImage img(w, h);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

// Smooth image so that sub-pixel warps have informative gradients.
GrayImage smooth_image(int w, int h, double phase) {
  GrayImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(x, y) = static_cast<float>(0.5 + 0.3 * std::sin(0.7 * x + phase) * std::cos(0.5 * y - phase));
  return img;
}

GrayImage mirror(const GrayImage& img) {
  GrayImage out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
  return out;
}

// Pyramids built from leaf flows: one pass, `timesteps` steps.
struct Fixture {
  ad::Graph<double> g;
  IrrResult<double> result;
  Fixture(int size, int timesteps, int passes, std::mt19937_64& rng, double mag = 0.8) {
    result.timesteps = timesteps;
    result.accumulated.resize(passes);
    for (int k = 0; k < passes; ++k)
      for (int t = 0; t < timesteps; ++t) {
        FlowPyramid<double> p;
        for (int i = 0; i < kLevels; ++i) {
          const int s = size / FlowPyramid<double>::factor(i);
          p.flows[i] = g.leaf(random_tensor(2, s, s, rng, -mag, mag));
        }
        result.accumulated[k].push_back(p);
      }
    result.final_flow = result.accumulated.back().back().flows[kLevels - 1];
  }
};

}  // namespace

TEST_CASE("zero flow warps to the input exactly") {
  std::mt19937_64 rng(41);
  auto img = random_image(9, 7, rng);
  auto r = bilinear_warp(img, FlowField(9, 7));
  CHECK(r.image == img);
  CHECK(r.valid_count() == 63);
}

TEST_CASE("integer flow shifts the image") {
  std::mt19937_64 rng(42);
  auto img = random_image(8, 5, rng);
  auto r = bilinear_warp(img, FlowField(8, 5, 2.0f, 0.0f));
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 8; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * 8 + x;
      if (x + 2 < 8) {
        CHECK(r.mask[i] == 1);
        CHECK(r.image.at(x, y) == img.at(x + 2, y));
      } else {
        CHECK(r.mask[i] == 0);
      }
    }
}

TEST_CASE("constant images stay constant under in-bounds warps") {
  GrayImage img(6, 6, 0.3f);
  FlowField f(6, 6);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = 0.37f * ((i % 3) == 0 ? 1.0f : -1.0f);
    f.v[i] = 0.21f;
  }
  auto r = bilinear_warp(img, f);
  for (std::size_t i = 0; i < r.mask.size(); ++i)
    if (r.mask[i]) CHECK(r.image.pixels[i] == doctest::Approx(0.3));
  CHECK_THROWS_AS(bilinear_warp(img, FlowField(5, 6)), ArgumentError);
}

TEST_CASE("photometric loss of identical images is the Charbonnier floor") {
  std::mt19937_64 rng(43);
  auto img = random_image(10, 6, rng);
  const double floor = std::pow(1e-6, 0.45);
  CHECK(floor == doctest::Approx(1.9952623149688797e-3).epsilon(1e-12));
  const double loss = photometric_loss(FlowField(10, 6), img, img);
  CHECK(loss == doctest::Approx(60 * floor).epsilon(1e-9));

  auto other = img;
  other.pixels[17] = img.pixels[17] > 0.5f ? img.pixels[17] - 1.0f : img.pixels[17] + 1.0f;
  const double diff = photometric_loss(FlowField(10, 6), img, other) - loss;
  CHECK(diff == doctest::Approx(std::pow(1.0 + 1e-6, 0.45) - floor).epsilon(1e-6));
}

TEST_CASE("photometric loss never drops below the floor") {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_image(8, 8, rng);
    auto b = random_image(8, 8, rng);
    FlowField f(8, 8, 0.3f * trial - 3.0f, 0.5f);
    auto w = bilinear_warp(b, f);
    CHECK(photometric_loss(f, a, b) >= w.valid_count() * std::pow(1e-6, 0.45) - 1e-12);
  }
}

TEST_CASE("photometric loss is mirror symmetric") {
  std::mt19937_64 rng(45);
  auto a = random_image(11, 7, rng);
  auto b = random_image(11, 7, rng);
  FlowField f(11, 7), fm(11, 7);
  std::uniform_real_distribution<float> u(-1.5f, 1.5f);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 11; ++x) {
      f.u[f.index(x, y)] = u(rng);
      f.v[f.index(x, y)] = u(rng);
    }
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 11; ++x) {
      fm.u[fm.index(x, y)] = -f.u[f.index(10 - x, y)];
      fm.v[fm.index(x, y)] = f.v[f.index(10 - x, y)];
    }
  CHECK(photometric_loss(fm, mirror(a), mirror(b)) ==
        doctest::Approx(photometric_loss(f, a, b)).epsilon(1e-9));
}

TEST_CASE("flows that leave the image zero the photometric sum") {
  std::mt19937_64 rng(46);
  auto a = random_image(8, 8, rng);
  FlowField far(8, 8, 50.0f, -50.0f);
  CHECK(bilinear_warp(a, far).valid_count() == 0);
  CHECK(photometric_loss(far, a, random_image(8, 8, rng)) == 0.0);
}

TEST_CASE("smoothness loss") {
  CHECK(smoothness_loss(FlowField(7, 5, 2.0f, -1.0f)) == 0.0);
  FlowField ramp(7, 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) ramp.u[ramp.index(x, y)] = static_cast<float>(x);
  CHECK(smoothness_loss(ramp) == doctest::Approx(5 * 6));

  std::mt19937_64 rng(47);
  FlowField f(6, 6);
  std::uniform_real_distribution<float> u(-2.0f, 2.0f);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = u(rng);
    f.v[i] = u(rng);
  }
  FlowField g = f;
  for (std::size_t i = 0; i < g.u.size(); ++i) {
    g.u[i] *= 2.5f;
    g.v[i] *= 2.5f;
  }
  CHECK(smoothness_loss(g) == doctest::Approx(2.5 * smoothness_loss(f)).epsilon(1e-6));
}

TEST_CASE("window alignment") {
  CHECK(window_alignment(5, 1, false) == std::vector<WindowTarget>{{4, 1}});
  CHECK(window_alignment(5, 1, true) == std::vector<WindowTarget>{{4, 1}});
  CHECK(window_alignment(20, 4, true) ==
        std::vector<WindowTarget>{{4, 1}, {9, 2}, {14, 3}, {19, 4}});
  CHECK(window_alignment(20, 4, false) == std::vector<WindowTarget>{{19, 4}});
  CHECK_THROWS_AS(window_alignment(10, 4, true), UsageError);
}

TEST_CASE("breakdown parts reconstruct the total") {
  std::mt19937_64 rng(48);
  Fixture fx(16, 4, 2, rng);
  std::vector<GrayImage> frames{smooth_image(16, 16, 0.0), smooth_image(16, 16, 0.4),
                                smooth_image(16, 16, 0.9)};
  LossConfig cfg;
  auto align = std::vector<WindowTarget>{{1, 1}, {3, 2}};
  auto [loss, br] = total_loss<double>(fx.result, frames, align, cfg);
  CHECK(loss.value().data[0] == doctest::Approx(br.total).epsilon(1e-12));
  CHECK(br.total == doctest::Approx(br.photometric + cfg.smoothness_weight * br.smoothness).epsilon(1e-6));
  CHECK(std::accumulate(br.per_level.begin(), br.per_level.end(), 0.0) ==
        doctest::Approx(br.total).epsilon(1e-6));
  REQUIRE(br.per_window.size() == 2);
  CHECK((br.per_window[0] + br.per_window[1]) / 2 == doctest::Approx(br.total).epsilon(1e-6));

  LossConfig doubled = cfg;
  doubled.smoothness_weight *= 2;
  auto [loss2, br2] = total_loss<double>(fx.result, frames, align, doubled);
  CHECK(br2.total - br.total == doctest::Approx(cfg.smoothness_weight * br.smoothness).epsilon(1e-9));
}

TEST_CASE("single window without intermediate losses") {
  std::mt19937_64 rng(49);
  Fixture fx(16, 5, 1, rng);
  std::vector<GrayImage> frames{smooth_image(16, 16, 0.0), smooth_image(16, 16, 0.3)};
  auto align = window_alignment(5, 1, false);
  auto [loss, br] = total_loss<double>(fx.result, frames, align, LossConfig{});
  CHECK(br.per_window.size() == 1);
  CHECK(br.per_window[0] == doctest::Approx(br.total));
}

TEST_CASE("inconsistent alignment is a usage error") {
  std::mt19937_64 rng(50);
  Fixture fx(16, 3, 1, rng);
  std::vector<GrayImage> frames{smooth_image(16, 16, 0.0), smooth_image(16, 16, 0.3)};
  std::vector<WindowTarget> late{{3, 1}};
  CHECK_THROWS_AS(total_loss<double>(fx.result, frames, late, LossConfig{}), UsageError);
  std::vector<WindowTarget> missing{{2, 2}};
  CHECK_THROWS_AS(total_loss<double>(fx.result, frames, missing, LossConfig{}), UsageError);
  std::vector<GrayImage> wrong{GrayImage(8, 8), GrayImage(8, 8)};
  std::vector<WindowTarget> ok{{2, 1}};
  CHECK_THROWS_AS(total_loss<double>(fx.result, wrong, ok, LossConfig{}), UsageError);
}

TEST_CASE("loss gradients with respect to flow match finite differences") {
  std::mt19937_64 rng(51);
  std::vector<GrayImage> frames{smooth_image(16, 16, 0.0), smooth_image(16, 16, 0.5)};
  std::vector<WindowTarget> align{{1, 1}};
  // Flows sit away from integer sample positions and zero differences.
  std::vector<Tensor<double>> inputs;
  for (int i = 0; i < kLevels; ++i) {
    const int s = 16 / FlowPyramid<double>::factor(i);
    inputs.push_back(random_tensor(2, s, s, rng, -0.7, 0.7));
  }
  auto build = [&](std::vector<ad::Var<double>>& flows) {
    IrrResult<double> r;
    r.timesteps = 2;
    r.accumulated.resize(1);
    ad::Graph<double>& g = *flows[0].graph;
    FlowPyramid<double> first, last;
    for (int i = 0; i < kLevels; ++i) {
      first.flows[i] = g.constant(Tensor<double>(2, flows[i].h(), flows[i].w()));
      last.flows[i] = flows[i];
    }
    r.accumulated[0] = {first, last};
    r.final_flow = last.flows[kLevels - 1];
    return total_loss<double>(r, frames, align, LossConfig{}).first;
  };
  CHECK(testing::gradient_check(inputs, build, 1e-6) < 1e-4);
}
