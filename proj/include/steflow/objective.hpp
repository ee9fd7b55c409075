#pragma once

// Self-supervised photometric + smoothness objective.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "steflow/autograd.hpp"
#include "steflow/event_io.hpp"
#include "steflow/flow_field.hpp"
#include "steflow/network.hpp"

namespace steflow {

struct LossConfig {
  double smoothness_weight = 10.0;
  double charbonnier_r = 0.45;
  double charbonnier_eta = 1e-3;
  std::vector<double> level_weights{1.0, 1.0, 1.0, 1.0};  // pyramid index 0..3
  bool mil_enabled = true;
  bool supervise_all_iterations = true;

  void validate() const;
};

struct LossBreakdown {
  double total = 0.0;
  double photometric = 0.0;
  double smoothness = 0.0;
  std::vector<double> per_level;   // weighted contribution of each pyramid index; sums to total
  std::vector<double> per_window;  // loss of each supervised window; their mean is total
};

struct WarpResult {
  GrayImage image;
  std::vector<std::uint8_t> mask;  // 1 where the sample point lies inside the image
  std::size_t valid_count() const;
};

/// out(x) = img(x + f(x)), bilinear; out-of-image samples are 0 and masked.
WarpResult bilinear_warp(const GrayImage& img, const FlowField& flow);

/// Sum over valid pixels of ((I_t - warp(I_next))^2 + eta^2)^r.
double photometric_loss(const FlowField& flow, const GrayImage& i_t, const GrayImage& i_next,
                        const LossConfig& cfg = {});

/// Sum of absolute forward differences of u and v along x and y.
double smoothness_loss(const FlowField& flow);

/// Flow at `timestep` (0-based) is supervised by the pair (frame 0, `frame`).
struct WindowTarget {
  int timestep = 0;
  int frame = 0;
  friend bool operator==(const WindowTarget&, const WindowTarget&) = default;
};

/// Timesteps aligned with the grayscale frames of a window spanning `dt`
/// frame intervals and split into `timesteps` event images, the same number
/// per interval. Without MIL only the whole window is supervised. Throws
/// UsageError if the timesteps cannot be aligned.
std::vector<WindowTarget> window_alignment(int timesteps, int dt, bool mil_enabled);

/// Grayscale image as a (1, H/f, W/f) tensor, average-pooled by f.
template <typename T>
Tensor<T> image_tensor(const GrayImage& img, int factor = 1);

/// Differentiable training objective over every supervised pyramid of an IRR
/// run. `frames` holds the window's grayscale frames, frame 0 first. Each
/// level term is normalized (photometric by the valid count, smoothness by
/// the pixel count); levels are combined with the normalized level weights,
/// then averaged over supervised iterations and windows.
template <typename T>
std::pair<ad::Var<T>, LossBreakdown> total_loss(const IrrResult<T>& result,
                                                std::span<const GrayImage> frames,
                                                std::span<const WindowTarget> alignment,
                                                const LossConfig& cfg);

}  // namespace steflow
