#pragma once

// Recurrent encoder-decoder flow network with per-level correlation and
// iterative residual refinement.
//
// Resolutions: encoder level l (1..4) runs at 1/2^l of the input. Decoders
// emit flow at 1/8, 1/4, 1/2 and 1/1 (pyramid index 0..3). Every flow tensor,
// at every resolution, is stored in full-resolution pixel units; it is divided
// by the level's downsampling factor only when used to warp that level.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steflow/autograd.hpp"
#include "steflow/flow_field.hpp"
#include "steflow/tensor.hpp"

namespace steflow {

inline constexpr int kLevels = 4;

struct NetworkConfig {
  int base_channels = 32;
  int n_levels = kLevels;
  int corr_radius = 3;
  int n_irr = 3;
  bool use_convgru = true;
  bool use_correlation = true;
  bool use_irr = true;
  int input_channels = 2;
  int residual_blocks = 2;
  double leaky_slope = 0.1;
  /// Decoder heads add their output to the upsampled coarser flow.
  bool residual_decoder = true;

  void validate() const;
  /// Channels of encoder level l (1-based): base * 2^(l-1).
  int level_channels(int level) const { return base_channels << (level - 1); }
  int iterations() const { return use_irr ? n_irr : 1; }
  int corr_channels() const {
    return use_correlation ? (2 * corr_radius + 1) * (2 * corr_radius + 1) : 0;
  }
  /// Prior flow is appended to the encoder input when refinement runs
  /// without a correlation layer.
  int flow_input_channels() const { return (!use_correlation && use_irr) ? 2 : 0; }
  /// Input side length must be divisible by this.
  static constexpr int size_multiple() { return 1 << kLevels; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

template <typename T>
using Var = ad::Var<T>;

/// Flow at 1/8, 1/4, 1/2, 1/1 resolution.
template <typename T>
struct FlowPyramid {
  std::array<Var<T>, kLevels> flows;
  /// Downsampling factor of pyramid index i: 8, 4, 2, 1.
  static constexpr int factor(int i) { return 8 >> i; }
};

/// Per-pixel L2-normalized spatial features at encoder levels 1..4
/// (index 0..3).
template <typename T>
struct FeaturePyramid {
  std::array<Var<T>, kLevels> levels;
};

template <typename T>
struct ModelState {
  std::vector<Var<T>> hidden;  // one per encoder level
  bool initialized() const { return hidden.size() == kLevels; }
};

template <typename T>
struct GruWeights {
  Var<T> gate_w, gate_b;  // -> [z; r]
  Var<T> cand_w, cand_b;
};

template <typename T>
struct GruOutput {
  Var<T> hidden;
  Var<T> update;     // z
  Var<T> reset;      // r
  Var<T> candidate;  // tanh branch
};

/// One ConvGRU update. `corr` may be undefined (no correlation input).
template <typename T>
GruOutput<T> convgru_step(Var<T> h_prev, Var<T> corr, Var<T> feat, const GruWeights<T>& w);

/// Warps feat_t by flow_star (border-clamped bilinear; may be undefined for
/// zero flow) and correlates it against feat_first within +-radius.
template <typename T>
Var<T> correlate(Var<T> feat_t, Var<T> feat_first, Var<T> flow_star, int radius);

template <typename T>
struct IrrResult {
  /// accumulated[k][t]: f_{k,t}, flow from the first image to image t after
  /// k+1 refinement passes.
  std::vector<std::vector<FlowPyramid<T>>> accumulated;
  /// residuals[k][t]: the network's raw output in pass k.
  std::vector<std::vector<FlowPyramid<T>>> residuals;
  Var<T> final_flow;
  int timesteps = 0;
};

template <typename T>
class SteFlowNet {
 public:
  SteFlowNet(NetworkConfig cfg, ad::ParameterSet<T> params);

  /// Deterministic initialization of every parameter for `cfg`.
  static ad::ParameterSet<T> init_parameters(const NetworkConfig& cfg, std::uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  ad::ParameterSet<T>& parameters() { return params_; }
  const ad::ParameterSet<T>& parameters() const { return params_; }

  FeaturePyramid<T> spatial_pyramid(Var<T> image);

  ModelState<T> initial_state(ad::Graph<T>& g, int height, int width) const;

  /// One recurrent timestep. `prior` (may be null) holds the accumulated flow
  /// of the previous refinement pass for this timestep. `current` (may be
  /// null) is the image's precomputed spatial pyramid.
  std::pair<FlowPyramid<T>, ModelState<T>> forward_step(const ModelState<T>& state,
                                                        Var<T> image,
                                                        const FeaturePyramid<T>* first,
                                                        const FlowPyramid<T>* prior,
                                                        const FeaturePyramid<T>* current = nullptr);

  /// Runs all refinement passes over the image sequence. Without ConvGRU the
  /// images are summed into a single input first.
  IrrResult<T> irr_estimate(ad::Graph<T>& g, std::span<const Tensor<T>> images);

 private:
  Var<T> p(ad::Graph<T>& g, const std::string& name);
  Var<T> conv(Var<T> x, const std::string& name, int stride = 1);
  Var<T> act(Var<T> x) { return ad::leaky_relu(x, static_cast<T>(cfg_.leaky_slope)); }
  Var<T> level_flow(const FlowPyramid<T>& pyr, int level);

  NetworkConfig cfg_;
  ad::ParameterSet<T> params_;
};

/// Full-resolution flow tensor (2, H, W) -> FlowField.
template <typename T>
FlowField to_flow_field(const Tensor<T>& flow);
template <typename T>
Tensor<T> to_tensor(const FlowField& flow);

}  // namespace steflow
