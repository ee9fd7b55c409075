#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steflow/event_io.hpp"
#include "steflow/tensor.hpp"

namespace steflow {

/// Temporal Gaussian fitted to the timestamps of one split. `lambda` scales
/// the density so the pre-rounding weights over the split sum to `m`.
struct GaussianFit {
  double mu = 0.0;
  double sigma = 0.0;
  double lambda = 1.0;
  std::size_t m = 0;
  bool degenerate = false;

  double pdf(double t) const;
  /// lambda * pdf(t); exactly 1 for degenerate fits.
  double weight(double t) const;
};

/// Two-polarity accumulation grid.
struct EventImage {
  int width = 0;
  int height = 0;
  std::vector<std::int32_t> pos;
  std::vector<std::int32_t> neg;

  EventImage() = default;
  EventImage(int w, int h)
      : width(w),
        height(h),
        pos(static_cast<std::size_t>(w) * h, 0),
        neg(static_cast<std::size_t>(w) * h, 0) {}

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  std::int64_t mass() const;
  EventImage& operator+=(const EventImage& other);
  friend bool operator==(const EventImage&, const EventImage&) = default;
};

enum class RepresentationKind {
  gaussian,            // temporally weighted counts
  counts,              // plain per-polarity counts
  counts_time_surface  // counts plus normalized last timestamp per polarity
};

std::string to_string(RepresentationKind kind);
RepresentationKind representation_from_string(const std::string& name);

struct RepresentationConfig {
  int n_splits = 5;
  double sigma_floor = 1e-9;  // seconds
  int width = 0;
  int height = 0;
  RepresentationKind kind = RepresentationKind::gaussian;

  int channels() const { return kind == RepresentationKind::counts_time_surface ? 4 : 2; }
  void validate() const;
};

/// n splits in temporal order; the first (M mod n) splits hold one extra event.
std::vector<EventStream> split_by_count(const EventStream& stream, int n);

/// Population mean and standard deviation; sigma below sigma_floor marks the
/// fit degenerate. Throws ArgumentError on empty input.
GaussianFit fit_temporal_gaussian(std::span<const double> timestamps, double sigma_floor = 1e-9);
GaussianFit fit_temporal_gaussian(const EventStream& split, double sigma_floor = 1e-9);

/// Integer contribution of one event: ceil(lambda * pdf(t)), never below 1.
std::int32_t event_weight(const GaussianFit& fit, double t);

EventImage build_event_image(const EventStream& split, const GaussianFit& fit, int width,
                             int height);

/// Plain per-pixel, per-polarity counts.
EventImage count_image(const EventStream& split, int width, int height);

/// One image per split, each weighted by its own fit (or plain counts when
/// cfg.kind is counts). Empty splits yield all-zero images.
std::vector<EventImage> represent(const EventStream& stream, const RepresentationConfig& cfg);

/// Real-valued network inputs for every split: 2 channels (pos, neg) for the
/// gaussian and counts kinds; 4 channels for counts_time_surface, where the
/// extra channels hold each pixel's latest timestamp per polarity, scaled to
/// [0, 1] over the split's time range.
std::vector<Tensor<float>> encode_inputs(const EventStream& stream,
                                         const RepresentationConfig& cfg);

Tensor<float> to_tensor(const EventImage& image);

}  // namespace steflow
