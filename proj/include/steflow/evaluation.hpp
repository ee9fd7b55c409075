#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "steflow/event_io.hpp"
#include "steflow/flow_field.hpp"
#include "steflow/representation.hpp"

namespace steflow {

struct SampleMetrics {
  double aee = 0.0;
  double outlier_pct = 0.0;
  std::size_t n_active = 0;
};

struct EvalReport {
  double aee = 0.0;          // mean of per-sample AEE over samples with active pixels
  double outlier_pct = 0.0;  // mean of per-sample outlier percentages, same samples
  std::size_t n_active = 0;  // total over all samples
  std::vector<SampleMetrics> per_sample;

  void add(const SampleMetrics& s);
  /// Recomputes the aggregates from per_sample.
  void finalize();
};

using PixelMask = std::vector<std::uint8_t>;

/// True where the ground truth is valid and at least one event was observed.
PixelMask active_mask(const FlowField& gt, const EventImage& events);
/// True where the ground truth is valid.
PixelMask valid_mask(const FlowField& gt);

/// Mean endpoint error over masked pixels. MetricError on an empty mask.
double aee(const FlowField& pred, const FlowField& gt, const PixelMask& mask);

/// Percentage of masked pixels whose endpoint error exceeds 3 px and 5% of
/// the ground-truth magnitude. MetricError on an empty mask.
double outlier_pct(const FlowField& pred, const FlowField& gt, const PixelMask& mask);

/// Both metrics; a sample without active pixels reports n_active = 0.
SampleMetrics evaluate_sample(const FlowField& pred, const FlowField& gt, const PixelMask& mask);

/// Central size x size window at offset floor((H-size)/2), floor((W-size)/2).
GrayImage center_crop(const GrayImage& img, int size);
FlowField center_crop(const FlowField& flow, int size);
EventImage center_crop(const EventImage& img, int size);

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, row-major
};

/// Color-wheel rendering: hue encodes direction, saturation the magnitude
/// relative to max_mag (max_mag <= 0 uses the field's largest magnitude).
/// Zero flow is white. Invalid pixels are black.
RgbImage visualize_flow(const FlowField& flow, double max_mag = 0.0);

void write_ppm(const RgbImage& img, const std::filesystem::path& path);
void write_png(const RgbImage& img, const std::filesystem::path& path);
bool png_support_available();
/// PNG for a ".png" extension, binary PPM otherwise.
void write_image(const RgbImage& img, const std::filesystem::path& path);

}  // namespace steflow
