#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "steflow/event_io.hpp"
#include "steflow/flow_field.hpp"

namespace steflow {

/// Arrays as they appear in an MVSEC-style recording, before normalization.
/// Events come as an N x 4 table of (x, y, t, p); polarity may be {0, 1} or
/// {-1, +1}. Images are 8-bit, height x width, one timestamp each.
struct RawRecording {
  int width = 0;
  int height = 0;
  std::vector<std::array<double, 4>> events;
  std::vector<std::vector<std::uint8_t>> images;
  std::vector<double> image_timestamps;

  // Optional ground truth: per-sample (u, v) planes with timestamps.
  std::vector<FlowField> gt_flow;
  std::vector<double> gt_timestamps;
};

struct ConvertOptions {
  /// Half-open frame index range [first, last); events are restricted to the
  /// span of the kept frames.
  std::optional<std::pair<std::size_t, std::size_t>> frame_range;
  /// Spans (in frame intervals) for which accumulated ground truth is written.
  std::vector<int> gt_spans{1, 4};
};

struct ConvertResult {
  std::filesystem::path events_path;
  std::filesystem::path frames_dir;
  std::size_t event_count = 0;
  std::size_t frame_count = 0;
  std::size_t flow_count = 0;
};

/// Polarity {0,1} -> {-1,+1}; {-1,+1} passes through; anything else throws.
std::int8_t normalize_polarity(double raw);

/// Writes `events.evt`, `frames/` and (when ground truth is present)
/// `flow/dt<k>_<i>.flo` into out_dir.
ConvertResult convert_recording(const RawRecording& rec, const std::filesystem::path& out_dir,
                                const ConvertOptions& options = {});

/// Sums per-interval ground truth over a span of frame intervals. Each
/// interval takes the ground-truth sample nearest its midpoint, scaled by
/// interval length over the sample period. No re-warping is applied, so long
/// spans are an approximation.
FlowField accumulate_gt_flow(const RawRecording& rec, std::size_t first_frame, int span);

bool mvsec_support_available();

/// Reads `davis/left/events`, `davis/left/image_raw`, `davis/left/image_raw_ts`
/// and, when present in the frames file or a separate ground-truth file,
/// `davis/left/flow_dist` with `davis/left/flow_dist_ts`. Throws
/// ConversionError naming any missing dataset.
RawRecording read_mvsec_hdf5(const std::filesystem::path& events_file,
                             const std::filesystem::path& frames_file,
                             const std::optional<std::filesystem::path>& gt_file = std::nullopt);

ConvertResult convert_mvsec(const std::filesystem::path& events_file,
                            const std::filesystem::path& frames_file,
                            const std::filesystem::path& out_dir,
                            const ConvertOptions& options = {},
                            const std::optional<std::filesystem::path>& gt_file = std::nullopt);

}  // namespace steflow
