#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace steflow {

/// Dense displacement field in pixels. `valid` is either empty (every pixel
/// valid) or one byte per pixel.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(int w, int h, float fu = 0.0f, float fv = 0.0f)
      : width(w),
        height(h),
        u(static_cast<std::size_t>(w) * h, fu),
        v(static_cast<std::size_t>(w) * h, fv) {}

  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width + x; }
  bool is_valid(std::size_t i) const { return valid.empty() || valid[i] != 0; }
  std::size_t pixel_count() const { return u.size(); }

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

/// Throws ValidationError on inconsistent buffers or non-finite values.
void validate(const FlowField& flow);

// "FLO1": magic, u32 width, u32 height, row-major f32 (u, v) pairs, then
// row-major u8 validity. Fields without a mask are written all-valid.
FlowField read_flow(const std::filesystem::path& path);
void write_flow(const FlowField& flow, const std::filesystem::path& path);

}  // namespace steflow
