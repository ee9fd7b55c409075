#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace steflow {

struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  double t = 0.0;     // seconds
  std::int8_t p = 1;  // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

struct EventStream {
  std::vector<Event> events;
  int width = 0;
  int height = 0;

  std::size_t size() const { return events.size(); }
  bool empty() const { return events.empty(); }
  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Throws ValidationError naming the first offending record (out-of-range
/// coordinate, bad polarity, or decreasing timestamp).
void validate(const EventStream& stream);

/// Grayscale image with intensities in [0, 1], row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct FrameSequence {
  std::vector<GrayImage> frames;
  std::vector<double> timestamps;

  std::size_t size() const { return frames.size(); }
};

/// Throws ValidationError unless timestamps strictly increase and all frames
/// share one size.
void validate(const FrameSequence& frames);

// Native "EVT1" event files: magic, u32 width, u32 height, u64 count, then
// 16-byte little-endian records (f64 t, u16 x, u16 y, i8 p, pad).
EventStream read_events(const std::filesystem::path& path);
void write_events(const EventStream& stream, const std::filesystem::path& path);

// Frame archives: a directory of 8-bit PGM files plus frames.txt with lines
// "<filename> <timestamp_seconds>".
FrameSequence read_frames(const std::filesystem::path& dir);
void write_frames(const FrameSequence& frames, const std::filesystem::path& dir);

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

/// Events with t in [t_i, t_{i+dt}), order preserved.
EventStream slice_between_frames(const EventStream& stream, const FrameSequence& frames,
                                 std::size_t i, std::size_t dt);

}  // namespace steflow
