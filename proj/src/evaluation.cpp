#include "steflow/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>

#include "steflow/errors.hpp"

#ifdef STEFLOW_HAVE_PNG
#include <png.h>
#endif

namespace steflow {

void EvalReport::add(const SampleMetrics& s) {
  per_sample.push_back(s);
  finalize();
}

void EvalReport::finalize() {
  aee = 0.0;
  outlier_pct = 0.0;
  n_active = 0;
  std::size_t counted = 0;
  for (const auto& s : per_sample) {
    n_active += s.n_active;
    if (s.n_active == 0) continue;
    aee += s.aee;
    outlier_pct += s.outlier_pct;
    ++counted;
  }
  if (counted > 0) {
    aee /= static_cast<double>(counted);
    outlier_pct /= static_cast<double>(counted);
  }
}

namespace {

void require_shape(const FlowField& a, const FlowField& b, const PixelMask& mask) {
  if (a.width != b.width || a.height != b.height)
    throw ArgumentError("predicted and ground-truth flow differ in size");
  if (mask.size() != a.pixel_count()) throw ArgumentError("mask size does not match the flow");
}

double endpoint_error(const FlowField& pred, const FlowField& gt, std::size_t i) {
  return std::hypot(static_cast<double>(pred.u[i]) - gt.u[i],
                    static_cast<double>(pred.v[i]) - gt.v[i]);
}

void require_crop(int width, int height, int size) {
  if (size <= 0 || width < size || height < size)
    throw ArgumentError("cannot crop " + std::to_string(width) + "x" + std::to_string(height) +
                        " to " + std::to_string(size));
}

template <typename V>
V crop_plane(const V& src, int width, int height, int size) {
  const int oy = (height - size) / 2;
  const int ox = (width - size) / 2;
  V out(static_cast<std::size_t>(size) * size);
  for (int y = 0; y < size; ++y)
    std::copy_n(src.begin() + static_cast<std::size_t>(y + oy) * width + ox, size,
                out.begin() + static_cast<std::size_t>(y) * size);
  return out;
}

}  // namespace

PixelMask active_mask(const FlowField& gt, const EventImage& events) {
  if (gt.width != events.width || gt.height != events.height)
    throw ArgumentError("ground truth and event image differ in size");
  PixelMask mask(gt.pixel_count(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = gt.is_valid(i) && (events.pos[i] + events.neg[i] >= 1) ? 1 : 0;
  return mask;
}

PixelMask valid_mask(const FlowField& gt) {
  PixelMask mask(gt.pixel_count(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = gt.is_valid(i) ? 1 : 0;
  return mask;
}

double aee(const FlowField& pred, const FlowField& gt, const PixelMask& mask) {
  require_shape(pred, gt, mask);
  double total = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    total += endpoint_error(pred, gt, i);
    ++m;
  }
  if (m == 0) throw MetricError("AEE is undefined without active pixels");
  return total / static_cast<double>(m);
}

double outlier_pct(const FlowField& pred, const FlowField& gt, const PixelMask& mask) {
  require_shape(pred, gt, mask);
  std::size_t outliers = 0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double err = endpoint_error(pred, gt, i);
    const double mag = std::hypot(static_cast<double>(gt.u[i]), static_cast<double>(gt.v[i]));
    if (err > 3.0 && err > 0.05 * mag) ++outliers;
    ++m;
  }
  if (m == 0) throw MetricError("outlier percentage is undefined without active pixels");
  return 100.0 * static_cast<double>(outliers) / static_cast<double>(m);
}

SampleMetrics evaluate_sample(const FlowField& pred, const FlowField& gt, const PixelMask& mask) {
  require_shape(pred, gt, mask);
  SampleMetrics s;
  s.n_active = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
  if (s.n_active == 0) return s;
  s.aee = aee(pred, gt, mask);
  s.outlier_pct = outlier_pct(pred, gt, mask);
  return s;
}

GrayImage center_crop(const GrayImage& img, int size) {
  require_crop(img.width, img.height, size);
  GrayImage out;
  out.width = out.height = size;
  out.pixels = crop_plane(img.pixels, img.width, img.height, size);
  return out;
}

FlowField center_crop(const FlowField& flow, int size) {
  require_crop(flow.width, flow.height, size);
  FlowField out;
  out.width = out.height = size;
  out.u = crop_plane(flow.u, flow.width, flow.height, size);
  out.v = crop_plane(flow.v, flow.width, flow.height, size);
  if (!flow.valid.empty()) out.valid = crop_plane(flow.valid, flow.width, flow.height, size);
  return out;
}

EventImage center_crop(const EventImage& img, int size) {
  require_crop(img.width, img.height, size);
  EventImage out;
  out.width = out.height = size;
  out.pos = crop_plane(img.pos, img.width, img.height, size);
  out.neg = crop_plane(img.neg, img.width, img.height, size);
  return out;
}

RgbImage visualize_flow(const FlowField& flow, double max_mag) {
  RgbImage img;
  img.width = flow.width;
  img.height = flow.height;
  img.rgb.assign(flow.pixel_count() * 3, 0);
  if (max_mag <= 0.0) {
    for (std::size_t i = 0; i < flow.pixel_count(); ++i)
      if (flow.is_valid(i)) max_mag = std::max(max_mag, std::hypot<double>(flow.u[i], flow.v[i]));
    if (max_mag <= 0.0) max_mag = 1.0;
  }
  for (std::size_t i = 0; i < flow.pixel_count(); ++i) {
    if (!flow.is_valid(i)) continue;
    const double u = flow.u[i];
    const double v = flow.v[i];
    const double sat = std::min(1.0, std::hypot(u, v) / max_mag);
    double hue = std::atan2(v, u) / (2.0 * std::numbers::pi);
    if (hue < 0.0) hue += 1.0;
    const double h6 = hue * 6.0;
    const int sector = static_cast<int>(h6) % 6;
    const double f = h6 - std::floor(h6);
    // HSV with value 1.
    const double p = 1.0 - sat;
    const double q = 1.0 - sat * f;
    const double t = 1.0 - sat * (1.0 - f);
    double r = 1, g = 1, b = 1;
    switch (sector) {
      case 0: r = 1; g = t; b = p; break;
      case 1: r = q; g = 1; b = p; break;
      case 2: r = p; g = 1; b = t; break;
      case 3: r = p; g = q; b = 1; break;
      case 4: r = t; g = p; b = 1; break;
      default: r = 1; g = p; b = q; break;
    }
    img.rgb[3 * i] = static_cast<std::uint8_t>(std::lround(255.0 * r));
    img.rgb[3 * i + 1] = static_cast<std::uint8_t>(std::lround(255.0 * g));
    img.rgb[3 * i + 2] = static_cast<std::uint8_t>(std::lround(255.0 * b));
  }
  return img;
}

void write_ppm(const RgbImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()),
            static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("short write to " + path.string());
}

bool png_support_available() {
#ifdef STEFLOW_HAVE_PNG
  return true;
#else
  return false;
#endif
}

void write_png(const RgbImage& img, const std::filesystem::path& path) {
#ifdef STEFLOW_HAVE_PNG
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.rgb.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
#else
  throw IoError("built without PNG support; cannot write " + path.string());
#endif
}

void write_image(const RgbImage& img, const std::filesystem::path& path) {
  if (path.extension() == ".png")
    write_png(img, path);
  else
    write_ppm(img, path);
}

}  // namespace steflow
