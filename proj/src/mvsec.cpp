#include "steflow/mvsec.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "steflow/errors.hpp"

#ifdef STEFLOW_HAVE_HDF5
#include <hdf5.h>
#endif

namespace steflow {

std::int8_t normalize_polarity(double raw) {
  if (raw == 1.0) return 1;
  if (raw == 0.0 || raw == -1.0) return -1;
  throw ConversionError("unsupported polarity value " + std::to_string(raw));
}

namespace {

std::size_t nearest_sample(const std::vector<double>& ts, double t) {
  auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it == ts.begin()) return 0;
  if (it == ts.end()) return ts.size() - 1;
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  return (t - ts[hi - 1] <= ts[hi] - t) ? hi - 1 : hi;
}

std::string flow_name(int span, std::size_t index) {
  std::ostringstream s;
  s << "dt" << span << "_" << std::setw(6) << std::setfill('0') << index << ".flo";
  return s.str();
}

}  // namespace

FlowField accumulate_gt_flow(const RawRecording& rec, std::size_t first_frame, int span) {
  if (rec.gt_flow.empty() || rec.gt_flow.size() != rec.gt_timestamps.size())
    throw ConversionError("recording has no ground-truth flow");
  if (first_frame + span >= rec.image_timestamps.size())
    throw RangeError("ground-truth span leaves the frame range");
  FlowField acc(rec.width, rec.height);
  acc.valid.assign(acc.pixel_count(), 1);
  for (int k = 0; k < span; ++k) {
    const double t0 = rec.image_timestamps[first_frame + k];
    const double t1 = rec.image_timestamps[first_frame + k + 1];
    const std::size_t s = nearest_sample(rec.gt_timestamps, 0.5 * (t0 + t1));
    double period;
    if (rec.gt_timestamps.size() < 2) {
      period = t1 - t0;
    } else if (s + 1 < rec.gt_timestamps.size()) {
      period = rec.gt_timestamps[s + 1] - rec.gt_timestamps[s];
    } else {
      period = rec.gt_timestamps[s] - rec.gt_timestamps[s - 1];
    }
    const double scale = (t1 - t0) / period;
    const FlowField& g = rec.gt_flow[s];
    for (std::size_t i = 0; i < acc.pixel_count(); ++i) {
      acc.u[i] += static_cast<float>(g.u[i] * scale);
      acc.v[i] += static_cast<float>(g.v[i] * scale);
      // MVSEC marks missing depth (hence missing flow) with exact zeros.
      if (!g.is_valid(i) || (g.u[i] == 0.0f && g.v[i] == 0.0f)) acc.valid[i] = 0;
    }
  }
  return acc;
}

ConvertResult convert_recording(const RawRecording& rec, const std::filesystem::path& out_dir,
                                const ConvertOptions& options) {
  if (rec.images.size() != rec.image_timestamps.size())
    throw ConversionError("image count and image timestamp count differ");
  const std::size_t n_images = rec.images.size();
  std::size_t first = 0, last = n_images;
  if (options.frame_range) {
    first = options.frame_range->first;
    last = std::min(options.frame_range->second, n_images);
    if (first >= last) throw RangeError("empty frame range");
  }

  FrameSequence frames;
  for (std::size_t i = first; i < last; ++i) {
    const auto& raw = rec.images[i];
    if (raw.size() != static_cast<std::size_t>(rec.width) * rec.height)
      throw ConversionError("image " + std::to_string(i) + " does not match the sensor size");
    GrayImage img(rec.width, rec.height);
    for (std::size_t k = 0; k < raw.size(); ++k) img.pixels[k] = raw[k] / 255.0f;
    frames.frames.push_back(std::move(img));
    frames.timestamps.push_back(rec.image_timestamps[i]);
  }

  double t_lo = -std::numeric_limits<double>::infinity();
  double t_hi = std::numeric_limits<double>::infinity();
  if (options.frame_range && !frames.timestamps.empty()) {
    t_lo = frames.timestamps.front();
    t_hi = frames.timestamps.back();
  }

  EventStream stream;
  stream.width = rec.width;
  stream.height = rec.height;
  stream.events.reserve(rec.events.size());
  for (std::size_t i = 0; i < rec.events.size(); ++i) {
    const auto& r = rec.events[i];
    const double t = r[2];
    if (t < t_lo || t >= t_hi) continue;
    const double x = r[0], y = r[1];
    if (!(x >= 0 && x < rec.width && y >= 0 && y < rec.height))
      throw ConversionError("event " + std::to_string(i) + " lies outside the sensor");
    Event e;
    e.x = static_cast<std::uint16_t>(x);
    e.y = static_cast<std::uint16_t>(y);
    e.t = t;
    e.p = normalize_polarity(r[3]);
    stream.events.push_back(e);
  }
  // Recordings occasionally carry small timestamp inversions between packets.
  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });

  std::filesystem::create_directories(out_dir);
  ConvertResult result;
  result.events_path = out_dir / "events.evt";
  result.frames_dir = out_dir / "frames";
  write_events(stream, result.events_path);
  write_frames(frames, result.frames_dir);
  result.event_count = stream.events.size();
  result.frame_count = frames.frames.size();

  if (!rec.gt_flow.empty()) {
    std::filesystem::create_directories(out_dir / "flow");
    for (int span : options.gt_spans)
      for (std::size_t i = first; i + span < last; ++i) {
        write_flow(accumulate_gt_flow(rec, i, span), out_dir / "flow" / flow_name(span, i - first));
        ++result.flow_count;
      }
  }
  return result;
}

#ifdef STEFLOW_HAVE_HDF5

namespace {

class H5Handle {
 public:
  H5Handle(hid_t id, herr_t (*close)(hid_t)) : id_(id), close_(close) {}
  ~H5Handle() {
    if (id_ >= 0) close_(id_);
  }
  H5Handle(const H5Handle&) = delete;
  H5Handle& operator=(const H5Handle&) = delete;
  hid_t get() const { return id_; }
  bool ok() const { return id_ >= 0; }

 private:
  hid_t id_;
  herr_t (*close_)(hid_t);
};

bool has_dataset(hid_t file, const std::string& path) {
  // Walk each prefix so missing intermediate groups do not raise errors.
  std::size_t pos = 0;
  while (true) {
    pos = path.find('/', pos + 1);
    const std::string prefix = path.substr(0, pos);
    if (H5Lexists(file, prefix.c_str(), H5P_DEFAULT) <= 0) return false;
    if (pos == std::string::npos) return true;
  }
}

template <typename U>
std::vector<U> read_dataset(hid_t file, const std::string& path, hid_t mem_type,
                            std::vector<hsize_t>& dims) {
  if (!has_dataset(file, path)) throw ConversionError("missing dataset '" + path + "'");
  H5Handle ds(H5Dopen2(file, path.c_str(), H5P_DEFAULT), H5Dclose);
  if (!ds.ok()) throw ConversionError("cannot open dataset '" + path + "'");
  H5Handle space(H5Dget_space(ds.get()), H5Sclose);
  const int rank = H5Sget_simple_extent_ndims(space.get());
  dims.assign(static_cast<std::size_t>(std::max(rank, 0)), 0);
  H5Sget_simple_extent_dims(space.get(), dims.data(), nullptr);
  std::size_t n = 1;
  for (hsize_t d : dims) n *= d;
  std::vector<U> out(n);
  if (n > 0 && H5Dread(ds.get(), mem_type, H5S_ALL, H5S_ALL, H5P_DEFAULT, out.data()) < 0)
    throw ConversionError("failed to read dataset '" + path + "'");
  return out;
}

hid_t open_file(const std::filesystem::path& p) {
  const hid_t f = H5Fopen(p.string().c_str(), H5F_ACC_RDONLY, H5P_DEFAULT);
  if (f < 0) throw ConversionError("cannot open HDF5 file " + p.string());
  return f;
}

}  // namespace

bool mvsec_support_available() { return true; }

RawRecording read_mvsec_hdf5(const std::filesystem::path& events_file,
                             const std::filesystem::path& frames_file,
                             const std::optional<std::filesystem::path>& gt_file) {
  H5Eset_auto2(H5E_DEFAULT, nullptr, nullptr);
  RawRecording rec;
  std::vector<hsize_t> dims;
  {
    H5Handle f(open_file(frames_file), H5Fclose);
    auto pixels = read_dataset<std::uint8_t>(f.get(), "davis/left/image_raw", H5T_NATIVE_UINT8,
                                             dims);
    if (dims.size() != 3) throw ConversionError("davis/left/image_raw must be N x H x W");
    const std::size_t n = dims[0];
    rec.height = static_cast<int>(dims[1]);
    rec.width = static_cast<int>(dims[2]);
    const std::size_t plane = static_cast<std::size_t>(rec.width) * rec.height;
    for (std::size_t i = 0; i < n; ++i)
      rec.images.emplace_back(pixels.begin() + i * plane, pixels.begin() + (i + 1) * plane);
    rec.image_timestamps =
        read_dataset<double>(f.get(), "davis/left/image_raw_ts", H5T_NATIVE_DOUBLE, dims);
    if (rec.image_timestamps.size() != n)
      throw ConversionError("davis/left/image_raw_ts length differs from the image count");
  }
  {
    H5Handle f(open_file(events_file), H5Fclose);
    auto flat = read_dataset<double>(f.get(), "davis/left/events", H5T_NATIVE_DOUBLE, dims);
    if (!flat.empty() && (dims.size() != 2 || dims[1] != 4))
      throw ConversionError("davis/left/events must be N x 4 (x, y, t, p)");
    rec.events.resize(flat.size() / 4);
    for (std::size_t i = 0; i < rec.events.size(); ++i)
      for (int k = 0; k < 4; ++k) rec.events[i][k] = flat[4 * i + k];
  }
  const std::filesystem::path gt_path = gt_file.value_or(frames_file);
  H5Handle g(open_file(gt_path), H5Fclose);
  if (has_dataset(g.get(), "davis/left/flow_dist")) {
    auto flat = read_dataset<float>(g.get(), "davis/left/flow_dist", H5T_NATIVE_FLOAT, dims);
    if (dims.size() != 4 || dims[1] != 2 || static_cast<int>(dims[2]) != rec.height ||
        static_cast<int>(dims[3]) != rec.width)
      throw ConversionError("davis/left/flow_dist must be N x 2 x H x W at the image size");
    const std::size_t plane = static_cast<std::size_t>(rec.width) * rec.height;
    for (std::size_t i = 0; i < dims[0]; ++i) {
      FlowField ff(rec.width, rec.height);
      std::copy_n(flat.begin() + (2 * i) * plane, plane, ff.u.begin());
      std::copy_n(flat.begin() + (2 * i + 1) * plane, plane, ff.v.begin());
      rec.gt_flow.push_back(std::move(ff));
    }
    rec.gt_timestamps =
        read_dataset<double>(g.get(), "davis/left/flow_dist_ts", H5T_NATIVE_DOUBLE, dims);
  } else if (gt_file) {
    throw ConversionError("missing dataset 'davis/left/flow_dist' in " + gt_path.string());
  }
  return rec;
}

#else

bool mvsec_support_available() { return false; }

RawRecording read_mvsec_hdf5(const std::filesystem::path&, const std::filesystem::path&,
                             const std::optional<std::filesystem::path>&) {
  throw ConversionError("this build has no HDF5 support; MVSEC conversion is unavailable");
}

#endif

ConvertResult convert_mvsec(const std::filesystem::path& events_file,
                            const std::filesystem::path& frames_file,
                            const std::filesystem::path& out_dir, const ConvertOptions& options,
                            const std::optional<std::filesystem::path>& gt_file) {
  return convert_recording(read_mvsec_hdf5(events_file, frames_file, gt_file), out_dir, options);
}

}  // namespace steflow
