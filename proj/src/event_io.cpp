#include "steflow/event_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include "steflow/errors.hpp"

namespace steflow {

static_assert(std::endian::native == std::endian::little,
              "EVT1 I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kEventMagic{'E', 'V', 'T', '1'};
constexpr std::size_t kRecordBytes = 14;

template <typename U>
void put(std::string& buf, U v) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  buf.append(bytes, sizeof(U));
}

template <typename U>
U take(const char* p) {
  U v;
  std::memcpy(&v, p, sizeof(U));
  return v;
}

}  // namespace

void validate(const EventStream& stream) {
  if (stream.width <= 0 || stream.height <= 0)
    throw ValidationError("event stream has non-positive sensor size");
  for (std::size_t i = 0; i < stream.events.size(); ++i) {
    const Event& e = stream.events[i];
    if (e.x >= stream.width || e.y >= stream.height)
      throw ValidationError("event " + std::to_string(i) + " at (" + std::to_string(e.x) + "," +
                                std::to_string(e.y) + ") is outside the " +
                                std::to_string(stream.width) + "x" +
                                std::to_string(stream.height) + " sensor",
                            i);
    if (e.p != 1 && e.p != -1)
      throw ValidationError("event " + std::to_string(i) + " has polarity " +
                                std::to_string(static_cast<int>(e.p)),
                            i);
    if (!std::isfinite(e.t))
      throw ValidationError("event " + std::to_string(i) + " has a non-finite timestamp", i);
    if (i > 0 && e.t < stream.events[i - 1].t)
      throw ValidationError("event " + std::to_string(i) + " has a timestamp earlier than event " +
                                std::to_string(i - 1),
                            i);
  }
}

void validate(const FrameSequence& seq) {
  if (seq.frames.size() != seq.timestamps.size())
    throw ValidationError("frame count and timestamp count differ");
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    const GrayImage& f = seq.frames[i];
    if (f.pixels.size() != static_cast<std::size_t>(f.width) * f.height)
      throw ValidationError("frame " + std::to_string(i) + " has an inconsistent buffer", i);
    if (i > 0) {
      if (f.width != seq.frames[0].width || f.height != seq.frames[0].height)
        throw ValidationError("frame " + std::to_string(i) + " differs in size from frame 0", i);
      if (!(seq.timestamps[i] > seq.timestamps[i - 1]))
        throw ValidationError("frame timestamps must strictly increase (frame " +
                                  std::to_string(i) + ")",
                              i);
    }
  }
}

EventStream read_events(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open event file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 20 || !std::equal(kEventMagic.begin(), kEventMagic.end(), bytes.begin()))
    throw FormatError(path.string() + ": missing EVT1 header");
  EventStream s;
  s.width = static_cast<int>(take<std::uint32_t>(bytes.data() + 4));
  s.height = static_cast<int>(take<std::uint32_t>(bytes.data() + 8));
  const auto count = take<std::uint64_t>(bytes.data() + 12);
  if (bytes.size() != 20 + count * kRecordBytes)
    throw FormatError(path.string() + ": header declares " + std::to_string(count) +
                      " records but the payload holds " +
                      std::to_string((bytes.size() - 20) / kRecordBytes));
  s.events.resize(count);
  const char* p = bytes.data() + 20;
  for (std::uint64_t i = 0; i < count; ++i, p += kRecordBytes) {
    Event& e = s.events[i];
    e.t = take<double>(p);
    e.x = take<std::uint16_t>(p + 8);
    e.y = take<std::uint16_t>(p + 10);
    e.p = take<std::int8_t>(p + 12);
  }
  validate(s);
  return s;
}

void write_events(const EventStream& stream, const std::filesystem::path& path) {
  validate(stream);
  std::string buf;
  buf.reserve(20 + stream.events.size() * kRecordBytes);
  buf.append(kEventMagic.data(), kEventMagic.size());
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(stream.width));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(stream.height));
  put<std::uint64_t>(buf, stream.events.size());
  for (const Event& e : stream.events) {
    put<double>(buf, e.t);
    put<std::uint16_t>(buf, e.x);
    put<std::uint16_t>(buf, e.y);
    put<std::int8_t>(buf, e.p);
    put<std::uint8_t>(buf, 0);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write event file " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("short write to " + path.string());
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto token = [&in]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    return std::string();
  };
  if (token() != "P5") throw FormatError(path.string() + ": not a binary PGM");
  GrayImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    const int maxval = std::stoi(token());
    if (maxval != 255) throw FormatError(path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    throw FormatError(path.string() + ": malformed PGM header");
  }
  in.get();
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw FormatError(path.string() + ": truncated PGM payload");
  img.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0f;
  return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> raw(image.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(
        std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

FrameSequence read_frames(const std::filesystem::path& dir) {
  std::ifstream index(dir / "frames.txt");
  if (!index) throw IoError("missing frame index " + (dir / "frames.txt").string());
  FrameSequence seq;
  std::string line;
  int lineno = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name;
    double t;
    if (!(ls >> name >> t))
      throw FormatError("frames.txt line " + std::to_string(lineno) + " is malformed");
    seq.frames.push_back(read_pgm(dir / name));
    seq.timestamps.push_back(t);
  }
  validate(seq);
  return seq;
}

void write_frames(const FrameSequence& seq, const std::filesystem::path& dir) {
  validate(seq);
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "frames.txt", std::ios::trunc);
  if (!index) throw IoError("cannot write " + (dir / "frames.txt").string());
  index << std::setprecision(17);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::ostringstream name;
    name << "frame_" << std::setw(6) << std::setfill('0') << i << ".pgm";
    write_pgm(seq.frames[i], dir / name.str());
    index << name.str() << " " << seq.timestamps[i] << "\n";
  }
}

EventStream slice_between_frames(const EventStream& stream, const FrameSequence& frames,
                                 std::size_t i, std::size_t dt) {
  if (dt == 0 || i + dt >= frames.timestamps.size())
    throw RangeError("frame window [" + std::to_string(i) + ", " + std::to_string(i + dt) +
                     "] is outside a sequence of " + std::to_string(frames.timestamps.size()) +
                     " frames");
  const double t0 = frames.timestamps[i];
  const double t1 = frames.timestamps[i + dt];
  auto by_time = [](const Event& e, double t) { return e.t < t; };
  auto first = std::lower_bound(stream.events.begin(), stream.events.end(), t0, by_time);
  auto last = std::lower_bound(first, stream.events.end(), t1, by_time);
  EventStream out;
  out.width = stream.width;
  out.height = stream.height;
  out.events.assign(first, last);
  return out;
}

}  // namespace steflow
