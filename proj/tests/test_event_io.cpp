#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>

#include "helpers.hpp"
#include "steflow/errors.hpp"
#include "steflow/event_io.hpp"
#include "steflow/flow_field.hpp"
#include "steflow/mvsec.hpp"

using namespace steflow;
using testing::TempDir;

namespace {

EventStream random_stream(std::size_t n, std::mt19937_64& rng, int w = 346, int h = 260) {
  EventStream s;
  s.width = w;
  s.height = h;
  std::uniform_int_distribution<int> xs(0, w - 1), ys(0, h - 1), ps(0, 1);
  std::exponential_distribution<double> gap(1000.0);
  double t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    t += gap(rng);
    s.events.push_back({static_cast<std::uint16_t>(xs(rng)), static_cast<std::uint16_t>(ys(rng)), t,
                        static_cast<std::int8_t>(ps(rng) ? 1 : -1)});
  }
  return s;
}

FrameSequence frames_at(std::vector<double> ts, int w = 4, int h = 3) {
  FrameSequence f;
  for (double t : ts) {
    f.frames.emplace_back(w, h, 0.5f);
    f.timestamps.push_back(t);
  }
  return f;
}

EventStream stream_at(std::vector<double> ts) {
  EventStream s;
  s.width = 4;
  s.height = 3;
  for (double t : ts) s.events.push_back({1, 1, t, 1});
  return s;
}

}  // namespace

TEST_CASE("event files round-trip bit-exactly") {
  TempDir dir;
  std::mt19937_64 rng(11);
  for (std::size_t n : {0u, 3u, 1000u}) {
    auto s = random_stream(n, rng);
    write_events(s, dir / "e.evt");
    auto back = read_events(dir / "e.evt");
    CHECK(back == s);
  }
}

TEST_CASE("empty file keeps header dimensions") {
  TempDir dir;
  EventStream s;
  s.width = 17;
  s.height = 9;
  write_events(s, dir / "e.evt");
  auto back = read_events(dir / "e.evt");
  CHECK(back.empty());
  CHECK(back.width == 17);
  CHECK(back.height == 9);
}

TEST_CASE("decreasing timestamp is rejected at its index") {
  TempDir dir;
  auto s = stream_at({0.5, 0.2, 0.7});
  CHECK_THROWS_AS(write_events(s, dir / "bad.evt"), ValidationError);
  CHECK_FALSE(std::filesystem::exists(dir / "bad.evt"));

  // Forge a file that bypasses the writer's check by patching the 2nd record.
  auto good = stream_at({0.5, 0.6, 0.7});
  write_events(good, dir / "e.evt");
  {
    std::fstream f(dir / "e.evt", std::ios::in | std::ios::out | std::ios::binary);
    const double t = 0.1;
    f.seekp(20 + 14);
    f.write(reinterpret_cast<const char*>(&t), sizeof t);
  }
  try {
    read_events(dir / "e.evt");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.index() == 1);
  }
}

TEST_CASE("out-of-bounds coordinates and bad polarity are invalid") {
  auto s = stream_at({0.1, 0.2});
  s.events[1].x = 4;
  try {
    validate(s);
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(e.index() == 1);
  }
  auto p = stream_at({0.1});
  p.events[0].p = 0;
  CHECK_THROWS_AS(validate(p), ValidationError);
}

TEST_CASE("malformed headers are format errors") {
  TempDir dir;
  {
    std::ofstream f(dir / "x.evt", std::ios::binary);
    f << "NOPE0000000000000000";
  }
  CHECK_THROWS_AS(read_events(dir / "x.evt"), FormatError);
  {
    std::ofstream f(dir / "short.evt", std::ios::binary);
    f << "EVT1";
  }
  CHECK_THROWS_AS(read_events(dir / "short.evt"), FormatError);
  CHECK_THROWS_AS(read_events(dir / "missing.evt"), IoError);
}

TEST_CASE("unwritable paths are io errors") {
  TempDir dir;
  CHECK_THROWS_AS(write_events(stream_at({0.1}), dir / "no" / "such" / "dir" / "e.evt"), IoError);
}

TEST_CASE("slice_between_frames uses half-open intervals") {
  auto s = stream_at({0.1, 0.5, 0.9});
  auto f = frames_at({0.0, 0.6, 1.2});
  auto a = slice_between_frames(s, f, 0, 1);
  REQUIRE(a.size() == 2);
  CHECK(a.events[0].t == 0.1);
  CHECK(a.events[1].t == 0.5);
  CHECK(slice_between_frames(s, f, 0, 2).size() == 3);
  CHECK(slice_between_frames(stream_at({0.7}), f, 0, 1).empty());
  CHECK(slice_between_frames(stream_at({0.6}), f, 1, 1).size() == 1);
  CHECK_THROWS_AS(slice_between_frames(s, f, 1, 2), RangeError);
}

TEST_CASE("consecutive slices partition the covered events") {
  std::mt19937_64 rng(12);
  auto s = random_stream(5000, rng);
  const double end = s.events.back().t;
  FrameSequence f = frames_at({0.0, end * 0.2, end * 0.45, end * 0.5, end * 0.8, end * 0.97});
  std::vector<Event> joined;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    auto part = slice_between_frames(s, f, i, 1);
    joined.insert(joined.end(), part.events.begin(), part.events.end());
  }
  std::vector<Event> expected;
  for (const auto& e : s.events)
    if (e.t >= f.timestamps.front() && e.t < f.timestamps.back()) expected.push_back(e);
  CHECK(joined == expected);
}

TEST_CASE("frame archives round-trip at 8-bit precision") {
  TempDir dir;
  FrameSequence f;
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> level(0, 255);
  for (int i = 0; i < 3; ++i) {
    GrayImage g(7, 5);
    for (auto& p : g.pixels) p = level(rng) / 255.0f;
    f.frames.push_back(g);
    f.timestamps.push_back(0.125 * i + 1.0);
  }
  write_frames(f, dir / "frames");
  CHECK(std::filesystem::exists(dir / "frames" / "frames.txt"));
  auto back = read_frames(dir / "frames");
  REQUIRE(back.size() == 3);
  CHECK(back.timestamps == f.timestamps);
  for (int i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < f.frames[i].pixels.size(); ++k)
      CHECK(back.frames[i].pixels[k] == doctest::Approx(f.frames[i].pixels[k]).epsilon(1e-6));
}

TEST_CASE("frame sequences need increasing timestamps and one size") {
  auto f = frames_at({0.0, 0.0});
  CHECK_THROWS_AS(validate(f), ValidationError);
  auto g = frames_at({0.0, 1.0});
  g.frames[1] = GrayImage(5, 3);
  CHECK_THROWS_AS(validate(g), ValidationError);
}

TEST_CASE("flow files round-trip with and without masks") {
  TempDir dir;
  FlowField a(5, 4, 1.25f, -0.5f);
  write_flow(a, dir / "a.flo");
  auto back = read_flow(dir / "a.flo");
  CHECK(back.u == a.u);
  CHECK(back.v == a.v);
  for (std::size_t i = 0; i < back.pixel_count(); ++i) CHECK(back.is_valid(i));

  FlowField b(3, 2);
  b.valid = {1, 0, 1, 1, 0, 1};
  write_flow(b, dir / "b.flo");
  CHECK(read_flow(dir / "b.flo") == b);

  FlowField bad(2, 2);
  bad.u[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("polarity normalization") {
  CHECK(normalize_polarity(0.0) == -1);
  CHECK(normalize_polarity(1.0) == 1);
  CHECK(normalize_polarity(-1.0) == -1);
  CHECK_THROWS(normalize_polarity(2.0));
}

namespace {

RawRecording tiny_recording(std::size_t n_events, int n_frames) {
  RawRecording r;
  r.width = 6;
  r.height = 4;
  for (int i = 0; i < n_frames; ++i) {
    r.images.emplace_back(24, static_cast<std::uint8_t>(40 * i));
    r.image_timestamps.push_back(1.0 + i);
  }
  const double span = n_frames - 1;
  for (std::size_t i = 0; i < n_events; ++i)
    r.events.push_back({double(i % 6), double(i % 4), 1.0 + span * (i + 0.5) / n_events, double(i % 2)});
  return r;
}

}  // namespace

TEST_CASE("conversion preserves event and frame counts") {
  TempDir dir;
  auto res = convert_recording(tiny_recording(10, 2), dir.path());
  CHECK(res.event_count == 10);
  CHECK(res.frame_count == 2);
  auto ev = read_events(res.events_path);
  auto fr = read_frames(res.frames_dir);
  CHECK(ev.size() == 10);
  CHECK(fr.size() == 2);
  CHECK(ev.width == 6);
  CHECK(fr.frames[1].at(0, 0) == doctest::Approx(40.0f / 255.0f));
}

TEST_CASE("conversion remaps {0,1} polarity") {
  TempDir dir;
  auto r = tiny_recording(0, 2);
  const double ps[4] = {0, 1, 1, 0};
  for (int i = 0; i < 4; ++i) r.events.push_back({double(i), 0.0, 1.1 + 0.1 * i, ps[i]});
  convert_recording(r, dir.path());
  auto ev = read_events(dir / "events.evt");
  REQUIRE(ev.size() == 4);
  const int expected[4] = {-1, 1, 1, -1};
  for (int i = 0; i < 4; ++i) {
    CHECK(ev.events[i].p == expected[i]);
    CHECK(ev.events[i].x == i);
  }
}

TEST_CASE("conversion of an empty event array") {
  TempDir dir;
  auto res = convert_recording(tiny_recording(0, 3), dir.path());
  CHECK(res.event_count == 0);
  CHECK(read_events(res.events_path).empty());
}

TEST_CASE("frame range restricts frames and events") {
  TempDir dir;
  ConvertOptions opt;
  opt.frame_range = std::make_pair<std::size_t, std::size_t>(1, 3);
  auto res = convert_recording(tiny_recording(40, 4), dir.path(), opt);
  CHECK(res.frame_count == 2);
  auto ev = read_events(res.events_path);
  for (const auto& e : ev.events) {
    CHECK(e.t >= 2.0);
    CHECK(e.t < 3.0);
  }
}

TEST_CASE("ground-truth accumulation sums scaled interval samples") {
  auto r = tiny_recording(0, 6);
  for (int i = 0; i < 10; ++i) {
    r.gt_flow.emplace_back(6, 4, 0.5f * (i + 1), -1.0f);
    r.gt_timestamps.push_back(1.0 + 0.5 * i);  // two samples per frame interval
  }
  // Interval [1,2] has midpoint 1.5 -> sample 1, scaled by 1.0/0.5.
  auto one = accumulate_gt_flow(r, 0, 1);
  CHECK(one.u[0] == doctest::Approx(2.0));
  CHECK(one.v[0] == doctest::Approx(-2.0));
  auto four = accumulate_gt_flow(r, 0, 4);
  // Midpoints 1.5, 2.5, 3.5, 4.5 -> samples 1, 3, 5, 7.
  CHECK(four.u[0] == doctest::Approx(2.0 * (1.0 + 2.0 + 3.0 + 4.0)));
  CHECK(four.v[0] == doctest::Approx(-8.0));

  TempDir dir;
  auto res = convert_recording(r, dir.path());
  CHECK(res.flow_count == 5 + 2);
  CHECK(std::filesystem::exists(dir / "flow" / "dt4_000001.flo"));
}

#ifdef STEFLOW_HAVE_HDF5
#include <hdf5.h>

namespace {

void write_dataset(hid_t file, const std::string& path, hid_t type, std::vector<hsize_t> dims,
                   const void* data) {
  hid_t lcpl = H5Pcreate(H5P_LINK_CREATE);
  H5Pset_create_intermediate_group(lcpl, 1);
  hid_t space = H5Screate_simple(static_cast<int>(dims.size()), dims.data(), nullptr);
  hid_t ds = H5Dcreate2(file, path.c_str(), type, space, lcpl, H5P_DEFAULT, H5P_DEFAULT);
  H5Dwrite(ds, type, H5S_ALL, H5S_ALL, H5P_DEFAULT, data);
  H5Dclose(ds);
  H5Sclose(space);
  H5Pclose(lcpl);
}

}  // namespace

TEST_CASE("MVSEC layout files convert through the HDF5 reader") {
  TempDir dir;
  const auto file = dir / "rec.hdf5";
  hid_t f = H5Fcreate(file.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
  std::vector<double> events = {0, 0, 1.2, 0, 1, 2, 1.4, 1, 5, 3, 1.6, 1, 2, 2, 1.8, 0};
  write_dataset(f, "davis/left/events", H5T_NATIVE_DOUBLE, {4, 4}, events.data());
  std::vector<std::uint8_t> images(2 * 4 * 6, 128);
  write_dataset(f, "davis/left/image_raw", H5T_NATIVE_UINT8, {2, 4, 6}, images.data());
  std::vector<double> ts = {1.0, 2.0};
  write_dataset(f, "davis/left/image_raw_ts", H5T_NATIVE_DOUBLE, {2}, ts.data());
  H5Fclose(f);

  REQUIRE(mvsec_support_available());
  auto res = convert_mvsec(file, file, dir / "out");
  CHECK(res.event_count == 4);
  CHECK(res.frame_count == 2);
  auto ev = read_events(res.events_path);
  CHECK(ev.width == 6);
  CHECK(ev.height == 4);
  CHECK(ev.events[0].p == -1);
  CHECK(ev.events[1].p == 1);
}

TEST_CASE("missing MVSEC datasets are named in the error") {
  TempDir dir;
  const auto file = dir / "empty.hdf5";
  hid_t f = H5Fcreate(file.c_str(), H5F_ACC_TRUNC, H5P_DEFAULT, H5P_DEFAULT);
  H5Fclose(f);
  try {
    read_mvsec_hdf5(file, file);
    FAIL("expected a conversion error");
  } catch (const ConversionError& e) {
    CHECK(std::string(e.what()).find("missing dataset 'davis/left/") != std::string::npos);
  }
}
#endif
