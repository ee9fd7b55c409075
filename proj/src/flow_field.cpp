#include "steflow/flow_field.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "steflow/errors.hpp"

namespace steflow {

void validate(const FlowField& flow) {
  const std::size_t n = static_cast<std::size_t>(flow.width) * flow.height;
  if (flow.u.size() != n || flow.v.size() != n)
    throw ValidationError("flow buffers do not match " + std::to_string(flow.width) + "x" +
                          std::to_string(flow.height));
  if (!flow.valid.empty() && flow.valid.size() != n)
    throw ValidationError("flow validity mask has the wrong size");
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(flow.u[i]) || !std::isfinite(flow.v[i]))
      throw ValidationError("non-finite flow at pixel " + std::to_string(i), i);
}

FlowField read_flow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open flow file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || bytes.compare(0, 4, "FLO1") != 0)
    throw FormatError(path.string() + ": missing FLO1 header");
  std::uint32_t w, h;
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != 12 + n * 9) throw FormatError(path.string() + ": payload size mismatch");
  FlowField f(static_cast<int>(w), static_cast<int>(h));
  const char* p = bytes.data() + 12;
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(&f.u[i], p + 8 * i, 4);
    std::memcpy(&f.v[i], p + 8 * i + 4, 4);
  }
  f.valid.assign(p + 8 * n, p + 9 * n);
  return f;
}

void write_flow(const FlowField& flow, const std::filesystem::path& path) {
  validate(flow);
  const std::size_t n = flow.pixel_count();
  std::string buf = "FLO1";
  const std::uint32_t w = flow.width, h = flow.height;
  buf.append(reinterpret_cast<const char*>(&w), 4);
  buf.append(reinterpret_cast<const char*>(&h), 4);
  for (std::size_t i = 0; i < n; ++i) {
    buf.append(reinterpret_cast<const char*>(&flow.u[i]), 4);
    buf.append(reinterpret_cast<const char*>(&flow.v[i]), 4);
  }
  for (std::size_t i = 0; i < n; ++i) buf.push_back(flow.is_valid(i) ? 1 : 0);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write flow file " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

}  // namespace steflow
