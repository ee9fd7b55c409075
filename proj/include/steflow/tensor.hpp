#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace steflow {

/// Dense channel-major (C, H, W) array. Used for network activations,
/// parameters (with reinterpreted dims) and real-valued network inputs.
template <typename T>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  static Tensor scalar(T v) { return Tensor(1, 1, 1, v); }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int plane() const { return h * w; }

  T& operator()(int ch, int y, int x) {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  const T& operator()(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  T* channel(int ch) { return data.data() + static_cast<std::size_t>(ch) * h * w; }
  const T* channel(int ch) const {
    return data.data() + static_cast<std::size_t>(ch) * h * w;
  }

  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(c, h, w);
    std::transform(data.begin(), data.end(), out.data.begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }
};

template <typename T>
std::string shape_string(const Tensor<T>& t) {
  return "(" + std::to_string(t.c) + "," + std::to_string(t.h) + "," + std::to_string(t.w) + ")";
}

}  // namespace steflow
