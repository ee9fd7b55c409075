#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "steflow/autograd.hpp"
#include "steflow/tensor.hpp"

namespace testing {

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("steflow_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline steflow::Tensor<double> random_tensor(int c, int h, int w, std::mt19937_64& rng,
                                             double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  steflow::Tensor<double> t(c, h, w);
  for (auto& v : t.data) v = u(rng);
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Builds a scalar from leaf tensors via `fn`, then compares the analytic
/// gradient of every input entry with central differences. Returns the
/// worst relative error.
inline double gradient_check(
    std::vector<steflow::Tensor<double>> inputs,
    const std::function<steflow::ad::Var<double>(std::vector<steflow::ad::Var<double>>&)>& fn,
    double h = 1e-6) {
  using namespace steflow;
  std::vector<Tensor<double>> analytic;
  {
    ad::Graph<double> g;
    std::vector<ad::Var<double>> vars;
    for (auto& t : inputs) vars.push_back(g.leaf(t));
    auto out = fn(vars);
    g.backward(out);
    for (auto& v : vars)
      analytic.push_back(g.has_grad(v.id) ? g.grad(v.id) : Tensor<double>(v.c(), v.h(), v.w()));
  }
  auto eval = [&]() {
    ad::Graph<double> g(false);
    std::vector<ad::Var<double>> vars;
    for (auto& t : inputs) vars.push_back(g.constant(t));
    return fn(vars).value().data[0];
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].data.size(); ++i) {
      const double orig = inputs[k].data[i];
      inputs[k].data[i] = orig + h;
      const double fp = eval();
      inputs[k].data[i] = orig - h;
      const double fm = eval();
      inputs[k].data[i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      worst = std::max(worst, rel_err(analytic[k].data[i], numeric, 1e-4));
    }
  }
  return worst;
}

}  // namespace testing
