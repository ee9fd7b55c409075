#pragma once

// Minimal reverse-mode differentiation over (C, H, W) tensors.
//
// A Graph records every op applied to Vars in creation order, so the node
// list is already a topological order and backward() is a reverse sweep.
// Parameters live outside the graph in a ParameterSet and are bound to one
// node per graph; their gradients are flushed back after backward().

#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "steflow/tensor.hpp"

namespace steflow::ad {

template <typename T>
class Graph;

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Ordered, name-addressable parameter storage. Order is creation order and
/// is the serialization order.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value);
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<U>());
    return out;
  }

 private:
  std::deque<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  bool defined() const { return graph != nullptr && id >= 0; }
  const Tensor<T>& value() const;
  int c() const { return value().c; }
  int h() const { return value().h; }
  int w() const { return value().w; }
};

template <typename T>
class Graph {
 public:
  /// With record = false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> value);
  /// A free input whose gradient is wanted (e.g. a flow field under test).
  Var<T> leaf(Tensor<T> value);
  /// Binds a parameter; repeated calls return the same node.
  Var<T> param(Parameter<T>& p);

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor<T>& grad(int id);
  bool has_grad(int id) const { return !nodes_[id].grad.empty(); }

  /// Seeds d(out)/d(out) = 1 for a scalar output and sweeps backwards.
  void backward(Var<T> out);
  /// Adds bound-parameter gradients into Parameter::grad.
  void flush_parameter_grads();

  std::size_t node_count() const { return nodes_.size(); }

  using BackwardFn = std::function<void(Graph&, int)>;
  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn backward);

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<Parameter<T>*, int> bound_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

// ---------------------------------------------------------------------------
// Ops. All inputs of one op must belong to the same graph.

/// 2-D convolution. weight dims: (Cout, Cin, k*k); bias dims: (Cout, 1, 1).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int kernel, int stride, int pad);

/// Transposed convolution. weight dims: (Cin, Cout, k*k); bias (Cout, 1, 1).
/// Output size is (H - 1) * stride - 2 * pad + kernel.
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> weight, Var<T> bias, int kernel, int stride, int pad);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T s);
/// a + z * (b - a), elementwise.
template <typename T>
Var<T> lerp(Var<T> a, Var<T> b, Var<T> z);

template <typename T>
Var<T> sigmoid(Var<T> a);
template <typename T>
Var<T> tanh(Var<T> a);
template <typename T>
Var<T> leaky_relu(Var<T> a, T slope);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts);
/// Channels [begin, end).
template <typename T>
Var<T> slice(Var<T> a, int begin, int end);

/// 2x2 mean pooling; H and W must be even.
template <typename T>
Var<T> avg_pool2(Var<T> a);
/// Bilinear x2 upsampling with half-pixel centers and edge replication.
template <typename T>
Var<T> upsample2(Var<T> a);

/// Backward warp: out(x) = a(x + flow(x)) with bilinear sampling and sample
/// coordinates clamped to the border. flow has 2 channels (dx, dy) in this
/// tensor's pixel units.
template <typename T>
Var<T> warp_clamped(Var<T> a, Var<T> flow);

/// Backward warp where samples outside [0, W-1] x [0, H-1] are invalid. The
/// returned mask (1 valid, 0 invalid) is a constant; invalid outputs are 0.
template <typename T>
std::pair<Var<T>, Tensor<T>> warp_masked(Var<T> a, Var<T> flow);

/// Cost volume: out[(dy+r)(2r+1) + (dx+r)](y, x) = <a(y+dy, x+dx), b(y, x)>;
/// out-of-bounds samples of `a` contribute zero.
template <typename T>
Var<T> correlation(Var<T> a, Var<T> b, int radius);

/// Per-pixel L2 normalization across channels; zero vectors stay zero.
template <typename T>
Var<T> l2_normalize(Var<T> a);

/// Sum over masked pixels of ((a)^2 + eta^2)^r (Charbonnier on a residual).
template <typename T>
Var<T> charbonnier_sum(Var<T> residual, const Tensor<T>& mask, T eta, T r);

/// Sum of absolute forward differences along x and y for every channel.
template <typename T>
Var<T> smoothness_l1(Var<T> a);

template <typename T>
Var<T> sum(Var<T> a);

}  // namespace steflow::ad
