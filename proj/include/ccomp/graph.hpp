#pragma once

#include <functional>
#include <vector>

#include "ccomp/kernels.hpp"
#include "ccomp/param.hpp"

namespace ccomp {

// Reverse-mode tape. Ops append nodes; backward() walks the tape in reverse.
// A node only gets a gradient buffer (and a backward closure) if some path
// from a trainable parameter reaches it, so frozen branches skip their
// weight-gradient GEMMs entirely.
template <typename T>
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  int input(Tensor<T> value);
  int param(Parameter<T>& p);

  int conv2d(int x, int w, int b, const ConvSpec& cs);
  int linear(int x, int w, int b);
  int add(int a, int b);
  int sub(int a, int b);
  int add_const_tensor(int x, Tensor<T> k);
  int scale(int x, T c);
  int square(int x);
  int gelu(int x);
  int softplus_add(int x, T add);
  int channel_norm(int x, T eps);
  int affine_modulate(int x, int sc, int sh);
  int upsample_nearest2x(int x);
  int depth_to_space(int x, int r);
  int broadcast_nhwc(int bias, int n, int h, int w);
  int concat_last(const std::vector<int>& xs);
  int slice_last(int x, int c0, int c1);
  int gaussian_bits(int r, int sigma);
  int sum_per_item(int x);
  int weighted_sum(int x, std::vector<T> w);

  const Tensor<T>& value(int id) const { return nodes_[static_cast<size_t>(id)].val; }
  const Tensor<T>& grad(int id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  // Seeds d(loss)/d(loss) = seed and accumulates into trainable parameters' grads.
  void backward(int loss, T seed = T(1));

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void()> back;
    bool needs_grad = false;
  };

  int push(Tensor<T> val, bool needs_grad);
  Tensor<T>* gptr(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    return n.needs_grad ? &n.grad : nullptr;
  }

  std::vector<Node> nodes_;
};

}  // namespace ccomp
