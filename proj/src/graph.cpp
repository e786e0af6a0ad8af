#include "ccomp/graph.hpp"

#include <cmath>

namespace ccomp {

template <typename T>
int Graph<T>::push(Tensor<T> val, bool needs_grad) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  if (needs_grad) n.grad = Tensor<T>(n.val.dims);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename T>
int Graph<T>::input(Tensor<T> value) {
  return push(std::move(value), false);
}

template <typename T>
int Graph<T>::param(Parameter<T>& p) {
  const int id = push(p.value, p.trainable);
  if (p.trainable) {
    Parameter<T>* pp = &p;
    nodes_.back().back = [this, id, pp]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      for (int64_t i = 0; i < g.size(); ++i) pp->grad.v[i] += g.v[i];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::conv2d(int x, int w, int b, const ConvSpec& cs) {
  const bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
  int id = push(conv2d_forward(value(x), value(w), value(b), cs), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, w, b, cs]() {
      conv2d_backward(value(x), value(w), cs, nodes_[static_cast<size_t>(id)].grad, gptr(x),
                      gptr(w), gptr(b));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::linear(int x, int w, int b) {
  const bool ng = needs_grad(x) || needs_grad(w) || needs_grad(b);
  int id = push(linear_forward(value(x), value(w), value(b)), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, w, b]() {
      linear_backward(value(x), value(w), nodes_[static_cast<size_t>(id)].grad, gptr(x), gptr(w),
                      gptr(b));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::add(int a, int b) {
  if (!value(a).same_shape(value(b)))
    throw DimensionError("add: shapes " + shape_str(value(a).dims) + " vs " +
                         shape_str(value(b).dims));
  Tensor<T> y = value(a);
  const Tensor<T>& vb = value(b);
  for (int64_t i = 0; i < y.size(); ++i) y.v[i] += vb.v[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, a, b]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      for (Tensor<T>* d : {gptr(a), gptr(b)})
        if (d)
          for (int64_t i = 0; i < g.size(); ++i) d->v[i] += g.v[i];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::sub(int a, int b) {
  if (!value(a).same_shape(value(b)))
    throw DimensionError("sub: shapes " + shape_str(value(a).dims) + " vs " +
                         shape_str(value(b).dims));
  Tensor<T> y = value(a);
  const Tensor<T>& vb = value(b);
  for (int64_t i = 0; i < y.size(); ++i) y.v[i] -= vb.v[i];
  const bool ng = needs_grad(a) || needs_grad(b);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, a, b]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      if (Tensor<T>* d = gptr(a))
        for (int64_t i = 0; i < g.size(); ++i) d->v[i] += g.v[i];
      if (Tensor<T>* d = gptr(b))
        for (int64_t i = 0; i < g.size(); ++i) d->v[i] -= g.v[i];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::add_const_tensor(int x, Tensor<T> k) {
  if (!value(x).same_shape(k))
    throw DimensionError("add_const_tensor: shapes " + shape_str(value(x).dims) + " vs " +
                         shape_str(k.dims));
  Tensor<T> y = value(x);
  for (int64_t i = 0; i < y.size(); ++i) y.v[i] += k.v[i];
  const bool ng = needs_grad(x);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, x]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      Tensor<T>* d = gptr(x);
      for (int64_t i = 0; i < g.size(); ++i) d->v[i] += g.v[i];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::scale(int x, T c) {
  Tensor<T> y = value(x);
  for (auto& v : y.v) v *= c;
  const bool ng = needs_grad(x);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, c]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      Tensor<T>* d = gptr(x);
      for (int64_t i = 0; i < g.size(); ++i) d->v[i] += c * g.v[i];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::square(int x) {
  Tensor<T> y = value(x);
  for (auto& v : y.v) v *= v;
  const bool ng = needs_grad(x);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, x]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      const Tensor<T>& xv = value(x);
      Tensor<T>* d = gptr(x);
      for (int64_t i = 0; i < g.size(); ++i) d->v[i] += T(2) * xv.v[i] * g.v[i];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::gelu(int x) {
  const bool ng = needs_grad(x);
  int id = push(gelu_forward(value(x)), ng);
  if (ng) {
    nodes_.back().back = [this, id, x]() {
      gelu_backward(value(x), nodes_[static_cast<size_t>(id)].grad, *gptr(x));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::softplus_add(int x, T add) {
  const bool ng = needs_grad(x);
  int id = push(softplus_forward(value(x), add), ng);
  if (ng) {
    nodes_.back().back = [this, id, x]() {
      softplus_backward(value(x), nodes_[static_cast<size_t>(id)].grad, *gptr(x));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::channel_norm(int x, T eps) {
  const bool ng = needs_grad(x);
  int id = push(channel_norm_forward(value(x), eps), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, eps]() {
      channel_norm_backward(value(x), eps, nodes_[static_cast<size_t>(id)].grad, *gptr(x));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::affine_modulate(int x, int sc, int sh) {
  const bool ng = needs_grad(x) || needs_grad(sc) || needs_grad(sh);
  int id = push(affine_modulate_forward(value(x), value(sc), value(sh)), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, sc, sh]() {
      affine_modulate_backward(value(x), value(sc), nodes_[static_cast<size_t>(id)].grad,
                               gptr(x), gptr(sc), gptr(sh));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::upsample_nearest2x(int x) {
  const bool ng = needs_grad(x);
  int id = push(upsample_nearest2x_forward(value(x)), ng);
  if (ng) {
    nodes_.back().back = [this, id, x]() {
      upsample_nearest2x_backward(nodes_[static_cast<size_t>(id)].grad, *gptr(x));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::depth_to_space(int x, int r) {
  const bool ng = needs_grad(x);
  int id = push(depth_to_space_forward(value(x), r), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, r]() {
      depth_to_space_backward(nodes_[static_cast<size_t>(id)].grad, r, *gptr(x));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::broadcast_nhwc(int bias, int n, int h, int w) {
  const Tensor<T>& b = value(bias);
  check_rank(b, 1, "broadcast_nhwc");
  const int c = b.dims[0];
  Tensor<T> y({n, h, w, c});
  for (int64_t p = 0; p < y.size() / c; ++p)
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + p * c);
  const bool ng = needs_grad(bias);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, bias, c]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      Tensor<T>* d = gptr(bias);
      for (int64_t p = 0; p < g.size() / c; ++p)
        for (int ch = 0; ch < c; ++ch) d->v[ch] += g.v[p * c + ch];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::concat_last(const std::vector<int>& xs) {
  std::vector<const Tensor<T>*> ts;
  bool ng = false;
  for (int x : xs) {
    ts.push_back(&value(x));
    ng = ng || needs_grad(x);
  }
  int id = push(concat_channels(ts), ng);
  if (ng) {
    std::vector<int> ins = xs;
    nodes_.back().back = [this, id, ins]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      const int ctot = g.dims.back();
      const int64_t pos = g.size() / ctot;
      int off = 0;
      for (int x : ins) {
        const int c = value(x).dims.back();
        if (Tensor<T>* d = gptr(x)) {
          for (int64_t p = 0; p < pos; ++p)
            for (int ch = 0; ch < c; ++ch) d->v[p * c + ch] += g.v[p * ctot + off + ch];
        }
        off += c;
      }
    };
  }
  return id;
}

template <typename T>
int Graph<T>::slice_last(int x, int c0, int c1) {
  const Tensor<T>& xv = value(x);
  const int c = xv.dims.back();
  if (c0 < 0 || c1 > c || c0 >= c1)
    throw DimensionError("slice_last: [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") out of " + std::to_string(c) + " channels");
  Shape os = xv.dims;
  os.back() = c1 - c0;
  Tensor<T> y(os);
  const int cw = c1 - c0;
  const int64_t pos = xv.size() / c;
  for (int64_t p = 0; p < pos; ++p)
    std::copy(xv.v.begin() + p * c + c0, xv.v.begin() + p * c + c1, y.v.begin() + p * cw);
  const bool ng = needs_grad(x);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, c0, cw, c]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      Tensor<T>* d = gptr(x);
      const int64_t pos = g.size() / cw;
      for (int64_t p = 0; p < pos; ++p)
        for (int ch = 0; ch < cw; ++ch) d->v[p * c + c0 + ch] += g.v[p * cw + ch];
    };
  }
  return id;
}

template <typename T>
int Graph<T>::gaussian_bits(int r, int sigma) {
  const bool ng = needs_grad(r) || needs_grad(sigma);
  int id = push(gaussian_bits_forward(value(r), value(sigma)), ng);
  if (ng) {
    nodes_.back().back = [this, id, r, sigma]() {
      gaussian_bits_backward(value(r), value(sigma), nodes_[static_cast<size_t>(id)].grad,
                             gptr(r), gptr(sigma));
    };
  }
  return id;
}

template <typename T>
int Graph<T>::sum_per_item(int x) {
  const Tensor<T>& xv = value(x);
  const int n = xv.dims[0];
  const int64_t per = xv.size() / n;
  Tensor<T> y({n});
  for (int i = 0; i < n; ++i) {
    T s = 0;
    const T* p = xv.v.data() + static_cast<size_t>(i) * per;
    for (int64_t j = 0; j < per; ++j) s += p[j];
    y.v[static_cast<size_t>(i)] = s;
  }
  const bool ng = needs_grad(x);
  int id = push(std::move(y), ng);
  if (ng) {
    nodes_.back().back = [this, id, x, n, per]() {
      const Tensor<T>& g = nodes_[static_cast<size_t>(id)].grad;
      Tensor<T>* d = gptr(x);
      for (int i = 0; i < n; ++i) {
        const T gi = g.v[static_cast<size_t>(i)];
        T* p = d->v.data() + static_cast<size_t>(i) * per;
        for (int64_t j = 0; j < per; ++j) p[j] += gi;
      }
    };
  }
  return id;
}

template <typename T>
int Graph<T>::weighted_sum(int x, std::vector<T> w) {
  const Tensor<T>& xv = value(x);
  if (xv.rank() != 1 || static_cast<size_t>(xv.dims[0]) != w.size())
    throw DimensionError("weighted_sum: vector " + shape_str(xv.dims) + " vs " +
                         std::to_string(w.size()) + " weights");
  T s = 0;
  for (size_t i = 0; i < w.size(); ++i) s += w[i] * xv.v[i];
  Tensor<T> y({1});
  y.v[0] = s;
  const bool ng = needs_grad(x);
  int id = push(std::move(y), ng);
  if (ng) {
    std::vector<T> wc = std::move(w);
    nodes_.back().back = [this, id, x, wc]() {
      const T g = nodes_[static_cast<size_t>(id)].grad.v[0];
      Tensor<T>* d = gptr(x);
      for (size_t i = 0; i < wc.size(); ++i) d->v[i] += wc[i] * g;
    };
  }
  return id;
}

template <typename T>
void Graph<T>::backward(int loss, T seed) {
  Node& ln = nodes_[static_cast<size_t>(loss)];
  if (ln.val.size() != 1) throw ContractError("backward: loss must be a scalar node");
  if (!ln.needs_grad) return;  // nothing trainable reaches the loss
  ln.grad.v[0] += seed;
  for (int i = loss; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.needs_grad && n.back) n.back();
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace ccomp
