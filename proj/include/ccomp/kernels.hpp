#pragma once

#include "ccomp/common.hpp"

namespace ccomp {

// Forward/backward compute kernels on channels-last (N,H,W,C) tensors.
// The autodiff graph wraps these; the inference encode/decode paths call them
// directly, so both sides run the exact same arithmetic.
//
// conv2d weight layout: (kh, kw, c_in/groups, c_out), flattened row-major.
// That order makes im2col columns line up with the weight matrix with no
// repacking: rows = (kh*kw*cin_g), cols = c_out.

// C[rows x cols] = A[rows x k] * B[k x cols], row-major, optional transposes
// and accumulation. Backed by cblas_{s,d}gemm.
template <typename T>
void gemm(bool trans_a, bool trans_b, int rows, int cols, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc);

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
  // replicate (clamp-to-edge) padding keeps constant feature maps constant,
  // which the fully-convolutional scaling contract relies on
  bool replicate_pad = false;
};

Shape conv2d_out_shape(const Shape& x, const Shape& w, const ConvSpec& cs);

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& cs);

// Accumulates into any of dx/dw/db that are non-null (they must be pre-sized).
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& cs,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db);

// y = x @ w + b with x (N,F_in), w (F_in,F_out), b (F_out)
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* db);

template <typename T>
Tensor<T> upsample_nearest2x_forward(const Tensor<T>& x);
template <typename T>
void upsample_nearest2x_backward(const Tensor<T>& dy, Tensor<T>& dx);

// (N,H,W,C*r*r) -> (N,H*r,W*r,C); inverse permutation for backward
template <typename T>
Tensor<T> depth_to_space_forward(const Tensor<T>& x, int r);
template <typename T>
void depth_to_space_backward(const Tensor<T>& dy, int r, Tensor<T>& dx);

// Normalizes each (n,h,w) position over channels to zero mean / unit variance.
template <typename T>
Tensor<T> channel_norm_forward(const Tensor<T>& x, T eps);
template <typename T>
void channel_norm_backward(const Tensor<T>& x, T eps, const Tensor<T>& dy, Tensor<T>& dx);

// y = x * (1 + scale) + shift with per-item per-channel scale/shift (N,C)
template <typename T>
Tensor<T> affine_modulate_forward(const Tensor<T>& x, const Tensor<T>& scale,
                                  const Tensor<T>& shift);
template <typename T>
void affine_modulate_backward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& dy,
                              Tensor<T>* dx, Tensor<T>* dscale, Tensor<T>* dshift);

// GELU approximated as x * sigmoid(1.702 x)
template <typename T>
Tensor<T> gelu_forward(const Tensor<T>& x);
template <typename T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

template <typename T>
Tensor<T> softplus_forward(const Tensor<T>& x, T add);
template <typename T>
void softplus_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

// Elementwise bits of a discretized (unit-bin) Gaussian evaluated at residual r:
// bits = -log2( Phi((r+.5)/sigma) - Phi((r-.5)/sigma) ), likelihood floored at 2^-24.
template <typename T>
Tensor<T> gaussian_bits_forward(const Tensor<T>& r, const Tensor<T>& sigma);
template <typename T>
void gaussian_bits_backward(const Tensor<T>& r, const Tensor<T>& sigma, const Tensor<T>& dy,
                            Tensor<T>* dr, Tensor<T>* dsigma);

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs);

}  // namespace ccomp
