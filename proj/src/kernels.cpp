#include "ccomp/kernels.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>

namespace ccomp {

template <>
void gemm<float>(bool ta, bool tb, int rows, int cols, int k, float alpha, const float* a, int lda,
                 const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, rows,
              cols, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

template <>
void gemm<double>(bool ta, bool tb, int rows, int cols, int k, double alpha, const double* a,
                  int lda, const double* b, int ldb, double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, rows,
              cols, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

namespace {

void check_conv_args(const Shape& x, const Shape& w, const Shape& b, const ConvSpec& cs) {
  if (x.size() != 4)
    throw DimensionError("conv2d: input must be (N,H,W,C), got " + shape_str(x));
  if (w.size() != 4)
    throw DimensionError("conv2d: weight must be (kh,kw,cin/groups,cout), got " + shape_str(w));
  if (cs.stride < 1) throw DomainError("conv2d: stride must be >= 1");
  if (cs.padding < 0) throw DomainError("conv2d: padding must be >= 0");
  const int cin = x[3], cing = w[2], cout = w[3];
  if (cs.groups < 1 || cin % cs.groups != 0 || cout % cs.groups != 0)
    throw DimensionError("conv2d: groups " + std::to_string(cs.groups) +
                         " does not divide cin " + std::to_string(cin) + " / cout " +
                         std::to_string(cout));
  if (cing != cin / cs.groups)
    throw DimensionError("conv2d: weight axis 2 is " + std::to_string(cing) +
                         " but cin/groups is " + std::to_string(cin / cs.groups));
  if (!b.empty() && (b.size() != 1 || b[0] != cout))
    throw DimensionError("conv2d: bias axis 0 is " + shape_str(b) + ", expected (" +
                         std::to_string(cout) + ")");
}

// im2col for channels-last input restricted to one channel group.
// out rows = N*OH*OW, row layout = (ky, kx, c_in_group).
template <typename T>
void im2col_group(const Tensor<T>& x, int g, int cing, const ConvSpec& cs, int kh, int kw, int oh,
                  int ow, T* col) {
  const int n = x.dims[0], h = x.dims[1], w = x.dims[2], cin = x.dims[3];
  const int c0 = g * cing;
  const int krow = kh * kw * cing;
  for (int in = 0; in < n; ++in) {
    const T* xb = x.v.data() + static_cast<size_t>(in) * h * w * cin;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T* row = col + (static_cast<size_t>(in) * oh * ow + static_cast<size_t>(oy) * ow + ox) * krow;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * cs.stride + ky - cs.padding;
          if (iy < 0 || iy >= h) {
            if (!cs.replicate_pad) {
              std::memset(row + static_cast<size_t>(ky) * kw * cing, 0, sizeof(T) * kw * cing);
              continue;
            }
            iy = iy < 0 ? 0 : h - 1;
          }
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * cs.stride + kx - cs.padding;
            T* dst = row + (static_cast<size_t>(ky) * kw + kx) * cing;
            if (ix < 0 || ix >= w) {
              if (!cs.replicate_pad) {
                std::memset(dst, 0, sizeof(T) * cing);
                continue;
              }
              ix = ix < 0 ? 0 : w - 1;
            }
            std::memcpy(dst, xb + (static_cast<size_t>(iy) * w + ix) * cin + c0,
                        sizeof(T) * cing);
          }
        }
      }
    }
  }
}

// scatter-add of column gradients back to the input layout
template <typename T>
void col2im_group(const T* col, int g, int cing, const ConvSpec& cs, int kh, int kw, int oh,
                  int ow, Tensor<T>& dx) {
  const int n = dx.dims[0], h = dx.dims[1], w = dx.dims[2], cin = dx.dims[3];
  const int c0 = g * cing;
  const int krow = kh * kw * cing;
  for (int in = 0; in < n; ++in) {
    T* xb = dx.v.data() + static_cast<size_t>(in) * h * w * cin;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* row =
            col + (static_cast<size_t>(in) * oh * ow + static_cast<size_t>(oy) * ow + ox) * krow;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * cs.stride + ky - cs.padding;
          if (iy < 0 || iy >= h) {
            if (!cs.replicate_pad) continue;
            iy = iy < 0 ? 0 : h - 1;
          }
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * cs.stride + kx - cs.padding;
            if (ix < 0 || ix >= w) {
              if (!cs.replicate_pad) continue;
              ix = ix < 0 ? 0 : w - 1;
            }
            const T* src = row + (static_cast<size_t>(ky) * kw + kx) * cing;
            T* dst = xb + (static_cast<size_t>(iy) * w + ix) * cin + c0;
            for (int c = 0; c < cing; ++c) dst[c] += src[c];
          }
        }
      }
    }
  }
}

template <typename T>
bool is_depthwise(const Shape& x, const Shape& w, const ConvSpec& cs) {
  return cs.groups == x[3] && w[3] == x[3] && w[2] == 1;
}

template <typename T>
void dwconv_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                    const ConvSpec& cs, Tensor<T>& y) {
  const int n = x.dims[0], h = x.dims[1], wd = x.dims[2], c = x.dims[3];
  const int kh = w.dims[0], kw = w.dims[1];
  const int oh = y.dims[1], ow = y.dims[2];
  for (int in = 0; in < n; ++in) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        T* out = &y.at4(in, oy, ox, 0);
        if (b.v.empty())
          std::memset(out, 0, sizeof(T) * c);
        else
          std::memcpy(out, b.v.data(), sizeof(T) * c);
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * cs.stride + ky - cs.padding;
          if (iy < 0 || iy >= h) {
            if (!cs.replicate_pad) continue;
            iy = iy < 0 ? 0 : h - 1;
          }
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * cs.stride + kx - cs.padding;
            if (ix < 0 || ix >= wd) {
              if (!cs.replicate_pad) continue;
              ix = ix < 0 ? 0 : wd - 1;
            }
            const T* xi = &x.at4(in, iy, ix, 0);
            const T* wi = w.v.data() + (static_cast<size_t>(ky) * kw + kx) * c;
            for (int ch = 0; ch < c; ++ch) out[ch] += xi[ch] * wi[ch];
          }
        }
      }
    }
  }
}

template <typename T>
void dwconv_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& cs,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int n = x.dims[0], h = x.dims[1], wd = x.dims[2], c = x.dims[3];
  const int kh = w.dims[0], kw = w.dims[1];
  const int oh = dy.dims[1], ow = dy.dims[2];
  if (db) {
    for (int in = 0; in < n; ++in)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          const T* g = &dy.at4(in, oy, ox, 0);
          for (int ch = 0; ch < c; ++ch) db->v[ch] += g[ch];
        }
  }
  for (int in = 0; in < n; ++in) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const T* g = &dy.at4(in, oy, ox, 0);
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * cs.stride + ky - cs.padding;
          if (iy < 0 || iy >= h) {
            if (!cs.replicate_pad) continue;
            iy = iy < 0 ? 0 : h - 1;
          }
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * cs.stride + kx - cs.padding;
            if (ix < 0 || ix >= wd) {
              if (!cs.replicate_pad) continue;
              ix = ix < 0 ? 0 : wd - 1;
            }
            const T* xi = &x.at4(in, iy, ix, 0);
            const T* wi = w.v.data() + (static_cast<size_t>(ky) * kw + kx) * c;
            if (dx) {
              T* dxi = &dx->at4(in, iy, ix, 0);
              for (int ch = 0; ch < c; ++ch) dxi[ch] += g[ch] * wi[ch];
            }
            if (dw) {
              T* dwi = dw->v.data() + (static_cast<size_t>(ky) * kw + kx) * c;
              for (int ch = 0; ch < c; ++ch) dwi[ch] += g[ch] * xi[ch];
            }
          }
        }
      }
    }
  }
}

template <typename T>
inline T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

constexpr double kLikelihoodFloor = 5.960464477539063e-08;  // 2^-24
constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

// Unit-bin Gaussian mass around residual r. Evaluated through the upper tail
// on the |r| side so the erf difference never cancels catastrophically.
inline double gaussian_bin_mass(double r, double sigma) {
  const double a = std::abs(r);
  const double lo = (a - 0.5) / sigma * kInvSqrt2;
  const double hi = (a + 0.5) / sigma * kInvSqrt2;
  return 0.5 * (std::erfc(lo) - std::erfc(hi));
}

}  // namespace

Shape conv2d_out_shape(const Shape& x, const Shape& w, const ConvSpec& cs) {
  const int oh = (x[1] + 2 * cs.padding - w[0]) / cs.stride + 1;
  const int ow = (x[2] + 2 * cs.padding - w[1]) / cs.stride + 1;
  if (oh < 1 || ow < 1)
    throw DimensionError("conv2d: kernel " + shape_str(w) + " does not fit input " +
                         shape_str(x) + " with padding " + std::to_string(cs.padding));
  return {x[0], oh, ow, w[3]};
}

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                         const ConvSpec& cs) {
  check_conv_args(x.dims, w.dims, b.dims, cs);
  Tensor<T> y(conv2d_out_shape(x.dims, w.dims, cs));
  const int kh = w.dims[0], kw = w.dims[1], cing = w.dims[2], cout = w.dims[3];
  const int oh = y.dims[1], ow = y.dims[2];
  const int rows = x.dims[0] * oh * ow;

  if (is_depthwise<T>(x.dims, w.dims, cs)) {
    dwconv_forward(x, w, b, cs, y);
    return y;
  }

  if (!b.v.empty()) {
    for (int rr = 0; rr < rows; ++rr)
      std::memcpy(y.v.data() + static_cast<size_t>(rr) * cout, b.v.data(), sizeof(T) * cout);
  }
  const int coutg = cout / cs.groups;
  const bool pointwise = (kh == 1 && kw == 1 && cs.stride == 1 && cs.padding == 0);
  std::vector<T> col;
  for (int g = 0; g < cs.groups; ++g) {
    const T* a;
    int lda;
    if (pointwise && cs.groups == 1) {
      a = x.v.data();
      lda = x.dims[3];
    } else {
      col.resize(static_cast<size_t>(rows) * kh * kw * cing);
      im2col_group(x, g, cing, cs, kh, kw, oh, ow, col.data());
      a = col.data();
      lda = kh * kw * cing;
    }
    gemm<T>(false, false, rows, coutg, kh * kw * cing, T(1), a, lda,
            w.v.data() + static_cast<size_t>(g) * coutg, cout, T(1),
            y.v.data() + static_cast<size_t>(g) * coutg, cout);
  }
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& cs,
                     const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int kh = w.dims[0], kw = w.dims[1], cing = w.dims[2], cout = w.dims[3];
  const int oh = dy.dims[1], ow = dy.dims[2];
  const int rows = x.dims[0] * oh * ow;

  if (db) {
    for (int rr = 0; rr < rows; ++rr) {
      const T* g = dy.v.data() + static_cast<size_t>(rr) * cout;
      for (int c = 0; c < cout; ++c) db->v[c] += g[c];
    }
  }
  if (is_depthwise<T>(x.dims, w.dims, cs)) {
    dwconv_backward(x, w, cs, dy, dx, dw, static_cast<Tensor<T>*>(nullptr));
    return;
  }

  const int coutg = cout / cs.groups;
  const int krow = kh * kw * cing;
  const bool pointwise = (kh == 1 && kw == 1 && cs.stride == 1 && cs.padding == 0);
  std::vector<T> col, dcol;
  for (int g = 0; g < cs.groups; ++g) {
    const T* a = nullptr;
    int lda = krow;
    if (dw) {
      if (pointwise && cs.groups == 1) {
        a = x.v.data();
        lda = x.dims[3];
      } else {
        col.resize(static_cast<size_t>(rows) * krow);
        im2col_group(x, g, cing, cs, kh, kw, oh, ow, col.data());
        a = col.data();
      }
      // dW[krow x coutg] += col^T [krow x rows] * dY[rows x coutg]
      gemm<T>(true, false, krow, coutg, rows, T(1), a, lda,
              dy.v.data() + static_cast<size_t>(g) * coutg, cout, T(1),
              dw->v.data() + static_cast<size_t>(g) * coutg, cout);
    }
    if (dx) {
      if (pointwise && cs.groups == 1) {
        // dX[rows x cin] += dY[rows x cout] * W^T[cout x cin]
        gemm<T>(false, true, rows, cing, coutg, T(1),
                dy.v.data() + static_cast<size_t>(g) * coutg, cout, w.v.data(), cout, T(1),
                dx->v.data(), x.dims[3]);
      } else {
        dcol.assign(static_cast<size_t>(rows) * krow, T(0));
        gemm<T>(false, true, rows, krow, coutg, T(1),
                dy.v.data() + static_cast<size_t>(g) * coutg, cout,
                w.v.data() + static_cast<size_t>(g) * coutg, cout, T(0), dcol.data(), krow);
        col2im_group(dcol.data(), g, cing, cs, kh, kw, oh, ow, *dx);
      }
    }
  }
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dims[1] != w.dims[0])
    throw DimensionError("linear: shapes " + shape_str(x.dims) + " x " + shape_str(w.dims));
  const int n = x.dims[0], fin = x.dims[1], fout = w.dims[1];
  Tensor<T> y({n, fout});
  if (!b.v.empty())
    for (int i = 0; i < n; ++i)
      std::memcpy(y.v.data() + static_cast<size_t>(i) * fout, b.v.data(), sizeof(T) * fout);
  gemm<T>(false, false, n, fout, fin, T(1), x.v.data(), fin, w.v.data(), fout, T(1), y.v.data(),
          fout);
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>* dw, Tensor<T>* db) {
  const int n = x.dims[0], fin = x.dims[1], fout = w.dims[1];
  if (db)
    for (int i = 0; i < n; ++i) {
      const T* g = dy.v.data() + static_cast<size_t>(i) * fout;
      for (int j = 0; j < fout; ++j) db->v[j] += g[j];
    }
  if (dw)
    gemm<T>(true, false, fin, fout, n, T(1), x.v.data(), fin, dy.v.data(), fout, T(1),
            dw->v.data(), fout);
  if (dx)
    gemm<T>(false, true, n, fin, fout, T(1), dy.v.data(), fout, w.v.data(), fout, T(1),
            dx->v.data(), fin);
}

template <typename T>
Tensor<T> upsample_nearest2x_forward(const Tensor<T>& x) {
  check_rank(x, 4, "upsample_nearest2x");
  const int n = x.dims[0], h = x.dims[1], w = x.dims[2], c = x.dims[3];
  Tensor<T> y({n, 2 * h, 2 * w, c});
  for (int in = 0; in < n; ++in)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        const T* src = &x.at4(in, iy, ix, 0);
        for (int dy2 = 0; dy2 < 2; ++dy2)
          for (int dx2 = 0; dx2 < 2; ++dx2)
            std::memcpy(&y.at4(in, 2 * iy + dy2, 2 * ix + dx2, 0), src, sizeof(T) * c);
      }
  return y;
}

template <typename T>
void upsample_nearest2x_backward(const Tensor<T>& dy, Tensor<T>& dx) {
  const int n = dx.dims[0], h = dx.dims[1], w = dx.dims[2], c = dx.dims[3];
  for (int in = 0; in < n; ++in)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        T* d = &dx.at4(in, iy, ix, 0);
        for (int dy2 = 0; dy2 < 2; ++dy2)
          for (int dx2 = 0; dx2 < 2; ++dx2) {
            const T* g = &dy.at4(in, 2 * iy + dy2, 2 * ix + dx2, 0);
            for (int ch = 0; ch < c; ++ch) d[ch] += g[ch];
          }
      }
}

template <typename T>
Tensor<T> depth_to_space_forward(const Tensor<T>& x, int r) {
  check_rank(x, 4, "depth_to_space");
  const int n = x.dims[0], h = x.dims[1], w = x.dims[2], c = x.dims[3];
  if (c % (r * r) != 0)
    throw DimensionError("depth_to_space: channels " + std::to_string(c) +
                         " not divisible by r^2=" + std::to_string(r * r));
  const int co = c / (r * r);
  Tensor<T> y({n, h * r, w * r, co});
  for (int in = 0; in < n; ++in)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        const T* src = &x.at4(in, iy, ix, 0);
        for (int by = 0; by < r; ++by)
          for (int bx = 0; bx < r; ++bx)
            std::memcpy(&y.at4(in, iy * r + by, ix * r + bx, 0),
                        src + (static_cast<size_t>(by) * r + bx) * co, sizeof(T) * co);
      }
  return y;
}

template <typename T>
void depth_to_space_backward(const Tensor<T>& dy, int r, Tensor<T>& dx) {
  const int n = dx.dims[0], h = dx.dims[1], w = dx.dims[2], c = dx.dims[3];
  const int co = c / (r * r);
  for (int in = 0; in < n; ++in)
    for (int iy = 0; iy < h; ++iy)
      for (int ix = 0; ix < w; ++ix) {
        T* d = &dx.at4(in, iy, ix, 0);
        for (int by = 0; by < r; ++by)
          for (int bx = 0; bx < r; ++bx) {
            const T* g = &dy.at4(in, iy * r + by, ix * r + bx, 0);
            T* dd = d + (static_cast<size_t>(by) * r + bx) * co;
            for (int ch = 0; ch < co; ++ch) dd[ch] += g[ch];
          }
      }
}

template <typename T>
Tensor<T> channel_norm_forward(const Tensor<T>& x, T eps) {
  check_rank(x, 4, "channel_norm");
  if (eps <= T(0)) throw DomainError("channel_norm: eps must be > 0");
  const int c = x.dims[3];
  const int64_t pos = x.size() / c;
  Tensor<T> y(x.dims);
  for (int64_t p = 0; p < pos; ++p) {
    const T* xi = x.v.data() + p * c;
    T* yi = y.v.data() + p * c;
    T mean = 0;
    for (int ch = 0; ch < c; ++ch) mean += xi[ch];
    mean /= static_cast<T>(c);
    T var = 0;
    for (int ch = 0; ch < c; ++ch) {
      const T d = xi[ch] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    for (int ch = 0; ch < c; ++ch) yi[ch] = (xi[ch] - mean) * inv;
  }
  return y;
}

template <typename T>
void channel_norm_backward(const Tensor<T>& x, T eps, const Tensor<T>& dy, Tensor<T>& dx) {
  const int c = x.dims[3];
  const int64_t pos = x.size() / c;
  for (int64_t p = 0; p < pos; ++p) {
    const T* xi = x.v.data() + p * c;
    const T* gi = dy.v.data() + p * c;
    T* di = dx.v.data() + p * c;
    T mean = 0;
    for (int ch = 0; ch < c; ++ch) mean += xi[ch];
    mean /= static_cast<T>(c);
    T var = 0;
    for (int ch = 0; ch < c; ++ch) {
      const T d = xi[ch] - mean;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T inv = T(1) / std::sqrt(var + eps);
    T gsum = 0, gysum = 0;
    for (int ch = 0; ch < c; ++ch) {
      gsum += gi[ch];
      gysum += gi[ch] * (xi[ch] - mean) * inv;
    }
    const T cg = T(1) / static_cast<T>(c);
    for (int ch = 0; ch < c; ++ch) {
      const T yh = (xi[ch] - mean) * inv;
      di[ch] += inv * (gi[ch] - cg * gsum - yh * cg * gysum);
    }
  }
}

template <typename T>
Tensor<T> affine_modulate_forward(const Tensor<T>& x, const Tensor<T>& scale,
                                  const Tensor<T>& shift) {
  check_rank(x, 4, "affine_modulate");
  const int n = x.dims[0], c = x.dims[3];
  if (scale.rank() != 2 || scale.dims[0] != n || scale.dims[1] != c || !scale.same_shape(shift))
    throw DimensionError("affine_modulate: scale/shift must be (N,C)=(" + std::to_string(n) +
                         "," + std::to_string(c) + "), got " + shape_str(scale.dims) + " and " +
                         shape_str(shift.dims));
  const int hw = x.dims[1] * x.dims[2];
  Tensor<T> y(x.dims);
  for (int in = 0; in < n; ++in) {
    const T* s = scale.v.data() + static_cast<size_t>(in) * c;
    const T* t = shift.v.data() + static_cast<size_t>(in) * c;
    for (int p = 0; p < hw; ++p) {
      const T* xi = x.v.data() + (static_cast<size_t>(in) * hw + p) * c;
      T* yi = y.v.data() + (static_cast<size_t>(in) * hw + p) * c;
      for (int ch = 0; ch < c; ++ch) yi[ch] = xi[ch] * (T(1) + s[ch]) + t[ch];
    }
  }
  return y;
}

template <typename T>
void affine_modulate_backward(const Tensor<T>& x, const Tensor<T>& scale, const Tensor<T>& dy,
                              Tensor<T>* dx, Tensor<T>* dscale, Tensor<T>* dshift) {
  const int n = x.dims[0], c = x.dims[3];
  const int hw = x.dims[1] * x.dims[2];
  for (int in = 0; in < n; ++in) {
    const T* s = scale.v.data() + static_cast<size_t>(in) * c;
    for (int p = 0; p < hw; ++p) {
      const size_t base = (static_cast<size_t>(in) * hw + p) * c;
      const T* xi = x.v.data() + base;
      const T* gi = dy.v.data() + base;
      if (dx) {
        T* di = dx->v.data() + base;
        for (int ch = 0; ch < c; ++ch) di[ch] += gi[ch] * (T(1) + s[ch]);
      }
      if (dscale) {
        T* ds = dscale->v.data() + static_cast<size_t>(in) * c;
        for (int ch = 0; ch < c; ++ch) ds[ch] += gi[ch] * xi[ch];
      }
      if (dshift) {
        T* dt = dshift->v.data() + static_cast<size_t>(in) * c;
        for (int ch = 0; ch < c; ++ch) dt[ch] += gi[ch];
      }
    }
  }
}

template <typename T>
Tensor<T> gelu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.dims);
  for (int64_t i = 0; i < x.size(); ++i) {
    const T xi = x.v[i];
    y.v[i] = xi * sigmoid(T(1.702) * xi);
  }
  return y;
}

template <typename T>
void gelu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  for (int64_t i = 0; i < x.size(); ++i) {
    const T xi = x.v[i];
    const T s = sigmoid(T(1.702) * xi);
    dx.v[i] += dy.v[i] * (s + xi * T(1.702) * s * (T(1) - s));
  }
}

template <typename T>
Tensor<T> softplus_forward(const Tensor<T>& x, T add) {
  Tensor<T> y(x.dims);
  for (int64_t i = 0; i < x.size(); ++i) {
    const T xi = x.v[i];
    // overflow-safe: softplus(x) = max(x,0) + log1p(exp(-|x|))
    y.v[i] = std::max(xi, T(0)) + std::log1p(std::exp(-std::abs(xi))) + add;
  }
  return y;
}

template <typename T>
void softplus_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  for (int64_t i = 0; i < x.size(); ++i) dx.v[i] += dy.v[i] * sigmoid(x.v[i]);
}

template <typename T>
Tensor<T> gaussian_bits_forward(const Tensor<T>& r, const Tensor<T>& sigma) {
  if (!r.same_shape(sigma))
    throw DimensionError("gaussian_bits: residual " + shape_str(r.dims) + " vs sigma " +
                         shape_str(sigma.dims));
  Tensor<T> y(r.dims);
  for (int64_t i = 0; i < r.size(); ++i) {
    const double sg = static_cast<double>(sigma.v[i]);
    if (sg <= 0.0) throw DomainError("gaussian_bits: sigma must be > 0");
    const double p = std::max(gaussian_bin_mass(static_cast<double>(r.v[i]), sg),
                              kLikelihoodFloor);
    y.v[i] = static_cast<T>(-std::log2(p));
  }
  return y;
}

template <typename T>
void gaussian_bits_backward(const Tensor<T>& r, const Tensor<T>& sigma, const Tensor<T>& dy,
                            Tensor<T>* dr, Tensor<T>* dsigma) {
  constexpr double kInvLn2 = 1.4426950408889634;
  for (int64_t i = 0; i < r.size(); ++i) {
    const double rv = static_cast<double>(r.v[i]);
    const double sg = static_cast<double>(sigma.v[i]);
    const double p = gaussian_bin_mass(rv, sg);
    if (p <= kLikelihoodFloor) continue;  // clamped region: zero gradient
    const double a = (rv + 0.5) / sg;
    const double b = (rv - 0.5) / sg;
    const double pa = kInvSqrt2Pi * std::exp(-0.5 * a * a);
    const double pb = kInvSqrt2Pi * std::exp(-0.5 * b * b);
    const double gscale = -kInvLn2 / p * static_cast<double>(dy.v[i]);
    if (dr) dr->v[i] += static_cast<T>(gscale * (pa - pb) / sg);
    if (dsigma) dsigma->v[i] += static_cast<T>(gscale * (b * pb - a * pa) / sg);
  }
}

template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& xs) {
  if (xs.empty()) throw ContractError("concat_channels: no inputs");
  const Shape& s0 = xs[0]->dims;
  int ctot = 0;
  for (const auto* t : xs) {
    check_rank(*t, 4, "concat_channels");
    if (t->dims[0] != s0[0] || t->dims[1] != s0[1] || t->dims[2] != s0[2])
      throw DimensionError("concat_channels: mismatched spatial dims " + shape_str(t->dims) +
                           " vs " + shape_str(s0));
    ctot += t->dims[3];
  }
  Tensor<T> y({s0[0], s0[1], s0[2], ctot});
  const int64_t pos = y.size() / ctot;
  for (int64_t p = 0; p < pos; ++p) {
    T* out = y.v.data() + p * ctot;
    for (const auto* t : xs) {
      const int c = t->dims[3];
      std::memcpy(out, t->v.data() + p * c, sizeof(T) * c);
      out += c;
    }
  }
  return y;
}

#define CCOMP_INSTANTIATE(T)                                                                     \
  template Tensor<T> conv2d_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                       const ConvSpec&);                                         \
  template void conv2d_backward<T>(const Tensor<T>&, const Tensor<T>&, const ConvSpec&,         \
                                   const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);       \
  template Tensor<T> linear_forward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template void linear_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                   Tensor<T>*, Tensor<T>*, Tensor<T>*);                          \
  template Tensor<T> upsample_nearest2x_forward<T>(const Tensor<T>&);                           \
  template void upsample_nearest2x_backward<T>(const Tensor<T>&, Tensor<T>&);                   \
  template Tensor<T> depth_to_space_forward<T>(const Tensor<T>&, int);                          \
  template void depth_to_space_backward<T>(const Tensor<T>&, int, Tensor<T>&);                  \
  template Tensor<T> channel_norm_forward<T>(const Tensor<T>&, T);                              \
  template void channel_norm_backward<T>(const Tensor<T>&, T, const Tensor<T>&, Tensor<T>&);    \
  template Tensor<T> affine_modulate_forward<T>(const Tensor<T>&, const Tensor<T>&,             \
                                                const Tensor<T>&);                              \
  template void affine_modulate_backward<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                            const Tensor<T>&, Tensor<T>*, Tensor<T>*,           \
                                            Tensor<T>*);                                        \
  template Tensor<T> gelu_forward<T>(const Tensor<T>&);                                         \
  template void gelu_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);               \
  template Tensor<T> softplus_forward<T>(const Tensor<T>&, T);                                  \
  template void softplus_backward<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);           \
  template Tensor<T> gaussian_bits_forward<T>(const Tensor<T>&, const Tensor<T>&);              \
  template void gaussian_bits_backward<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          Tensor<T>*, Tensor<T>*);                              \
  template Tensor<T> concat_channels<T>(const std::vector<const Tensor<T>*>&);

CCOMP_INSTANTIATE(float)
CCOMP_INSTANTIATE(double)
#undef CCOMP_INSTANTIATE

}  // namespace ccomp
