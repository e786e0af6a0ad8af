#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccomp {

// Error taxonomy. Everything derives from Error so callers can catch broadly;
// the CLI maps each type to a named failure stage.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
  using Error::Error;
};
struct DomainError : Error {
  using Error::Error;
};
struct ContractError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct EncodeError : Error {
  using Error::Error;
};
struct DecodeError : Error {
  using Error::Error;
};
struct IncompatibilityError : DecodeError {
  using DecodeError::DecodeError;
};
struct CorruptionError : DecodeError {
  using DecodeError::DecodeError;
};

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

// Dense row-major tensor. Activations use channels-last (N,H,W,C) throughout.
template <typename T>
struct Tensor {
  Shape dims;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(Shape d) : dims(std::move(d)), v(static_cast<size_t>(numel(dims)), T(0)) {}
  Tensor(Shape d, std::vector<T> data) : dims(std::move(d)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel(dims))
      throw DimensionError("tensor data size " + std::to_string(v.size()) +
                           " does not match shape " + shape_str(dims));
  }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  int dim(int i) const { return dims[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(dims.size()); }
  bool same_shape(const Tensor& o) const { return dims == o.dims; }
  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  T& at4(int n, int h, int w, int c) {
    return v[((static_cast<size_t>(n) * dims[1] + h) * dims[2] + w) * dims[3] + c];
  }
  const T& at4(int n, int h, int w, int c) const {
    return v[((static_cast<size_t>(n) * dims[1] + h) * dims[2] + w) * dims[3] + c];
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.dims = dims;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
void check_rank(const Tensor<T>& t, int r, const char* what) {
  if (t.rank() != r)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) +
                         " tensor, got shape " + shape_str(t.dims));
}

}  // namespace ccomp
