#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cissl/error.hpp"

namespace cissl {

// Dense row-major tensor, rank 1..4. Float32 for network state, float64 for
// objectives and clustering where the tolerance budget demands it.
template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> v;

  TensorT() = default;
  explicit TensorT(std::vector<int> s) : shape(std::move(s)), v(std::size_t(count(shape)), T(0)) {}

  static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }

  static long count(const std::vector<int>& s) {
    long n = 1;
    for (const int d : s) n *= d;
    return n;
  }

  long numel() const { return long(v.size()); }
  int rank() const { return int(shape.size()); }
  int dim(int i) const { return shape[std::size_t(i)]; }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  T& at(int i) { return v[std::size_t(i)]; }
  const T& at(int i) const { return v[std::size_t(i)]; }

  T& at(int i, int j) { return v[std::size_t(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return v[std::size_t(i) * shape[1] + j]; }

  T& at(int b, int c, int h, int w) {
    return v[((std::size_t(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }
  const T& at(int b, int c, int h, int w) const {
    return v[((std::size_t(b) * shape[1] + c) * shape[2] + h) * shape[3] + w];
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }
  void zero() { fill(T(0)); }

  bool finite() const {
    for (const T x : v)
      if (!std::isfinite(double(x))) return false;
    return true;
  }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

inline void require_shape(const Tensor& t, const std::vector<int>& shape, const char* what) {
  if (t.shape != shape) throw ShapeError(std::string(what) + ": tensor shape mismatch");
}

template <typename B, typename A>
TensorT<B> cast_tensor(const TensorT<A>& t) {
  TensorT<B> out;
  out.shape = t.shape;
  out.v.resize(t.v.size());
  for (std::size_t i = 0; i < t.v.size(); ++i) out.v[i] = B(t.v[i]);
  return out;
}

}  // namespace cissl
