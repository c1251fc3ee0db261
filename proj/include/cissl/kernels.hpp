#pragma once

#include "cissl/error.hpp"
#include "cissl/tensor.hpp"

namespace cissl::kernels {

// Dense kernels backing the conv/linear layers, the loss similarity matrices
// and the k-means assignment step. Each parallel kernel computes every output
// element with a fixed serial accumulation order, so results are bit-identical
// to the serial reference below for any thread count.

// C[M x N] = A[M x K] * B[K x N]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n);

// C[M x N] = A[M x K] * B[N x K]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n);

// C[M x N] = A[K x M]^T * B[K x N]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n);

// Lowers a batch of images (B,C,H,W) into a column matrix of shape
// (C*k*k) x (B*P) with P = Ho*Wo; column index is b*P + (oh*Wo + ow).
void im2col_batch(const float* x, int b, int c, int h, int w, int k, int stride, int pad,
                  float* cols);

// Adjoint of im2col_batch: scatters column gradients back to (B,C,H,W).
// Overwrites dx.
void col2im_batch(const float* cols, int b, int c, int h, int w, int k, int stride, int pad,
                  float* dx);

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// out[n][j] = squared L2 distance between row n of X (N x D) and row j of C (K x D).
void pairwise_sqdist(const double* x, int n, int d, const double* cent, int k, double* out);

// Tensor-shaped wrappers over the pointer kernels.
template <typename T>
TensorT<T> gemm_nn(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0])
    throw ShapeError("gemm_nn: incompatible shapes");
  TensorT<T> c = TensorT<T>::zeros({a.shape[0], b.shape[1]});
  gemm_nn(a.v.data(), b.v.data(), c.v.data(), a.shape[0], a.shape[1], b.shape[1]);
  return c;
}

template <typename T>
TensorT<T> gemm_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1])
    throw ShapeError("gemm_nt: incompatible shapes");
  TensorT<T> c = TensorT<T>::zeros({a.shape[0], b.shape[0]});
  gemm_nt(a.v.data(), b.v.data(), c.v.data(), a.shape[0], a.shape[1], b.shape[0]);
  return c;
}

template <typename T>
TensorT<T> gemm_tn(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[0] != b.shape[0])
    throw ShapeError("gemm_tn: incompatible shapes");
  TensorT<T> c = TensorT<T>::zeros({a.shape[1], b.shape[1]});
  gemm_tn(a.v.data(), b.v.data(), c.v.data(), a.shape[1], a.shape[0], b.shape[1]);
  return c;
}

// Serial reference implementations, used by the test suite and the kernel
// benchmark. Kept free of OpenMP on purpose.
namespace serial {
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n);
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n);
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n);
void im2col_batch(const float* x, int b, int c, int h, int w, int k, int stride, int pad,
                  float* cols);
void col2im_batch(const float* cols, int b, int c, int h, int w, int k, int stride, int pad,
                  float* dx);
void pairwise_sqdist(const double* x, int n, int d, const double* cent, int k, double* out);
}  // namespace serial

}  // namespace cissl::kernels
