#include "cissl/kernels.hpp"

#include <cstddef>
#include <cstring>

namespace cissl::kernels {

namespace {

template <typename T>
void gemm_nn_impl(const T* a, const T* b, T* c, int m, int k, int n, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < m; ++i) {
    T* crow = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = T(0);
    const T* arow = a + std::size_t(i) * k;
    for (int p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt_impl(const T* a, const T* b, T* c, int m, int k, int n, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < m; ++i) {
    const T* arow = a + std::size_t(i) * k;
    T* crow = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + std::size_t(j) * k;
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] = acc;
    }
  }
}

template <typename T>
void gemm_tn_impl(const T* a, const T* b, T* c, int m, int k, int n, bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < m; ++i) {
    T* crow = c + std::size_t(i) * n;
    for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int p = 0; p < k; ++p) {
      const T av = a[std::size_t(p) * m + i];
      const T* brow = b + std::size_t(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void im2col_one(const float* im, int c, int h, int w, int k, int stride, int pad, float* cols,
                std::size_t ld, std::size_t col0) {
  const int ho = conv_out_extent(h, k, stride, pad);
  const int wo = conv_out_extent(w, k, stride, pad);
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const std::size_t row = std::size_t((ch * k + ki) * k + kj);
        float* dst = cols + row * ld + col0;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            const bool in = ih >= 0 && ih < h && iw >= 0 && iw < w;
            dst[oh * wo + ow] = in ? im[(std::size_t(ch) * h + ih) * w + iw] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_one(const float* cols, int c, int h, int w, int k, int stride, int pad, float* dim,
                std::size_t ld, std::size_t col0) {
  const int ho = conv_out_extent(h, k, stride, pad);
  const int wo = conv_out_extent(w, k, stride, pad);
  std::memset(dim, 0, sizeof(float) * std::size_t(c) * h * w);
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const std::size_t row = std::size_t((ch * k + ki) * k + kj);
        const float* src = cols + row * ld + col0;
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= h) continue;
          for (int ow = 0; ow < wo; ++ow) {
            const int iw = ow * stride - pad + kj;
            if (iw < 0 || iw >= w) continue;
            dim[(std::size_t(ch) * h + ih) * w + iw] += src[oh * wo + ow];
          }
        }
      }
    }
  }
}

void im2col_batch_impl(const float* x, int b, int c, int h, int w, int k, int stride, int pad,
                       float* cols, bool parallel) {
  const int ho = conv_out_extent(h, k, stride, pad);
  const int wo = conv_out_extent(w, k, stride, pad);
  const std::size_t p = std::size_t(ho) * wo;
  const std::size_t ld = p * b;
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < b; ++i)
    im2col_one(x + std::size_t(i) * c * h * w, c, h, w, k, stride, pad, cols, ld, p * i);
}

void col2im_batch_impl(const float* cols, int b, int c, int h, int w, int k, int stride, int pad,
                       float* dx, bool parallel) {
  const int ho = conv_out_extent(h, k, stride, pad);
  const int wo = conv_out_extent(w, k, stride, pad);
  const std::size_t p = std::size_t(ho) * wo;
  const std::size_t ld = p * b;
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < b; ++i)
    col2im_one(cols, c, h, w, k, stride, pad, dx + std::size_t(i) * c * h * w, ld, p * i);
}

void pairwise_sqdist_impl(const double* x, int n, int d, const double* cent, int k, double* out,
                          bool parallel) {
#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < n; ++i) {
    const double* xr = x + std::size_t(i) * d;
    double* orow = out + std::size_t(i) * k;
    for (int j = 0; j < k; ++j) {
      const double* cr = cent + std::size_t(j) * d;
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        const double diff = xr[t] - cr[t];
        acc += diff * diff;
      }
      orow[j] = acc;
    }
  }
}

}  // namespace

template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  gemm_nn_impl(a, b, c, m, k, n, true);
}
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
  gemm_nt_impl(a, b, c, m, k, n, true);
}
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
  gemm_tn_impl(a, b, c, m, k, n, true);
}

void im2col_batch(const float* x, int b, int c, int h, int w, int k, int stride, int pad,
                  float* cols) {
  im2col_batch_impl(x, b, c, h, w, k, stride, pad, cols, true);
}
void col2im_batch(const float* cols, int b, int c, int h, int w, int k, int stride, int pad,
                  float* dx) {
  col2im_batch_impl(cols, b, c, h, w, k, stride, pad, dx, true);
}
void pairwise_sqdist(const double* x, int n, int d, const double* cent, int k, double* out) {
  pairwise_sqdist_impl(x, n, d, cent, k, out, true);
}

namespace serial {
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int m, int k, int n) {
  gemm_nn_impl(a, b, c, m, k, n, false);
}
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, int m, int k, int n) {
  gemm_nt_impl(a, b, c, m, k, n, false);
}
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, int m, int k, int n) {
  gemm_tn_impl(a, b, c, m, k, n, false);
}
void im2col_batch(const float* x, int b, int c, int h, int w, int k, int stride, int pad,
                  float* cols) {
  im2col_batch_impl(x, b, c, h, w, k, stride, pad, cols, false);
}
void col2im_batch(const float* cols, int b, int c, int h, int w, int k, int stride, int pad,
                  float* dx) {
  col2im_batch_impl(cols, b, c, h, w, k, stride, pad, dx, false);
}
void pairwise_sqdist(const double* x, int n, int d, const double* cent, int k, double* out) {
  pairwise_sqdist_impl(x, n, d, cent, k, out, false);
}

template void gemm_nn<float>(const float*, const float*, float*, int, int, int);
template void gemm_nn<double>(const double*, const double*, double*, int, int, int);
template void gemm_nt<float>(const float*, const float*, float*, int, int, int);
template void gemm_nt<double>(const double*, const double*, double*, int, int, int);
template void gemm_tn<float>(const float*, const float*, float*, int, int, int);
template void gemm_tn<double>(const double*, const double*, double*, int, int, int);
}  // namespace serial

template void gemm_nn<float>(const float*, const float*, float*, int, int, int);
template void gemm_nn<double>(const double*, const double*, double*, int, int, int);
template void gemm_nt<float>(const float*, const float*, float*, int, int, int);
template void gemm_nt<double>(const double*, const double*, double*, int, int, int);
template void gemm_tn<float>(const float*, const float*, float*, int, int, int);
template void gemm_tn<double>(const double*, const double*, double*, int, int, int);

}  // namespace cissl::kernels
