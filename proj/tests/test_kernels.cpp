#include <cstring>
#include <vector>

#include "cissl/kernels.hpp"
#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"
#include "doctest.h"

using cissl::DTensor;
using cissl::Rng;
using cissl::Tensor;
namespace kn = cissl::kernels;

namespace {

std::vector<float> random_floats(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.normal());
  return v;
}

std::vector<double> random_doubles(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

template <typename T>
bool bit_identical(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("gemm_nn matches a naive triple loop") {
  Rng rng(11);
  const int m = 7, k = 13, n = 5;
  auto a = random_doubles(std::size_t(m) * k, rng);
  auto b = random_doubles(std::size_t(k) * n, rng);
  std::vector<double> c(std::size_t(m) * n, -1.0);
  kn::gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += a[std::size_t(i) * k + t] * b[std::size_t(t) * n + j];
      CHECK(c[std::size_t(i) * n + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("parallel gemm is bit-identical to the serial reference") {
  Rng rng(12);
  // deliberately awkward sizes so any blocking/remainder path gets exercised
  const int shapes[][3] = {{1, 1, 1}, {2, 3, 4}, {7, 13, 5}, {33, 17, 9}, {64, 64, 64}, {65, 31, 63}};
  for (const auto& s : shapes) {
    const int m = s[0], k = s[1], n = s[2];
    auto a = random_floats(std::size_t(m) * k, rng);
    auto b = random_floats(std::size_t(k) * n, rng);

    std::vector<float> c_par(std::size_t(m) * n), c_ser(std::size_t(m) * n);
    kn::gemm_nn(a.data(), b.data(), c_par.data(), m, k, n);
    kn::serial::gemm_nn(a.data(), b.data(), c_ser.data(), m, k, n);
    CHECK(bit_identical(c_par, c_ser));

    auto bt = random_floats(std::size_t(n) * k, rng);  // N x K for nt
    std::vector<float> d_par(std::size_t(m) * n), d_ser(std::size_t(m) * n);
    kn::gemm_nt(a.data(), bt.data(), d_par.data(), m, k, n);
    kn::serial::gemm_nt(a.data(), bt.data(), d_ser.data(), m, k, n);
    CHECK(bit_identical(d_par, d_ser));

    auto at = random_floats(std::size_t(k) * m, rng);  // K x M for tn
    std::vector<float> e_par(std::size_t(m) * n), e_ser(std::size_t(m) * n);
    kn::gemm_tn(at.data(), b.data(), e_par.data(), m, k, n);
    kn::serial::gemm_tn(at.data(), b.data(), e_ser.data(), m, k, n);
    CHECK(bit_identical(e_par, e_ser));
  }
}

TEST_CASE("gemm_nt and gemm_tn agree with explicit transposition") {
  Rng rng(13);
  const int m = 6, k = 9, n = 4;
  auto a = random_doubles(std::size_t(m) * k, rng);
  auto b = random_doubles(std::size_t(k) * n, rng);

  std::vector<double> ref(std::size_t(m) * n);
  kn::gemm_nn(a.data(), b.data(), ref.data(), m, k, n);

  // B^T laid out N x K, consumed by gemm_nt
  std::vector<double> bt(std::size_t(n) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < n; ++j) bt[std::size_t(j) * k + i] = b[std::size_t(i) * n + j];
  std::vector<double> via_nt(std::size_t(m) * n);
  kn::gemm_nt(a.data(), bt.data(), via_nt.data(), m, k, n);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(via_nt[i] == doctest::Approx(ref[i]).epsilon(1e-12));

  // A^T laid out K x M, consumed by gemm_tn
  std::vector<double> at(std::size_t(k) * m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < k; ++j) at[std::size_t(j) * m + i] = a[std::size_t(i) * k + j];
  std::vector<double> via_tn(std::size_t(m) * n);
  kn::gemm_tn(at.data(), b.data(), via_tn.data(), m, k, n);
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(via_tn[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("conv_out_extent hand values") {
  CHECK(kn::conv_out_extent(32, 3, 1, 1) == 32);
  CHECK(kn::conv_out_extent(32, 3, 2, 1) == 16);
  CHECK(kn::conv_out_extent(32, 1, 1, 0) == 32);
  CHECK(kn::conv_out_extent(5, 3, 1, 0) == 3);
  CHECK(kn::conv_out_extent(4, 2, 2, 0) == 2);
}

TEST_CASE("im2col on a tiny image matches patches read off by hand") {
  // one 1-channel 3x3 image, 2x2 kernel, stride 1, no padding -> 4 patches
  const float x[9] = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  const int ho = kn::conv_out_extent(3, 2, 1, 0);
  const int wo = kn::conv_out_extent(3, 2, 1, 0);
  REQUIRE(ho == 2);
  REQUIRE(wo == 2);
  std::vector<float> cols(std::size_t(1 * 2 * 2) * std::size_t(1 * ho * wo), -1.f);
  kn::im2col_batch(x, 1, 1, 3, 3, 2, 1, 0, cols.data());
  // rows: kernel offsets (0,0),(0,1),(1,0),(1,1); cols: output positions
  const float expect[4][4] = {
      {1, 2, 4, 5},
      {2, 3, 5, 6},
      {4, 5, 7, 8},
      {5, 6, 8, 9},
  };
  for (int r = 0; r < 4; ++r)
    for (int p = 0; p < 4; ++p) CHECK(cols[std::size_t(r) * 4 + p] == expect[r][p]);
}

TEST_CASE("im2col zero padding contributes zeros, not garbage") {
  const float x[4] = {1, 2, 3, 4};  // 1x1x2x2
  const int ho = kn::conv_out_extent(2, 3, 1, 1);
  REQUIRE(ho == 2);
  std::vector<float> cols(std::size_t(9) * 4, -1.f);
  kn::im2col_batch(x, 1, 1, 2, 2, 3, 1, 1, cols.data());
  // center tap of the first output position is x[0][0] = 1
  CHECK(cols[std::size_t(4) * 4 + 0] == 1.f);
  // top-left tap of the first output position falls on padding
  CHECK(cols[std::size_t(0) * 4 + 0] == 0.f);
  double total = 0.0;
  for (float v : cols) total += v;
  // every pixel appears in as many patches as overlap it; with full 3x3
  // coverage of a 2x2 image each pixel lands in all 4 patches
  CHECK(total == doctest::Approx(4.0 * (1 + 2 + 3 + 4)));
}

TEST_CASE("col2im is the adjoint of im2col") {
  Rng rng(14);
  const int b = 2, c = 3, h = 8, w = 6, k = 3, stride = 2, pad = 1;
  const int ho = kn::conv_out_extent(h, k, stride, pad);
  const int wo = kn::conv_out_extent(w, k, stride, pad);
  const std::size_t xsize = std::size_t(b) * c * h * w;
  const std::size_t csize = std::size_t(c) * k * k * std::size_t(b) * ho * wo;

  auto x = random_floats(xsize, rng);
  auto g = random_floats(csize, rng);

  std::vector<float> cols(csize);
  kn::im2col_batch(x.data(), b, c, h, w, k, stride, pad, cols.data());
  std::vector<float> dx(xsize);
  kn::col2im_batch(g.data(), b, c, h, w, k, stride, pad, dx.data());

  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < csize; ++i) lhs += double(cols[i]) * double(g[i]);
  for (std::size_t i = 0; i < xsize; ++i) rhs += double(x[i]) * double(dx[i]);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
}

TEST_CASE("im2col/col2im parallel paths are bit-identical to serial") {
  Rng rng(15);
  const int b = 3, c = 2, h = 7, w = 9, k = 3, stride = 2, pad = 1;
  const int ho = kn::conv_out_extent(h, k, stride, pad);
  const int wo = kn::conv_out_extent(w, k, stride, pad);
  const std::size_t xsize = std::size_t(b) * c * h * w;
  const std::size_t csize = std::size_t(c) * k * k * std::size_t(b) * ho * wo;

  auto x = random_floats(xsize, rng);
  std::vector<float> cols_par(csize), cols_ser(csize);
  kn::im2col_batch(x.data(), b, c, h, w, k, stride, pad, cols_par.data());
  kn::serial::im2col_batch(x.data(), b, c, h, w, k, stride, pad, cols_ser.data());
  CHECK(bit_identical(cols_par, cols_ser));

  auto g = random_floats(csize, rng);
  std::vector<float> dx_par(xsize), dx_ser(xsize);
  kn::col2im_batch(g.data(), b, c, h, w, k, stride, pad, dx_par.data());
  kn::serial::col2im_batch(g.data(), b, c, h, w, k, stride, pad, dx_ser.data());
  CHECK(bit_identical(dx_par, dx_ser));
}

TEST_CASE("pairwise_sqdist matches direct distance loops and its serial twin") {
  Rng rng(16);
  const int n = 17, d = 5, k = 4;
  auto x = random_doubles(std::size_t(n) * d, rng);
  auto cent = random_doubles(std::size_t(k) * d, rng);

  std::vector<double> out(std::size_t(n) * k), out_ser(std::size_t(n) * k);
  kn::pairwise_sqdist(x.data(), n, d, cent.data(), k, out.data());
  kn::serial::pairwise_sqdist(x.data(), n, d, cent.data(), k, out_ser.data());
  CHECK(bit_identical(out, out_ser));

  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      double acc = 0.0;
      for (int t = 0; t < d; ++t) {
        const double diff = x[std::size_t(i) * d + t] - cent[std::size_t(j) * d + t];
        acc += diff * diff;
      }
      CHECK(out[std::size_t(i) * k + j] == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("pairwise_sqdist of a point against itself is zero") {
  const double x[3] = {1.5, -2.0, 0.25};
  double out = -1.0;
  kn::pairwise_sqdist(x, 1, 3, x, 1, &out);
  CHECK(out == 0.0);
}

TEST_CASE("tensor gemm wrappers reject incompatible shapes") {
  Tensor a({2, 3});
  Tensor b({4, 5});
  CHECK_THROWS_AS(kn::gemm_nn(a, b), cissl::ShapeError);
  CHECK_THROWS_AS(kn::gemm_nt(a, b), cissl::ShapeError);
  CHECK_THROWS_AS(kn::gemm_tn(a, b), cissl::ShapeError);
  Tensor r1({6});
  CHECK_THROWS_AS(kn::gemm_nn(r1, b), cissl::ShapeError);
}

TEST_CASE("tensor gemm wrappers produce the right shapes and values") {
  Tensor a({2, 3});
  Tensor b({3, 2});
  for (int i = 0; i < 6; ++i) {
    a.at(i) = float(i + 1);       // [[1,2,3],[4,5,6]]
    b.at(i) = float(6 - i);       // [[6,5],[4,3],[2,1]]
  }
  Tensor c = kn::gemm_nn(a, b);
  REQUIRE(c.shape == std::vector<int>({2, 2}));
  CHECK(c.at(0, 0) == 20.f);   // 1*6+2*4+3*2
  CHECK(c.at(0, 1) == 14.f);   // 1*5+2*3+3*1
  CHECK(c.at(1, 0) == 56.f);   // 4*6+5*4+6*2
  CHECK(c.at(1, 1) == 41.f);   // 4*5+5*3+6*1
}

}  // TEST_SUITE
