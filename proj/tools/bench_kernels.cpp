// Timing harness for the hot numeric kernels: the OpenMP builds against the
// serial reference, with a bit-identity check on every case. Output is one
// table row per kernel/size.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "cissl/kernels.hpp"
#include "cissl/rng.hpp"

using namespace cissl;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> random_vec(std::size_t n, Rng& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = float(rng.normal());
  return v;
}

std::vector<double> random_dvec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void row(const std::string& name, double serial_ms, double parallel_ms,
         bool identical) {
  std::printf("%-28s %10.3f ms %10.3f ms %7.2fx   %s\n", name.c_str(),
              serial_ms, parallel_ms, serial_ms / parallel_ms,
              identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  int reps = 5;
  if (argc > 1) reps = std::max(1, std::atoi(argv[1]));
  Rng rng(7);

  std::printf("%-28s %13s %13s %9s   %s\n", "kernel", "serial", "parallel",
              "speedup", "check");

  for (int n : {64, 128, 256}) {
    auto a = random_vec(std::size_t(n) * n, rng);
    auto b = random_vec(std::size_t(n) * n, rng);
    std::vector<float> c_ser(std::size_t(n) * n), c_par(std::size_t(n) * n);
    double s = time_ms(reps, [&] {
      kernels::serial::gemm_nn(a.data(), b.data(), c_ser.data(), n, n, n);
    });
    double p = time_ms(reps, [&] {
      kernels::gemm_nn(a.data(), b.data(), c_par.data(), n, n, n);
    });
    bool same = std::memcmp(c_ser.data(), c_par.data(),
                            c_ser.size() * sizeof(float)) == 0;
    row("gemm_nn " + std::to_string(n) + "^3", s, p, same);
  }

  {
    int bsz = 16, c = 16, h = 32, w = 32, k = 3, stride = 1, pad = 1;
    int p_out = kernels::conv_out_extent(h, k, stride, pad) *
                kernels::conv_out_extent(w, k, stride, pad);
    auto x = random_vec(std::size_t(bsz) * c * h * w, rng);
    std::vector<float> cols_ser(std::size_t(c) * k * k * bsz * p_out);
    std::vector<float> cols_par(cols_ser.size());
    double s = time_ms(reps, [&] {
      kernels::serial::im2col_batch(x.data(), bsz, c, h, w, k, stride, pad,
                                    cols_ser.data());
    });
    double p = time_ms(reps, [&] {
      kernels::im2col_batch(x.data(), bsz, c, h, w, k, stride, pad,
                            cols_par.data());
    });
    bool same = std::memcmp(cols_ser.data(), cols_par.data(),
                            cols_ser.size() * sizeof(float)) == 0;
    row("im2col 16x16x32x32 k3", s, p, same);

    std::vector<float> x_ser(x.size()), x_par(x.size());
    s = time_ms(reps, [&] {
      kernels::serial::col2im_batch(cols_ser.data(), bsz, c, h, w, k, stride,
                                    pad, x_ser.data());
    });
    p = time_ms(reps, [&] {
      kernels::col2im_batch(cols_ser.data(), bsz, c, h, w, k, stride, pad,
                            x_par.data());
    });
    same = std::memcmp(x_ser.data(), x_par.data(),
                       x_ser.size() * sizeof(float)) == 0;
    row("col2im 16x16x32x32 k3", s, p, same);
  }

  {
    int n = 2048, d = 64, k = 16;
    auto x = random_dvec(std::size_t(n) * d, rng);
    auto cent = random_dvec(std::size_t(k) * d, rng);
    std::vector<double> out_ser(std::size_t(n) * k), out_par(std::size_t(n) * k);
    double s = time_ms(reps, [&] {
      kernels::serial::pairwise_sqdist(x.data(), n, d, cent.data(), k,
                                       out_ser.data());
    });
    double p = time_ms(reps, [&] {
      kernels::pairwise_sqdist(x.data(), n, d, cent.data(), k, out_par.data());
    });
    bool same = std::memcmp(out_ser.data(), out_par.data(),
                            out_ser.size() * sizeof(double)) == 0;
    row("pairwise_sqdist 2048x64x16", s, p, same);
  }

  return 0;
}
