#include <cmath>
#include <cstdint>

#include "cissl/augment.hpp"
#include "cissl/error.hpp"
#include "cissl/rng.hpp"
#include "doctest.h"

using namespace cissl::augment;
using cissl::Rng;
using cissl::Tensor;
using cissl::data::ImageRecord;

namespace {

ImageRecord ramp_record(int h, int w) {
  ImageRecord rec;
  rec.label = 0;
  rec.pixels.resize(std::size_t(h) * w * 3);
  for (std::size_t i = 0; i < rec.pixels.size(); ++i)
    rec.pixels[i] = std::uint8_t((i * 13 + 5) % 256);
  return rec;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("identity policy with unit normalization reproduces pixels over 255") {
  // square input: the unit-scale crop then resolves to the full image exactly
  const int h = 6, w = 6;
  ImageRecord rec = ramp_record(h, w);
  Rng rng(3);
  Tensor v = single_view(rec, h, w, identity_policy(), rng);
  REQUIRE(v.shape == std::vector<int>({3, h, w}));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t idx = std::size_t(c) * h * w + std::size_t(y) * w + x;
        const float expect = float(rec.pixels[idx]) / 255.f;
        CHECK(v.v[idx] == expect);  // exact: no resampling, no normalization shift
      }
}

TEST_CASE("eval_view applies (x/255 - mean) / std channelwise") {
  const int h = 4, w = 4;
  ImageRecord rec = ramp_record(h, w);
  Normalization n;
  n.mean = {0.5f, 0.25f, 0.75f};
  n.std = {2.0f, 0.5f, 0.25f};
  Tensor v = eval_view(rec, h, w, n);
  REQUIRE(v.shape == std::vector<int>({3, h, w}));
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < h * w; ++i) {
      const std::size_t idx = std::size_t(c) * h * w + std::size_t(i);
      const float expect = (float(rec.pixels[idx]) / 255.f - n.mean[std::size_t(c)]) /
                           n.std[std::size_t(c)];
      CHECK(v.v[idx] == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("eval_view is deterministic and ignores any rng state") {
  const int h = 8, w = 8;
  ImageRecord rec = ramp_record(h, w);
  Tensor a = eval_view(rec, h, w, Normalization{});
  Tensor b = eval_view(rec, h, w, Normalization{});
  CHECK(a.v == b.v);
}

TEST_CASE("two_view is reproducible from the rng seed and views differ") {
  const int h = 16, w = 16;
  ImageRecord rec = ramp_record(h, w);
  AugmentationPolicy policy;  // full stochastic defaults
  Rng r1(99), r2(99);
  ViewPair a = two_view(rec, h, w, policy, r1);
  ViewPair b = two_view(rec, h, w, policy, r2);
  CHECK(a.v.v == b.v.v);
  CHECK(a.v_prime.v == b.v_prime.v);
  // the two chains sample independently, so the views all but surely differ
  CHECK(a.v.v != a.v_prime.v);
}

TEST_CASE("different seeds draw different augmentations") {
  const int h = 16, w = 16;
  ImageRecord rec = ramp_record(h, w);
  AugmentationPolicy policy;
  Rng r1(1), r2(2);
  Tensor a = single_view(rec, h, w, policy, r1);
  Tensor b = single_view(rec, h, w, policy, r2);
  CHECK(a.v != b.v);
}

TEST_CASE("forced horizontal flip mirrors columns exactly") {
  const int h = 6, w = 6;
  ImageRecord rec = ramp_record(h, w);
  AugmentationPolicy p = identity_policy();
  p.flip_probability = 1.0f;
  Rng rng(5);
  Tensor v = single_view(rec, h, w, p, rng);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t src = std::size_t(c) * h * w + std::size_t(y) * w + (w - 1 - x);
        const std::size_t dst = std::size_t(c) * h * w + std::size_t(y) * w + x;
        CHECK(v.v[dst] == float(rec.pixels[src]) / 255.f);
      }
}

TEST_CASE("forced grayscale equalizes the three channels") {
  const int h = 5, w = 5;
  ImageRecord rec = ramp_record(h, w);
  AugmentationPolicy p = identity_policy();
  p.grayscale_probability = 1.0f;
  Rng rng(6);
  Tensor v = single_view(rec, h, w, p, rng);
  for (int i = 0; i < h * w; ++i) {
    const float r = v.v[std::size_t(i)];
    const float g = v.v[std::size_t(h * w + i)];
    const float b = v.v[std::size_t(2 * h * w + i)];
    CHECK(r == doctest::Approx(g).epsilon(1e-6));
    CHECK(g == doctest::Approx(b).epsilon(1e-6));
  }
}

TEST_CASE("crop to a sub-scale still yields the requested output size") {
  const int h = 12, w = 12;
  ImageRecord rec = ramp_record(h, w);
  AugmentationPolicy p = identity_policy();
  p.crop_scale_min = 0.3f;
  p.crop_scale_max = 0.3f;
  Rng rng(8);
  Tensor v = single_view(rec, h, w, p, rng);
  CHECK(v.shape == std::vector<int>({3, h, w}));
  CHECK(v.finite());
}

TEST_CASE("views stay finite under the full stochastic policy") {
  const int h = 10, w = 10;
  ImageRecord rec = ramp_record(h, w);
  AugmentationPolicy policy;
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    ViewPair vp = two_view(rec, h, w, policy, rng);
    CHECK(vp.v.finite());
    CHECK(vp.v_prime.finite());
  }
}

TEST_CASE("policy validation rejects broken ranges") {
  AugmentationPolicy p;
  p.crop_scale_min = 0.8f;
  p.crop_scale_max = 0.4f;  // min above max
  CHECK_THROWS_AS(p.validate(), cissl::ConfigError);

  AugmentationPolicy q;
  q.flip_probability = 1.5f;
  CHECK_THROWS_AS(q.validate(), cissl::ConfigError);

  AugmentationPolicy r;
  r.crop_scale_min = 0.0f;
  CHECK_THROWS_AS(r.validate(), cissl::ConfigError);

  AugmentationPolicy ok;
  CHECK_NOTHROW(ok.validate());
}

}  // TEST_SUITE
