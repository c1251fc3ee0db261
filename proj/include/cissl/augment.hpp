#pragma once

#include <array>

#include "cissl/dataset.hpp"
#include "cissl/rng.hpp"
#include "cissl/tensor.hpp"

namespace cissl::augment {

struct Normalization {
  std::array<float, 3> mean{0.4914f, 0.4822f, 0.4465f};
  std::array<float, 3> std{0.2470f, 0.2435f, 0.2616f};
};

inline Normalization unit_normalization() { return {{0.f, 0.f, 0.f}, {1.f, 1.f, 1.f}}; }

// The stochastic transform set. Defaults follow the usual small-image recipe:
// scale-(0.2,1.0) crop, flip 0.5, jitter (0.4,0.4,0.4,0.1) at 0.8, grayscale
// 0.2, no blur.
struct AugmentationPolicy {
  float crop_scale_min = 0.2f;
  float crop_scale_max = 1.0f;
  float flip_probability = 0.5f;
  float color_jitter_probability = 0.8f;
  float brightness = 0.4f;
  float contrast = 0.4f;
  float saturation = 0.4f;
  float hue = 0.1f;
  float grayscale_probability = 0.2f;
  Normalization normalization;

  void validate() const;
};

inline AugmentationPolicy identity_policy() {
  AugmentationPolicy p;
  p.crop_scale_min = p.crop_scale_max = 1.0f;
  p.flip_probability = 0.0f;
  p.color_jitter_probability = 0.0f;
  p.grayscale_probability = 0.0f;
  p.normalization = unit_normalization();
  return p;
}

struct ViewPair {
  Tensor v;        // 3 x H x W, normalized
  Tensor v_prime;  // same shape
};

// Two independently sampled transform chains applied to the same record.
ViewPair two_view(const data::ImageRecord& rec, int height, int width,
                  const AugmentationPolicy& policy, Rng& rng);

// One sampled chain.
Tensor single_view(const data::ImageRecord& rec, int height, int width,
                   const AugmentationPolicy& policy, Rng& rng);

// Deterministic normalize-only view for feature extraction and test passes.
Tensor eval_view(const data::ImageRecord& rec, int height, int width,
                 const Normalization& normalization);

}  // namespace cissl::augment
