#include "cissl/augment.hpp"

#include <algorithm>
#include <cmath>

namespace cissl::augment {

void AugmentationPolicy::validate() const {
  auto prob = [](float p) { return p >= 0.f && p <= 1.f; };
  if (!prob(flip_probability) || !prob(color_jitter_probability) || !prob(grayscale_probability))
    throw ConfigError("augmentation probabilities must lie in [0,1]");
  if (!(crop_scale_min > 0.f && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.f))
    throw ConfigError("crop scale range must satisfy 0 < min <= max <= 1");
  if (brightness < 0.f || contrast < 0.f || saturation < 0.f || hue < 0.f || hue > 0.5f)
    throw ConfigError("invalid color jitter strengths");
  for (const float s : normalization.std)
    if (s == 0.f) throw ConfigError("normalization std must be nonzero");
}

namespace {

// float image, planar 3 x H x W in [0,1]
struct Img {
  int h = 0, w = 0;
  std::vector<float> v;
  float& at(int c, int y, int x) { return v[(std::size_t(c) * h + y) * w + x]; }
  float at(int c, int y, int x) const { return v[(std::size_t(c) * h + y) * w + x]; }
};

Img decode(const data::ImageRecord& rec, int h, int w) {
  Img img;
  img.h = h;
  img.w = w;
  img.v.resize(std::size_t(3) * h * w);
  for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = float(rec.pixels[i]) / 255.0f;
  return img;
}

float sample_clamped(const Img& img, int c, int y, int x) {
  y = std::clamp(y, 0, img.h - 1);
  x = std::clamp(x, 0, img.w - 1);
  return img.at(c, y, x);
}

// Bilinear resize of a crop region [cy, cy+ch) x [cx, cx+cw) to out_h x out_w.
Img crop_resize(const Img& img, int cy, int cx, int ch, int cw, int out_h, int out_w) {
  Img out;
  out.h = out_h;
  out.w = out_w;
  out.v.resize(std::size_t(3) * out_h * out_w);
  const float sy = float(ch) / float(out_h);
  const float sx = float(cw) / float(out_w);
  for (int y = 0; y < out_h; ++y) {
    const float fy = (float(y) + 0.5f) * sy - 0.5f + float(cy);
    const int y0 = int(std::floor(fy));
    const float wy = fy - float(y0);
    for (int x = 0; x < out_w; ++x) {
      const float fx = (float(x) + 0.5f) * sx - 0.5f + float(cx);
      const int x0 = int(std::floor(fx));
      const float wx = fx - float(x0);
      for (int c = 0; c < 3; ++c) {
        const float a = sample_clamped(img, c, y0, x0);
        const float b = sample_clamped(img, c, y0, x0 + 1);
        const float d = sample_clamped(img, c, y0 + 1, x0);
        const float e = sample_clamped(img, c, y0 + 1, x0 + 1);
        out.at(c, y, x) =
            a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx + d * wy * (1 - wx) + e * wy * wx;
      }
    }
  }
  return out;
}

Img random_resized_crop(const Img& img, const AugmentationPolicy& p, int out_h, int out_w,
                        Rng& rng) {
  const double area = double(img.h) * img.w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * rng.uniform(p.crop_scale_min, p.crop_scale_max);
    const double log_r = rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0));
    const double ratio = std::exp(log_r);
    const int cw = int(std::lround(std::sqrt(target * ratio)));
    const int ch = int(std::lround(std::sqrt(target / ratio)));
    if (cw > 0 && ch > 0 && cw <= img.w && ch <= img.h) {
      const int cy = int(rng.uniform_index(std::uint64_t(img.h - ch + 1)));
      const int cx = int(rng.uniform_index(std::uint64_t(img.w - cw + 1)));
      return crop_resize(img, cy, cx, ch, cw, out_h, out_w);
    }
  }
  // fallback: centered square of the smaller side
  const int side = std::min(img.h, img.w);
  return crop_resize(img, (img.h - side) / 2, (img.w - side) / 2, side, side, out_h, out_w);
}

void hflip(Img& img) {
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.w - 1 - x));
}

void clamp01(Img& img) {
  for (float& x : img.v) x = std::clamp(x, 0.0f, 1.0f);
}

float luma(const Img& img, int y, int x) {
  return 0.299f * img.at(0, y, x) + 0.587f * img.at(1, y, x) + 0.114f * img.at(2, y, x);
}

void adjust_brightness(Img& img, float f) {
  for (float& x : img.v) x *= f;
  clamp01(img);
}

void adjust_contrast(Img& img, float f) {
  double mean = 0.0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) mean += luma(img, y, x);
  const float m = float(mean / (double(img.h) * img.w));
  for (float& x : img.v) x = f * x + (1 - f) * m;
  clamp01(img);
}

void adjust_saturation(Img& img, float f) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const float g = luma(img, y, x);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = f * img.at(c, y, x) + (1 - f) * g;
    }
  clamp01(img);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  v = mx;
  const float d = mx - mn;
  s = mx == 0.f ? 0.f : d / mx;
  if (d == 0.f) {
    h = 0.f;
  } else if (mx == r) {
    h = (g - b) / d;
    if (h < 0) h += 6.f;
  } else if (mx == g) {
    h = (b - r) / d + 2.f;
  } else {
    h = (r - g) / d + 4.f;
  }
  h /= 6.f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float i = std::floor(h * 6.f);
  const float f = h * 6.f - i;
  const float p = v * (1 - s);
  const float q = v * (1 - f * s);
  const float t = v * (1 - (1 - f) * s);
  switch (int(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

void adjust_hue(Img& img, float shift) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      float h, s, v;
      rgb_to_hsv(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x), h, s, v);
      hsv_to_rgb(h + shift, s, v, img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
    }
}

void color_jitter(Img& img, const AugmentationPolicy& p, Rng& rng) {
  int order[4] = {0, 1, 2, 3};
  for (int i = 3; i > 0; --i) std::swap(order[i], order[rng.uniform_index(std::uint64_t(i + 1))]);
  for (const int op : order) {
    switch (op) {
      case 0:
        if (p.brightness > 0)
          adjust_brightness(img, float(rng.uniform(std::max(0.f, 1 - p.brightness),
                                                   1 + p.brightness)));
        break;
      case 1:
        if (p.contrast > 0)
          adjust_contrast(img, float(rng.uniform(std::max(0.f, 1 - p.contrast), 1 + p.contrast)));
        break;
      case 2:
        if (p.saturation > 0)
          adjust_saturation(img,
                            float(rng.uniform(std::max(0.f, 1 - p.saturation), 1 + p.saturation)));
        break;
      default:
        if (p.hue > 0) adjust_hue(img, float(rng.uniform(-p.hue, p.hue)));
        break;
    }
  }
}

void grayscale(Img& img) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const float g = luma(img, y, x);
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = g;
    }
}

Tensor normalize(const Img& img, const Normalization& n) {
  Tensor t({3, img.h, img.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x)
        t.v[(std::size_t(c) * img.h + y) * img.w + x] = (img.at(c, y, x) - n.mean[c]) / n.std[c];
  return t;
}

Tensor apply_chain(const data::ImageRecord& rec, int h, int w, const AugmentationPolicy& p,
                   Rng& rng) {
  Img img = decode(rec, h, w);
  img = random_resized_crop(img, p, h, w, rng);
  if (p.flip_probability > 0 && rng.bernoulli(p.flip_probability)) hflip(img);
  if (p.color_jitter_probability > 0 && rng.bernoulli(p.color_jitter_probability))
    color_jitter(img, p, rng);
  if (p.grayscale_probability > 0 && rng.bernoulli(p.grayscale_probability)) grayscale(img);
  return normalize(img, p.normalization);
}

}  // namespace

ViewPair two_view(const data::ImageRecord& rec, int height, int width,
                  const AugmentationPolicy& policy, Rng& rng) {
  ViewPair pair;
  pair.v = apply_chain(rec, height, width, policy, rng);
  pair.v_prime = apply_chain(rec, height, width, policy, rng);
  return pair;
}

Tensor single_view(const data::ImageRecord& rec, int height, int width,
                   const AugmentationPolicy& policy, Rng& rng) {
  return apply_chain(rec, height, width, policy, rng);
}

Tensor eval_view(const data::ImageRecord& rec, int height, int width,
                 const Normalization& normalization) {
  Tensor t({3, height, width});
  const std::size_t plane = std::size_t(height) * width;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i)
      t.v[std::size_t(c) * plane + i] =
          (float(rec.pixels[std::size_t(c) * plane + i]) / 255.0f - normalization.mean[c]) /
          normalization.std[c];
  return t;
}

}  // namespace cissl::augment
