#pragma once
// Training-time augmentation: global scale with per-axis aspect jitter,
// horizontal flip, random placement onto a padded canvas, and an HSV
// perturbation that only ever touches RGB inputs. Images interpolate
// bilinearly, masks always nearest-neighbor. Draw order is fixed so a given
// rng state maps to exactly one transform.

#include <algorithm>
#include <cmath>

#include "gca/data.hpp"
#include "gca/rng.hpp"

namespace gca {

enum class Modality { Gray, Rgb };

struct AugmentConfig {
  double scale_lo = 0.8, scale_hi = 1.2;  // global resize factor
  double jitter = 0.3;                    // extra per-axis factor in [1-j, 1+j]
  double hflip_p = 0.5;
  float image_pad = 128.0f;
  float mask_pad = 0.0f;
  double hue = 0.1, sat = 0.7, val = 0.3;  // hsv perturbation magnitudes
  Modality modality = Modality::Gray;
  Index out_size = 64;  // canvas the sample is placed onto
};

namespace detail {

inline void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  float mx = std::max(r, std::max(g, b));
  float mn = std::min(r, std::min(g, b));
  float d = mx - mn;
  v = mx;
  s = mx <= 0.0f ? 0.0f : d / mx;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

inline void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  float hh = (h - std::floor(h)) * 6.0f;
  int i = int(hh) % 6;
  float f = hh - float(int(hh));
  float p = v * (1.0f - s);
  float q = v * (1.0f - s * f);
  float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
}

inline Tensor4f hflip(const Tensor4f& t) {
  Tensor4f out(t.shape);
  for (Index b = 0; b < t.shape.b; ++b)
    for (Index c = 0; c < t.shape.c; ++c)
      for (Index y = 0; y < t.shape.h; ++y)
        for (Index x = 0; x < t.shape.w; ++x)
          out(b, c, y, x) = t(b, c, y, t.shape.w - 1 - x);
  return out;
}

}  // namespace detail

// Scale/jitter -> optional flip -> random placement on the padded canvas.
// Content larger than the canvas is randomly cropped by the same offset rule.
inline SegSample augment_geometric(const SegSample& s, Rng& rng, const AugmentConfig& cfg) {
  const Index H = s.image.shape.h, W = s.image.shape.w;
  if (s.mask.shape.h != H || s.mask.shape.w != W) fail("image and mask extents differ");

  double base = rng.uniform(cfg.scale_lo, cfg.scale_hi);
  double jy = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  double jx = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
  Index nh = std::max<Index>(1, Index(std::llround(double(H) * base * jy)));
  Index nw = std::max<Index>(1, Index(std::llround(double(W) * base * jx)));

  SegSample t;
  t.image = nh == H && nw == W ? s.image.detached() : resize_bilinear(s.image, nh, nw);
  t.mask = nh == H && nw == W ? s.mask.detached() : resize_nearest(s.mask, nh, nw);

  if (rng.bernoulli(cfg.hflip_p)) {
    t.image = detail::hflip(t.image);
    t.mask = detail::hflip(t.mask);
  }

  const Index out = cfg.out_size;
  auto offset = [&](Index content) {
    Index lo = content <= out ? 0 : out - content;
    Index hi = content <= out ? out - content : 0;
    return lo + Index(rng.uniform_int(std::uint64_t(hi - lo + 1)));
  };
  Index oy = offset(nh), ox = offset(nw);

  SegSample placed;
  placed.image = Tensor4f::full({1, s.image.shape.c, out, out}, cfg.image_pad);
  placed.mask = Tensor4f::full({1, 1, out, out}, cfg.mask_pad);
  for (Index y = std::max<Index>(0, -oy); y < std::min(nh, out - oy); ++y)
    for (Index x = std::max<Index>(0, -ox); x < std::min(nw, out - ox); ++x) {
      for (Index c = 0; c < s.image.shape.c; ++c)
        placed.image(0, c, oy + y, ox + x) = t.image(0, c, y, x);
      placed.mask(0, 0, oy + y, ox + x) = t.mask(0, 0, y, x);
    }
  return placed;
}

// Hue shift (wrapping) plus saturation/value scaling, on 0..255 RGB data.
inline Tensor4f augment_hsv(const Tensor4f& image, Rng& rng, const AugmentConfig& cfg) {
  if (image.shape.c != 3) fail("hsv perturbation needs 3 channels, got " + image.shape.str());
  float dh = float(rng.uniform(-cfg.hue, cfg.hue));
  float sf = float(rng.uniform(1.0 - cfg.sat, 1.0 + cfg.sat));
  float vf = float(rng.uniform(1.0 - cfg.val, 1.0 + cfg.val));
  Tensor4f out(image.shape);
  for (Index b = 0; b < image.shape.b; ++b)
    for (Index y = 0; y < image.shape.h; ++y)
      for (Index x = 0; x < image.shape.w; ++x) {
        float h, s, v, r, g, bl;
        detail::rgb_to_hsv(image(b, 0, y, x) / 255.0f, image(b, 1, y, x) / 255.0f,
                           image(b, 2, y, x) / 255.0f, h, s, v);
        h += dh;
        h -= std::floor(h);
        s = std::clamp(s * sf, 0.0f, 1.0f);
        v = std::clamp(v * vf, 0.0f, 1.0f);
        detail::hsv_to_rgb(h, s, v, r, g, bl);
        out(b, 0, y, x) = r * 255.0f;
        out(b, 1, y, x) = g * 255.0f;
        out(b, 2, y, x) = bl * 255.0f;
      }
  return out;
}

// The full training-time pipeline; grayscale inputs never see the HSV step.
inline SegSample augment_sample(const SegSample& s, Rng& rng, const AugmentConfig& cfg) {
  SegSample out = augment_geometric(s, rng, cfg);
  if (cfg.modality == Modality::Rgb && out.image.shape.c == 3)
    out.image = augment_hsv(out.image, rng, cfg);
  return out;
}

}  // namespace gca
