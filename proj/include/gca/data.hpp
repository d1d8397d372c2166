#pragma once
// Sample container and image-space plumbing between disk rasters and model
// tensors: Netpbm conversion, arbitrary-size bilinear / nearest resizing,
// aspect-preserving resize onto a padded square, and batch assembly with the
// divide-by-255 normalization the network expects.

#include <cmath>
#include <string>
#include <vector>

#include "gca/netpbm.hpp"
#include "gca/tensor.hpp"

namespace gca {

// One segmentation sample. Images hold 0..255 values (float so augmentation
// can interpolate); masks hold integer class ids in the same float storage.
struct SegSample {
  Tensor4f image;  // (1,C,H,W), C = 1 or 3
  Tensor4f mask;   // (1,1,H,W)
};

inline Tensor4f from_pnm(const PnmImage& img) {
  Tensor4f t({1, img.channels, img.height, img.width});
  for (Index y = 0; y < img.height; ++y)
    for (Index x = 0; x < img.width; ++x)
      for (Index c = 0; c < img.channels; ++c)
        t(0, c, y, x) = float(img.pixels[size_t((y * img.width + x) * img.channels + c)]);
  return t;
}

inline PnmImage to_pnm(const Tensor4f& t) {
  if (t.shape.b != 1 || (t.shape.c != 1 && t.shape.c != 3))
    fail("to_pnm wants (1,1|3,H,W), got " + t.shape.str());
  PnmImage img;
  img.channels = int(t.shape.c);
  img.height = int(t.shape.h);
  img.width = int(t.shape.w);
  img.pixels.resize(size_t(t.numel()));
  for (Index y = 0; y < t.shape.h; ++y)
    for (Index x = 0; x < t.shape.w; ++x)
      for (Index c = 0; c < t.shape.c; ++c) {
        long v = std::lround(double(t(0, c, y, x)));
        img.pixels[size_t((y * t.shape.w + x) * t.shape.c + c)] =
            std::uint8_t(v < 0 ? 0 : v > 255 ? 255 : v);
      }
  return img;
}

namespace detail {

// half-pixel source coordinate for a destination index, clamped into range
inline void lerp_coord(Index dst, Index in, Index out, Index& i0, Index& i1, float& frac) {
  double src = (double(dst) + 0.5) * double(in) / double(out) - 0.5;
  if (src < 0) src = 0;
  i0 = Index(src);
  if (i0 > in - 1) i0 = in - 1;
  i1 = i0 + 1 < in ? i0 + 1 : in - 1;
  frac = float(src - double(i0));
}

}  // namespace detail

// Half-pixel-aligned bilinear resampling to an arbitrary size.
inline Tensor4f resize_bilinear(const Tensor4f& src, Index oh, Index ow) {
  const auto [B, C, H, W] = src.shape;
  if (oh <= 0 || ow <= 0) fail("resize target must be positive");
  Tensor4f dst({B, C, oh, ow});
  for (Index y = 0; y < oh; ++y) {
    Index y0, y1;
    float fy;
    detail::lerp_coord(y, H, oh, y0, y1, fy);
    for (Index x = 0; x < ow; ++x) {
      Index x0, x1;
      float fx;
      detail::lerp_coord(x, W, ow, x0, x1, fx);
      for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) {
          float top = src(b, c, y0, x0) * (1 - fx) + src(b, c, y0, x1) * fx;
          float bot = src(b, c, y1, x0) * (1 - fx) + src(b, c, y1, x1) * fx;
          dst(b, c, y, x) = top * (1 - fy) + bot * fy;
        }
    }
  }
  return dst;
}

// Nearest-neighbor resampling; the only resize ever applied to masks.
inline Tensor4f resize_nearest(const Tensor4f& src, Index oh, Index ow) {
  const auto [B, C, H, W] = src.shape;
  if (oh <= 0 || ow <= 0) fail("resize target must be positive");
  Tensor4f dst({B, C, oh, ow});
  for (Index y = 0; y < oh; ++y) {
    Index sy = Index((double(y) + 0.5) * double(H) / double(oh));
    if (sy > H - 1) sy = H - 1;
    for (Index x = 0; x < ow; ++x) {
      Index sx = Index((double(x) + 0.5) * double(W) / double(ow));
      if (sx > W - 1) sx = W - 1;
      for (Index b = 0; b < B; ++b)
        for (Index c = 0; c < C; ++c) dst(b, c, y, x) = src(b, c, sy, sx);
    }
  }
  return dst;
}

// Content rectangle left by resize_with_pad, for cropping predictions back.
struct PadInfo {
  Index y0 = 0, x0 = 0, h = 0, w = 0;
};

// Scales the longest side to `target` (aspect preserved), pads the short side
// symmetrically with 128 on images and 0 on masks.
inline PadInfo resize_with_pad(SegSample& s, Index target, float image_pad = 128.0f,
                               float mask_pad = 0.0f) {
  if (target % 32 != 0) fail("padded size must be divisible by 32, got " + std::to_string(target));
  const Index H = s.image.shape.h, W = s.image.shape.w;
  if (s.mask.shape.h != H || s.mask.shape.w != W) fail("image and mask extents differ");
  Index ch, cw;
  if (H >= W) {
    ch = target;
    cw = std::max<Index>(1, Index(std::llround(double(W) * double(target) / double(H))));
  } else {
    cw = target;
    ch = std::max<Index>(1, Index(std::llround(double(H) * double(target) / double(W))));
  }
  PadInfo info{(target - ch) / 2, (target - cw) / 2, ch, cw};
  Tensor4f img = resize_bilinear(s.image, ch, cw);
  Tensor4f msk = resize_nearest(s.mask, ch, cw);
  Tensor4f pimg = Tensor4f::full({1, s.image.shape.c, target, target}, image_pad);
  Tensor4f pmsk = Tensor4f::full({1, 1, target, target}, mask_pad);
  for (Index y = 0; y < ch; ++y)
    for (Index x = 0; x < cw; ++x) {
      for (Index c = 0; c < s.image.shape.c; ++c)
        pimg(0, c, info.y0 + y, info.x0 + x) = img(0, c, y, x);
      pmsk(0, 0, info.y0 + y, info.x0 + x) = msk(0, 0, y, x);
    }
  s.image = std::move(pimg);
  s.mask = std::move(pmsk);
  return info;
}

inline Tensor4f crop_content(const Tensor4f& t, const PadInfo& info) {
  if (info.y0 < 0 || info.x0 < 0 || info.y0 + info.h > t.shape.h || info.x0 + info.w > t.shape.w)
    fail("crop rectangle outside tensor");
  Tensor4f out({t.shape.b, t.shape.c, info.h, info.w});
  for (Index b = 0; b < t.shape.b; ++b)
    for (Index c = 0; c < t.shape.c; ++c)
      for (Index y = 0; y < info.h; ++y)
        for (Index x = 0; x < info.w; ++x)
          out(b, c, y, x) = t(b, c, info.y0 + y, info.x0 + x);
  return out;
}

// Stacks samples into model input (pixels / 255, grayscale replicated across
// the requested channel count) and an id target map.
inline std::pair<Tensor4f, Tensor4f> make_batch(const std::vector<SegSample>& samples,
                                                const std::vector<Index>& ids,
                                                Index in_channels) {
  if (ids.empty()) fail("empty batch");
  const SegSample& first = samples.at(size_t(ids[0]));
  const Index H = first.image.shape.h, W = first.image.shape.w;
  const Index B = Index(ids.size());
  Tensor4f images({B, in_channels, H, W});
  Tensor4f targets({B, 1, H, W});
  for (Index i = 0; i < B; ++i) {
    const SegSample& s = samples.at(size_t(ids[size_t(i)]));
    const Index C = s.image.shape.c;
    if (s.image.shape.h != H || s.image.shape.w != W)
      fail("batch mixes extents: " + s.image.shape.str());
    if (C != in_channels && C != 1)
      fail("cannot feed " + std::to_string(C) + "-channel image into " +
           std::to_string(in_channels) + "-channel model");
    for (Index c = 0; c < in_channels; ++c) {
      Index sc = C == in_channels ? c : 0;
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x) images(i, c, y, x) = s.image(0, sc, y, x) / 255.0f;
    }
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) targets(i, 0, y, x) = s.mask(0, 0, y, x);
  }
  return {std::move(images), std::move(targets)};
}

}  // namespace gca
