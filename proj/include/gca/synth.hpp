#pragma once
// Synthetic multi-class segmentation data: each sample is a noisy background
// with one non-overlapping ellipse or rectangle per present foreground class,
// painted in a class-specific intensity band so the classes are separable but
// not trivially so. Everything is a pure function of (config, seed).

#include <cmath>
#include <string>
#include <vector>

#include "gca/data.hpp"
#include "gca/rng.hpp"
#include "gca/tensor.hpp"

namespace gca {

struct SynthConfig {
  Index image_size = 64;
  Index num_classes = 4;  // background + 3 shape classes
  Index count = 16;
  std::uint64_t seed = 0;
};

namespace detail {

struct ShapeSpec {
  bool ellipse = true;
  double cy = 0, cx = 0;  // center, pixels
  double ry = 0, rx = 0;  // semi-axes / half-sides, pixels
};

inline bool inside_shape(const ShapeSpec& sp, Index y, Index x) {
  double dy = (double(y) + 0.5 - sp.cy) / sp.ry;
  double dx = (double(x) + 0.5 - sp.cx) / sp.rx;
  return sp.ellipse ? dy * dy + dx * dx <= 1.0
                    : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
}

// pixel-center rasterization used by the generator and by area checks
inline std::vector<std::pair<Index, Index>> rasterize(const ShapeSpec& sp, Index size) {
  std::vector<std::pair<Index, Index>> px;
  Index y0 = std::max<Index>(0, Index(sp.cy - sp.ry - 1));
  Index y1 = std::min<Index>(size - 1, Index(sp.cy + sp.ry + 1));
  Index x0 = std::max<Index>(0, Index(sp.cx - sp.rx - 1));
  Index x1 = std::min<Index>(size - 1, Index(sp.cx + sp.rx + 1));
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x)
      if (inside_shape(sp, y, x)) px.emplace_back(y, x);
  return px;
}

// intensity band for a class id: background sits low, classes step upward
// with a gap so additive noise rarely crosses bands
inline std::pair<double, double> intensity_band(Index k) {
  if (k == 0) return {20.0, 70.0};
  double lo = 90.0 + 60.0 * double(k - 1);
  return {lo, lo + 40.0};
}

}  // namespace detail

// Foreground classes appear independently with probability 0.9 (at least one
// is forced), shapes are rejection-placed so they never overlap.
inline std::vector<SegSample> synth_generate(const SynthConfig& cfg) {
  if (cfg.num_classes < 2) fail("need at least 2 classes");
  if (cfg.image_size < 16) fail("synthetic images start at 16 px");
  if (cfg.count <= 0) fail("sample count must be positive");

  std::vector<SegSample> out;
  out.reserve(size_t(cfg.count));
  const Index S = cfg.image_size;

  for (Index i = 0; i < cfg.count; ++i) {
    Rng rng = Rng::derive(cfg.seed, rng_stream::kSynth, std::uint64_t(i));
    SegSample s;
    s.image = Tensor4f({1, 1, S, S});
    s.mask = Tensor4f({1, 1, S, S});

    auto [bg_lo, bg_hi] = detail::intensity_band(0);
    double base = rng.uniform(bg_lo, bg_hi);
    for (auto& v : s.image.data) v = float(base);

    std::vector<bool> present(size_t(cfg.num_classes), false);
    bool any = false;
    for (Index k = 1; k < cfg.num_classes; ++k) {
      present[size_t(k)] = rng.bernoulli(0.9);
      any = any || present[size_t(k)];
    }
    if (!any) present[size_t(1 + Index(rng.uniform_int(std::uint64_t(cfg.num_classes - 1))))] = true;

    for (Index k = 1; k < cfg.num_classes; ++k) {
      if (!present[size_t(k)]) continue;
      auto [lo, hi] = detail::intensity_band(k);
      double fill = rng.uniform(lo, hi);
      for (int attempt = 0; attempt < 40; ++attempt) {
        detail::ShapeSpec sp;
        sp.ellipse = rng.bernoulli(0.5);
        sp.cy = rng.uniform(0.2, 0.8) * double(S);
        sp.cx = rng.uniform(0.2, 0.8) * double(S);
        sp.ry = rng.uniform(0.08, 0.22) * double(S);
        sp.rx = rng.uniform(0.08, 0.22) * double(S);
        auto px = detail::rasterize(sp, S);
        bool clash = px.empty();
        for (auto [y, x] : px)
          if (s.mask(0, 0, y, x) != 0.0f) {
            clash = true;
            break;
          }
        if (clash) continue;
        for (auto [y, x] : px) {
          s.mask(0, 0, y, x) = float(k);
          s.image(0, 0, y, x) = float(fill);
        }
        break;
      }
    }

    for (auto& v : s.image.data) {
      double noisy = double(v) + 8.0 * rng.normal();
      long q = std::lround(noisy);
      v = float(q < 0 ? 0 : q > 255 ? 255 : q);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace gca
