#pragma once
// Evaluation metrics on integer label maps: Dice overlap, 95th-percentile
// Hausdorff boundary distance, and confusion-matrix rates (IoU, accuracy,
// specificity, sensitivity). Per-class values plus means over foreground
// classes; empty-mask conventions are pinned here and mirrored by the tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gca/tensor.hpp"

namespace gca {

// One evaluation sample: row-major (h,w) class-id rasters.
struct MaskPair {
  std::vector<int> pred;
  std::vector<int> gt;
  Index h = 0;
  Index w = 0;
  Index num_classes = 0;
  double spacing = 1.0;  // physical distance per pixel, scales hd95 only
};

inline void validate_mask_pair(const MaskPair& mp) {
  if (mp.h <= 0 || mp.w <= 0 || mp.num_classes < 2)
    fail("mask pair needs positive extent and >= 2 classes");
  if (Index(mp.pred.size()) != mp.h * mp.w || Index(mp.gt.size()) != mp.h * mp.w)
    fail("mask raster size does not match " + std::to_string(mp.h) + "x" + std::to_string(mp.w));
  for (size_t i = 0; i < mp.pred.size(); ++i)
    if (mp.pred[i] < 0 || mp.pred[i] >= mp.num_classes || mp.gt[i] < 0 ||
        mp.gt[i] >= mp.num_classes)
      fail("class id out of range at pixel " + std::to_string(i));
}

namespace detail {

struct Confusion {
  long long tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const MaskPair& mp, int k) {
  Confusion c;
  for (size_t i = 0; i < mp.pred.size(); ++i) {
    bool p = mp.pred[i] == k, g = mp.gt[i] == k;
    if (p && g)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

// Mask pixels with at least one 4-neighbor outside the mask; the image edge
// counts as outside, so a full-frame mask still has a boundary ring.
inline std::vector<std::pair<int, int>> boundary_pixels(const std::vector<int>& m, Index h,
                                                        Index w, int k) {
  std::vector<std::pair<int, int>> out;
  auto in = [&](Index y, Index x) { return m[size_t(y * w + x)] == k; };
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      if (!in(y, x)) continue;
      if (y == 0 || y == h - 1 || x == 0 || x == w - 1 || !in(y - 1, x) || !in(y + 1, x) ||
          !in(y, x - 1) || !in(y, x + 1))
        out.emplace_back(int(y), int(x));
    }
  return out;
}

// 95th percentile of nearest-boundary distances from each pixel of a to b,
// taken at index ceil(0.95 n) - 1 of the sorted list.
inline double directed_p95(const std::vector<std::pair<int, int>>& a,
                           const std::vector<std::pair<int, int>>& b) {
  std::vector<double> d;
  d.reserve(a.size());
  for (auto [ay, ax] : a) {
    double best = std::numeric_limits<double>::infinity();
    for (auto [by, bx] : b) {
      double dy = double(ay - by), dx = double(ax - bx);
      best = std::min(best, dy * dy + dx * dx);
    }
    d.push_back(std::sqrt(best));
  }
  std::sort(d.begin(), d.end());
  size_t idx = size_t(std::ceil(0.95 * double(d.size()))) - 1;
  return d[idx];
}

}  // namespace detail

// 2|P∩G| / (|P|+|G|); both masks empty -> 1.0.
inline double dsc(const MaskPair& mp, int k) {
  auto c = detail::confusion(mp, k);
  long long denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : 2.0 * double(c.tp) / double(denom);
}

// False when exactly one of the two class-k masks is empty; hd95 then returns
// the image-diagonal sentinel and aggregation skips the entry.
inline bool hd95_defined(const MaskPair& mp, int k) {
  auto c = detail::confusion(mp, k);
  return (c.tp + c.fp > 0) == (c.tp + c.fn > 0);
}

inline double hd95(const MaskPair& mp, int k) {
  auto bp = detail::boundary_pixels(mp.pred, mp.h, mp.w, k);
  auto bg = detail::boundary_pixels(mp.gt, mp.h, mp.w, k);
  if (bp.empty() && bg.empty()) return 0.0;
  if (bp.empty() || bg.empty())
    return mp.spacing * std::sqrt(double(mp.h) * double(mp.h) + double(mp.w) * double(mp.w));
  return mp.spacing * std::max(detail::directed_p95(bp, bg), detail::directed_p95(bg, bp));
}

inline double iou(const MaskPair& mp, int k) {
  auto c = detail::confusion(mp, k);
  long long denom = c.tp + c.fp + c.fn;
  return denom == 0 ? 1.0 : double(c.tp) / double(denom);
}

inline double sensitivity(const MaskPair& mp, int k) {
  auto c = detail::confusion(mp, k);
  return c.tp + c.fn == 0 ? 1.0 : double(c.tp) / double(c.tp + c.fn);
}

inline double specificity(const MaskPair& mp, int k) {
  auto c = detail::confusion(mp, k);
  return c.tn + c.fp == 0 ? 1.0 : double(c.tn) / double(c.tn + c.fp);
}

inline double pixel_accuracy(const MaskPair& mp, int k) {
  auto c = detail::confusion(mp, k);
  return double(c.tp + c.tn) / double(c.tp + c.tn + c.fp + c.fn);
}

struct ClassMetrics {
  double dsc = 0, hd95 = 0, iou = 0, acc = 0, spe = 0, sen = 0;
  bool hd95_defined = true;
};

struct MetricsRecord {
  std::vector<ClassMetrics> per_class;  // one row per class id, background first
  double mdsc = 0, mhd95 = 0, miou = 0, macc = 0, mspe = 0, msen = 0;
  Index hd95_count = 0;  // foreground rows whose hd95 entered the mean
};

// Per-class metrics plus means over foreground classes (ids 1..K-1). The hd95
// mean covers only defined rows; with none defined it is 0 and hd95_count
// says so.
inline MetricsRecord evaluate_pair(const MaskPair& mp) {
  validate_mask_pair(mp);
  MetricsRecord r;
  r.per_class.resize(size_t(mp.num_classes));
  for (int k = 0; k < mp.num_classes; ++k) {
    ClassMetrics& c = r.per_class[size_t(k)];
    c.dsc = dsc(mp, k);
    c.hd95 = hd95(mp, k);
    c.hd95_defined = hd95_defined(mp, k);
    c.iou = iou(mp, k);
    c.acc = pixel_accuracy(mp, k);
    c.spe = specificity(mp, k);
    c.sen = sensitivity(mp, k);
  }
  Index fg = mp.num_classes - 1;
  for (int k = 1; k < mp.num_classes; ++k) {
    const ClassMetrics& c = r.per_class[size_t(k)];
    r.mdsc += c.dsc / double(fg);
    r.miou += c.iou / double(fg);
    r.macc += c.acc / double(fg);
    r.mspe += c.spe / double(fg);
    r.msen += c.sen / double(fg);
    if (c.hd95_defined) {
      r.mhd95 += c.hd95;
      ++r.hd95_count;
    }
  }
  r.mhd95 = r.hd95_count > 0 ? r.mhd95 / double(r.hd95_count) : 0.0;
  return r;
}

// Streaming dataset aggregation: per-class sums over samples, then the same
// foreground-mean reduction as evaluate_pair.
struct MetricAccumulator {
  Index num_classes = 0;
  Index samples = 0;
  std::vector<double> dsc_sum, iou_sum, acc_sum, spe_sum, sen_sum, hd95_sum;
  std::vector<Index> hd95_n;

  explicit MetricAccumulator(Index k)
      : num_classes(k),
        dsc_sum(size_t(k), 0.0),
        iou_sum(size_t(k), 0.0),
        acc_sum(size_t(k), 0.0),
        spe_sum(size_t(k), 0.0),
        sen_sum(size_t(k), 0.0),
        hd95_sum(size_t(k), 0.0),
        hd95_n(size_t(k), 0) {}

  void add(const MaskPair& mp) {
    if (mp.num_classes != num_classes) fail("accumulator class count mismatch");
    MetricsRecord r = evaluate_pair(mp);
    for (size_t k = 0; k < r.per_class.size(); ++k) {
      const ClassMetrics& c = r.per_class[k];
      dsc_sum[k] += c.dsc;
      iou_sum[k] += c.iou;
      acc_sum[k] += c.acc;
      spe_sum[k] += c.spe;
      sen_sum[k] += c.sen;
      if (c.hd95_defined) {
        hd95_sum[k] += c.hd95;
        ++hd95_n[k];
      }
    }
    ++samples;
  }

  MetricsRecord summary() const {
    if (samples == 0) fail("no samples accumulated");
    MetricsRecord r;
    r.per_class.resize(size_t(num_classes));
    for (size_t k = 0; k < r.per_class.size(); ++k) {
      ClassMetrics& c = r.per_class[k];
      double n = double(samples);
      c.dsc = dsc_sum[k] / n;
      c.iou = iou_sum[k] / n;
      c.acc = acc_sum[k] / n;
      c.spe = spe_sum[k] / n;
      c.sen = sen_sum[k] / n;
      c.hd95_defined = hd95_n[k] > 0;
      c.hd95 = c.hd95_defined ? hd95_sum[k] / double(hd95_n[k]) : 0.0;
    }
    Index fg = num_classes - 1;
    for (Index k = 1; k < num_classes; ++k) {
      const ClassMetrics& c = r.per_class[size_t(k)];
      r.mdsc += c.dsc / double(fg);
      r.miou += c.iou / double(fg);
      r.macc += c.acc / double(fg);
      r.mspe += c.spe / double(fg);
      r.msen += c.sen / double(fg);
      if (c.hd95_defined) {
        r.mhd95 += c.hd95;
        ++r.hd95_count;
      }
    }
    r.mhd95 = r.hd95_count > 0 ? r.mhd95 / double(r.hd95_count) : 0.0;
    return r;
  }
};

// Argmax over channels (ties to the lowest id) against integer targets.
template <typename T>
MaskPair mask_pair_from(const Tensor4<T>& logits, const Tensor4<T>& target, Index b) {
  const auto [B, K, H, W] = logits.shape;
  if (b < 0 || b >= B) fail("batch index out of range");
  if (target.shape.c != 1 || target.shape.h != H || target.shape.w != W)
    fail("target shape " + target.shape.str() + " does not match logits " + logits.shape.str());
  MaskPair mp;
  mp.h = H;
  mp.w = W;
  mp.num_classes = K;
  mp.pred.resize(size_t(H * W));
  mp.gt.resize(size_t(H * W));
  for (Index y = 0; y < H; ++y)
    for (Index x = 0; x < W; ++x) {
      int best = 0;
      for (Index k = 1; k < K; ++k)
        if (logits(b, k, y, x) > logits(b, best, y, x)) best = int(k);
      mp.pred[size_t(y * W + x)] = best;
      T v = target(b, 0, y, x);
      int t = int(std::llround(double(v)));
      if (T(t) != v || t < 0 || t >= K)
        fail("target id " + std::to_string(double(v)) + " out of range at (" + std::to_string(y) +
             "," + std::to_string(x) + ")");
      mp.gt[size_t(y * W + x)] = t;
    }
  return mp;
}

}  // namespace gca
