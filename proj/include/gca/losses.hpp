#pragma once
// Segmentation training objective: pixelwise cross-entropy plus soft Dice,
// combined as an unweighted sum. Targets are integer class ids stored in a
// (B,1,H,W) tensor; both losses return a (1,1,1,1) scalar and append a single
// fused node to the tape.

#include <cmath>
#include <string>

#include "gca/ops.hpp"
#include "gca/tape.hpp"
#include "gca/tensor.hpp"

namespace gca {

namespace detail {

// Reads target(b,0,y,x), checks it is an exact integer in [0, num_classes).
template <typename T>
Index target_id(const Tensor4<T>& target, Index num_classes, Index b, Index y, Index x) {
  T v = target(b, 0, y, x);
  Index k = Index(std::llround(double(v)));
  if (T(k) != v || k < 0 || k >= num_classes)
    fail("target id " + std::to_string(double(v)) + " at (b=" + std::to_string(b) +
         ",y=" + std::to_string(y) + ",x=" + std::to_string(x) + ") not in [0," +
         std::to_string(num_classes) + ")");
  return k;
}

template <typename T>
void check_loss_shapes(const Tensor4<T>& logits, const Tensor4<T>& target) {
  if (target.shape.c != 1 || target.shape.b != logits.shape.b ||
      target.shape.h != logits.shape.h || target.shape.w != logits.shape.w)
    fail("target shape " + target.shape.str() + " does not match logits " + logits.shape.str());
  if (logits.shape.c < 2) fail("need at least 2 classes, got " + std::to_string(logits.shape.c));
}

// Channel softmax with max subtraction, one distribution per (b,y,x).
template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& z) {
  const auto [B, K, H, W] = z.shape;
  Tensor4<T> p(z.shape);
  for (Index b = 0; b < B; ++b)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        T m = z(b, 0, y, x);
        for (Index k = 1; k < K; ++k) m = std::max(m, z(b, k, y, x));
        T s = T(0);
        for (Index k = 0; k < K; ++k) {
          T e = std::exp(z(b, k, y, x) - m);
          p(b, k, y, x) = e;
          s += e;
        }
        for (Index k = 0; k < K; ++k) p(b, k, y, x) /= s;
      }
  return p;
}

}  // namespace detail

// Mean over all pixels of -log softmax(logits)[target id].
template <typename T>
Tensor4<T> cross_entropy_loss(const Tensor4<T>& logits, const Tensor4<T>& target,
                              Tape<T>* tape = nullptr) {
  detail::check_loss_shapes(logits, target);
  const auto [B, K, H, W] = logits.shape;
  const T n = T(B * H * W);

  T total = T(0);
  for (Index b = 0; b < B; ++b)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        Index t = detail::target_id(target, K, b, y, x);
        T m = logits(b, 0, y, x);
        for (Index k = 1; k < K; ++k) m = std::max(m, logits(b, k, y, x));
        T s = T(0);
        for (Index k = 0; k < K; ++k) s += std::exp(logits(b, k, y, x) - m);
        total += m + std::log(s) - logits(b, t, y, x);
      }

  Tensor4<T> loss({1, 1, 1, 1});
  loss.data[0] = total / n;

  if (tape && logits.node >= 0) {
    int zn = logits.node;
    Tensor4<T> p = detail::softmax_channels(logits);
    Tensor4<T> tgt = target.detached();
    loss.node = tape->add_node(
        "cross_entropy", loss.shape, {zn},
        [zn, p = std::move(p), tgt = std::move(tgt), n](Tape<T>& tp, const Tensor4<T>& g) {
          const auto [B, K, H, W] = p.shape;
          T gs = g.data[0] / n;
          Tensor4<T> dz(p.shape);
          for (Index b = 0; b < B; ++b)
            for (Index y = 0; y < H; ++y)
              for (Index x = 0; x < W; ++x) {
                Index t = detail::target_id(tgt, K, b, y, x);
                for (Index k = 0; k < K; ++k)
                  dz(b, k, y, x) = gs * (p(b, k, y, x) - (k == t ? T(1) : T(0)));
              }
          tp.accumulate(zn, dz);
        });
  }
  return loss;
}

// Soft Dice over softmax probabilities. Per class k the score uses sums over
// the whole batch: d_k = (2*sum(p_k over gt=k) + eps) / (sum p_k + |gt=k| + eps),
// and the loss is 1 - mean_k d_k over all classes, background included.
template <typename T>
Tensor4<T> dice_loss(const Tensor4<T>& logits, const Tensor4<T>& target, Tape<T>* tape = nullptr,
                     T eps = T(1e-5)) {
  detail::check_loss_shapes(logits, target);
  const auto [B, K, H, W] = logits.shape;

  Tensor4<T> p = detail::softmax_channels(logits);
  std::vector<T> inter(size_t(K), T(0)), psum(size_t(K), T(0)), gsum(size_t(K), T(0));
  for (Index b = 0; b < B; ++b)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        Index t = detail::target_id(target, K, b, y, x);
        gsum[size_t(t)] += T(1);
        inter[size_t(t)] += p(b, t, y, x);
        for (Index k = 0; k < K; ++k) psum[size_t(k)] += p(b, k, y, x);
      }

  T mean_d = T(0);
  for (Index k = 0; k < K; ++k)
    mean_d += (T(2) * inter[size_t(k)] + eps) / (psum[size_t(k)] + gsum[size_t(k)] + eps);
  mean_d /= T(K);

  Tensor4<T> loss({1, 1, 1, 1});
  loss.data[0] = T(1) - mean_d;

  if (tape && logits.node >= 0) {
    int zn = logits.node;
    Tensor4<T> tgt = target.detached();
    loss.node = tape->add_node(
        "dice", loss.shape, {zn},
        [zn, p = std::move(p), tgt = std::move(tgt), inter = std::move(inter),
         psum = std::move(psum), gsum = std::move(gsum), eps](Tape<T>& tp, const Tensor4<T>& g) {
          const auto [B, K, H, W] = p.shape;
          T gs = g.data[0];
          // dL/d d_k = -1/K; d_k = N_k/D_k with dN_k/dp_k(i) = 2*[t(i)=k],
          // dD_k/dp_k(i) = 1. Softmax backward folds the per-pixel jacobian.
          std::vector<T> dnum(static_cast<size_t>(K)), dden(static_cast<size_t>(K));
          for (Index k = 0; k < K; ++k) {
            T nk = T(2) * inter[size_t(k)] + eps;
            T dk = psum[size_t(k)] + gsum[size_t(k)] + eps;
            dnum[size_t(k)] = -T(2) / (T(K) * dk);
            dden[size_t(k)] = nk / (T(K) * dk * dk);
          }
          Tensor4<T> dz(p.shape);
          for (Index b = 0; b < B; ++b)
            for (Index y = 0; y < H; ++y)
              for (Index x = 0; x < W; ++x) {
                Index t = detail::target_id(tgt, K, b, y, x);
                T dot = T(0);
                for (Index k = 0; k < K; ++k) {
                  T dp = dden[size_t(k)] + (k == t ? dnum[size_t(k)] : T(0));
                  dot += dp * p(b, k, y, x);
                }
                for (Index k = 0; k < K; ++k) {
                  T dp = dden[size_t(k)] + (k == t ? dnum[size_t(k)] : T(0));
                  dz(b, k, y, x) = gs * p(b, k, y, x) * (dp - dot);
                }
              }
          tp.accumulate(zn, dz);
        });
  }
  return loss;
}

// Unweighted sum of the two objectives.
template <typename T>
Tensor4<T> combined_loss(const Tensor4<T>& logits, const Tensor4<T>& target,
                         Tape<T>* tape = nullptr) {
  return add(cross_entropy_loss(logits, target, tape), dice_loss(logits, target, tape), tape);
}

// literal-nullptr conveniences (a bare nullptr cannot deduce Tape<T>*)
template <typename T>
Tensor4<T> cross_entropy_loss(const Tensor4<T>& logits, const Tensor4<T>& target, std::nullptr_t) {
  return cross_entropy_loss(logits, target, static_cast<Tape<T>*>(nullptr));
}
template <typename T>
Tensor4<T> dice_loss(const Tensor4<T>& logits, const Tensor4<T>& target, std::nullptr_t,
                     T eps = T(1e-5)) {
  return dice_loss(logits, target, static_cast<Tape<T>*>(nullptr), eps);
}
template <typename T>
Tensor4<T> combined_loss(const Tensor4<T>& logits, const Tensor4<T>& target, std::nullptr_t) {
  return combined_loss(logits, target, static_cast<Tape<T>*>(nullptr));
}

}  // namespace gca
