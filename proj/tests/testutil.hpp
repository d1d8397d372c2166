#pragma once
// Helpers shared by the test binaries: deterministic random tensors and a
// weighted-sum harness for gradient checks.

#include <cstdint>
#include <vector>

#include "gca/gradcheck.hpp"
#include "gca/ops.hpp"
#include "gca/rng.hpp"
#include "gca/tape.hpp"
#include "gca/tensor.hpp"

namespace testutil {

inline gca::Tensor4f randn(gca::Shape4 s, std::uint64_t seed, float scale = 1.0f) {
  gca::Rng rng(seed);
  gca::Tensor4f t(s);
  for (auto& v : t.data) v = scale * static_cast<float>(rng.normal());
  return t;
}

// Values bounded away from zero so relu kinks sit far outside the
// finite-difference window.
inline gca::Tensor4f rand_signed_offset(gca::Shape4 s, std::uint64_t seed) {
  gca::Rng rng(seed);
  gca::Tensor4f t(s);
  for (auto& v : t.data)
    v = static_cast<float>((rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.5));
  return t;
}

// Globally distinct values evenly spaced over [-1, 1], so max reductions
// have no near-ties anywhere near the differencing step.
inline gca::Tensor4f rand_distinct(gca::Shape4 s, std::uint64_t seed) {
  gca::Rng rng(seed);
  const std::size_t n = static_cast<std::size_t>(s.numel());
  std::vector<gca::Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<gca::Index>(i);
  rng.shuffle(order);
  gca::Tensor4f t(s);
  const float step = n > 1 ? 2.0f / float(n - 1) : 0.0f;
  for (std::size_t i = 0; i < n; ++i) t.data[i] = step * float(order[i]) - 1.0f;
  return t;
}

// grad_check an op through a fixed random weighting: f(x) = sum(op(x) .* R).
// The weighting makes sign/permutation mistakes visible where a plain sum
// would cancel them. op32 gets a maybe-null tape, op64 runs in double.
template <typename Op32, typename Op64>
double check_op(Op32 op32, Op64 op64, const gca::Tensor4f& x, std::uint64_t seed,
                double eps = 1e-3) {
  gca::Tensor4f probe = op32(static_cast<gca::Tape<float>*>(nullptr), x);
  gca::Tensor4f rf = randn(probe.shape, seed ^ 0xabcdef, 1.0f);
  gca::Tensor4d rd = gca::cast<double>(rf);
  auto rep = gca::grad_check(
      [&](gca::Tape<float>& tp, const gca::Tensor4f& xt) {
        return gca::reduce_sum_all(gca::broadcast_mul(op32(&tp, xt), rf, &tp), &tp);
      },
      [&](const gca::Tensor4d& xd) {
        return static_cast<double>(gca::reduce_sum_all(gca::broadcast_mul(op64(xd), rd)).data[0]);
      },
      x, eps);
  return rep.max_err;
}

// Elementwise |a-b| <= atol + rtol*|b| over whole tensors.
inline bool all_close(const gca::Tensor4f& a, const gca::Tensor4f& b, double atol = 1e-5,
                      double rtol = 1e-4) {
  if (!(a.shape == b.shape)) return false;
  for (gca::Index i = 0; i < a.numel(); ++i) {
    const double d = std::abs(double(a.data[i]) - double(b.data[i]));
    if (d > atol + rtol * std::abs(double(b.data[i]))) return false;
  }
  return true;
}

}  // namespace testutil
