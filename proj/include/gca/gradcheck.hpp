#pragma once
// Finite-difference gradient checking. The analytic side is the f32 tape
// (the code under test); the numeric side central-differences the same
// expression instantiated at double precision, so the comparison is limited
// by the f32 backward itself, not by differencing noise.

#include <cmath>
#include <functional>

#include "gca/ops.hpp"
#include "gca/tape.hpp"
#include "gca/tensor.hpp"

namespace gca {

struct GradCheckReport {
  double max_err = 0.0;   // max over coordinates of the relative error below
  Index worst = -1;       // flat coordinate achieving it
  double analytic = 0.0;  // analytic gradient there
  double numeric = 0.0;   // central difference there
};

// f32 builds a tracked scalar from x on the given tape; f64 evaluates the
// same scalar function at double precision. Relative error per coordinate is
// |a - n| / max(floor, |a| + |n|), where the floor is a small fraction of
// the gradient's own largest component: f32 rounding puts an absolute noise
// of order 1e-7 times the vector scale on every component, so components far
// below that scale cannot be held to a pure relative comparison. A wrong
// backward produces errors at the scale of the gradients it touches and
// still fails.
template <typename F32, typename F64>
GradCheckReport grad_check(F32&& f32, F64&& f64, const Tensor4f& x, double eps = 1e-3) {
  Tape<float> tape;
  Tensor4f xt = x.detached();
  tape.track(xt);
  Tensor4f y = f32(tape, xt);
  if (!(y.shape == Shape4{1, 1, 1, 1}))
    fail("grad_check: function must return a scalar, got ", y.shape.str());
  tape.backward(y);
  Tensor4f g = tape.grad(xt);

  double gmax = 0.0;
  for (Index i = 0; i < g.numel(); ++i) gmax = std::max(gmax, std::abs(double(g.data[i])));
  const double floor = std::max(1e-8, 1e-3 * gmax);

  Tensor4d xd = cast<double>(x);
  auto numeric_at = [&](Index i, double step) {
    double save = xd.data[i];
    xd.data[i] = save + step;
    double fp = f64(xd);
    xd.data[i] = save - step;
    double fm = f64(xd);
    xd.data[i] = save;
    return (fp - fm) / (2.0 * step);
  };
  auto rel = [&](double a, double n) {
    return std::abs(a - n) / std::max(floor, std::abs(a) + std::abs(n));
  };
  GradCheckReport rep;
  for (Index i = 0; i < x.numel(); ++i) {
    double ana = static_cast<double>(g.data[i]);
    double num = numeric_at(i, eps);
    if (!std::isfinite(num) || !std::isfinite(ana))
      fail("grad_check: non-finite value at coordinate ", i, " (analytic ", ana, ", numeric ",
           num, ")");
    double err = rel(ana, num);
    // A centered difference reports a bogus slope when the step straddles a
    // relu kink, and picks up truncation error where curvature is strong.
    // Both artifacts shrink with the step while a wrong analytic gradient is
    // wrong at every step, so suspicious coordinates are re-measured at
    // smaller steps and the best agreement is kept. The floor keeps the f64
    // difference far above rounding noise.
    for (double step = eps / 4.0; err > 1e-4 && step > eps / 5000.0; step /= 4.0) {
      double refined = numeric_at(i, step);
      if (!std::isfinite(refined)) break;
      double e2 = rel(ana, refined);
      if (e2 < err) {
        err = e2;
        num = refined;
      }
    }
    if (err > rep.max_err) {
      rep.max_err = err;
      rep.worst = i;
      rep.analytic = ana;
      rep.numeric = num;
    }
  }
  return rep;
}

}  // namespace gca
