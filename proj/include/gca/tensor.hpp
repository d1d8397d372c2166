#pragma once
// Dense rank-4 tensors in (batch, channel, height, width) layout, row-major
// with batch outermost. The scalar type is a template parameter: training
// runs f32, finite-difference checks re-run the same expressions at f64.

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gca {

using Index = std::int64_t;

namespace detail {
template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw std::runtime_error(detail::cat(std::forward<Args>(args)...));
}

struct Shape4 {
  Index b = 0, c = 0, h = 0, w = 0;

  Index numel() const { return b * c * h * w; }
  bool operator==(const Shape4&) const = default;

  std::string str() const { return detail::cat("(", b, ",", c, ",", h, ",", w, ")"); }
};

inline constexpr int kNoNode = -1;

template <typename T>
struct Tensor4 {
  Shape4 shape;
  std::vector<T> data;
  int node = kNoNode;  // autodiff tape handle; kNoNode when untracked

  Tensor4() = default;

  explicit Tensor4(Shape4 s) : shape(s) {
    if (s.b <= 0 || s.c <= 0 || s.h <= 0 || s.w <= 0)
      fail("Tensor4: all dims must be positive, got ", s.str());
    data.assign(static_cast<std::size_t>(s.numel()), T(0));
  }

  Tensor4(Shape4 s, std::vector<T> values) : shape(s), data(std::move(values)) {
    if (static_cast<Index>(data.size()) != s.numel())
      fail("Tensor4: value count ", data.size(), " does not match shape ", s.str());
  }

  static Tensor4 zeros(Shape4 s) { return Tensor4(s); }

  static Tensor4 full(Shape4 s, T v) {
    Tensor4 t(s);
    for (auto& x : t.data) x = v;
    return t;
  }

  static Tensor4 scalar(T v) { return full({1, 1, 1, 1}, v); }

  Index numel() const { return shape.numel(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  Index offset(Index bi, Index ci, Index hi, Index wi) const {
    return ((bi * shape.c + ci) * shape.h + hi) * shape.w + wi;
  }

  T& at(Index bi, Index ci, Index hi, Index wi) { return data[offset(bi, ci, hi, wi)]; }
  T at(Index bi, Index ci, Index hi, Index wi) const { return data[offset(bi, ci, hi, wi)]; }
  T& operator()(Index bi, Index ci, Index hi, Index wi) { return at(bi, ci, hi, wi); }
  T operator()(Index bi, Index ci, Index hi, Index wi) const { return at(bi, ci, hi, wi); }

  // Copy that drops the tape handle; closures save inputs this way so a
  // stored activation can never be mistaken for a live graph node.
  Tensor4 detached() const {
    Tensor4 t = *this;
    t.node = kNoNode;
    return t;
  }
};

using Tensor4f = Tensor4<float>;
using Tensor4d = Tensor4<double>;

template <typename To, typename From>
Tensor4<To> cast(const Tensor4<From>& x) {
  Tensor4<To> y(x.shape);
  for (Index i = 0; i < x.numel(); ++i) y.data[i] = static_cast<To>(x.data[i]);
  return y;
}

inline bool broadcast_compatible(Index a, Index b) { return a == b || a == 1 || b == 1; }

}  // namespace gca
