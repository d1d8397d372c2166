#pragma once
// Pointwise and structural tensor ops. Every op is a free function taking an
// optional tape; when the tape is present and at least one input is tracked,
// the op appends a node whose closure routes gradients back to its inputs.

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "gca/tape.hpp"
#include "gca/tensor.hpp"

namespace gca {

enum class Axis { C, H, W };
enum class Reduce { Mean, Max };

template <typename T>
using ArrayMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstArrayMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
ArrayMap<T> as_array(Tensor4<T>& t) {
  return ArrayMap<T>(t.ptr(), t.numel());
}
template <typename T>
ConstArrayMap<T> as_array(const Tensor4<T>& t) {
  return ConstArrayMap<T>(t.ptr(), t.numel());
}

// ------------------------------ pointwise ------------------------------

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x, Tape<T>* tape = nullptr) {
  Tensor4<T> y(x.shape);
  as_array(y) = as_array(x).max(T(0));
  if (tape && x.node >= 0) {
    int xn = x.node;
    Tensor4<T> mask = y.detached();  // y > 0 iff x > 0
    y.node = tape->add_node("relu", y.shape, {xn},
                            [xn, mask = std::move(mask)](Tape<T>& tp, const Tensor4<T>& g) {
                              Tensor4<T> gx(mask.shape);
                              for (Index i = 0; i < g.numel(); ++i)
                                gx.data[i] = mask.data[i] > T(0) ? g.data[i] : T(0);
                              tp.accumulate(xn, gx);
                            });
  }
  return y;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x, Tape<T>* tape = nullptr) {
  Tensor4<T> y(x.shape);
  for (Index i = 0; i < x.numel(); ++i) {
    T v = x.data[i];
    if (v >= T(0)) {
      y.data[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      T e = std::exp(v);
      y.data[i] = e / (T(1) + e);
    }
  }
  if (tape && x.node >= 0) {
    int xn = x.node;
    Tensor4<T> yv = y.detached();
    y.node = tape->add_node("sigmoid", y.shape, {xn},
                            [xn, yv = std::move(yv)](Tape<T>& tp, const Tensor4<T>& g) {
                              Tensor4<T> gx(yv.shape);
                              for (Index i = 0; i < g.numel(); ++i)
                                gx.data[i] = g.data[i] * yv.data[i] * (T(1) - yv.data[i]);
                              tp.accumulate(xn, gx);
                            });
  }
  return y;
}

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b, Tape<T>* tape = nullptr) {
  if (!(a.shape == b.shape))
    fail("add: shape mismatch ", a.shape.str(), " vs ", b.shape.str());
  Tensor4<T> y(a.shape);
  as_array(y) = as_array(a) + as_array(b);
  if (tape && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    y.node = tape->add_node("add", y.shape, {an, bn},
                            [an, bn](Tape<T>& tp, const Tensor4<T>& g) {
                              if (an >= 0) tp.accumulate(an, g);
                              if (bn >= 0) tp.accumulate(bn, g);
                            });
  }
  return y;
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& x, T k, Tape<T>* tape = nullptr) {
  Tensor4<T> y(x.shape);
  as_array(y) = as_array(x) * k;
  if (tape && x.node >= 0) {
    int xn = x.node;
    y.node = tape->add_node("scale", y.shape, {xn},
                            [xn, k](Tape<T>& tp, const Tensor4<T>& g) {
                              Tensor4<T> gx(g.shape);
                              as_array(gx) = as_array(g) * k;
                              tp.accumulate(xn, gx);
                            });
  }
  return y;
}

// ------------------------------ broadcasting ------------------------------

namespace detail {
struct AxisStrides {
  Index b, c, h, w;
};
// Zero stride on axes the operand broadcasts along.
inline AxisStrides broadcast_strides(const Shape4& s) {
  Index ws = 1, hs = s.w, cs = s.h * s.w, bs = s.c * s.h * s.w;
  return {s.b == 1 ? 0 : bs, s.c == 1 ? 0 : cs, s.h == 1 ? 0 : hs, s.w == 1 ? 0 : ws};
}
}  // namespace detail

// Sums x down to `target`, which must be broadcast-compatible with x.shape
// (each axis equal or 1). This is the adjoint of broadcasting.
template <typename T>
Tensor4<T> sum_to_shape(const Tensor4<T>& x, Shape4 target) {
  const std::pair<Index, Index> axes[4] = {{x.shape.b, target.b},
                                           {x.shape.c, target.c},
                                           {x.shape.h, target.h},
                                           {x.shape.w, target.w}};
  for (auto [xa, ta] : axes) {
    if (ta != xa && ta != 1)
      fail("sum_to_shape: cannot reduce ", x.shape.str(), " to ", target.str());
  }
  Tensor4<T> y(target);
  auto st = detail::broadcast_strides(target);
  Index i = 0;
  for (Index bi = 0; bi < x.shape.b; ++bi)
    for (Index ci = 0; ci < x.shape.c; ++ci)
      for (Index hi = 0; hi < x.shape.h; ++hi) {
        Index base = st.b * bi + st.c * ci + st.h * hi;
        for (Index wi = 0; wi < x.shape.w; ++wi)
          y.data[base + st.w * wi] += x.data[i++];
      }
  return y;
}

// Elementwise product with full NumPy-style broadcasting on all four axes.
template <typename T>
Tensor4<T> broadcast_mul(const Tensor4<T>& a, const Tensor4<T>& b, Tape<T>* tape = nullptr) {
  if (!broadcast_compatible(a.shape.b, b.shape.b) || !broadcast_compatible(a.shape.c, b.shape.c) ||
      !broadcast_compatible(a.shape.h, b.shape.h) || !broadcast_compatible(a.shape.w, b.shape.w))
    fail("broadcast_mul: incompatible shapes ", a.shape.str(), " and ", b.shape.str());
  Shape4 os{std::max(a.shape.b, b.shape.b), std::max(a.shape.c, b.shape.c),
            std::max(a.shape.h, b.shape.h), std::max(a.shape.w, b.shape.w)};
  Tensor4<T> y(os);
  auto sa = detail::broadcast_strides(a.shape);
  auto sb = detail::broadcast_strides(b.shape);
  Index i = 0;
  for (Index bi = 0; bi < os.b; ++bi)
    for (Index ci = 0; ci < os.c; ++ci)
      for (Index hi = 0; hi < os.h; ++hi) {
        Index oa = sa.b * bi + sa.c * ci + sa.h * hi;
        Index ob = sb.b * bi + sb.c * ci + sb.h * hi;
        for (Index wi = 0; wi < os.w; ++wi)
          y.data[i++] = a.data[oa + sa.w * wi] * b.data[ob + sb.w * wi];
      }
  if (tape && (a.node >= 0 || b.node >= 0)) {
    int an = a.node, bn = b.node;
    Tensor4<T> av = a.detached(), bv = b.detached();
    y.node = tape->add_node(
        "broadcast_mul", os, {an, bn},
        [an, bn, av = std::move(av), bv = std::move(bv), os](Tape<T>& tp, const Tensor4<T>& g) {
          auto sa = detail::broadcast_strides(av.shape);
          auto sb = detail::broadcast_strides(bv.shape);
          Tensor4<T> ga, gb;
          if (an >= 0) ga = Tensor4<T>::zeros(av.shape);
          if (bn >= 0) gb = Tensor4<T>::zeros(bv.shape);
          Index i = 0;
          for (Index bi = 0; bi < os.b; ++bi)
            for (Index ci = 0; ci < os.c; ++ci)
              for (Index hi = 0; hi < os.h; ++hi) {
                Index oa = sa.b * bi + sa.c * ci + sa.h * hi;
                Index ob = sb.b * bi + sb.c * ci + sb.h * hi;
                for (Index wi = 0; wi < os.w; ++wi, ++i) {
                  Index ia = oa + sa.w * wi, ib = ob + sb.w * wi;
                  if (an >= 0) ga.data[ia] += g.data[i] * bv.data[ib];
                  if (bn >= 0) gb.data[ib] += g.data[i] * av.data[ia];
                }
              }
          if (an >= 0) tp.accumulate(an, ga);
          if (bn >= 0) tp.accumulate(bn, gb);
        });
  }
  return y;
}

// ------------------------------ reductions ------------------------------

// Mean/max over H or W (the two directional pools). Max breaks ties toward
// the lowest index so backward routing is deterministic.
template <typename T>
Tensor4<T> reduce_axis(const Tensor4<T>& x, Axis axis, Reduce mode, Tape<T>* tape = nullptr) {
  if (axis != Axis::H && axis != Axis::W)
    fail("reduce_axis: axis must be H or W");
  const Shape4 s = x.shape;
  const bool over_w = (axis == Axis::W);
  Shape4 os = over_w ? Shape4{s.b, s.c, s.h, 1} : Shape4{s.b, s.c, 1, s.w};
  Tensor4<T> y(os);
  const Index len = over_w ? s.w : s.h;
  std::vector<Index> arg;  // flat index into x per output cell (max only)
  if (mode == Reduce::Max) arg.assign(static_cast<std::size_t>(os.numel()), 0);

  Index o = 0;
  for (Index bi = 0; bi < s.b; ++bi)
    for (Index ci = 0; ci < s.c; ++ci) {
      if (over_w) {
        for (Index hi = 0; hi < s.h; ++hi, ++o) {
          Index base = x.offset(bi, ci, hi, 0);
          if (mode == Reduce::Mean) {
            double acc = 0;
            for (Index k = 0; k < len; ++k) acc += x.data[base + k];
            y.data[o] = static_cast<T>(acc / double(len));
          } else {
            Index best = base;
            for (Index k = 1; k < len; ++k)
              if (x.data[base + k] > x.data[best]) best = base + k;
            y.data[o] = x.data[best];
            arg[o] = best;
          }
        }
      } else {
        for (Index wi = 0; wi < s.w; ++wi, ++o) {
          Index base = x.offset(bi, ci, 0, wi);
          if (mode == Reduce::Mean) {
            double acc = 0;
            for (Index k = 0; k < len; ++k) acc += x.data[base + k * s.w];
            y.data[o] = static_cast<T>(acc / double(len));
          } else {
            Index best = base;
            for (Index k = 1; k < len; ++k)
              if (x.data[base + k * s.w] > x.data[best]) best = base + k * s.w;
            y.data[o] = x.data[best];
            arg[o] = best;
          }
        }
      }
    }

  if (tape && x.node >= 0) {
    int xn = x.node;
    if (mode == Reduce::Mean) {
      y.node = tape->add_node(
          "reduce_mean", os, {xn},
          [xn, s, os, over_w, len](Tape<T>& tp, const Tensor4<T>& g) {
            Tensor4<T> gx(s);
            T inv = T(1) / static_cast<T>(len);
            Index o = 0;
            for (Index bi = 0; bi < s.b; ++bi)
              for (Index ci = 0; ci < s.c; ++ci) {
                if (over_w) {
                  for (Index hi = 0; hi < s.h; ++hi, ++o) {
                    Index base = gx.offset(bi, ci, hi, 0);
                    for (Index k = 0; k < len; ++k) gx.data[base + k] += g.data[o] * inv;
                  }
                } else {
                  for (Index wi = 0; wi < s.w; ++wi, ++o) {
                    Index base = gx.offset(bi, ci, 0, wi);
                    for (Index k = 0; k < len; ++k) gx.data[base + k * s.w] += g.data[o] * inv;
                  }
                }
              }
            tp.accumulate(xn, gx);
          });
    } else {
      y.node = tape->add_node("reduce_max", os, {xn},
                              [xn, s, arg = std::move(arg)](Tape<T>& tp, const Tensor4<T>& g) {
                                Tensor4<T> gx(s);
                                for (Index o = 0; o < g.numel(); ++o)
                                  gx.data[arg[o]] += g.data[o];
                                tp.accumulate(xn, gx);
                              });
    }
  }
  return y;
}

// Mean/max across channels -> (B,1,H,W); the spatial-gate descriptor.
template <typename T>
Tensor4<T> channel_reduce(const Tensor4<T>& x, Reduce mode, Tape<T>* tape = nullptr) {
  const Shape4 s = x.shape;
  Shape4 os{s.b, 1, s.h, s.w};
  Tensor4<T> y(os);
  std::vector<Index> arg;
  if (mode == Reduce::Max) arg.assign(static_cast<std::size_t>(os.numel()), 0);
  const Index plane = s.h * s.w;
  Index o = 0;
  for (Index bi = 0; bi < s.b; ++bi)
    for (Index p = 0; p < plane; ++p, ++o) {
      Index base = bi * s.c * plane + p;
      if (mode == Reduce::Mean) {
        double acc = 0;
        for (Index ci = 0; ci < s.c; ++ci) acc += x.data[base + ci * plane];
        y.data[o] = static_cast<T>(acc / double(s.c));
      } else {
        Index best = base;
        for (Index ci = 1; ci < s.c; ++ci)
          if (x.data[base + ci * plane] > x.data[best]) best = base + ci * plane;
        y.data[o] = x.data[best];
        arg[o] = best;
      }
    }
  if (tape && x.node >= 0) {
    int xn = x.node;
    if (mode == Reduce::Mean) {
      y.node = tape->add_node("channel_mean", os, {xn},
                              [xn, s, plane](Tape<T>& tp, const Tensor4<T>& g) {
                                Tensor4<T> gx(s);
                                T inv = T(1) / static_cast<T>(s.c);
                                Index o = 0;
                                for (Index bi = 0; bi < s.b; ++bi)
                                  for (Index p = 0; p < plane; ++p, ++o) {
                                    Index base = bi * s.c * plane + p;
                                    for (Index ci = 0; ci < s.c; ++ci)
                                      gx.data[base + ci * plane] += g.data[o] * inv;
                                  }
                                tp.accumulate(xn, gx);
                              });
    } else {
      y.node = tape->add_node("channel_max", os, {xn},
                              [xn, s, arg = std::move(arg)](Tape<T>& tp, const Tensor4<T>& g) {
                                Tensor4<T> gx(s);
                                for (Index o = 0; o < g.numel(); ++o)
                                  gx.data[arg[o]] += g.data[o];
                                tp.accumulate(xn, gx);
                              });
    }
  }
  return y;
}

// Sum of all elements -> (1,1,1,1). Accumulates in double regardless of T.
template <typename T>
Tensor4<T> reduce_sum_all(const Tensor4<T>& x, Tape<T>* tape = nullptr) {
  double acc = 0;
  for (Index i = 0; i < x.numel(); ++i) acc += x.data[i];
  Tensor4<T> y = Tensor4<T>::scalar(static_cast<T>(acc));
  if (tape && x.node >= 0) {
    int xn = x.node;
    Shape4 s = x.shape;
    y.node = tape->add_node("reduce_sum_all", y.shape, {xn},
                            [xn, s](Tape<T>& tp, const Tensor4<T>& g) {
                              tp.accumulate(xn, Tensor4<T>::full(s, g.data[0]));
                            });
  }
  return y;
}

// ------------------------------ layout ops ------------------------------

// Concatenation along C or H.
template <typename T>
Tensor4<T> concat(const std::vector<const Tensor4<T>*>& parts, Axis axis, Tape<T>* tape = nullptr) {
  if (axis != Axis::C && axis != Axis::H) fail("concat: axis must be C or H");
  if (parts.empty()) fail("concat: no inputs");
  const Shape4 first = parts[0]->shape;
  Index total = 0;
  for (const auto* p : parts) {
    const Shape4 s = p->shape;
    bool ok = (axis == Axis::C) ? (s.b == first.b && s.h == first.h && s.w == first.w)
                                : (s.b == first.b && s.c == first.c && s.w == first.w);
    if (!ok)
      fail("concat: part shape ", s.str(), " incompatible with ", first.str());
    total += (axis == Axis::C) ? s.c : s.h;
  }
  Shape4 os = first;
  (axis == Axis::C ? os.c : os.h) = total;
  Tensor4<T> y(os);

  // Per (b) for C, per (b,c) for H, each part occupies one contiguous block.
  if (axis == Axis::C) {
    for (Index bi = 0; bi < os.b; ++bi) {
      Index co = 0;
      for (const auto* p : parts) {
        const Index n = p->shape.c * os.h * os.w;
        std::copy_n(p->ptr() + bi * n, n, y.ptr() + y.offset(bi, co, 0, 0));
        co += p->shape.c;
      }
    }
  } else {
    for (Index bi = 0; bi < os.b; ++bi)
      for (Index ci = 0; ci < os.c; ++ci) {
        Index ho = 0;
        for (const auto* p : parts) {
          const Index n = p->shape.h * os.w;
          std::copy_n(p->ptr() + p->offset(bi, ci, 0, 0), n, y.ptr() + y.offset(bi, ci, ho, 0));
          ho += p->shape.h;
        }
      }
  }

  bool tracked = false;
  for (const auto* p : parts) tracked |= (p->node >= 0);
  if (tape && tracked) {
    std::vector<int> in_nodes;
    std::vector<Index> extents;
    for (const auto* p : parts) {
      in_nodes.push_back(p->node);
      extents.push_back(axis == Axis::C ? p->shape.c : p->shape.h);
    }
    y.node = tape->add_node(
        "concat", os, in_nodes,
        [in_nodes, extents, axis, os](Tape<T>& tp, const Tensor4<T>& g) {
          Index start = 0;
          for (std::size_t k = 0; k < in_nodes.size(); ++k) {
            if (in_nodes[k] >= 0) {
              Shape4 ps = os;
              (axis == Axis::C ? ps.c : ps.h) = extents[k];
              Tensor4<T> gp(ps);
              if (axis == Axis::C) {
                for (Index bi = 0; bi < os.b; ++bi)
                  std::copy_n(g.ptr() + g.offset(bi, start, 0, 0), ps.c * os.h * os.w,
                              gp.ptr() + gp.offset(bi, 0, 0, 0));
              } else {
                for (Index bi = 0; bi < os.b; ++bi)
                  for (Index ci = 0; ci < os.c; ++ci)
                    std::copy_n(g.ptr() + g.offset(bi, ci, start, 0), ps.h * os.w,
                                gp.ptr() + gp.offset(bi, ci, 0, 0));
              }
              tp.accumulate(in_nodes[k], gp);
            }
            start += extents[k];
          }
        });
  }
  return y;
}

template <typename T>
Tensor4<T> concat(const Tensor4<T>& a, const Tensor4<T>& b, Axis axis, Tape<T>* tape = nullptr) {
  return concat<T>({&a, &b}, axis, tape);
}

// Contiguous slice along C or H; the adjoint zero-embeds.
template <typename T>
Tensor4<T> slice(const Tensor4<T>& x, Axis axis, Index start, Index len, Tape<T>* tape = nullptr) {
  if (axis != Axis::C && axis != Axis::H) fail("slice: axis must be C or H");
  const Shape4 s = x.shape;
  const Index extent = (axis == Axis::C) ? s.c : s.h;
  if (start < 0 || len <= 0 || start + len > extent)
    fail("slice: range [", start, ",", start + len, ") out of bounds for extent ", extent);
  Shape4 os = s;
  (axis == Axis::C ? os.c : os.h) = len;
  Tensor4<T> y(os);
  if (axis == Axis::C) {
    for (Index bi = 0; bi < s.b; ++bi)
      std::copy_n(x.ptr() + x.offset(bi, start, 0, 0), len * s.h * s.w,
                  y.ptr() + y.offset(bi, 0, 0, 0));
  } else {
    for (Index bi = 0; bi < s.b; ++bi)
      for (Index ci = 0; ci < s.c; ++ci)
        std::copy_n(x.ptr() + x.offset(bi, ci, start, 0), len * s.w,
                    y.ptr() + y.offset(bi, ci, 0, 0));
  }
  if (tape && x.node >= 0) {
    int xn = x.node;
    y.node = tape->add_node("slice", os, {xn},
                            [xn, s, axis, start, len](Tape<T>& tp, const Tensor4<T>& g) {
                              Tensor4<T> gx(s);
                              if (axis == Axis::C) {
                                for (Index bi = 0; bi < s.b; ++bi)
                                  std::copy_n(g.ptr() + g.offset(bi, 0, 0, 0), len * s.h * s.w,
                                              gx.ptr() + gx.offset(bi, start, 0, 0));
                              } else {
                                for (Index bi = 0; bi < s.b; ++bi)
                                  for (Index ci = 0; ci < s.c; ++ci)
                                    std::copy_n(g.ptr() + g.offset(bi, ci, 0, 0), len * s.w,
                                                gx.ptr() + gx.offset(bi, ci, start, 0));
                              }
                              tp.accumulate(xn, gx);
                            });
  }
  return y;
}

// (B,C,H,W) -> (B,C,W,H). Self-inverse; used to stand the pooled width strip
// up along the height axis before concatenation.
template <typename T>
Tensor4<T> swap_hw(const Tensor4<T>& x, Tape<T>* tape = nullptr) {
  const Shape4 s = x.shape;
  Tensor4<T> y({s.b, s.c, s.w, s.h});
  for (Index bi = 0; bi < s.b; ++bi)
    for (Index ci = 0; ci < s.c; ++ci)
      for (Index hi = 0; hi < s.h; ++hi)
        for (Index wi = 0; wi < s.w; ++wi)
          y.at(bi, ci, wi, hi) = x.at(bi, ci, hi, wi);
  if (tape && x.node >= 0) {
    int xn = x.node;
    y.node = tape->add_node("swap_hw", y.shape, {xn},
                            [xn](Tape<T>& tp, const Tensor4<T>& g) {
                              tp.accumulate(xn, swap_hw(g));
                            });
  }
  return y;
}

// Relabel (B,C,H,W) as (B*k, C/k, H, W) or back. Because channels are the
// next-outer axis after batch, the flat element order is unchanged, so this
// is a pure reinterpretation (used to share one weight set across groups).
template <typename T>
Tensor4<T> reshape_bc(const Tensor4<T>& x, Index nb, Index nc, Tape<T>* tape = nullptr) {
  const Shape4 s = x.shape;
  if (nb * nc != s.b * s.c)
    fail("reshape_bc: ", s.str(), " cannot be relabeled to batch ", nb, " x channels ", nc);
  Tensor4<T> y({nb, nc, s.h, s.w});
  y.data = x.data;
  if (tape && x.node >= 0) {
    int xn = x.node;
    y.node = tape->add_node("reshape_bc", y.shape, {xn},
                            [xn, s](Tape<T>& tp, const Tensor4<T>& g) {
                              Tensor4<T> gx(s);
                              gx.data = g.data;
                              tp.accumulate(xn, gx);
                            });
  }
  return y;
}

}  // namespace gca
