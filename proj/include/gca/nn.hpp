#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <vector>

#include "gca/rng.hpp"
#include "gca/tape.hpp"
#include "gca/tensor.hpp"

namespace gca {

enum class Mode { Train, Eval };

namespace detail {

// Fill a column-major K x nt patch matrix for output pixels [n0, n0+nt).
// Column j holds the receptive field of output pixel n0+j, entries ordered
// (channel, kernel row, kernel col) to match the row-major weight layout.
template <typename T>
void im2col_tile(const Tensor4<T>& x, Index bi, Index c0, Index cg, Index kh, Index kw,
                 Index stride, Index pad, Index wout, Index n0, Index nt, T* cols) {
  const Index hin = x.shape.h, win = x.shape.w;
  for (Index j = 0; j < nt; ++j) {
    const Index n = n0 + j;
    const Index oh = n / wout, ow = n % wout;
    T* col = cols + j * (cg * kh * kw);
    for (Index c = 0; c < cg; ++c) {
      const T* src = x.ptr() + x.offset(bi, c0 + c, 0, 0);
      for (Index r = 0; r < kh; ++r) {
        const Index ih = oh * stride - pad + r;
        if (ih < 0 || ih >= hin) {
          for (Index s = 0; s < kw; ++s) *col++ = T(0);
          continue;
        }
        for (Index s = 0; s < kw; ++s) {
          const Index iw = ow * stride - pad + s;
          *col++ = (iw >= 0 && iw < win) ? src[ih * win + iw] : T(0);
        }
      }
    }
  }
}

// Adjoint of im2col_tile: scatter-add patch gradients back onto dx.
template <typename T>
void col2im_tile(Tensor4<T>& dx, Index bi, Index c0, Index cg, Index kh, Index kw, Index stride,
                 Index pad, Index wout, Index n0, Index nt, const T* cols) {
  const Index hin = dx.shape.h, win = dx.shape.w;
  for (Index j = 0; j < nt; ++j) {
    const Index n = n0 + j;
    const Index oh = n / wout, ow = n % wout;
    const T* col = cols + j * (cg * kh * kw);
    for (Index c = 0; c < cg; ++c) {
      T* dst = dx.ptr() + dx.offset(bi, c0 + c, 0, 0);
      for (Index r = 0; r < kh; ++r) {
        const Index ih = oh * stride - pad + r;
        if (ih < 0 || ih >= hin) {
          col += kw;
          continue;
        }
        for (Index s = 0; s < kw; ++s) {
          const Index iw = ow * stride - pad + s;
          if (iw >= 0 && iw < win) dst[ih * win + iw] += col[s];
        }
        col += kw;
      }
    }
  }
}

// Cap on the scratch patch matrix, in elements. Keeps the widest decoder
// convolutions from materializing the whole im2col buffer at once.
inline constexpr Index kConvTileElems = Index(4) << 20;

inline Index conv_out_extent(Index in, Index k, Index stride, Index pad, const char* what) {
  const Index out = (in + 2 * pad - k) / stride + 1;
  if (in + 2 * pad < k || out < 1)
    fail("conv2d: ", what, "=", in, " too small for kernel ", k, " pad ", pad);
  return out;
}

}  // namespace detail

// Grouped 2d convolution over NCHW. Weights are (C_out, C_in/groups, kh, kw),
// bias (1, C_out, 1, 1) or null. Lowered to GEMM over im2col tiles.
template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* bias, Index stride,
                  Index pad, Index groups = 1, Tape<T>* tape = nullptr) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using StrideT = Eigen::OuterStride<>;

  const Index cout = w.shape.b, cg = w.shape.c, kh = w.shape.h, kw = w.shape.w;
  if (groups < 1 || cout % groups != 0)
    fail("conv2d: out_channels ", cout, " not divisible by groups ", groups);
  if (x.shape.c != cg * groups)
    fail("conv2d: input has ", x.shape.c, " channels, weights expect ", cg * groups,
         " (groups=", groups, ")");
  if (stride < 1 || pad < 0) fail("conv2d: bad stride ", stride, " or pad ", pad);
  if (bias && !(bias->shape == Shape4{1, cout, 1, 1}))
    fail("conv2d: bias shape ", bias->shape.str(), " want (1,", cout, ",1,1)");

  const Index hout = detail::conv_out_extent(x.shape.h, kh, stride, pad, "height");
  const Index wout = detail::conv_out_extent(x.shape.w, kw, stride, pad, "width");
  const Index cout_g = cout / groups;
  const Index K = cg * kh * kw;
  const Index N = hout * wout;
  const Index tile = std::max<Index>(1, std::min(N, detail::kConvTileElems / K));

  Tensor4<T> y({x.shape.b, cout, hout, wout});
  std::vector<T> colbuf(static_cast<std::size_t>(K) * tile);
  for (Index bi = 0; bi < x.shape.b; ++bi) {
    for (Index g = 0; g < groups; ++g) {
      Eigen::Map<const RowMat> wm(w.ptr() + g * cout_g * K, cout_g, K);
      T* out0 = y.ptr() + y.offset(bi, g * cout_g, 0, 0);
      for (Index n0 = 0; n0 < N; n0 += tile) {
        const Index nt = std::min(tile, N - n0);
        detail::im2col_tile(x, bi, g * cg, cg, kh, kw, stride, pad, wout, n0, nt, colbuf.data());
        Eigen::Map<Mat> cm(colbuf.data(), K, nt);
        Eigen::Map<RowMat, 0, StrideT> om(out0 + n0, cout_g, nt, StrideT(N));
        om.noalias() = wm * cm;
      }
    }
    if (bias) {
      for (Index c = 0; c < cout; ++c) {
        T* row = y.ptr() + y.offset(bi, c, 0, 0);
        const T b = bias->data[static_cast<std::size_t>(c)];
        for (Index i = 0; i < N; ++i) row[i] += b;
      }
    }
  }

  const bool track = tape && (x.node >= 0 || w.node >= 0 || (bias && bias->node >= 0));
  if (!track) return y;

  std::vector<int> in_nodes{x.node, w.node, bias ? bias->node : kNoNode};
  Tensor4<T> xs = x.detached();
  Tensor4<T> ws = w.detached();
  y.node = tape->add_node(
      "conv2d", y.shape, in_nodes,
      [xs, ws, stride, pad, groups, cout_g, cg, kh, kw, K, N, hout, wout,
       in_nodes](Tape<T>& tp, const Tensor4<T>& g) {
        const bool need_x = in_nodes[0] != kNoNode;
        const bool need_w = in_nodes[1] != kNoNode;
        const bool need_b = in_nodes[2] != kNoNode;
        Tensor4<T> dx = need_x ? Tensor4<T>::zeros(xs.shape) : Tensor4<T>::scalar(T(0));
        Tensor4<T> dw = need_w ? Tensor4<T>::zeros(ws.shape) : Tensor4<T>::scalar(T(0));
        const Index tile = std::max<Index>(1, std::min(N, detail::kConvTileElems / K));
        std::vector<T> colbuf;
        std::vector<T> dcolbuf;
        if (need_x || need_w) colbuf.resize(static_cast<std::size_t>(K) * tile);
        if (need_x) dcolbuf.resize(static_cast<std::size_t>(K) * tile);
        for (Index bi = 0; bi < xs.shape.b; ++bi) {
          for (Index gi = 0; gi < groups; ++gi) {
            Eigen::Map<const RowMat> wm(ws.ptr() + gi * cout_g * K, cout_g, K);
            Eigen::Map<RowMat> dwm(need_w ? dw.ptr() + gi * cout_g * K : dw.ptr(),
                                   need_w ? cout_g : 0, need_w ? K : 0);
            const T* g0 = g.ptr() + g.offset(bi, gi * cout_g, 0, 0);
            for (Index n0 = 0; n0 < N && (need_x || need_w); n0 += tile) {
              const Index nt = std::min(tile, N - n0);
              detail::im2col_tile(xs, bi, gi * cg, cg, kh, kw, stride, pad, wout, n0, nt,
                                  colbuf.data());
              Eigen::Map<Mat> cm(colbuf.data(), K, nt);
              Eigen::Map<const RowMat, 0, StrideT> gm(g0 + n0, cout_g, nt, StrideT(N));
              if (need_w) dwm.noalias() += gm * cm.transpose();
              if (need_x) {
                Eigen::Map<Mat> dcm(dcolbuf.data(), K, nt);
                dcm.noalias() = wm.transpose() * gm;
                detail::col2im_tile(dx, bi, gi * cg, cg, kh, kw, stride, pad, wout, n0, nt,
                                    dcolbuf.data());
              }
            }
          }
        }
        if (need_x) tp.accumulate(in_nodes[0], dx);
        if (need_w) tp.accumulate(in_nodes[1], dw);
        if (need_b) {
          const Index cout = cout_g * groups;
          Tensor4<T> db = Tensor4<T>::zeros({1, cout, 1, 1});
          for (Index bi = 0; bi < g.shape.b; ++bi)
            for (Index c = 0; c < cout; ++c) {
              const T* row = g.ptr() + g.offset(bi, c, 0, 0);
              double acc = 0;
              for (Index i = 0; i < hout * wout; ++i) acc += row[i];
              db.data[static_cast<std::size_t>(c)] += T(acc);
            }
          tp.accumulate(in_nodes[2], db);
        }
      });
  return y;
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& w, std::nullptr_t, Index stride,
                  Index pad, Index groups = 1, Tape<T>* tape = nullptr) {
  return conv2d(x, w, static_cast<const Tensor4<T>*>(nullptr), stride, pad, groups, tape);
}

// Straightforward seven-loop convolution used as a test oracle.
template <typename T>
Tensor4<T> conv2d_direct(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>* bias,
                         Index stride, Index pad, Index groups = 1) {
  const Index cout = w.shape.b, cg = w.shape.c, kh = w.shape.h, kw = w.shape.w;
  if (x.shape.c != cg * groups || cout % groups != 0) fail("conv2d_direct: shape mismatch");
  const Index hout = detail::conv_out_extent(x.shape.h, kh, stride, pad, "height");
  const Index wout = detail::conv_out_extent(x.shape.w, kw, stride, pad, "width");
  const Index cout_g = cout / groups;
  Tensor4<T> y({x.shape.b, cout, hout, wout});
  for (Index bi = 0; bi < x.shape.b; ++bi)
    for (Index co = 0; co < cout; ++co) {
      const Index gi = co / cout_g;
      for (Index oh = 0; oh < hout; ++oh)
        for (Index ow = 0; ow < wout; ++ow) {
          double acc = bias ? bias->data[static_cast<std::size_t>(co)] : 0.0;
          for (Index c = 0; c < cg; ++c)
            for (Index r = 0; r < kh; ++r)
              for (Index s = 0; s < kw; ++s) {
                const Index ih = oh * stride - pad + r;
                const Index iw = ow * stride - pad + s;
                if (ih >= 0 && ih < x.shape.h && iw >= 0 && iw < x.shape.w)
                  acc += double(x.at(bi, gi * cg + c, ih, iw)) * double(w.at(co, c, r, s));
              }
          y.at(bi, co, oh, ow) = T(acc);
        }
    }
  return y;
}

template <typename T>
Tensor4<T> conv2d_direct(const Tensor4<T>& x, const Tensor4<T>& w, std::nullptr_t, Index stride,
                         Index pad, Index groups = 1) {
  return conv2d_direct(x, w, static_cast<const Tensor4<T>*>(nullptr), stride, pad, groups);
}

// Batch normalization over (B,H,W) per channel. gamma/beta/running stats are
// (1,C,1,1). Training mode normalizes by biased batch statistics and, when
// update_stats is set, folds the unbiased variance into the running estimate
// the way torch does.
template <typename T>
Tensor4<T> batchnorm2d(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                       Tensor4<T>& running_mean, Tensor4<T>& running_var, Mode mode,
                       bool update_stats, T eps, T momentum, Tape<T>* tape = nullptr) {
  const Index C = x.shape.c;
  const Shape4 cshape{1, C, 1, 1};
  if (!(gamma.shape == cshape) || !(beta.shape == cshape) || !(running_mean.shape == cshape) ||
      !(running_var.shape == cshape))
    fail("batchnorm2d: per-channel tensors must be (1,", C, ",1,1)");

  const Index B = x.shape.b, HW = x.shape.h * x.shape.w;
  const Index n = B * HW;
  std::vector<T> mean(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
  const bool training = mode == Mode::Train;
  if (training) {
    for (Index c = 0; c < C; ++c) {
      double s = 0, s2 = 0;
      for (Index bi = 0; bi < B; ++bi) {
        const T* row = x.ptr() + x.offset(bi, c, 0, 0);
        for (Index i = 0; i < HW; ++i) {
          s += row[i];
          s2 += double(row[i]) * double(row[i]);
        }
      }
      const double mu = s / n;
      const double var = std::max(0.0, s2 / n - mu * mu);
      mean[static_cast<std::size_t>(c)] = T(mu);
      inv_std[static_cast<std::size_t>(c)] = T(1.0 / std::sqrt(var + double(eps)));
      if (update_stats) {
        const double var_unbiased = n > 1 ? var * double(n) / double(n - 1) : var;
        auto& rm = running_mean.data[static_cast<std::size_t>(c)];
        auto& rv = running_var.data[static_cast<std::size_t>(c)];
        rm = T((1.0 - double(momentum)) * rm + double(momentum) * mu);
        rv = T((1.0 - double(momentum)) * rv + double(momentum) * var_unbiased);
      }
    }
  } else {
    for (Index c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean.data[static_cast<std::size_t>(c)];
      inv_std[static_cast<std::size_t>(c)] =
          T(1.0 / std::sqrt(double(running_var.data[static_cast<std::size_t>(c)]) + double(eps)));
    }
  }

  Tensor4<T> xhat(x.shape);
  Tensor4<T> y(x.shape);
  for (Index bi = 0; bi < B; ++bi)
    for (Index c = 0; c < C; ++c) {
      const T* row = x.ptr() + x.offset(bi, c, 0, 0);
      T* xh = xhat.ptr() + xhat.offset(bi, c, 0, 0);
      T* out = y.ptr() + y.offset(bi, c, 0, 0);
      const T mu = mean[static_cast<std::size_t>(c)];
      const T is = inv_std[static_cast<std::size_t>(c)];
      const T ga = gamma.data[static_cast<std::size_t>(c)];
      const T be = beta.data[static_cast<std::size_t>(c)];
      for (Index i = 0; i < HW; ++i) {
        xh[i] = (row[i] - mu) * is;
        out[i] = ga * xh[i] + be;
      }
    }

  const bool track = tape && (x.node >= 0 || gamma.node >= 0 || beta.node >= 0);
  if (!track) return y;

  std::vector<int> in_nodes{x.node, gamma.node, beta.node};
  Tensor4<T> gs = gamma.detached();
  y.node = tape->add_node(
      "batchnorm2d", y.shape, in_nodes,
      [xhat, gs, inv_std, training, n, in_nodes](Tape<T>& tp, const Tensor4<T>& g) {
        const Index B = g.shape.b, C = g.shape.c, HW = g.shape.h * g.shape.w;
        std::vector<double> sum_g(static_cast<std::size_t>(C), 0.0);
        std::vector<double> sum_gx(static_cast<std::size_t>(C), 0.0);
        for (Index bi = 0; bi < B; ++bi)
          for (Index c = 0; c < C; ++c) {
            const T* gr = g.ptr() + g.offset(bi, c, 0, 0);
            const T* xh = xhat.ptr() + xhat.offset(bi, c, 0, 0);
            double a = 0, b = 0;
            for (Index i = 0; i < HW; ++i) {
              a += gr[i];
              b += double(gr[i]) * double(xh[i]);
            }
            sum_g[static_cast<std::size_t>(c)] += a;
            sum_gx[static_cast<std::size_t>(c)] += b;
          }
        if (in_nodes[0] != kNoNode) {
          Tensor4<T> dx(g.shape);
          for (Index bi = 0; bi < B; ++bi)
            for (Index c = 0; c < C; ++c) {
              const T* gr = g.ptr() + g.offset(bi, c, 0, 0);
              const T* xh = xhat.ptr() + xhat.offset(bi, c, 0, 0);
              T* dst = dx.ptr() + dx.offset(bi, c, 0, 0);
              const double ga = gs.data[static_cast<std::size_t>(c)];
              const double is = inv_std[static_cast<std::size_t>(c)];
              const double mg = sum_g[static_cast<std::size_t>(c)] / n;
              const double mgx = sum_gx[static_cast<std::size_t>(c)] / n;
              if (training) {
                for (Index i = 0; i < HW; ++i)
                  dst[i] = T(ga * is * (double(gr[i]) - mg - double(xh[i]) * mgx));
              } else {
                for (Index i = 0; i < HW; ++i) dst[i] = T(ga * is * double(gr[i]));
              }
            }
          tp.accumulate(in_nodes[0], dx);
        }
        if (in_nodes[1] != kNoNode) {
          Tensor4<T> dg({1, C, 1, 1});
          for (Index c = 0; c < C; ++c)
            dg.data[static_cast<std::size_t>(c)] = T(sum_gx[static_cast<std::size_t>(c)]);
          tp.accumulate(in_nodes[1], dg);
        }
        if (in_nodes[2] != kNoNode) {
          Tensor4<T> db({1, C, 1, 1});
          for (Index c = 0; c < C; ++c)
            db.data[static_cast<std::size_t>(c)] = T(sum_g[static_cast<std::size_t>(c)]);
          tp.accumulate(in_nodes[2], db);
        }
      });
  return y;
}

// Max pooling with explicit kernel/stride/pad. Ties go to the lowest flat
// index so forward and backward agree bit for bit across reruns.
template <typename T>
Tensor4<T> maxpool2d(const Tensor4<T>& x, Index k, Index stride, Index pad,
                     Tape<T>* tape = nullptr) {
  const Index hout = detail::conv_out_extent(x.shape.h, k, stride, pad, "height");
  const Index wout = detail::conv_out_extent(x.shape.w, k, stride, pad, "width");
  Tensor4<T> y({x.shape.b, x.shape.c, hout, wout});
  std::vector<Index> argmax(static_cast<std::size_t>(y.numel()));
  Index oi = 0;
  for (Index bi = 0; bi < x.shape.b; ++bi)
    for (Index c = 0; c < x.shape.c; ++c) {
      const T* src = x.ptr() + x.offset(bi, c, 0, 0);
      for (Index oh = 0; oh < hout; ++oh)
        for (Index ow = 0; ow < wout; ++ow) {
          T best = -std::numeric_limits<T>::infinity();
          Index best_at = -1;
          for (Index r = 0; r < k; ++r) {
            const Index ih = oh * stride - pad + r;
            if (ih < 0 || ih >= x.shape.h) continue;
            for (Index s = 0; s < k; ++s) {
              const Index iw = ow * stride - pad + s;
              if (iw < 0 || iw >= x.shape.w) continue;
              const T v = src[ih * x.shape.w + iw];
              if (v > best) {
                best = v;
                best_at = x.offset(bi, c, ih, iw);
              }
            }
          }
          if (best_at < 0) fail("maxpool2d: window at (", oh, ",", ow, ") is entirely padding");
          y.data[static_cast<std::size_t>(oi)] = best;
          argmax[static_cast<std::size_t>(oi)] = best_at;
          ++oi;
        }
    }

  if (!tape || x.node < 0) return y;
  const int xn = x.node;
  const Shape4 xshape = x.shape;
  y.node = tape->add_node("maxpool2d", y.shape, {xn},
                          [argmax, xn, xshape](Tape<T>& tp, const Tensor4<T>& g) {
                            Tensor4<T> dx = Tensor4<T>::zeros(xshape);
                            for (Index i = 0; i < g.numel(); ++i)
                              dx.data[static_cast<std::size_t>(
                                  argmax[static_cast<std::size_t>(i)])] +=
                                  g.data[static_cast<std::size_t>(i)];
                            tp.accumulate(xn, dx);
                          });
  return y;
}

namespace detail {

struct LerpIdx {
  Index i0, i1;
  double w1;  // weight on i1, weight on i0 is 1-w1
};

// Half-pixel source mapping for a x2 upsample, negative positions clamped.
inline LerpIdx upsample_src(Index dst, Index in_extent) {
  double src = (double(dst) + 0.5) * 0.5 - 0.5;
  if (src < 0) src = 0;
  Index i0 = std::min(Index(src), in_extent - 1);
  Index i1 = std::min(i0 + 1, in_extent - 1);
  return {i0, i1, src - double(i0)};
}

}  // namespace detail

// Bilinear x2 upsampling with half-pixel alignment.
template <typename T>
Tensor4<T> bilinear_upsample_x2(const Tensor4<T>& x, Tape<T>* tape = nullptr) {
  const Index hin = x.shape.h, win = x.shape.w;
  const Index hout = 2 * hin, wout = 2 * win;
  Tensor4<T> y({x.shape.b, x.shape.c, hout, wout});
  std::vector<detail::LerpIdx> hm(static_cast<std::size_t>(hout)),
      wm(static_cast<std::size_t>(wout));
  for (Index i = 0; i < hout; ++i) hm[static_cast<std::size_t>(i)] = detail::upsample_src(i, hin);
  for (Index i = 0; i < wout; ++i) wm[static_cast<std::size_t>(i)] = detail::upsample_src(i, win);

  for (Index bi = 0; bi < x.shape.b; ++bi)
    for (Index c = 0; c < x.shape.c; ++c) {
      const T* src = x.ptr() + x.offset(bi, c, 0, 0);
      T* dst = y.ptr() + y.offset(bi, c, 0, 0);
      for (Index oh = 0; oh < hout; ++oh) {
        const auto& H = hm[static_cast<std::size_t>(oh)];
        for (Index ow = 0; ow < wout; ++ow) {
          const auto& W = wm[static_cast<std::size_t>(ow)];
          const double top =
              (1 - W.w1) * src[H.i0 * win + W.i0] + W.w1 * src[H.i0 * win + W.i1];
          const double bot =
              (1 - W.w1) * src[H.i1 * win + W.i0] + W.w1 * src[H.i1 * win + W.i1];
          dst[oh * wout + ow] = T((1 - H.w1) * top + H.w1 * bot);
        }
      }
    }

  if (!tape || x.node < 0) return y;
  const int xn = x.node;
  const Shape4 xshape = x.shape;
  y.node = tape->add_node(
      "bilinear_upsample_x2", y.shape, {xn},
      [hm, wm, xn, xshape](Tape<T>& tp, const Tensor4<T>& g) {
        Tensor4<T> dx = Tensor4<T>::zeros(xshape);
        const Index win = xshape.w;
        for (Index bi = 0; bi < g.shape.b; ++bi)
          for (Index c = 0; c < g.shape.c; ++c) {
            const T* gr = g.ptr() + g.offset(bi, c, 0, 0);
            T* dst = dx.ptr() + dx.offset(bi, c, 0, 0);
            for (Index oh = 0; oh < g.shape.h; ++oh) {
              const auto& H = hm[static_cast<std::size_t>(oh)];
              for (Index ow = 0; ow < g.shape.w; ++ow) {
                const auto& W = wm[static_cast<std::size_t>(ow)];
                const double gv = gr[oh * g.shape.w + ow];
                dst[H.i0 * win + W.i0] += T((1 - H.w1) * (1 - W.w1) * gv);
                dst[H.i0 * win + W.i1] += T((1 - H.w1) * W.w1 * gv);
                dst[H.i1 * win + W.i0] += T(H.w1 * (1 - W.w1) * gv);
                dst[H.i1 * win + W.i1] += T(H.w1 * W.w1 * gv);
              }
            }
          }
        tp.accumulate(xn, dx);
      });
  return y;
}

// He-uniform fill over [-sqrt(6/fan_in), sqrt(6/fan_in)].
template <typename T>
void kaiming_uniform(Tensor4<T>& w, Index fan_in, Rng& rng) {
  if (fan_in < 1) fail("kaiming_uniform: fan_in must be positive");
  const double bound = std::sqrt(6.0 / double(fan_in));
  for (auto& v : w.data) v = T(rng.uniform(-bound, bound));
}

}  // namespace gca
