#pragma once
// Channel/coordinate attention blocks. The grouped coordinate block pools the
// feature map along each spatial axis per channel group, runs the stacked
// directional descriptors through a squeeze conv + BN + ReLU + expand conv
// bottleneck, and gates the input with the resulting per-direction maps.

#include <variant>

#include "gca/nn.hpp"
#include "gca/ops.hpp"
#include "gca/params.hpp"
#include "gca/tape.hpp"
#include "gca/tensor.hpp"

namespace gca {

enum class AttentionKind { None, Gca, Se, Cbam, CoordAtt };

enum class PoolKind { Avg, Max, AvgMax };

struct AttentionConfig {
  AttentionKind kind = AttentionKind::Gca;
  Index groups = 2;
  Index reduction = 2;
  PoolKind pooling = PoolKind::AvgMax;
  bool share_across_groups = false;
  Index min_mid = 4;  // floor on bottleneck width
};

// The coordinate-attention variant is the grouped block pinned to one group
// with plain average pooling and unshared weights.
inline AttentionConfig normalized(AttentionConfig cfg) {
  if (cfg.kind == AttentionKind::CoordAtt) {
    cfg.groups = 1;
    cfg.pooling = PoolKind::Avg;
    cfg.share_across_groups = false;
  }
  return cfg;
}

inline Index bottleneck_width(Index channels, Index reduction, Index min_mid) {
  return std::max(channels / reduction, min_mid);
}

// Closed-form parameter count for one attention site on a C-channel map.
// BN contributes four per bottleneck channel (affine pair plus running stats).
inline Index attention_param_count(Index C, const AttentionConfig& raw) {
  const AttentionConfig cfg = normalized(raw);
  switch (cfg.kind) {
    case AttentionKind::None:
      return 0;
    case AttentionKind::Gca:
    case AttentionKind::CoordAtt: {
      if (C % cfg.groups != 0)
        fail("attention_param_count: ", C, " channels not divisible by ", cfg.groups, " groups");
      const Index cg = C / cfg.groups;
      const Index mid = bottleneck_width(cg, cfg.reduction, cfg.min_mid);
      const Index per_group = 2 * cg * mid + 4 * mid;
      return cfg.share_across_groups ? per_group : cfg.groups * per_group;
    }
    case AttentionKind::Se: {
      const Index mid = bottleneck_width(C, cfg.reduction, cfg.min_mid);
      return 2 * C * mid + mid + C;
    }
    case AttentionKind::Cbam: {
      const Index mid = bottleneck_width(C, cfg.reduction, cfg.min_mid);
      return 2 * C * mid + mid + C + (2 * 7 * 7 + 1);
    }
  }
  fail("attention_param_count: bad kind");
}

// BN channels inside one attention site; running stats are the non-trainable
// half of their 4-per-channel cost.
inline Index attention_bn_channels(Index C, const AttentionConfig& raw) {
  const AttentionConfig cfg = normalized(raw);
  if (cfg.kind != AttentionKind::Gca && cfg.kind != AttentionKind::CoordAtt) return 0;
  if (C % cfg.groups != 0)
    fail("attention_bn_channels: ", C, " channels not divisible by ", cfg.groups, " groups");
  const Index mid = bottleneck_width(C / cfg.groups, cfg.reduction, cfg.min_mid);
  return (cfg.share_across_groups ? 1 : cfg.groups) * mid;
}

template <typename T>
struct GcaParams {
  Tensor4<T> w1, w2;  // grouped 1x1 squeeze/expand, no biases
  Tensor4<T> gamma, beta, running_mean, running_var;
};

template <typename T>
struct SeParams {
  Tensor4<T> w1, b1, w2, b2;
};

template <typename T>
struct CbamParams {
  Tensor4<T> w1, b1, w2, b2;  // shared channel MLP
  Tensor4<T> sw, sb;          // 7x7 spatial conv
};

template <typename T>
using AttParams = std::variant<std::monostate, GcaParams<T>, SeParams<T>, CbamParams<T>>;

template <typename T>
AttParams<T> make_attention(Index C, const AttentionConfig& raw) {
  const AttentionConfig cfg = normalized(raw);
  if (cfg.reduction < 1 || cfg.min_mid < 1 || cfg.groups < 1)
    fail("make_attention: groups/reduction/min_mid must be positive");
  switch (cfg.kind) {
    case AttentionKind::None:
      return std::monostate{};
    case AttentionKind::Gca:
    case AttentionKind::CoordAtt: {
      if (C % cfg.groups != 0)
        fail("make_attention: ", C, " channels not divisible by ", cfg.groups, " groups");
      const Index cg = C / cfg.groups;
      const Index mid = bottleneck_width(cg, cfg.reduction, cfg.min_mid);
      const Index reps = cfg.share_across_groups ? 1 : cfg.groups;
      GcaParams<T> p;
      p.w1 = Tensor4<T>({reps * mid, cg, 1, 1});
      p.w2 = Tensor4<T>({reps * cg, mid, 1, 1});
      const Shape4 bn{1, reps * mid, 1, 1};
      p.gamma = Tensor4<T>(bn);
      p.beta = Tensor4<T>(bn);
      p.running_mean = Tensor4<T>(bn);
      p.running_var = Tensor4<T>(bn);
      return p;
    }
    case AttentionKind::Se: {
      const Index mid = bottleneck_width(C, cfg.reduction, cfg.min_mid);
      SeParams<T> p;
      p.w1 = Tensor4<T>({mid, C, 1, 1});
      p.b1 = Tensor4<T>({1, mid, 1, 1});
      p.w2 = Tensor4<T>({C, mid, 1, 1});
      p.b2 = Tensor4<T>({1, C, 1, 1});
      return p;
    }
    case AttentionKind::Cbam: {
      const Index mid = bottleneck_width(C, cfg.reduction, cfg.min_mid);
      CbamParams<T> p;
      p.w1 = Tensor4<T>({mid, C, 1, 1});
      p.b1 = Tensor4<T>({1, mid, 1, 1});
      p.w2 = Tensor4<T>({C, mid, 1, 1});
      p.b2 = Tensor4<T>({1, C, 1, 1});
      p.sw = Tensor4<T>({1, 2, 7, 7});
      p.sb = Tensor4<T>({1, 1, 1, 1});
      return p;
    }
  }
  fail("make_attention: bad kind");
}

template <typename T>
void register_attention(ParamRegistry<T>& reg, const std::string& prefix, AttParams<T>& p) {
  if (auto* g = std::get_if<GcaParams<T>>(&p)) {
    reg.add(prefix + ".w1", g->w1, ParamKind::ConvWeight);
    reg.add(prefix + ".w2", g->w2, ParamKind::ConvWeight);
    reg.add(prefix + ".bn.gamma", g->gamma, ParamKind::BnGamma);
    reg.add(prefix + ".bn.beta", g->beta, ParamKind::BnBeta);
    reg.add(prefix + ".bn.running_mean", g->running_mean, ParamKind::BnMean);
    reg.add(prefix + ".bn.running_var", g->running_var, ParamKind::BnVar);
  } else if (auto* s = std::get_if<SeParams<T>>(&p)) {
    reg.add(prefix + ".w1", s->w1, ParamKind::ConvWeight);
    reg.add(prefix + ".b1", s->b1, ParamKind::Bias);
    reg.add(prefix + ".w2", s->w2, ParamKind::ConvWeight);
    reg.add(prefix + ".b2", s->b2, ParamKind::Bias);
  } else if (auto* c = std::get_if<CbamParams<T>>(&p)) {
    reg.add(prefix + ".w1", c->w1, ParamKind::ConvWeight);
    reg.add(prefix + ".b1", c->b1, ParamKind::Bias);
    reg.add(prefix + ".w2", c->w2, ParamKind::ConvWeight);
    reg.add(prefix + ".b2", c->b2, ParamKind::Bias);
    reg.add(prefix + ".spatial.weight", c->sw, ParamKind::ConvWeight);
    reg.add(prefix + ".spatial.bias", c->sb, ParamKind::Bias);
  }
}

// Intermediates exposed for structural tests.
template <typename T>
struct GcaTrace {
  Tensor4<T> fh;    // (B,C,H,1) pooled over width
  Tensor4<T> fw;    // (B,C,1,W) pooled over height
  Tensor4<T> fcat;  // (B,C,H+W,1) stacked descriptors
  Tensor4<T> att;   // (B,C,H+W,1) gate values in (0,1)
  Tensor4<T> ah;    // (B,C,H,1)
  Tensor4<T> aw;    // (B,C,1,W)
};

namespace detail {

template <typename T>
Tensor4<T> pool_axis(const Tensor4<T>& x, Axis axis, PoolKind kind, Tape<T>* tape) {
  switch (kind) {
    case PoolKind::Avg:
      return reduce_axis(x, axis, Reduce::Mean, tape);
    case PoolKind::Max:
      return reduce_axis(x, axis, Reduce::Max, tape);
    case PoolKind::AvgMax:
      return add(reduce_axis(x, axis, Reduce::Mean, tape), reduce_axis(x, axis, Reduce::Max, tape),
                 tape);
  }
  fail("pool_axis: bad kind");
}

template <typename T>
Tensor4<T> gca_forward(const Tensor4<T>& x, const AttentionConfig& cfg, GcaParams<T>& p, Mode mode,
                       bool update_stats, T bn_eps, T bn_momentum, Tape<T>* tape,
                       GcaTrace<T>* trace) {
  const Index B = x.shape.b, C = x.shape.c, H = x.shape.h, W = x.shape.w;
  const Index G = cfg.groups;
  if (C % G != 0) fail("gca_forward: ", C, " channels not divisible by ", G, " groups");

  Tensor4<T> fh = pool_axis(x, Axis::W, cfg.pooling, tape);  // (B,C,H,1)
  Tensor4<T> fw = pool_axis(x, Axis::H, cfg.pooling, tape);  // (B,C,1,W)
  Tensor4<T> fcat = concat(fh, swap_hw(fw, tape), Axis::H, tape);

  Tensor4<T> z = fcat;
  Index conv_groups = G;
  if (cfg.share_across_groups) {
    // fold groups into the batch so one weight set serves all of them
    z = reshape_bc(z, B * G, C / G, tape);
    conv_groups = 1;
  }
  Tensor4<T> m = conv2d(z, p.w1, nullptr, 1, 0, conv_groups, tape);
  m = batchnorm2d(m, p.gamma, p.beta, p.running_mean, p.running_var, mode, update_stats, bn_eps,
                  bn_momentum, tape);
  m = relu(m, tape);
  Tensor4<T> a = conv2d(m, p.w2, nullptr, 1, 0, conv_groups, tape);
  if (cfg.share_across_groups) a = reshape_bc(a, B, C, tape);
  a = sigmoid(a, tape);

  Tensor4<T> ah = slice(a, Axis::H, 0, H, tape);
  Tensor4<T> aw = swap_hw(slice(a, Axis::H, H, W, tape), tape);
  if (trace) {
    trace->fh = fh.detached();
    trace->fw = fw.detached();
    trace->fcat = fcat.detached();
    trace->att = a.detached();
    trace->ah = ah.detached();
    trace->aw = aw.detached();
  }
  return broadcast_mul(broadcast_mul(x, ah, tape), aw, tape);
}

template <typename T>
Tensor4<T> se_forward(const Tensor4<T>& x, SeParams<T>& p, Tape<T>* tape) {
  Tensor4<T> s = reduce_axis(reduce_axis(x, Axis::H, Reduce::Mean, tape), Axis::W, Reduce::Mean,
                             tape);  // (B,C,1,1)
  s = conv2d(s, p.w1, &p.b1, 1, 0, 1, tape);
  s = relu(s, tape);
  s = conv2d(s, p.w2, &p.b2, 1, 0, 1, tape);
  s = sigmoid(s, tape);
  return broadcast_mul(x, s, tape);
}

template <typename T>
Tensor4<T> cbam_forward(const Tensor4<T>& x, CbamParams<T>& p, Tape<T>* tape) {
  auto mlp = [&](const Tensor4<T>& t) {
    return conv2d(relu(conv2d(t, p.w1, &p.b1, 1, 0, 1, tape), tape), p.w2, &p.b2, 1, 0, 1, tape);
  };
  Tensor4<T> avg =
      reduce_axis(reduce_axis(x, Axis::H, Reduce::Mean, tape), Axis::W, Reduce::Mean, tape);
  Tensor4<T> mx =
      reduce_axis(reduce_axis(x, Axis::H, Reduce::Max, tape), Axis::W, Reduce::Max, tape);
  Tensor4<T> ch = sigmoid(add(mlp(avg), mlp(mx), tape), tape);
  Tensor4<T> xc = broadcast_mul(x, ch, tape);

  Tensor4<T> sm = channel_reduce(xc, Reduce::Mean, tape);
  Tensor4<T> sx = channel_reduce(xc, Reduce::Max, tape);
  Tensor4<T> sp = sigmoid(conv2d(concat(sm, sx, Axis::C, tape), p.sw, &p.sb, 1, 3, 1, tape), tape);
  return broadcast_mul(xc, sp, tape);
}

}  // namespace detail

template <typename T>
Tensor4<T> attention_forward(const Tensor4<T>& x, const AttentionConfig& raw, AttParams<T>& p,
                             Mode mode, bool update_stats, T bn_eps, T bn_momentum,
                             Tape<T>* tape = nullptr, GcaTrace<T>* trace = nullptr) {
  const AttentionConfig cfg = normalized(raw);
  switch (cfg.kind) {
    case AttentionKind::None:
      return x;  // keeps the tape node, gradients flow straight through
    case AttentionKind::Gca:
    case AttentionKind::CoordAtt:
      return detail::gca_forward(x, cfg, std::get<GcaParams<T>>(p), mode, update_stats, bn_eps,
                                 bn_momentum, tape, trace);
    case AttentionKind::Se:
      return detail::se_forward(x, std::get<SeParams<T>>(p), tape);
    case AttentionKind::Cbam:
      return detail::cbam_forward(x, std::get<CbamParams<T>>(p), tape);
  }
  fail("attention_forward: bad kind");
}

}  // namespace gca
