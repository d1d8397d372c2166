#pragma once
// Residual encoder: 7x7 stem, four bottleneck stages of depth 3/4/6/3 with
// channel expansion 4 and the stride carried by each stage's first 3x3 conv.
// Every bottleneck can gate its expanded features with an attention block
// between the last BN and the residual add. Widths scale by a global factor,
// rounded so grouped attention always divides cleanly.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "gca/attention.hpp"
#include "gca/nn.hpp"
#include "gca/ops.hpp"
#include "gca/params.hpp"
#include "gca/tensor.hpp"

namespace gca {

inline constexpr Index kStageDepths[4] = {3, 4, 6, 3};
inline constexpr Index kStageMids[4] = {64, 128, 256, 512};
inline constexpr Index kStageStrides[4] = {1, 2, 2, 2};
inline constexpr Index kExpansion = 4;
inline constexpr Index kStemWidth = 64;

using StageMask = std::array<bool, 4>;

// Widths round to the nearest multiple of the quantum (twice the group count
// for grouped attention, so per-group channel counts stay even).
inline Index width_quantum(const AttentionConfig& raw) {
  const AttentionConfig cfg = normalized(raw);
  if (cfg.kind == AttentionKind::Gca || cfg.kind == AttentionKind::CoordAtt)
    return 2 * cfg.groups;
  return 1;
}

inline Index scale_width(Index base, double scale, Index q) {
  if (scale <= 0) fail("scale_width: scale must be positive, got ", scale);
  Index m = static_cast<Index>(std::llround(double(base) * scale / double(q)));
  if (m < 1) m = 1;
  return m * q;
}

struct BlockSpec {
  Index stage;  // 0-based
  Index index;  // within the stage
  Index in_ch, mid_ch, out_ch, stride;
  bool proj;
  bool attended;
};

inline std::vector<BlockSpec> encoder_inventory(double width_scale, const AttentionConfig& att,
                                                const StageMask& mask) {
  const Index q = width_quantum(att);
  const bool has_att = normalized(att).kind != AttentionKind::None;
  std::vector<BlockSpec> out;
  Index in = scale_width(kStemWidth, width_scale, q);
  for (Index s = 0; s < 4; ++s) {
    const Index mid = scale_width(kStageMids[s], width_scale, q);
    for (Index j = 0; j < kStageDepths[s]; ++j) {
      BlockSpec b;
      b.stage = s;
      b.index = j;
      b.in_ch = in;
      b.mid_ch = mid;
      b.out_ch = kExpansion * mid;
      b.stride = j == 0 ? kStageStrides[s] : 1;
      b.proj = b.stride != 1 || b.in_ch != b.out_ch;
      b.attended = has_att && mask[static_cast<std::size_t>(s)];
      out.push_back(b);
      in = b.out_ch;
    }
  }
  return out;
}

template <typename T>
struct Projection {
  Tensor4<T> w;
  BnParams<T> bn;
};

template <typename T>
struct Bottleneck {
  BlockSpec spec;
  Tensor4<T> w1, w2, w3;
  BnParams<T> bn1, bn2, bn3;
  std::optional<Projection<T>> proj;
  AttParams<T> att;  // monostate unless spec.attended
};

template <typename T>
struct Encoder {
  Index in_channels = 3;
  Index stem_width = kStemWidth;
  Tensor4<T> stem_w;
  BnParams<T> stem_bn;
  std::vector<Bottleneck<T>> blocks;
};

template <typename T>
Encoder<T> make_encoder(Index in_channels, double width_scale, const AttentionConfig& att,
                        const StageMask& mask) {
  Encoder<T> enc;
  enc.in_channels = in_channels;
  enc.stem_width = scale_width(kStemWidth, width_scale, width_quantum(att));
  enc.stem_w = Tensor4<T>({enc.stem_width, in_channels, 7, 7});
  enc.stem_bn = BnParams<T>(enc.stem_width);
  for (const BlockSpec& s : encoder_inventory(width_scale, att, mask)) {
    Bottleneck<T> b;
    b.spec = s;
    b.w1 = Tensor4<T>({s.mid_ch, s.in_ch, 1, 1});
    b.bn1 = BnParams<T>(s.mid_ch);
    b.w2 = Tensor4<T>({s.mid_ch, s.mid_ch, 3, 3});
    b.bn2 = BnParams<T>(s.mid_ch);
    b.w3 = Tensor4<T>({s.out_ch, s.mid_ch, 1, 1});
    b.bn3 = BnParams<T>(s.out_ch);
    if (s.proj)
      b.proj = Projection<T>{Tensor4<T>({s.out_ch, s.in_ch, 1, 1}), BnParams<T>(s.out_ch)};
    b.att = s.attended ? make_attention<T>(s.out_ch, att) : AttParams<T>{};
    enc.blocks.push_back(std::move(b));
  }
  return enc;
}

template <typename T>
void register_encoder(ParamRegistry<T>& reg, Encoder<T>& enc) {
  reg.add("encoder.stem.conv.weight", enc.stem_w, ParamKind::ConvWeight);
  register_bn(reg, "encoder.stem.bn", enc.stem_bn);
  for (auto& b : enc.blocks) {
    const std::string p =
        "encoder.layer" + std::to_string(b.spec.stage + 1) + "." + std::to_string(b.spec.index);
    reg.add(p + ".conv1.weight", b.w1, ParamKind::ConvWeight);
    register_bn(reg, p + ".bn1", b.bn1);
    reg.add(p + ".conv2.weight", b.w2, ParamKind::ConvWeight);
    register_bn(reg, p + ".bn2", b.bn2);
    reg.add(p + ".conv3.weight", b.w3, ParamKind::ConvWeight);
    register_bn(reg, p + ".bn3", b.bn3);
    if (b.spec.attended) register_attention(reg, p + ".att", b.att);
    if (b.proj) {
      reg.add(p + ".proj.conv.weight", b.proj->w, ParamKind::ConvWeight);
      register_bn(reg, p + ".proj.bn", b.proj->bn);
    }
  }
}

template <typename T>
Tensor4<T> bottleneck_forward(Bottleneck<T>& b, const Tensor4<T>& x, const AttentionConfig& att,
                              Mode mode, bool update_stats, T eps, T momentum,
                              Tape<T>* tape = nullptr) {
  Tensor4<T> idn = x;
  if (b.proj)
    idn = bn_apply(conv2d(x, b.proj->w, nullptr, b.spec.stride, 0, 1, tape), b.proj->bn, mode,
                   update_stats, eps, momentum, tape);
  Tensor4<T> y = relu(
      bn_apply(conv2d(x, b.w1, nullptr, 1, 0, 1, tape), b.bn1, mode, update_stats, eps, momentum,
               tape),
      tape);
  y = relu(bn_apply(conv2d(y, b.w2, nullptr, b.spec.stride, 1, 1, tape), b.bn2, mode, update_stats,
                    eps, momentum, tape),
           tape);
  y = bn_apply(conv2d(y, b.w3, nullptr, 1, 0, 1, tape), b.bn3, mode, update_stats, eps, momentum,
               tape);
  if (b.spec.attended)
    y = attention_forward(y, att, b.att, mode, update_stats, eps, momentum, tape);
  return relu(add(y, idn, tape), tape);
}

// Skip-connection taps: f0 is the stem output at half resolution (before the
// pooling), f1..f4 are the stage outputs at 1/4 .. 1/32.
template <typename T>
struct EncoderFeatures {
  Tensor4<T> f0, f1, f2, f3, f4;
};

template <typename T>
EncoderFeatures<T> encoder_forward(Encoder<T>& enc, const Tensor4<T>& x,
                                   const AttentionConfig& att, Mode mode, bool update_stats, T eps,
                                   T momentum, Tape<T>* tape = nullptr) {
  if (x.shape.c != enc.in_channels)
    fail("encoder_forward: input has ", x.shape.c, " channels, encoder expects ",
         enc.in_channels);
  EncoderFeatures<T> f;
  f.f0 = relu(bn_apply(conv2d(x, enc.stem_w, nullptr, 2, 3, 1, tape), enc.stem_bn, mode,
                       update_stats, eps, momentum, tape),
              tape);
  Tensor4<T> cur = maxpool2d(f.f0, 3, 2, 1, tape);
  for (auto& b : enc.blocks) {
    cur = bottleneck_forward(b, cur, att, mode, update_stats, eps, momentum, tape);
    if (b.spec.index == kStageDepths[b.spec.stage] - 1) {
      switch (b.spec.stage) {
        case 0: f.f1 = cur; break;
        case 1: f.f2 = cur; break;
        case 2: f.f3 = cur; break;
        default: f.f4 = cur; break;
      }
    }
  }
  return f;
}

// Conv multiply-accumulates for one image through the encoder.
inline Index encoder_macs(Index in_channels, double width_scale, const AttentionConfig& raw,
                          const StageMask& mask, Index height, Index width) {
  Index macs = 0;
  auto conv = [&](Index cout, Index cin, Index k, Index h, Index w) {
    macs += cout * cin * k * k * h * w;
  };
  const AttentionConfig att = normalized(raw);
  const bool grouped_att =
      att.kind == AttentionKind::Gca || att.kind == AttentionKind::CoordAtt;
  Index h = height / 2, w = width / 2;
  const Index stem = scale_width(kStemWidth, width_scale, width_quantum(raw));
  conv(stem, in_channels, 7, h, w);
  h /= 2;
  w /= 2;
  for (const BlockSpec& b : encoder_inventory(width_scale, raw, mask)) {
    conv(b.mid_ch, b.in_ch, 1, h, w);  // conv1 runs before the stride
    if (b.stride == 2) {
      h /= 2;
      w /= 2;
    }
    conv(b.mid_ch, b.mid_ch, 3, h, w);
    conv(b.out_ch, b.mid_ch, 1, h, w);
    if (b.proj) conv(b.out_ch, b.in_ch, 1, h, w);
    if (b.attended) {
      if (grouped_att) {
        const Index cg = b.out_ch / att.groups;
        const Index mid = bottleneck_width(cg, att.reduction, att.min_mid);
        // grouped or shared, every group's rows pass through both 1x1 convs
        conv(att.groups * mid, cg, 1, h + w, 1);
        conv(att.groups * cg, mid, 1, h + w, 1);
      } else if (att.kind == AttentionKind::Se || att.kind == AttentionKind::Cbam) {
        const Index mid = bottleneck_width(b.out_ch, att.reduction, att.min_mid);
        const Index passes = att.kind == AttentionKind::Cbam ? 2 : 1;
        conv(passes * mid, b.out_ch, 1, 1, 1);
        conv(passes * b.out_ch, mid, 1, 1, 1);
        if (att.kind == AttentionKind::Cbam) conv(1, 2, 7, h, w);
      }
    }
  }
  return macs;
}

inline ParamCount encoder_param_count(Index in_channels, double width_scale,
                                      const AttentionConfig& att, const StageMask& mask) {
  ParamCount pc;
  auto conv = [&](Index cout, Index cin, Index k) {
    pc.total += cout * cin * k * k;
    pc.trainable += cout * cin * k * k;
  };
  auto bn = [&](Index c) {
    pc.total += 4 * c;
    pc.trainable += 2 * c;
  };
  const Index stem = scale_width(kStemWidth, width_scale, width_quantum(att));
  conv(stem, in_channels, 7);
  bn(stem);
  for (const BlockSpec& b : encoder_inventory(width_scale, att, mask)) {
    conv(b.mid_ch, b.in_ch, 1);
    bn(b.mid_ch);
    conv(b.mid_ch, b.mid_ch, 3);
    bn(b.mid_ch);
    conv(b.out_ch, b.mid_ch, 1);
    bn(b.out_ch);
    if (b.proj) {
      conv(b.out_ch, b.in_ch, 1);
      bn(b.out_ch);
    }
    if (b.attended) {
      const Index at = attention_param_count(b.out_ch, att);
      pc.total += at;
      pc.trainable += at - 2 * attention_bn_channels(b.out_ch, att);
    }
  }
  return pc;
}

}  // namespace gca
