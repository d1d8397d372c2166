#pragma once
// Component-level complexity accounting: parameter and multiply-accumulate
// tables broken down by stem, the four encoder stages, attention, decoder and
// classifier head. The stage buckets exclude attention so swapping the
// attention kind moves exactly one row.

#include <array>
#include <string>
#include <vector>

#include "gca/backbone.hpp"
#include "gca/model.hpp"

namespace gca {

struct ComplexityTable {
  Index stem = 0;
  std::array<Index, 4> stage{0, 0, 0, 0};
  Index attention = 0;
  Index decoder = 0;
  Index head = 0;

  Index total() const {
    return stem + stage[0] + stage[1] + stage[2] + stage[3] + attention + decoder + head;
  }
  std::vector<std::pair<std::string, Index>> rows() const {
    return {{"stem", stem},         {"stage1", stage[0]}, {"stage2", stage[1]},
            {"stage3", stage[2]},   {"stage4", stage[3]}, {"attention", attention},
            {"decoder", decoder},   {"head", head}};
  }
};

// MACs of one convolution: every output element costs C_in/groups * kH * kW
// multiply-accumulates. Normalization, activations and pooling count as zero.
inline Index conv_macs(Index c_in, Index c_out, Index kh, Index kw, Index out_h, Index out_w,
                       Index groups = 1) {
  return c_out * out_h * out_w * (c_in / groups) * kh * kw;
}

inline Index macs_to_flops(Index macs) { return 2 * macs; }

inline ComplexityTable model_param_table(const ModelConfig& cfg) {
  ComplexityTable t;
  auto conv = [](Index cout, Index cin, Index k) { return cout * cin * k * k; };
  auto bn = [](Index c) { return 4 * c; };

  const Index stem_w = scale_width(kStemWidth, cfg.width_scale, width_quantum(cfg.attention));
  t.stem = conv(stem_w, cfg.in_channels, 7) + bn(stem_w);

  for (const BlockSpec& b :
       encoder_inventory(cfg.width_scale, cfg.attention, cfg.stage_attention)) {
    Index n = conv(b.mid_ch, b.in_ch, 1) + bn(b.mid_ch) + conv(b.mid_ch, b.mid_ch, 3) +
              bn(b.mid_ch) + conv(b.out_ch, b.mid_ch, 1) + bn(b.out_ch);
    if (b.proj) n += conv(b.out_ch, b.in_ch, 1) + bn(b.out_ch);
    t.stage[b.stage] += n;
    if (b.attended) t.attention += attention_param_count(b.out_ch, cfg.attention);
  }

  auto biased = [](Index cout, Index cin, Index k) { return cout * cin * k * k + cout; };
  const detail::ModelWidths w = detail::model_widths(cfg);
  const Index skips[4] = {w.f3, w.f2, w.f1, w.f0};
  Index below = w.f4;
  for (int i = 0; i < 4; ++i) {
    t.decoder += biased(w.d[i], below + skips[i], 3) + biased(w.d[i], w.d[i], 3);
    below = w.d[i];
  }
  t.decoder += biased(w.fin, below, 3);
  t.head = biased(cfg.num_classes, w.fin, 1);
  return t;
}

inline ComplexityTable model_macs_table(const ModelConfig& cfg, Index height, Index width) {
  if (height % 32 != 0 || width % 32 != 0)
    fail("macs table: input ", height, "x", width, " must be divisible by 32");
  ComplexityTable t;
  const AttentionConfig att = normalized(cfg.attention);
  const bool grouped = att.kind == AttentionKind::Gca || att.kind == AttentionKind::CoordAtt;

  Index h = height / 2, w = width / 2;
  const Index stem_w = scale_width(kStemWidth, cfg.width_scale, width_quantum(cfg.attention));
  t.stem = conv_macs(cfg.in_channels, stem_w, 7, 7, h, w);
  h /= 2;
  w /= 2;
  for (const BlockSpec& b :
       encoder_inventory(cfg.width_scale, cfg.attention, cfg.stage_attention)) {
    t.stage[b.stage] += conv_macs(b.in_ch, b.mid_ch, 1, 1, h, w);  // conv1 precedes the stride
    if (b.stride == 2) {
      h /= 2;
      w /= 2;
    }
    t.stage[b.stage] += conv_macs(b.mid_ch, b.mid_ch, 3, 3, h, w) +
                        conv_macs(b.mid_ch, b.out_ch, 1, 1, h, w);
    if (b.proj) t.stage[b.stage] += conv_macs(b.in_ch, b.out_ch, 1, 1, h, w);
    if (b.attended) {
      if (grouped) {
        const Index cg = b.out_ch / att.groups;
        const Index mid = bottleneck_width(cg, att.reduction, att.min_mid);
        t.attention += conv_macs(cg, att.groups * mid, 1, 1, h + w, 1) +
                       conv_macs(mid, att.groups * cg, 1, 1, h + w, 1);
      } else if (att.kind == AttentionKind::Se || att.kind == AttentionKind::Cbam) {
        const Index mid = bottleneck_width(b.out_ch, att.reduction, att.min_mid);
        const Index passes = att.kind == AttentionKind::Cbam ? 2 : 1;
        t.attention += conv_macs(b.out_ch, passes * mid, 1, 1, 1, 1) +
                       conv_macs(mid, passes * b.out_ch, 1, 1, 1, 1);
        if (att.kind == AttentionKind::Cbam) t.attention += conv_macs(2, 1, 7, 7, h, w);
      }
    }
  }

  const detail::ModelWidths mw = detail::model_widths(cfg);
  const Index skips[4] = {mw.f3, mw.f2, mw.f1, mw.f0};
  Index below = mw.f4;
  for (int i = 0; i < 4; ++i) {
    h *= 2;
    w *= 2;
    t.decoder +=
        conv_macs(below + skips[i], mw.d[i], 3, 3, h, w) + conv_macs(mw.d[i], mw.d[i], 3, 3, h, w);
    below = mw.d[i];
  }
  h *= 2;
  w *= 2;
  t.decoder += conv_macs(below, mw.fin, 3, 3, h, w);
  t.head = conv_macs(mw.fin, cfg.num_classes, 1, 1, h, w);
  return t;
}

}  // namespace gca
