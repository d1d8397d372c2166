#pragma once
// Encoder-decoder segmentation model: the residual encoder from backbone.hpp
// feeding a U-Net style decoder. Each decoder stage doubles the resolution
// bilinearly, concatenates the matching encoder feature, and applies two 3x3
// convs with ReLU. A final upsample, 3x3 conv, and 1x1 head produce logits at
// input resolution. No softmax here; losses work on raw logits.

#include <array>
#include <string>

#include "gca/backbone.hpp"
#include "gca/nn.hpp"
#include "gca/ops.hpp"
#include "gca/params.hpp"

namespace gca {

inline constexpr Index kDecoderWidths[4] = {512, 256, 128, 64};
inline constexpr Index kFinalWidth = 32;

struct ModelConfig {
  Index in_channels = 3;
  Index num_classes = 2;
  double width_scale = 1.0;
  AttentionConfig attention;
  StageMask stage_attention{true, true, true, true};
  float bn_eps = 1e-5f;
  float bn_momentum = 0.1f;
};

template <typename T>
struct ConvBias {
  Tensor4<T> w, b;
};

template <typename T>
struct DecoderStage {
  ConvBias<T> c1, c2;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  Encoder<T> encoder;
  std::array<DecoderStage<T>, 4> dec;
  ConvBias<T> final_conv;
  ConvBias<T> head;
};

namespace detail {

struct ModelWidths {
  Index f0, f1, f2, f3, f4;  // encoder tap channels
  Index d[4];                // decoder stage widths
  Index fin;                 // channels after the final 3x3
};

inline ModelWidths model_widths(const ModelConfig& cfg) {
  const Index q = width_quantum(cfg.attention);
  auto sw = [&](Index base) { return scale_width(base, cfg.width_scale, q); };
  ModelWidths w;
  w.f0 = sw(kStemWidth);
  w.f1 = kExpansion * sw(kStageMids[0]);
  w.f2 = kExpansion * sw(kStageMids[1]);
  w.f3 = kExpansion * sw(kStageMids[2]);
  w.f4 = kExpansion * sw(kStageMids[3]);
  for (int i = 0; i < 4; ++i) w.d[i] = sw(kDecoderWidths[i]);
  w.fin = sw(kFinalWidth);
  return w;
}

}  // namespace detail

template <typename T>
Model<T> make_model(const ModelConfig& cfg) {
  if (cfg.num_classes < 2) fail("make_model: need at least 2 classes, got ", cfg.num_classes);
  Model<T> m;
  m.cfg = cfg;
  m.encoder = make_encoder<T>(cfg.in_channels, cfg.width_scale, cfg.attention,
                              cfg.stage_attention);
  const detail::ModelWidths w = detail::model_widths(cfg);
  const Index skips[4] = {w.f3, w.f2, w.f1, w.f0};
  Index below = w.f4;
  for (int i = 0; i < 4; ++i) {
    const Index in = below + skips[i];
    m.dec[i].c1 = ConvBias<T>{Tensor4<T>({w.d[i], in, 3, 3}), Tensor4<T>({1, w.d[i], 1, 1})};
    m.dec[i].c2 =
        ConvBias<T>{Tensor4<T>({w.d[i], w.d[i], 3, 3}), Tensor4<T>({1, w.d[i], 1, 1})};
    below = w.d[i];
  }
  m.final_conv = ConvBias<T>{Tensor4<T>({w.fin, below, 3, 3}), Tensor4<T>({1, w.fin, 1, 1})};
  m.head = ConvBias<T>{Tensor4<T>({cfg.num_classes, w.fin, 1, 1}),
                       Tensor4<T>({1, cfg.num_classes, 1, 1})};
  return m;
}

template <typename T>
void register_model(ParamRegistry<T>& reg, Model<T>& m) {
  register_encoder(reg, m.encoder);
  for (int i = 0; i < 4; ++i) {
    const std::string p = "decoder.d" + std::to_string(i + 1);
    reg.add(p + ".conv1.weight", m.dec[i].c1.w, ParamKind::ConvWeight);
    reg.add(p + ".conv1.bias", m.dec[i].c1.b, ParamKind::Bias);
    reg.add(p + ".conv2.weight", m.dec[i].c2.w, ParamKind::ConvWeight);
    reg.add(p + ".conv2.bias", m.dec[i].c2.b, ParamKind::Bias);
  }
  reg.add("decoder.final.conv.weight", m.final_conv.w, ParamKind::ConvWeight);
  reg.add("decoder.final.conv.bias", m.final_conv.b, ParamKind::Bias);
  reg.add("head.weight", m.head.w, ParamKind::ConvWeight);
  reg.add("head.bias", m.head.b, ParamKind::Bias);
}

template <typename T>
Tensor4<T> model_forward(Model<T>& m, const Tensor4<T>& x, Mode mode, bool update_stats,
                         Tape<T>* tape = nullptr) {
  if (x.shape.h % 32 != 0 || x.shape.w % 32 != 0)
    fail("model_forward: input ", x.shape.str(),
         " must have height and width divisible by 32");
  const T eps = T(m.cfg.bn_eps), mom = T(m.cfg.bn_momentum);
  EncoderFeatures<T> f =
      encoder_forward(m.encoder, x, m.cfg.attention, mode, update_stats, eps, mom, tape);

  auto stage = [&](DecoderStage<T>& d, const Tensor4<T>& below, const Tensor4<T>& skip) {
    Tensor4<T> u = bilinear_upsample_x2(below, tape);
    Tensor4<T> c = concat(u, skip, Axis::C, tape);
    Tensor4<T> y = relu(conv2d(c, d.c1.w, &d.c1.b, 1, 1, 1, tape), tape);
    return relu(conv2d(y, d.c2.w, &d.c2.b, 1, 1, 1, tape), tape);
  };
  Tensor4<T> y = stage(m.dec[0], f.f4, f.f3);
  y = stage(m.dec[1], y, f.f2);
  y = stage(m.dec[2], y, f.f1);
  y = stage(m.dec[3], y, f.f0);
  y = relu(conv2d(bilinear_upsample_x2(y, tape), m.final_conv.w, &m.final_conv.b, 1, 1, 1, tape),
           tape);
  return conv2d(y, m.head.w, &m.head.b, 1, 0, 1, tape);
}

inline ParamCount model_param_count(const ModelConfig& cfg) {
  ParamCount pc =
      encoder_param_count(cfg.in_channels, cfg.width_scale, cfg.attention, cfg.stage_attention);
  auto conv = [&](Index cout, Index cin, Index k) {
    const Index n = cout * cin * k * k + cout;  // biased
    pc.total += n;
    pc.trainable += n;
  };
  const detail::ModelWidths w = detail::model_widths(cfg);
  const Index skips[4] = {w.f3, w.f2, w.f1, w.f0};
  Index below = w.f4;
  for (int i = 0; i < 4; ++i) {
    conv(w.d[i], below + skips[i], 3);
    conv(w.d[i], w.d[i], 3);
    below = w.d[i];
  }
  conv(w.fin, below, 3);
  conv(cfg.num_classes, w.fin, 1);
  return pc;
}

// Multiply-accumulate count for one image, convolutions only (the elementwise
// and normalization work is negligible next to them).
inline Index model_macs(const ModelConfig& cfg, Index height, Index width) {
  if (height % 32 != 0 || width % 32 != 0)
    fail("model_macs: input ", height, "x", width, " must be divisible by 32");
  Index macs = encoder_macs(cfg.in_channels, cfg.width_scale, cfg.attention, cfg.stage_attention,
                            height, width);
  auto conv = [&](Index cout, Index cin, Index k, Index h, Index w) {
    macs += cout * cin * k * k * h * w;
  };
  const detail::ModelWidths mw = detail::model_widths(cfg);
  const Index skips[4] = {mw.f3, mw.f2, mw.f1, mw.f0};
  Index below = mw.f4;
  Index h = height / 32, w = width / 32;
  for (int i = 0; i < 4; ++i) {
    h *= 2;
    w *= 2;
    conv(mw.d[i], below + skips[i], 3, h, w);
    conv(mw.d[i], mw.d[i], 3, h, w);
    below = mw.d[i];
  }
  h *= 2;
  w *= 2;
  conv(mw.fin, below, 3, h, w);
  conv(cfg.num_classes, mw.fin, 1, h, w);
  return macs;
}

}  // namespace gca
