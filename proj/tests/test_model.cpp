#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gca/complexity.hpp"
#include "gca/model.hpp"
#include "testutil.hpp"

using namespace gca;
using testutil::check_op;
using testutil::randn;

namespace {

ModelConfig desk_config(AttentionKind kind = AttentionKind::Gca, Index num_classes = 4) {
  ModelConfig cfg;
  cfg.num_classes = num_classes;
  cfg.width_scale = 0.25;
  cfg.attention.kind = kind;
  cfg.attention.groups = 2;
  cfg.attention.reduction = 2;
  return cfg;
}

}  // namespace

TEST_CASE("full-width parameter totals hit the frozen reference values") {
  ModelConfig cfg;
  cfg.num_classes = 9;
  cfg.width_scale = 1.0;
  cfg.attention.kind = AttentionKind::None;
  ParamCount none = model_param_count(cfg);
  CHECK(none.total == 43930761);
  CHECK(none.trainable == 43930761 - 2 * 26560);

  cfg.attention.kind = AttentionKind::Gca;
  cfg.attention.groups = 2;
  cfg.attention.reduction = 2;
  ParamCount gca = model_param_count(cfg);
  CHECK(gca.total - none.total == 10089984);
}

TEST_CASE("analytic parameter count equals registry enumeration") {
  for (AttentionKind kind : {AttentionKind::None, AttentionKind::Gca, AttentionKind::Se}) {
    ModelConfig cfg = desk_config(kind);
    CAPTURE(int(kind));
    Model<float> m = make_model<float>(cfg);
    ParamRegistry<float> reg;
    register_model(reg, m);
    ParamCount want = model_param_count(cfg);
    CHECK(reg.total_count() == want.total);
    CHECK(reg.trainable_count() == want.trainable);
  }
}

TEST_CASE("logits come back at input resolution with one channel per class") {
  ModelConfig cfg = desk_config();
  Model<float> m = make_model<float>(cfg);
  ParamRegistry<float> reg;
  register_model(reg, m);
  init_params(reg, 3);
  Tensor4f x = randn({2, 3, 64, 64}, 4, 0.5f);
  Tensor4f y = model_forward(m, x, Mode::Eval, false);
  CHECK(y.shape == Shape4{2, 4, 64, 64});
  for (float v : y.data) CHECK(std::isfinite(v));

  // rectangular inputs work as long as both sides divide by 32
  Tensor4f xr = randn({1, 3, 32, 96}, 5, 0.5f);
  CHECK(model_forward(m, xr, Mode::Eval, false).shape == Shape4{1, 4, 32, 96});

  CHECK_THROWS_WITH_AS(model_forward(m, randn({1, 3, 48, 48}, 6), Mode::Eval, false),
                       doctest::Contains("divisible by 32"), std::runtime_error);
}

TEST_CASE("same seed gives bitwise identical models and outputs") {
  ModelConfig cfg = desk_config();
  Model<float> a = make_model<float>(cfg);
  Model<float> b = make_model<float>(cfg);
  ParamRegistry<float> ra, rb;
  register_model(ra, a);
  register_model(rb, b);
  init_params(ra, 17);
  init_params(rb, 17);
  Tensor4f x = randn({1, 3, 64, 64}, 18, 0.5f);
  Tensor4f ya = model_forward(a, x, Mode::Eval, false);
  Tensor4f yb = model_forward(b, x, Mode::Eval, false);
  CHECK(ya.data == yb.data);

  ParamRegistry<float> rc;
  Model<float> c = make_model<float>(cfg);
  register_model(rc, c);
  init_params(rc, 18);
  Tensor4f yc = model_forward(c, x, Mode::Eval, false);
  CHECK(ya.data != yc.data);
}

TEST_CASE("train mode updates running stats only when asked") {
  ModelConfig cfg = desk_config();
  Model<float> m = make_model<float>(cfg);
  ParamRegistry<float> reg;
  register_model(reg, m);
  init_params(reg, 21);
  Tensor4f before = m.encoder.stem_bn.running_mean.detached();
  Tensor4f x = randn({2, 3, 64, 64}, 22, 0.5f);
  model_forward(m, x, Mode::Train, false);
  CHECK(m.encoder.stem_bn.running_mean.data == before.data);
  model_forward(m, x, Mode::Train, true);
  CHECK(m.encoder.stem_bn.running_mean.data != before.data);
}

TEST_CASE("conv multiply-accumulate counts scale and compare sensibly") {
  // the unmodified full-width backbone is a well-known ~4.09e9 MACs at
  // 224x224 (fully-connected classifier excluded); the walk must land close
  AttentionConfig none;
  none.kind = AttentionKind::None;
  StageMask all{true, true, true, true};
  const double enc = double(encoder_macs(3, 1.0, none, all, 224, 224));
  CHECK(std::abs(enc - 4.087e9) / 4.087e9 < 0.02);

  // quadratic scaling in resolution
  ModelConfig desk = desk_config();
  Index m64 = model_macs(desk, 64, 64);
  Index m128 = model_macs(desk, 128, 128);
  CHECK(double(m128) / double(m64) == doctest::Approx(4.0).epsilon(0.02));

  // attention adds work; more groups add less of it
  ModelConfig no_att = desk;
  no_att.attention.kind = AttentionKind::None;
  CHECK(model_macs(desk, 64, 64) > model_macs(no_att, 64, 64));
  ModelConfig g4 = desk;
  g4.attention.groups = 4;
  CHECK(model_macs(g4, 64, 64) < model_macs(desk, 64, 64));
}

TEST_CASE("head gradients through the whole model pass finite differences") {
  ModelConfig cfg = desk_config();
  cfg.width_scale = 1.0 / 16.0;
  Model<float> mf = make_model<float>(cfg);
  Model<double> md = make_model<double>(cfg);
  ParamRegistry<float> rf;
  ParamRegistry<double> rd;
  register_model(rf, mf);
  register_model(rd, md);
  init_params(rf, 31);
  for (std::size_t i = 0; i < rf.entries().size(); ++i)
    *rd.entries()[i].tensor = cast<double>(*rf.entries()[i].tensor);
  Tensor4f x = randn({1, 3, 32, 32}, 32, 0.5f);
  Tensor4d xd = cast<double>(x);

  auto w32 = [&](Tape<float>* tp, const Tensor4f& v) {
    Model<float> local = mf;
    local.head.w = v;
    return model_forward(local, x, Mode::Eval, false, tp);
  };
  auto w64 = [&](const Tensor4d& v) {
    Model<double> local = md;
    local.head.w = v.detached();
    return model_forward(local, xd, Mode::Eval, false);
  };
  CHECK(check_op(w32, w64, mf.head.w, 33, 1e-4) < 1e-3);

  auto b32 = [&](Tape<float>* tp, const Tensor4f& v) {
    Model<float> local = mf;
    local.head.b = v;
    return model_forward(local, x, Mode::Eval, false, tp);
  };
  auto b64 = [&](const Tensor4d& v) {
    Model<double> local = md;
    local.head.b = v.detached();
    return model_forward(local, xd, Mode::Eval, false);
  };
  CHECK(check_op(b32, b64, mf.head.b, 34, 1e-4) < 1e-3);
}

TEST_CASE("complexity tables split cleanly by component and sum to the scalar counts") {
  ModelConfig cfg;
  cfg.in_channels = 3;
  cfg.num_classes = 4;
  cfg.width_scale = 0.25;
  cfg.attention.kind = AttentionKind::Gca;

  ComplexityTable pt = model_param_table(cfg);
  CHECK(pt.total() == model_param_count(cfg).total);

  // Brute force: bucket every registered tensor by its name.
  Model<float> m = make_model<float>(cfg);
  ParamRegistry<float> reg;
  register_model(reg, m);
  Index stem = 0, stage[4] = {0, 0, 0, 0}, att = 0, dec = 0, head = 0, other = 0;
  for (const auto& e : reg.entries()) {
    Index n = e.tensor->numel();
    if (e.name.find(".att.") != std::string::npos)
      att += n;
    else if (e.name.rfind("encoder.stem.", 0) == 0)
      stem += n;
    else if (e.name.rfind("encoder.layer1.", 0) == 0)
      stage[0] += n;
    else if (e.name.rfind("encoder.layer2.", 0) == 0)
      stage[1] += n;
    else if (e.name.rfind("encoder.layer3.", 0) == 0)
      stage[2] += n;
    else if (e.name.rfind("encoder.layer4.", 0) == 0)
      stage[3] += n;
    else if (e.name.rfind("decoder.", 0) == 0)
      dec += n;
    else if (e.name.rfind("head.", 0) == 0)
      head += n;
    else
      other += n;
  }
  CHECK(other == 0);
  CHECK(pt.stem == stem);
  CHECK(pt.stage[0] == stage[0]);
  CHECK(pt.stage[1] == stage[1]);
  CHECK(pt.stage[2] == stage[2]);
  CHECK(pt.stage[3] == stage[3]);
  CHECK(pt.attention == att);
  CHECK(pt.decoder == dec);
  CHECK(pt.head == head);

  // Swapping the attention kind moves exactly the attention row.
  ModelConfig plain = cfg;
  plain.attention.kind = AttentionKind::None;
  ComplexityTable pn = model_param_table(plain);
  CHECK(pn.attention == 0);
  CHECK(pn.stem == pt.stem);
  for (int s = 0; s < 4; ++s) CHECK(pn.stage[s] == pt.stage[s]);
  CHECK(pn.decoder == pt.decoder);
  CHECK(pn.head == pt.head);
  CHECK(pt.total() - pn.total() == pt.attention);
}

TEST_CASE("full-scale attention row matches the closed-form overhead") {
  ModelConfig cfg;
  cfg.num_classes = 9;
  cfg.attention.kind = AttentionKind::Gca;
  ComplexityTable t = model_param_table(cfg);
  CHECK(t.attention == 10089984);
  CHECK(t.total() == model_param_count(cfg).total);
}

TEST_CASE("macs table reproduces the scalar walk and the unit conv example") {
  CHECK(conv_macs(4, 8, 1, 1, 2, 2) == 128);
  CHECK(macs_to_flops(conv_macs(4, 8, 1, 1, 2, 2)) == 256);

  ModelConfig cfg;
  cfg.num_classes = 9;
  for (AttentionKind k : {AttentionKind::None, AttentionKind::Gca, AttentionKind::Se}) {
    cfg.attention.kind = k;
    ComplexityTable t = model_macs_table(cfg, 224, 224);
    CHECK(t.total() == model_macs(cfg, 224, 224));
    Index enc = encoder_macs(cfg.in_channels, cfg.width_scale, cfg.attention,
                             cfg.stage_attention, 224, 224);
    CHECK(t.stem + t.stage[0] + t.stage[1] + t.stage[2] + t.stage[3] + t.attention == enc);
  }
  cfg.attention.kind = AttentionKind::None;
  CHECK(model_macs_table(cfg, 224, 224).attention == 0);
  CHECK_THROWS(model_macs_table(cfg, 100, 224));
}
