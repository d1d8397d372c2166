#pragma once
// Training loop: decoupled-weight-decay Adam over the parameter registry, a
// per-epoch cosine learning-rate schedule, periodic validation with
// early stopping on the validation loss, and best-checkpoint retention.
// Every random draw comes from a stream derived off the run seed, so a rerun
// with the same seed reproduces history.csv byte for byte.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "gca/augment.hpp"
#include "gca/checkpoint.hpp"
#include "gca/data.hpp"
#include "gca/dataset.hpp"
#include "gca/losses.hpp"
#include "gca/metrics.hpp"
#include "gca/model.hpp"
#include "gca/params.hpp"
#include "gca/rng.hpp"
#include "gca/tape.hpp"

namespace gca {

struct TrainConfig {
  double lr_max = 1e-4;
  double lr_min = 1e-6;
  Index epochs = 200;
  Index batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double adam_eps = 1e-8;
  Index eval_every = 5;   // epochs between validation passes
  Index patience = 6;     // evaluations without improvement before stopping
  double min_delta = 1e-4;
  std::uint64_t seed = 0;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.lr_max <= 0 || c.lr_min <= 0 || c.lr_min > c.lr_max)
    fail("learning-rate range must satisfy 0 < lr_min <= lr_max");
  if (c.epochs <= 0 || c.batch_size <= 0 || c.eval_every <= 0 || c.patience <= 0)
    fail("epochs, batch_size, eval_every and patience must be positive");
  if (c.beta1 <= 0 || c.beta1 >= 1 || c.beta2 <= 0 || c.beta2 >= 1)
    fail("adam betas must lie in (0,1)");
  if (c.weight_decay < 0 || c.min_delta <= 0 || c.adam_eps <= 0)
    fail("weight_decay must be >= 0; min_delta and adam_eps positive");
}

// lr_min + (lr_max - lr_min) * (1 + cos(pi * epoch / epochs)) / 2, with the
// endpoints returned exactly.
inline double cosine_lr(Index epoch, const TrainConfig& cfg) {
  if (epoch < 0 || epoch > cfg.epochs) fail("cosine_lr: epoch ", epoch, " outside schedule");
  if (epoch == 0) return cfg.lr_max;
  if (epoch == cfg.epochs) return cfg.lr_min;
  double c = std::cos(M_PI * double(epoch) / double(cfg.epochs));
  return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + c);
}

// First/second moment buffers aligned index-for-index with registry entries;
// non-trainable entries keep empty placeholders.
struct OptimState {
  std::vector<Tensor4f> m, v;
  Index t = 0;
};

inline OptimState init_optim(const ParamRegistry<float>& reg) {
  OptimState st;
  st.m.resize(reg.entries().size());
  st.v.resize(reg.entries().size());
  for (std::size_t i = 0; i < reg.entries().size(); ++i) {
    const auto& e = reg.entries()[i];
    if (!param_trainable(e.kind)) continue;
    st.m[i] = Tensor4f(e.tensor->shape);
    st.v[i] = Tensor4f(e.tensor->shape);
  }
  return st;
}

// One AdamW step over every trainable registered parameter. Decay is
// decoupled (multiplicative shrink before the Adam update) and skips biases
// and BN affine terms. All gradients are validated before anything mutates,
// so a non-finite gradient aborts the step cleanly.
inline void adamw_step(ParamRegistry<float>& reg, Tape<float>& tape, OptimState& st, double lr,
                       const TrainConfig& cfg) {
  if (lr <= 0) fail("adamw_step: lr must be positive");
  const auto& entries = reg.entries();
  std::vector<Tensor4f> grads(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!param_trainable(e.kind)) continue;
    grads[i] = tape.grad(*e.tensor);
    for (float g : grads[i].data)
      if (!std::isfinite(g)) fail("non-finite gradient in parameter ", e.name);
  }

  ++st.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.t));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!param_trainable(e.kind)) continue;
    Tensor4f& p = *e.tensor;
    if (cfg.weight_decay > 0 && !param_decay_exempt(e.kind)) {
      const float shrink = float(1.0 - lr * cfg.weight_decay);
      for (auto& w : p.data) w *= shrink;
    }
    Tensor4f& m = st.m[i];
    Tensor4f& v = st.v[i];
    const Tensor4f& g = grads[i];
    for (Index k = 0; k < p.numel(); ++k) {
      double gk = double(g.data[k]);
      double mk = cfg.beta1 * double(m.data[k]) + (1.0 - cfg.beta1) * gk;
      double vk = cfg.beta2 * double(v.data[k]) + (1.0 - cfg.beta2) * gk * gk;
      m.data[k] = float(mk);
      v.data[k] = float(vk);
      p.data[k] -= float(lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.adam_eps));
    }
  }
}

// Improvement means val_loss < best - min_delta (strict); anything else,
// including NaN, burns one unit of patience.
struct EarlyStop {
  double best = std::numeric_limits<double>::infinity();
  Index bad = 0;
  bool stopped = false;

  bool update(double val_loss, double min_delta, Index patience) {
    bool improved = std::isfinite(val_loss) && val_loss < best - min_delta;
    if (improved) {
      best = val_loss;
      bad = 0;
    } else if (++bad >= patience) {
      stopped = true;
    }
    return improved;
  }
};

struct HistoryRow {
  Index epoch = 0;
  double lr = 0;
  double train_loss = 0;
  bool has_val = false;
  double val_loss = 0;
  double val_mdsc = 0;
  bool stopped_early = false;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  double best_val_loss = std::numeric_limits<double>::quiet_NaN();
  double best_val_mdsc = std::numeric_limits<double>::quiet_NaN();
  Index best_epoch = -1;
  bool stopped_early = false;
  bool diverged = false;
  std::string checkpoint_path;  // empty if no evaluation ever completed
};

inline void write_history_csv(const std::string& path, const std::vector<HistoryRow>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write ", path);
  out << "epoch,lr,train_loss,val_loss,val_mdsc,stopped_early\n";
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  for (const auto& r : rows) {
    out << r.epoch << "," << num(r.lr) << "," << num(r.train_loss) << ",";
    if (r.has_val) out << num(r.val_loss);
    out << ",";
    if (r.has_val) out << num(r.val_mdsc);
    out << "," << (r.stopped_early ? 1 : 0) << "\n";
  }
}

struct EvalResult {
  double loss = 0;
  MetricsRecord metrics;
};

// Validation/test pass: un-augmented samples letterboxed to pad_to, eval-mode
// batch norm, loss averaged per pixel over the whole split. When per_sample
// is given it receives one record per id, in id order.
inline EvalResult evaluate_split(Model<float>& model, const std::vector<SegSample>& samples,
                                 const std::vector<Index>& ids, Index batch_size, Index pad_to,
                                 std::vector<MetricsRecord>* per_sample = nullptr) {
  if (ids.empty()) fail("evaluate_split: empty id list");
  MetricAccumulator acc(model.cfg.num_classes);
  double loss_sum = 0;
  Index n = 0;
  for (std::size_t start = 0; start < ids.size(); start += std::size_t(batch_size)) {
    std::vector<SegSample> prepared;
    std::vector<Index> local;
    for (std::size_t i = start; i < std::min(ids.size(), start + std::size_t(batch_size)); ++i) {
      SegSample s;
      s.image = samples.at(std::size_t(ids[i])).image.detached();
      s.mask = samples.at(std::size_t(ids[i])).mask.detached();
      resize_with_pad(s, pad_to);
      local.push_back(Index(prepared.size()));
      prepared.push_back(std::move(s));
    }
    auto [images, targets] = make_batch(prepared, local, model.cfg.in_channels);
    Tensor4f logits = model_forward(model, images, Mode::Eval, false);
    float loss = combined_loss(logits, targets).data[0];
    loss_sum += double(loss) * double(images.shape.b);
    n += images.shape.b;
    for (Index b = 0; b < images.shape.b; ++b) {
      MaskPair mp = mask_pair_from(logits, targets, b);
      acc.add(mp);
      if (per_sample) per_sample->push_back(evaluate_pair(mp));
    }
  }
  EvalResult r;
  r.loss = loss_sum / double(n);
  r.metrics = acc.summary();
  return r;
}

// The full protocol. Expects train and val splits; writes history.csv and
// best.ckpt under out_dir as it goes and returns the run summary.
inline TrainResult train_model(Model<float>& model, const TrainConfig& tcfg,
                               const AugmentConfig& acfg, const Dataset& ds,
                               const std::string& out_dir) {
  validate_train_config(tcfg);
  if (ds.split.train.empty() || ds.split.val.empty()) fail("training needs train and val splits");
  if (acfg.out_size % 32 != 0) fail("augmented canvas must be divisible by 32");
  if (ds.num_classes != model.cfg.num_classes)
    fail("dataset has ", ds.num_classes, " classes, model wants ", model.cfg.num_classes);

  ParamRegistry<float> reg;
  register_model(reg, model);
  OptimState opt = init_optim(reg);

  TrainResult result;
  const std::string ckpt_path = out_dir + "/best.ckpt";
  double best_loss = std::numeric_limits<double>::infinity();
  EarlyStop stopper;

  for (Index epoch = 0; epoch < tcfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, tcfg);

    std::vector<Index> order = ds.split.train;
    Rng shuffle_rng = Rng::derive(tcfg.seed, rng_stream::kShuffle, std::uint64_t(epoch) + 1);
    shuffle_rng.shuffle(order);

    double loss_sum = 0;
    Index seen = 0;
    bool finite = true;
    for (std::size_t start = 0; start < order.size() && finite;
         start += std::size_t(tcfg.batch_size)) {
      std::vector<SegSample> batch;
      std::vector<Index> local;
      for (std::size_t i = start; i < std::min(order.size(), start + std::size_t(tcfg.batch_size));
           ++i) {
        Index id = order[i];
        Rng aug_rng = Rng::derive(tcfg.seed, rng_stream::kAugment,
                                  std::uint64_t(epoch) * ds.samples.size() + std::uint64_t(id));
        local.push_back(Index(batch.size()));
        batch.push_back(augment_sample(ds.samples.at(std::size_t(id)), aug_rng, acfg));
      }
      auto [images, targets] = make_batch(batch, local, model.cfg.in_channels);

      Tape<float> tape;
      for (const auto& e : reg.entries())
        if (param_trainable(e.kind)) tape.track(*e.tensor);
      Tensor4f logits = model_forward(model, images, Mode::Train, true, &tape);
      Tensor4f loss = combined_loss(logits, targets, &tape);
      if (!std::isfinite(loss.data[0])) {
        finite = false;
        break;
      }
      loss_sum += double(loss.data[0]) * double(images.shape.b);
      seen += images.shape.b;
      tape.backward(loss);
      adamw_step(reg, tape, opt, lr, tcfg);
    }

    HistoryRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = seen > 0 ? loss_sum / double(seen) : std::numeric_limits<double>::quiet_NaN();
    if (!finite) {
      result.diverged = true;
      result.history.push_back(row);
      break;
    }

    const bool last_epoch = epoch == tcfg.epochs - 1;
    if ((epoch + 1) % tcfg.eval_every == 0 || last_epoch) {
      EvalResult ev =
          evaluate_split(model, ds.samples, ds.split.val, tcfg.batch_size, acfg.out_size);
      row.has_val = true;
      row.val_loss = ev.loss;
      row.val_mdsc = ev.metrics.mdsc;

      if (ev.loss < best_loss) {
        best_loss = ev.loss;
        result.best_val_loss = ev.loss;
        result.best_val_mdsc = ev.metrics.mdsc;
        result.best_epoch = epoch;
        CheckpointMeta meta;
        meta.model = model.cfg;
        meta.val_loss = ev.loss;
        meta.val_mdsc = ev.metrics.mdsc;
        meta.epoch = epoch;
        save_checkpoint(ckpt_path, reg, meta);
        result.checkpoint_path = ckpt_path;
      }

      stopper.update(ev.loss, tcfg.min_delta, tcfg.patience);
      if (stopper.stopped) {
        row.stopped_early = true;
        result.stopped_early = true;
      }
    }
    result.history.push_back(row);
    if (result.stopped_early) break;
  }

  write_history_csv(out_dir + "/history.csv", result.history);
  return result;
}

}  // namespace gca
