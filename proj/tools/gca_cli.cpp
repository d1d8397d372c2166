// Command-line entry point: dataset synthesis, training, evaluation,
// ablation grids, gradient verification and complexity tables.

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "gca/complexity.hpp"
#include "gca/config.hpp"
#include "gca/gradcheck.hpp"
#include "gca/report.hpp"
#include "gca/trainer.hpp"

using namespace gca;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot read ", path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot write ", path);
  out << text;
}

Index round_up_32(Index v) { return (v + 31) / 32 * 32; }

// ---------------------------------------------------------------- synth ----

int cmd_synth(const std::string& out, Index n, Index classes, Index size, std::uint64_t seed) {
  SynthConfig sc;
  sc.image_size = size;
  sc.num_classes = classes;
  sc.count = n;
  sc.seed = seed;
  std::vector<SegSample> samples = synth_generate(sc);
  DatasetSplit split = make_split(n, seed);
  std::filesystem::create_directories(out);
  save_dataset(out, samples, split, classes);
  std::cout << "wrote " << n << " samples (" << size << "x" << size << ", " << classes
            << " classes) to " << out << "  split " << split.train.size() << "/"
            << split.val.size() << "/" << split.test.size() << "\n";
  return 0;
}

// ---------------------------------------------------------------- train ----

int cmd_train(const std::string& config_path, const std::string& out, std::uint64_t seed,
              bool seed_set) {
  RunConfig cfg = parse_run_config(config_path.empty() ? "{}" : slurp(config_path));
  if (seed_set) cfg.train.seed = seed;
  std::filesystem::create_directories(out);
  write_text(out + "/config.json", render_run_config(cfg));

  Dataset ds = materialize_dataset(cfg.data);
  Model<float> model = make_model<float>(cfg.model);
  ParamRegistry<float> reg;
  register_model(reg, model);
  init_params(reg, cfg.train.seed);

  TrainResult res = train_model(model, cfg.train, cfg.augment, ds, out);
  for (const HistoryRow& r : res.history) {
    std::cout << "epoch " << r.epoch << "  lr " << csv_num(r.lr) << "  train " << csv_num(r.train_loss);
    if (r.has_val)
      std::cout << "  val " << csv_num(r.val_loss) << "  mdsc " << csv_num(r.val_mdsc);
    std::cout << "\n";
  }
  if (res.diverged) {
    std::cerr << "training diverged (non-finite loss); stopping with last good checkpoint\n";
    return 2;
  }
  std::cout << "best epoch " << res.best_epoch << "  val loss " << csv_num(res.best_val_loss)
            << "  val mdsc " << csv_num(res.best_val_mdsc)
            << (res.stopped_early ? "  (stopped early)" : "") << "\n";
  return 0;
}

// ----------------------------------------------------------------- eval ----

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& metrics_out,
             const std::string& split_name, Index batch, Index canvas) {
  CheckpointMeta meta = peek_checkpoint(ckpt);
  Model<float> model = make_model<float>(meta.model);
  ParamRegistry<float> reg;
  register_model(reg, model);
  load_checkpoint(ckpt, reg);

  Dataset ds = load_dataset(data_dir);
  const std::vector<Index>* ids = &ds.split.test;
  if (split_name == "val")
    ids = &ds.split.val;
  else if (split_name == "train")
    ids = &ds.split.train;
  else if (split_name != "test")
    fail("unknown split '", split_name, "' (expected train, val or test)");

  if (ids->empty()) {
    std::cerr << "warning: split '" << split_name << "' is empty; writing summary-only csv\n";
    if (!metrics_out.empty()) write_metrics_csv(metrics_out, {}, {}, nullptr);
    return 0;
  }

  if (canvas == 0) {
    for (Index id : *ids) {
      const Shape4& s = ds.samples.at(std::size_t(id)).image.shape;
      canvas = std::max(canvas, round_up_32(std::max(s.h, s.w)));
    }
  }
  if (canvas % 32 != 0) fail("canvas ", canvas, " must be a multiple of 32");

  std::vector<MetricsRecord> per_sample;
  EvalResult ev = evaluate_split(model, ds.samples, *ids, batch, canvas, &per_sample);
  std::cout << "split " << split_name << "  n " << ids->size() << "  canvas " << canvas
            << "  loss " << csv_num(ev.loss) << "\n";
  std::cout << "mdsc " << csv_num(ev.metrics.mdsc) << "  mhd95 " << csv_num(ev.metrics.mhd95)
            << "  miou " << csv_num(ev.metrics.miou) << "  macc " << csv_num(ev.metrics.macc)
            << "  mspe " << csv_num(ev.metrics.mspe) << "  msen " << csv_num(ev.metrics.msen)
            << "\n";
  if (std::isfinite(meta.val_loss))
    std::cout << "checkpoint manifest: val loss " << csv_num(meta.val_loss) << "  val mdsc "
              << csv_num(meta.val_mdsc) << " (epoch " << meta.epoch << ")\n";
  if (!metrics_out.empty()) {
    write_metrics_csv(metrics_out, *ids, per_sample, &ev.metrics);
    std::cout << "metrics written to " << metrics_out << "\n";
  }
  return 0;
}

// --------------------------------------------------------------- ablate ----

struct AblationGrid {
  std::vector<AttentionKind> attention{AttentionKind::Gca};
  std::vector<Index> groups{1, 2, 4};
  std::vector<Index> reduction{1, 2, 4, 8};
  std::vector<PoolKind> pooling{PoolKind::Avg, PoolKind::Max, PoolKind::AvgMax};
};

std::string lower(std::string s) {
  for (char& c : s) c = char(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

AblationGrid parse_grid(const std::vector<std::string>& tokens) {
  AblationGrid g;
  for (const std::string& tok : tokens) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) fail("grid token '", tok, "' is not key=v1,v2,...");
    const std::string key = lower(tok.substr(0, eq));
    std::vector<std::string> vals;
    std::stringstream ss(tok.substr(eq + 1));
    std::string item;
    while (std::getline(ss, item, ',')) vals.push_back(lower(item));
    if (vals.empty()) fail("grid key '", key, "' has no values");
    if (key == "groups" || key == "reduction") {
      std::vector<Index> out;
      for (const auto& v : vals) out.push_back(std::stoll(v));
      (key == "groups" ? g.groups : g.reduction) = out;
    } else if (key == "pooling") {
      g.pooling.clear();
      for (const auto& v : vals) {
        if (v == "avg")
          g.pooling.push_back(PoolKind::Avg);
        else if (v == "max")
          g.pooling.push_back(PoolKind::Max);
        else if (v == "both" || v == "avgmax")
          g.pooling.push_back(PoolKind::AvgMax);
        else
          fail("unknown pooling '", v, "'");
      }
    } else if (key == "attention") {
      g.attention.clear();
      for (const auto& v : vals) {
        if (v == "none")
          g.attention.push_back(AttentionKind::None);
        else if (v == "se")
          g.attention.push_back(AttentionKind::Se);
        else if (v == "cbam")
          g.attention.push_back(AttentionKind::Cbam);
        else if (v == "gca")
          g.attention.push_back(AttentionKind::Gca);
        else if (v == "coordatt")
          g.attention.push_back(AttentionKind::CoordAtt);
        else
          fail("unknown attention kind '", v, "'");
      }
    } else {
      fail("unknown grid key '", key, "'");
    }
  }
  return g;
}

const char* pool_flag_name(PoolKind p) {
  switch (p) {
    case PoolKind::Avg: return "avg";
    case PoolKind::Max: return "max";
    default: return "avgmax";
  }
}

const char* attention_flag_name(AttentionKind k) {
  switch (k) {
    case AttentionKind::None: return "none";
    case AttentionKind::Se: return "se";
    case AttentionKind::Cbam: return "cbam";
    case AttentionKind::Gca: return "gca";
    default: return "coordatt";
  }
}

int cmd_ablate(const std::vector<std::string>& grid_tokens, Index budget_epochs,
               const std::string& out, std::uint64_t seed, const std::string& config_path) {
  AblationGrid grid = parse_grid(grid_tokens);

  RunConfig base;
  if (!config_path.empty()) {
    base = parse_run_config(slurp(config_path));
  } else {
    // compact protocol sized for quick grids
    base.model.in_channels = 1;
    base.model.num_classes = 4;
    base.model.width_scale = 0.25;
    base.data.synth.image_size = 64;
    base.data.synth.num_classes = 4;
    base.data.synth.count = 60;
    base.data.synth.seed = seed;
    base.train.lr_max = 1e-3;
    base.train.lr_min = 1e-5;
    base.train.batch_size = 8;
    base.augment.out_size = 64;
    base.augment.modality = Modality::Gray;
  }
  base.train.seed = seed;
  base.train.epochs = budget_epochs;
  base.train.eval_every = budget_epochs;  // evaluate once, at the end

  Dataset ds = materialize_dataset(base.data);
  const std::vector<Index>& eval_ids = ds.split.test.empty() ? ds.split.val : ds.split.test;

  std::filesystem::create_directories(out);
  std::vector<std::vector<std::string>> rows;
  const std::string run_dir = out + "/ablate_run";

  auto run_point = [&](AttentionKind kind, Index g, Index r, PoolKind p, bool gridded) {
    std::vector<std::string> row(9, "");
    row[0] = attention_flag_name(kind);
    if (gridded) row[1] = std::to_string(g);
    if (kind != AttentionKind::None) row[2] = std::to_string(r);
    if (gridded) row[3] = pool_flag_name(p);
    try {
      RunConfig cfg = base;
      cfg.model.attention.kind = kind;
      if (kind != AttentionKind::None) cfg.model.attention.reduction = r;
      if (gridded) {
        cfg.model.attention.groups = g;
        cfg.model.attention.pooling = p;
      }
      row[4] = std::to_string(model_param_count(cfg.model).total);
      row[5] = std::to_string(model_param_table(cfg.model).attention);

      Model<float> model = make_model<float>(cfg.model);
      ParamRegistry<float> reg;
      register_model(reg, model);
      init_params(reg, cfg.train.seed);
      std::filesystem::remove_all(run_dir);
      std::filesystem::create_directories(run_dir);
      TrainResult res = train_model(model, cfg.train, cfg.augment, ds, run_dir);
      if (res.diverged) {
        row[8] = "diverged";
      } else {
        EvalResult ev =
            evaluate_split(model, ds.samples, eval_ids, cfg.train.batch_size, cfg.augment.out_size);
        row[6] = csv_num(ev.metrics.mdsc);
        row[7] = csv_num(ev.metrics.mhd95);
      }
    } catch (const std::exception& e) {
      row[8] = e.what();
    }
    rows.push_back(row);
    std::cout << row[0] << " g=" << (row[1].empty() ? "-" : row[1])
              << " r=" << (row[2].empty() ? "-" : row[2])
              << " pool=" << (row[3].empty() ? "-" : row[3]) << "  mdsc "
              << (row[6].empty() ? "-" : row[6]) << (row[8].empty() ? "" : "  [" + row[8] + "]")
              << "\n";
  };

  for (AttentionKind kind : grid.attention) {
    if (kind == AttentionKind::Gca) {
      for (Index g : grid.groups)
        for (Index r : grid.reduction)
          for (PoolKind p : grid.pooling) run_point(kind, g, r, p, true);
    } else {
      // the grouping/pooling axes do not apply; one row at module defaults
      AttentionConfig d;
      run_point(kind, d.groups, d.reduction, d.pooling, false);
    }
  }

  std::filesystem::remove_all(run_dir);
  write_csv(out + "/ablation.csv",
            {"attention", "groups", "reduction", "pooling", "params", "att_params", "mdsc",
             "mhd95", "reason"},
            rows);
  std::cout << rows.size() << " rows written to " << out << "/ablation.csv\n";
  return 0;
}

// ------------------------------------------------------------ gradcheck ----

Tensor4f cli_randn(Shape4 s, std::uint64_t seed, float scale = 1.0f) {
  Rng rng = Rng::derive(seed, rng_stream::kGradCheck);
  Tensor4f t(s);
  for (auto& v : t.data) v = scale * float(rng.normal());
  return t;
}

// evenly spaced values in [-1,1], shuffled: keeps every coordinate away from
// relu/max kinks by at least half the spacing
Tensor4f cli_spread(Shape4 s, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, rng_stream::kGradCheck, 1);
  const std::size_t n = std::size_t(s.numel());
  std::vector<Index> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = Index(i);
  rng.shuffle(order);
  Tensor4f t(s);
  const float step = n > 1 ? 2.0f / float(n - 1) : 0.0f;
  for (std::size_t i = 0; i < n; ++i) t.data[i] = step * float(order[i]) - 1.0f;
  return t;
}

template <typename Op32, typename Op64>
double probe_op(Op32 op32, Op64 op64, const Tensor4f& x, std::uint64_t seed, double eps) {
  Tensor4f shape_probe = op32(static_cast<Tape<float>*>(nullptr), x);
  Tensor4f rf = cli_randn(shape_probe.shape, seed ^ 0xabcdef);
  Tensor4d rd = cast<double>(rf);
  auto rep = grad_check(
      [&](Tape<float>& tp, const Tensor4f& xt) {
        return reduce_sum_all(broadcast_mul(op32(&tp, xt), rf, &tp), &tp);
      },
      [&](const Tensor4d& xd) {
        return double(reduce_sum_all(broadcast_mul(op64(xd), rd)).data[0]);
      },
      x, eps);
  return rep.max_err;
}

struct CheckTable {
  double tol;
  bool all_ok = true;
  void report(const std::string& name, double err) {
    bool ok = err < tol;
    all_ok = all_ok && ok;
    std::printf("  %-34s max rel err %.3e  %s\n", name.c_str(), err, ok ? "PASS" : "FAIL");
  }
};

void gradcheck_ops(CheckTable& table, double eps, Index seeds) {
  auto over_seeds = [&](const std::string& name, auto fn) {
    double worst = 0;
    for (Index s = 0; s < seeds; ++s) worst = std::max(worst, fn(std::uint64_t(s) + 1));
    table.report(name, worst);
  };

  over_seeds("relu", [&](std::uint64_t s) {
    Tensor4f x = cli_spread({2, 3, 5, 4}, s);
    return probe_op([](Tape<float>* tp, const Tensor4f& v) { return relu(v, tp); },
                    [](const Tensor4d& v) { return relu(v); }, x, s, eps);
  });
  over_seeds("sigmoid", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({2, 3, 5, 4}, s);
    return probe_op([](Tape<float>* tp, const Tensor4f& v) { return sigmoid(v, tp); },
                    [](const Tensor4d& v) { return sigmoid(v); }, x, s, eps);
  });
  over_seeds("add+scale", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({2, 3, 4, 4}, s);
    Tensor4f y32 = cli_randn({2, 3, 4, 4}, s ^ 7);
    Tensor4d y64 = cast<double>(y32);
    return probe_op(
        [&](Tape<float>* tp, const Tensor4f& v) { return add(scale(v, 1.5f, tp), y32, tp); },
        [&](const Tensor4d& v) { return add(scale(v, 1.5), y64); }, x, s, eps);
  });
  over_seeds("broadcast_mul", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({2, 4, 3, 3}, s);
    Tensor4f g32 = cli_randn({2, 4, 1, 1}, s ^ 9);
    Tensor4d g64 = cast<double>(g32);
    return probe_op([&](Tape<float>* tp, const Tensor4f& v) { return broadcast_mul(v, g32, tp); },
                    [&](const Tensor4d& v) { return broadcast_mul(v, g64); }, x, s, eps);
  });
  over_seeds("channel reduce mean/max", [&](std::uint64_t s) {
    Tensor4f x = cli_spread({2, 4, 5, 6}, s);
    double worst = 0;
    for (Reduce mode : {Reduce::Mean, Reduce::Max}) {
      worst = std::max(worst, probe_op([&](Tape<float>* tp, const Tensor4f& v) {
                                 return channel_reduce(v, mode, tp);
                               },
                               [&](const Tensor4d& v) { return channel_reduce(v, mode); }, x, s,
                               eps));
    }
    return worst;
  });
  over_seeds("reduce mean/max over axes", [&](std::uint64_t s) {
    Tensor4f x = cli_spread({2, 4, 5, 6}, s);
    double worst = 0;
    for (Axis ax : {Axis::H, Axis::W}) {
      worst = std::max(
          worst, probe_op([&](Tape<float>* tp,
                              const Tensor4f& v) { return reduce_axis(v, ax, Reduce::Mean, tp); },
                          [&](const Tensor4d& v) { return reduce_axis(v, ax, Reduce::Mean); }, x,
                          s, eps));
      worst = std::max(
          worst, probe_op([&](Tape<float>* tp,
                              const Tensor4f& v) { return reduce_axis(v, ax, Reduce::Max, tp); },
                          [&](const Tensor4d& v) { return reduce_axis(v, ax, Reduce::Max); }, x,
                          s, eps));
    }
    return worst;
  });
  over_seeds("concat+slice+swap_hw", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({2, 3, 4, 5}, s);
    Tensor4f y32 = cli_randn({2, 3, 2, 5}, s ^ 3);
    Tensor4d y64 = cast<double>(y32);
    return probe_op(
        [&](Tape<float>* tp, const Tensor4f& v) {
          Tensor4f c = concat(v, y32, Axis::H, tp);
          return swap_hw(slice(c, Axis::H, 1, 5, tp), tp);
        },
        [&](const Tensor4d& v) {
          Tensor4d c = concat(v, y64, Axis::H);
          return swap_hw(slice(c, Axis::H, 1, 5));
        },
        x, s, eps);
  });
  over_seeds("conv2d 3x3 s1 p1", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({2, 3, 6, 6}, s);
    Tensor4f w = cli_randn({4, 3, 3, 3}, s ^ 11, 0.5f);
    Tensor4f b = cli_randn({1, 4, 1, 1}, s ^ 12);
    Tensor4d wd = cast<double>(w), bd = cast<double>(b);
    return probe_op(
        [&](Tape<float>* tp, const Tensor4f& v) { return conv2d(v, w, &b, 1, 1, 1, tp); },
        [&](const Tensor4d& v) { return conv2d(v, wd, &bd, 1, 1, 1); }, x, s, eps);
  });
  over_seeds("conv2d 3x3 s2 grouped", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({2, 4, 6, 6}, s);
    Tensor4f w = cli_randn({6, 2, 3, 3}, s ^ 13, 0.5f);
    Tensor4d wd = cast<double>(w);
    return probe_op(
        [&](Tape<float>* tp, const Tensor4f& v) { return conv2d(v, w, nullptr, 2, 1, 2, tp); },
        [&](const Tensor4d& v) { return conv2d(v, wd, nullptr, 2, 1, 2); }, x, s, eps);
  });
  over_seeds("batchnorm train/eval", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({3, 4, 5, 5}, s);
    Tensor4f gamma = cli_randn({1, 4, 1, 1}, s ^ 21, 0.5f);
    Tensor4f beta = cli_randn({1, 4, 1, 1}, s ^ 22);
    Tensor4d gd = cast<double>(gamma), bd = cast<double>(beta);
    double worst = 0;
    for (Mode mode : {Mode::Train, Mode::Eval}) {
      worst = std::max(worst, probe_op(
                                  [&](Tape<float>* tp, const Tensor4f& v) {
                                    Tensor4f rm = Tensor4f({1, 4, 1, 1});
                                    Tensor4f rv = Tensor4f::full({1, 4, 1, 1}, 1.3f);
                                    return batchnorm2d(v, gamma, beta, rm, rv, mode, false, 1e-5f,
                                                       0.1f, tp);
                                  },
                                  [&](const Tensor4d& v) {
                                    Tensor4d rm = Tensor4d({1, 4, 1, 1});
                                    Tensor4d rv = Tensor4d::full({1, 4, 1, 1}, 1.3);
                                    return batchnorm2d(v, gd, bd, rm, rv, mode, false, 1e-5, 0.1);
                                  },
                                  x, s, eps));
    }
    return worst;
  });
  over_seeds("maxpool 3x3 s2", [&](std::uint64_t s) {
    Tensor4f x = cli_spread({2, 3, 7, 7}, s);
    return probe_op([](Tape<float>* tp, const Tensor4f& v) { return maxpool2d(v, 3, 2, 1, tp); },
                    [](const Tensor4d& v) { return maxpool2d(v, 3, 2, 1); }, x, s, eps);
  });
  over_seeds("bilinear upsample x2", [&](std::uint64_t s) {
    Tensor4f x = cli_randn({2, 3, 4, 5}, s);
    return probe_op(
        [](Tape<float>* tp, const Tensor4f& v) { return bilinear_upsample_x2(v, tp); },
        [](const Tensor4d& v) { return bilinear_upsample_x2(v); }, x, s, eps);
  });

  auto loss_target = [](std::uint64_t s) {
    Rng rng = Rng::derive(s, rng_stream::kGradCheck, 2);
    Tensor4f t({2, 1, 4, 4});
    for (auto& v : t.data) v = float(rng.uniform_int(3));
    return t;
  };
  over_seeds("cross entropy", [&](std::uint64_t s) {
    Tensor4f z = cli_randn({2, 3, 4, 4}, s);
    Tensor4f t = loss_target(s);
    Tensor4d td = cast<double>(t);
    return probe_op(
        [&](Tape<float>* tp, const Tensor4f& v) { return cross_entropy_loss(v, t, tp); },
        [&](const Tensor4d& v) { return cross_entropy_loss(v, td); }, z, s, eps);
  });
  over_seeds("dice", [&](std::uint64_t s) {
    Tensor4f z = cli_randn({2, 3, 4, 4}, s);
    Tensor4f t = loss_target(s);
    Tensor4d td = cast<double>(t);
    return probe_op([&](Tape<float>* tp, const Tensor4f& v) { return dice_loss(v, t, tp); },
                    [&](const Tensor4d& v) { return dice_loss(v, td); }, z, s, eps);
  });
  over_seeds("combined loss", [&](std::uint64_t s) {
    Tensor4f z = cli_randn({2, 3, 4, 4}, s);
    Tensor4f t = loss_target(s);
    Tensor4d td = cast<double>(t);
    return probe_op([&](Tape<float>* tp, const Tensor4f& v) { return combined_loss(v, t, tp); },
                    [&](const Tensor4d& v) { return combined_loss(v, td); }, z, s, eps);
  });
}

// One attention block, one seed: check the gradient wrt the input and wrt
// every trainable parameter tensor. The registry gives a kind-agnostic
// handle on the tensors, so the same code drives gca, se, cbam and coordatt.
double att_block_probe(const AttentionConfig& cfg, std::uint64_t s, Mode mode, double eps) {
  const Index C = 8;
  Tensor4f x = cli_spread({2, C, 6, 6}, s);
  AttParams<float> p = make_attention<float>(C, cfg);
  ParamRegistry<float> reg;
  register_attention(reg, "att", p);
  std::uint64_t k = 0;
  for (const auto& e : reg.entries()) {
    const std::uint64_t ss = s ^ (31 + k++);
    if (e.kind == ParamKind::ConvWeight) {
      *e.tensor = cli_randn(e.tensor->shape, ss, 0.5f);
    } else if (e.kind == ParamKind::BnGamma) {
      *e.tensor = cli_randn(e.tensor->shape, ss, 0.3f);
      for (auto& v : e.tensor->data) v += 1.0f;
    } else if (e.kind == ParamKind::BnMean) {
      for (auto& v : e.tensor->data) v = 0.1f;
    } else if (e.kind == ParamKind::BnVar) {
      for (auto& v : e.tensor->data) v = 1.3f;
    } else {
      *e.tensor = cli_randn(e.tensor->shape, ss, 0.3f);
    }
  }
  AttParams<double> pd = make_attention<double>(C, cfg);
  {
    ParamRegistry<double> rd;
    register_attention(rd, "att", pd);
    for (std::size_t i = 0; i < reg.entries().size(); ++i)
      *rd.entries()[i].tensor = cast<double>(*reg.entries()[i].tensor);
  }

  double worst = probe_op(
      [&](Tape<float>* tp, const Tensor4f& v) {
        AttParams<float> local = p;
        return attention_forward(v, cfg, local, mode, false, 1e-5f, 0.1f, tp);
      },
      [&](const Tensor4d& v) {
        AttParams<double> local = pd;
        return attention_forward(v, cfg, local, mode, false, 1e-5, 0.1);
      },
      x, s, eps);

  for (std::size_t i = 0; i < reg.entries().size(); ++i) {
    const ParamKind kind = reg.entries()[i].kind;
    if (kind == ParamKind::BnMean || kind == ParamKind::BnVar) continue;
    worst = std::max(
        worst, probe_op(
                   [&](Tape<float>* tp, const Tensor4f& v) {
                     AttParams<float> local = p;
                     ParamRegistry<float> lr;
                     register_attention(lr, "att", local);
                     *lr.entries()[i].tensor = v.detached();
                     lr.entries()[i].tensor->node = v.node;
                     return attention_forward(x, cfg, local, mode, false, 1e-5f, 0.1f, tp);
                   },
                   [&](const Tensor4d& v) {
                     AttParams<double> local = pd;
                     ParamRegistry<double> lr;
                     register_attention(lr, "att", local);
                     *lr.entries()[i].tensor = v.detached();
                     return attention_forward(cast<double>(x), cfg, local, mode, false, 1e-5, 0.1);
                   },
                   *reg.entries()[i].tensor, s ^ (777 + std::uint64_t(i)), eps));
  }
  return worst;
}

double att_block_over_seeds(const AttentionConfig& cfg, Mode mode, double eps, Index seeds) {
  double worst = 0;
  for (Index s = 0; s < seeds; ++s)
    worst = std::max(worst, att_block_probe(cfg, std::uint64_t(s) + 1, mode, eps));
  return worst;
}

void gradcheck_gca(CheckTable& table, double eps, Index seeds) {
  AttentionConfig cfg;
  cfg.kind = AttentionKind::Gca;
  cfg.groups = 2;
  cfg.reduction = 2;
  cfg.pooling = PoolKind::AvgMax;
  table.report("gca x+params (train bn)", att_block_over_seeds(cfg, Mode::Train, eps, seeds));
  table.report("gca x+params (eval bn)", att_block_over_seeds(cfg, Mode::Eval, eps, seeds));
}

void gradcheck_blocks(CheckTable& table, double eps, Index seeds) {
  AttentionConfig se;
  se.kind = AttentionKind::Se;
  se.reduction = 2;
  table.report("se x+params", att_block_over_seeds(se, Mode::Train, eps, seeds));

  AttentionConfig cbam;
  cbam.kind = AttentionKind::Cbam;
  cbam.reduction = 2;
  table.report("cbam x+params", att_block_over_seeds(cbam, Mode::Train, eps, seeds));

  AttentionConfig ca;
  ca.kind = AttentionKind::CoordAtt;
  ca.reduction = 2;
  table.report("coordatt x+params (train bn)", att_block_over_seeds(ca, Mode::Train, eps, seeds));
  table.report("coordatt x+params (eval bn)", att_block_over_seeds(ca, Mode::Eval, eps, seeds));
}

void gradcheck_model(CheckTable& table, double eps, Index seeds) {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.num_classes = 3;
  cfg.width_scale = 0.25;
  cfg.attention.kind = AttentionKind::Gca;

  double worst_x = 0, worst_head = 0;
  for (Index s = 0; s < seeds; ++s) {
    const std::uint64_t seed = std::uint64_t(s) + 1;
    Model<float> m = make_model<float>(cfg);
    ParamRegistry<float> reg;
    register_model(reg, m);
    init_params(reg, seed);
    // nudge running stats off identity so eval-mode normalization is active
    for (const auto& e : reg.entries()) {
      if (e.kind == ParamKind::BnMean)
        for (auto& v : e.tensor->data) v = 0.05f;
      if (e.kind == ParamKind::BnVar)
        for (auto& v : e.tensor->data) v = 1.2f;
    }

    // double-precision twin built once per seed, reused across every
    // finite-difference evaluation
    Model<double> md = make_model<double>(cfg);
    ParamRegistry<double> regd;
    register_model(regd, md);
    for (std::size_t i = 0; i < reg.entries().size(); ++i)
      *regd.entries()[i].tensor = cast<double>(*reg.entries()[i].tensor);
    const Tensor4d head_w0 = cast<double>(m.head.w);
    const Tensor4d head_b0 = cast<double>(m.head.b);

    Tensor4f x = cli_spread({1, 1, 32, 32}, seed);
    const Tensor4d xd = cast<double>(x);
    worst_x = std::max(
        worst_x, probe_op([&](Tape<float>* tp, const Tensor4f& v) {
                   return model_forward(m, v, Mode::Eval, false, tp);
                 },
                 [&](const Tensor4d& v) { return model_forward(md, v, Mode::Eval, false); }, x,
                 seed, eps));

    auto head_probe = [&](bool bias) {
      const Tensor4f& var = bias ? m.head.b : m.head.w;
      return probe_op(
          [&](Tape<float>* tp, const Tensor4f& v) {
            Model<float> local = m;
            (bias ? local.head.b : local.head.w) = v.detached();
            (bias ? local.head.b : local.head.w).node = v.node;
            return model_forward(local, x, Mode::Eval, false, tp);
          },
          [&](const Tensor4d& v) {
            md.head.w = bias ? head_w0 : v.detached();
            md.head.b = bias ? v.detached() : head_b0;
            return model_forward(md, xd, Mode::Eval, false);
          },
          var, seed ^ 99, eps);
    };
    worst_head = std::max(worst_head, std::max(head_probe(false), head_probe(true)));
  }
  table.report("model logits wrt input", worst_x);
  table.report("model logits wrt head params", worst_head);
}

int cmd_gradcheck(const std::string& target, double eps, Index seeds) {
  CheckTable table{1e-3};
  std::printf("gradient checks: target %s, eps %.1e, %lld seed(s), tolerance %.1e\n",
              target.c_str(), eps, static_cast<long long>(seeds), table.tol);
  if (target == "ops")
    gradcheck_ops(table, eps, seeds);
  else if (target == "gca")
    gradcheck_gca(table, eps, seeds);
  else if (target == "blocks")
    gradcheck_blocks(table, eps, seeds);
  else if (target == "model")
    gradcheck_model(table, eps, seeds);
  else if (target == "all") {
    gradcheck_ops(table, eps, seeds);
    gradcheck_gca(table, eps, seeds);
    gradcheck_blocks(table, eps, seeds);
    gradcheck_model(table, eps, seeds);
  } else
    fail("unknown gradcheck target '", target, "' (expected ops, gca, blocks, model or all)");
  std::printf("%s\n", table.all_ok ? "ALL PASS" : "FAILURES PRESENT");
  return table.all_ok ? 0 : 1;
}

// --------------------------------------------------------------- params ----

int cmd_params(const std::string& config_path, Index height, Index width) {
  ModelConfig cfg;
  if (!config_path.empty()) {
    cfg = parse_run_config(slurp(config_path)).model;
  } else {
    cfg.num_classes = 9;  // reference configuration the headline totals are quoted for
    cfg.attention.kind = AttentionKind::Gca;
  }
  ModelConfig baseline = cfg;
  baseline.attention.kind = AttentionKind::None;

  ComplexityTable p_base = model_param_table(baseline);
  ComplexityTable p_cfg = model_param_table(cfg);
  ComplexityTable m_base = model_macs_table(baseline, height, width);
  ComplexityTable m_cfg = model_macs_table(cfg, height, width);

  std::printf("component        params(base)     params(cfg)      macs(base)       macs(cfg)\n");
  auto rows_b = p_base.rows();
  auto rows_c = p_cfg.rows();
  auto rows_mb = m_base.rows();
  auto rows_mc = m_cfg.rows();
  for (std::size_t i = 0; i < rows_b.size(); ++i)
    std::printf("%-16s %-16lld %-16lld %-16lld %lld\n", rows_b[i].first.c_str(),
                static_cast<long long>(rows_b[i].second), static_cast<long long>(rows_c[i].second),
                static_cast<long long>(rows_mb[i].second),
                static_cast<long long>(rows_mc[i].second));
  std::printf("%-16s %-16lld %-16lld %-16lld %lld\n", "total",
              static_cast<long long>(p_base.total()), static_cast<long long>(p_cfg.total()),
              static_cast<long long>(m_base.total()), static_cast<long long>(m_cfg.total()));
  std::printf("flops = 2 x macs: base %lld, cfg %lld (at %lldx%lld)\n",
              static_cast<long long>(macs_to_flops(m_base.total())),
              static_cast<long long>(macs_to_flops(m_cfg.total())), static_cast<long long>(height),
              static_cast<long long>(width));

  auto delta = [](double got, double ref) { return std::abs(got - ref) / ref; };
  std::printf("reference deltas (informational):\n");
  std::printf("  baseline params vs 43.93M: %.4f relative\n", delta(double(p_base.total()), 43.93e6));
  std::printf("  attention params vs 44.98M total: %.4f relative\n",
              delta(double(p_cfg.total()), 44.98e6));
  std::printf("  baseline macs vs 17.57G: %.4f relative\n", delta(double(m_base.total()), 17.57e9));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* workers = std::getenv("GCA_NUM_WORKERS")) {
    int n = std::atoi(workers);
    if (n > 0) Eigen::setNbThreads(n);
  }

  CLI::App app{"grouped coordinate attention segmentation toolkit"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic shape dataset");
  std::string synth_out;
  Index synth_n = 100, synth_classes = 4, synth_size = 64;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--n", synth_n, "sample count");
  synth->add_option("--classes", synth_classes, "class count incl. background");
  synth->add_option("--size", synth_size, "square image size");
  synth->add_option("--seed", synth_seed, "generation seed");

  auto* train = app.add_subcommand("train", "train a model from a run config");
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  train->add_option("--config", train_config, "run config json (defaults apply if omitted)");
  train->add_option("--out", train_out, "output directory")->required();
  auto* train_seed_opt = train->add_option("--seed", train_seed, "override train.seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_metrics, eval_split = "test";
  Index eval_batch = 8, eval_canvas = 0;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--metrics-out", eval_metrics, "metrics csv path");
  eval->add_option("--split", eval_split, "train, val or test (default test)");
  eval->add_option("--batch", eval_batch, "evaluation batch size");
  eval->add_option("--canvas", eval_canvas, "letterbox size (0 = smallest multiple of 32)");

  auto* ablate = app.add_subcommand("ablate", "run an attention ablation grid");
  std::vector<std::string> ablate_grid;
  Index ablate_budget = 2;
  std::string ablate_out, ablate_config;
  std::uint64_t ablate_seed = 10;
  ablate->add_option("--grid", ablate_grid,
                     "axes like groups=1,2,4 reduction=1,2,4,8 pooling=avg,max,both "
                     "attention=none,se,cbam,gca");
  ablate->add_option("--budget-epochs", ablate_budget, "epochs per grid point");
  ablate->add_option("--out", ablate_out, "output directory")->required();
  ablate->add_option("--seed", ablate_seed, "shared seed for every grid point");
  ablate->add_option("--config", ablate_config, "base run config json");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_target = "ops";
  double gc_eps = 1e-3;
  Index gc_seeds = 5;
  gradcheck->add_option("--target", gc_target, "ops, gca, blocks, model or all");
  gradcheck->add_option("--eps", gc_eps, "finite-difference step");
  gradcheck->add_option("--seeds", gc_seeds, "seeds per check");

  auto* params = app.add_subcommand("params", "component parameter and mac tables");
  std::string params_config;
  Index params_h = 224, params_w = 224;
  params->add_option("--config", params_config, "run config json (default: reference model)");
  params->add_option("--height", params_h, "mac-count input height");
  params->add_option("--width", params_w, "mac-count input width");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_out, synth_n, synth_classes, synth_size, synth_seed);
    if (train->parsed()) {
      train_seed_set = train_seed_opt->count() > 0;
      return cmd_train(train_config, train_out, train_seed, train_seed_set);
    }
    if (eval->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_metrics, eval_split, eval_batch, eval_canvas);
    if (ablate->parsed())
      return cmd_ablate(ablate_grid, ablate_budget, ablate_out, ablate_seed, ablate_config);
    if (gradcheck->parsed()) return cmd_gradcheck(gc_target, gc_eps, gc_seeds);
    if (params->parsed()) return cmd_params(params_config, params_h, params_w);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
