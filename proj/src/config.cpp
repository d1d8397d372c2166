#include "gca/config.hpp"

#include "model_json.hpp"

namespace gca {

namespace {

ordered_json train_config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["lr_max"] = c.lr_max;
  j["lr_min"] = c.lr_min;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["weight_decay"] = c.weight_decay;
  j["adam_eps"] = c.adam_eps;
  j["eval_every"] = c.eval_every;
  j["patience"] = c.patience;
  j["min_delta"] = c.min_delta;
  j["seed"] = c.seed;
  return j;
}

void train_config_from_json(ordered_json j, TrainConfig& c, const std::string& where,
                            std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + ": must be an object");
    return;
  }
  read_field(j, "lr_max", c.lr_max, where, errors);
  read_field(j, "lr_min", c.lr_min, where, errors);
  read_field(j, "epochs", c.epochs, where, errors);
  read_field(j, "batch_size", c.batch_size, where, errors);
  read_field(j, "beta1", c.beta1, where, errors);
  read_field(j, "beta2", c.beta2, where, errors);
  read_field(j, "weight_decay", c.weight_decay, where, errors);
  read_field(j, "adam_eps", c.adam_eps, where, errors);
  read_field(j, "eval_every", c.eval_every, where, errors);
  read_field(j, "patience", c.patience, where, errors);
  read_field(j, "min_delta", c.min_delta, where, errors);
  read_field(j, "seed", c.seed, where, errors);
  report_unknown(j, where, errors);
}

ordered_json augment_config_to_json(const AugmentConfig& c) {
  ordered_json j;
  j["scale_lo"] = c.scale_lo;
  j["scale_hi"] = c.scale_hi;
  j["jitter"] = c.jitter;
  j["hflip_p"] = c.hflip_p;
  j["hue"] = c.hue;
  j["sat"] = c.sat;
  j["val"] = c.val;
  j["modality"] = c.modality == Modality::Rgb ? "rgb" : "gray";
  j["out_size"] = c.out_size;
  return j;
}

void augment_config_from_json(ordered_json j, AugmentConfig& c, const std::string& where,
                              std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + ": must be an object");
    return;
  }
  read_field(j, "scale_lo", c.scale_lo, where, errors);
  read_field(j, "scale_hi", c.scale_hi, where, errors);
  read_field(j, "jitter", c.jitter, where, errors);
  read_field(j, "hflip_p", c.hflip_p, where, errors);
  read_field(j, "hue", c.hue, where, errors);
  read_field(j, "sat", c.sat, where, errors);
  read_field(j, "val", c.val, where, errors);
  std::string modality;
  read_field(j, "modality", modality, where, errors);
  if (!modality.empty()) {
    if (modality == "rgb")
      c.modality = Modality::Rgb;
    else if (modality == "gray")
      c.modality = Modality::Gray;
    else
      errors.push_back(where + ".modality: unknown value '" + modality + "'");
  }
  read_field(j, "out_size", c.out_size, where, errors);
  report_unknown(j, where, errors);
}

ordered_json data_config_to_json(const DataConfig& c) {
  ordered_json j;
  if (c.source == DataSource::Synth) {
    j["source"] = "synth";
    j["image_size"] = c.synth.image_size;
    j["num_classes"] = c.synth.num_classes;
    j["count"] = c.synth.count;
    j["seed"] = c.synth.seed;
  } else {
    j["source"] = "directory";
    j["path"] = c.directory;
  }
  return j;
}

void data_config_from_json(ordered_json j, DataConfig& c, const std::string& where,
                           std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + ": must be an object");
    return;
  }
  std::string source = "synth";
  read_field(j, "source", source, where, errors);
  if (source == "synth") {
    c.source = DataSource::Synth;
    read_field(j, "image_size", c.synth.image_size, where, errors);
    read_field(j, "num_classes", c.synth.num_classes, where, errors);
    read_field(j, "count", c.synth.count, where, errors);
    read_field(j, "seed", c.synth.seed, where, errors);
  } else if (source == "directory") {
    c.source = DataSource::Directory;
    read_field(j, "path", c.directory, where, errors);
    if (c.directory.empty()) errors.push_back(where + ".path: required for directory source");
  } else {
    errors.push_back(where + ".source: unknown value '" + source + "'");
  }
  report_unknown(j, where, errors);
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  std::vector<std::string> errors;
  RunConfig cfg;
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const ordered_json::exception& e) {
    fail("invalid run configuration: ", e.what());
  }
  if (!j.is_object()) fail("invalid run configuration: top level must be an object");

  if (j.contains("model")) {
    model_config_from_json(j["model"], cfg.model, "model", errors);
    j.erase("model");
  }
  if (j.contains("train")) {
    train_config_from_json(j["train"], cfg.train, "train", errors);
    j.erase("train");
  }
  if (j.contains("data")) {
    data_config_from_json(j["data"], cfg.data, "data", errors);
    j.erase("data");
  }
  if (j.contains("augment")) {
    augment_config_from_json(j["augment"], cfg.augment, "augment", errors);
    j.erase("augment");
  }
  report_unknown(j, "config", errors);

  if (errors.empty()) {
    try {
      validate_train_config(cfg.train);
    } catch (const std::exception& e) {
      errors.push_back(std::string("train: ") + e.what());
    }
    if (cfg.augment.scale_lo <= 0 || cfg.augment.scale_lo > cfg.augment.scale_hi)
      errors.push_back("augment: need 0 < scale_lo <= scale_hi");
    if (cfg.augment.hflip_p < 0 || cfg.augment.hflip_p > 1)
      errors.push_back("augment.hflip_p: must lie in [0,1]");
    if (cfg.augment.out_size <= 0 || cfg.augment.out_size % 32 != 0)
      errors.push_back("augment.out_size: must be a positive multiple of 32");
  }

  if (!errors.empty()) {
    std::string msg = "invalid run configuration:";
    for (const auto& e : errors) msg += "\n  - " + e;
    fail(msg);
  }
  return cfg;
}

std::string render_run_config(const RunConfig& cfg) {
  ordered_json j;
  j["model"] = model_config_to_json(cfg.model);
  j["train"] = train_config_to_json(cfg.train);
  j["data"] = data_config_to_json(cfg.data);
  j["augment"] = augment_config_to_json(cfg.augment);
  return j.dump(2) + "\n";
}

Dataset materialize_dataset(const DataConfig& cfg) {
  if (cfg.source == DataSource::Directory) return load_dataset(cfg.directory);
  Dataset ds;
  ds.samples = synth_generate(cfg.synth);
  ds.split = make_split(cfg.synth.count, cfg.synth.seed);
  ds.num_classes = cfg.synth.num_classes;
  return ds;
}

}  // namespace gca
