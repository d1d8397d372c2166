#pragma once
// Run configuration: one JSON document with model / train / data / augment
// sections, every field optional and defaulted. Parsing is strict: unknown
// keys, type mismatches and impossible values are all collected and reported
// together. The renderer writes the fully resolved configuration, so echoing
// it back through the parser reproduces the identical run.

#include <string>

#include "gca/augment.hpp"
#include "gca/dataset.hpp"
#include "gca/model.hpp"
#include "gca/synth.hpp"
#include "gca/trainer.hpp"

namespace gca {

enum class DataSource { Synth, Directory };

struct DataConfig {
  DataSource source = DataSource::Synth;
  SynthConfig synth;       // used when source == Synth
  std::string directory;   // used when source == Directory
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  AugmentConfig augment;
};

// Throws with every problem in the document listed, not just the first.
RunConfig parse_run_config(const std::string& json_text);

// Fully resolved JSON; parse_run_config(render_run_config(c)) round-trips.
std::string render_run_config(const RunConfig& cfg);

// Synthesize-and-split or load from disk, per the data section.
Dataset materialize_dataset(const DataConfig& cfg);

}  // namespace gca
