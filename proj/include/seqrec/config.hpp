// Experiment configuration: a flat, human-editable key=value document with
// dotted keys (e.g. loss.mip_weight=1.0). Command-line overrides take
// precedence over file keys; the fully resolved document is written into
// every run directory.

#pragma once

#include <filesystem>
#include <string>

#include "seqrec/eval.hpp"
#include "seqrec/model.hpp"
#include "seqrec/objectives.hpp"
#include "seqrec/sampler.hpp"
#include "seqrec/trainer.hpp"

namespace seqrec {

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  SamplerHypers sampler;
  LossWeights weights;
  bool raw_bilinear = false;
  EvalProtocol eval;
  std::string dataset_dir;

  /// Applies one `key=value` assignment; throws ConfigError on unknown keys
  /// or unparseable values.
  void set(const std::string& key, const std::string& value);

  /// All keys in canonical order, serialized as key=value lines.
  std::string serialize() const;

  void load_file(const std::filesystem::path& path);
  void save_file(const std::filesystem::path& path) const;
};

}  // namespace seqrec
