#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "langsg/eval_metrics.hpp"
#include "langsg/finetune.hpp"
#include "langsg/pretrain.hpp"
#include "langsg/synth.hpp"

namespace langsg::cli {

// Every setting a command can read. Defaults are the library defaults;
// the config file and command-line flags override them.
struct RunConfig {
  std::optional<std::uint64_t> seed;

  std::string dataset;     // directory written by gen-synthetic
  std::string table;       // LANGEMB1 file
  std::string out_dir;
  std::string pretrained;  // pre-training checkpoint for finetune
  std::string checkpoint;  // model for eval / zero-shot / dump-features

  GenConfig generator;
  std::vector<std::string> classes;  // subset of the built-in object classes, empty = all
  double test_fraction = 0.2;
  double labeled_fraction = 1.0;  // share of the train split used by finetune
  int table_dim = 512;

  EncoderConfig encoder;
  ProjectorConfig projector;
  ContrastiveConfig contrastive;
  PretrainConfig pretrain;
  FinetuneConfig finetune;
  EvalKs ks;
  bool checkpoint_history = false;  // keep one checkpoint per epoch instead of overwriting

  /// Cross-field checks; throws ValidationError.
  void validate() const;
  std::uint64_t require_seed() const;
  /// Copies the shared encoder/projector/contrastive settings into the stage
  /// configs.
  PretrainConfig pretrain_config() const;
  FinetuneConfig finetune_config() const;
};

/// Parses a JSON config document on top of the defaults. Unknown keys and
/// mistyped values throw ParseError.
RunConfig parse_run_config(const nlohmann::json& doc, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved settings, readable by parse_run_config.
nlohmann::json to_json(const RunConfig& c);

}  // namespace langsg::cli
