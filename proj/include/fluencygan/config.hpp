#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "fluencygan/checkpoint.hpp"
#include "fluencygan/generator.hpp"
#include "fluencygan/training.hpp"

namespace fluencygan {

/// Shortest decimal text that parses back to the same double.
std::string format_number(double value);

KeyValues model_dims_entries(const ModelDims& dims);
KeyValues training_entries(const TrainingConfig& config);

/// Return false for unknown keys; ConfigError for malformed values.
bool set_model_dim(ModelDims& dims, std::string_view key, std::string_view value);
bool set_training_option(TrainingConfig& config, std::string_view key, std::string_view value);

/// Settings for a CLI run, read from a key=value file. Lines starting with
/// '#' and blank lines are ignored; relative paths resolve against the
/// directory of the file.
struct RunConfig {
  GeneratorKind kind = GeneratorKind::kLstm;
  ModelDims dims;
  TrainingConfig training;

  std::filesystem::path fluent_corpus;
  // when empty the awkward side is produced by corrupting fluent_corpus
  std::filesystem::path awkward_corpus;
  std::string corruption_rules = "default";
  std::uint64_t corruption_seed = 42;
  // when fluent_corpus is empty, this many grammar sentences are generated
  // from corruption_seed
  int synthetic_sentences = 0;
  std::filesystem::path vocab;
  int vocab_size = 2000;
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::filesystem::path init_checkpoint;
  std::filesystem::path log = "train_log.jsonl";

  /// ConfigError for unknown keys or malformed values.
  void set(std::string_view key, std::string_view value, const std::filesystem::path& base = {});
  /// "key=value" override.
  void apply_override(std::string_view assignment);
  /// ConfigError when inputs are missing or the output locations are unusable.
  void validate() const;
  KeyValues entries() const;

  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace fluencygan
