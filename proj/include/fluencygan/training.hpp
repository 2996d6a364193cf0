#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fluencygan/checkpoint.hpp"
#include "fluencygan/discriminator.hpp"
#include "fluencygan/generator.hpp"
#include "fluencygan/optim.hpp"

namespace fluencygan {

struct TrainingConfig {
  double lambda = 0.1;
  double tau = 1.0;
  // exponential decay of tau from `tau` to `tau_final` across the rounds
  bool tau_anneal = false;
  double tau_final = 0.5;
  int pretrain_epochs = 20;
  int gen_epochs_per_disc_epoch = 2;
  int adversarial_rounds = 10;
  int batch_size = 32;
  AdamConfig adam;
  int warmup_steps = 400;
  double base_lr = 1e-3;
  double disc_lr = 1e-3;
  double clip_norm = 5.0;
  std::uint64_t seed = 1;

  /// ParameterError on out-of-range values.
  void validate() const;
  /// Temperature used in 1-based adversarial round `round`.
  double tau_for_round(int round) const;
};

/// Aligned awkward/fluent sentence pairs.
struct ParallelCorpus {
  std::vector<TokenSequence> awkward;
  std::vector<TokenSequence> fluent;
};

/// Encodes line-aligned awkward/fluent token lists; DataError when the
/// line counts differ or the corpus is empty.
ParallelCorpus encode_parallel_corpus(const std::vector<Tokens>& awkward,
                                      const std::vector<Tokens>& fluent, const Vocabulary& vocab,
                                      int max_len);

/// One line of the training log. Adversarial-only fields are empty during
/// pretraining.
struct EpochLog {
  std::string phase;  // "pretrain", "disc" or "gen"
  std::optional<int> round;
  int epoch = 0;  // 1-based count of epochs of this phase
  double loss_ae = 0.0;
  std::optional<double> loss_dg;
  std::optional<double> loss_df;
  std::optional<double> disc_acc;
  double lr = 0.0;
  double wall_ms = 0.0;

  std::string to_json() const;
  /// DataError on malformed lines.
  static EpochLog from_json(const std::string& line);
};

std::vector<EpochLog> read_training_log(const std::filesystem::path& path);

/// Owns a generator, a discriminator and their optimizers; runs autoencoder
/// pretraining and the alternating adversarial schedule on float parameters.
class Trainer {
 public:
  using EpochCallback = std::function<void(const EpochLog&)>;

  Trainer(GeneratorKind kind, const ModelDims& dims, const TrainingConfig& config);
  /// Restores models, optimizer moments, counters and RNG state.
  explicit Trainer(const Checkpoint& checkpoint);
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  Generator<float>& generator() { return *generator_; }
  Discriminator<float>& discriminator() { return *discriminator_; }
  GeneratorKind kind() const { return generator_->kind(); }
  const ModelDims& dims() const { return generator_->dims(); }
  const TrainingConfig& config() const { return config_; }
  /// Replaces the hyperparameters (e.g. lambda) without touching model state.
  void set_config(const TrainingConfig& config);

  /// `epochs` autoencoder epochs: awkward input, awkward target.
  std::vector<EpochLog> pretrain(const ParallelCorpus& data, int epochs,
                                 const EpochCallback& on_epoch = {});
  /// One discriminator epoch followed by gen_epochs_per_disc_epoch generator epochs.
  std::vector<EpochLog> adversarial_round(const ParallelCorpus& data,
                                          const EpochCallback& on_epoch = {});

  int pretrain_epochs_done() const { return pretrain_epochs_; }
  int rounds_done() const { return rounds_; }
  int disc_epochs_done() const { return disc_epochs_; }
  int gen_epochs_done() const { return gen_epochs_; }

  /// Snapshot with the given extra config entries appended.
  Checkpoint checkpoint(const KeyValues& extra = {}) const;

 private:
  void build(GeneratorKind kind, const ModelDims& dims);
  double generator_lr(std::int64_t step) const;
  EpochLog disc_epoch(const ParallelCorpus& data, double tau);
  EpochLog gen_epoch(const ParallelCorpus& data, double tau);

  TrainingConfig config_;
  std::unique_ptr<Generator<float>> generator_;
  std::unique_ptr<Discriminator<float>> discriminator_;
  std::unique_ptr<Adam<float>> gen_opt_;
  std::unique_ptr<Adam<float>> disc_opt_;
  Rng rng_;
  int pretrain_epochs_ = 0;
  int rounds_ = 0;
  int disc_epochs_ = 0;
  int gen_epochs_ = 0;
};

}  // namespace fluencygan
