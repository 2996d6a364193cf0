#pragma once

#include <cstdint>
#include <span>

#include "fluencygan/generator.hpp"

namespace fluencygan {

/// CNN classifier over token distributions: own embedding, convolutions of
/// widths 3, 4 and 5 with ReLU and max-pool over time, a ReLU dense layer and
/// a sigmoid output. Inputs are sequences of seq_len() = max_len - 1 rows, the
/// tokens after BOS.
template <typename S>
class Discriminator {
 public:
  static constexpr int kWidths[3] = {3, 4, 5};

  Discriminator(const ModelDims& dims, std::uint64_t seed);
  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;

  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }
  int seq_len() const { return seq_len_; }
  int vocab_size() const { return vocab_; }

  /// distribution: [B * L, V] or [B, L, V] rows summing to one. Returns [B, 1].
  Var<S> score(Graph<S>& g, Var<S> distribution);
  /// Hard tokens [B, L], converted to one-hot rows.
  Var<S> score(Graph<S>& g, const TokenBatch& tokens);

  /// One-hot rows [B * L, V] for a token batch.
  Tensor<S> one_hot(const TokenBatch& tokens) const;

  /// Positions 1.. of each sequence, padded with PAD to seq_len().
  TokenBatch real_input(const TokenBatch& sequences) const;

  /// Discriminator view of a generator's soft tokens: row t of sentence b is
  /// soft row b * (T - 1) + t where the target has a token at t + 1 and a PAD
  /// one-hot elsewhere.
  Var<S> generated_input(Graph<S>& g, Var<S> soft_tokens, const TokenBatch& tgt);

 private:
  int vocab_;
  int seq_len_;
  ParameterSet<S> params_;
};

/// Fraction of threshold decisions that match labels fluent = 1, generated = 0.
/// ContractError when both lists are empty.
template <typename S>
double discriminator_accuracy(std::span<const S> real_scores, std::span<const S> fake_scores,
                              double threshold = 0.5);

}  // namespace fluencygan
