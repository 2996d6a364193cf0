#pragma once

#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "fluencygan/ops.hpp"
#include "fluencygan/text.hpp"

namespace fluencygan {

enum class GeneratorKind { kLstm, kTransformer };

std::string_view generator_kind_name(GeneratorKind kind);
/// "lstm" or "transformer"; ConfigError otherwise.
GeneratorKind parse_generator_kind(std::string_view name);

/// Layer sizes for both generator families and the discriminator.
struct ModelDims {
  int vocab_size = 0;
  int max_len = 32;
  // attention LSTM
  int embed = 64;
  int hidden = 128;
  // transformer
  int model_dim = 64;
  int heads = 4;
  int ff_dim = 256;
  int layers = 2;
  double dropout = 0.1;
  // discriminator
  int disc_embed = 64;
  int disc_filters = 64;
  int disc_hidden = 128;

  /// ParameterError on inconsistent sizes.
  void validate() const;
};

/// Equal-length token rows, row-major (row b, position t at b * length + t).
struct TokenBatch {
  int size = 0;
  int length = 0;
  std::vector<int> ids;

  int at(int b, int t) const { return ids[static_cast<std::size_t>(b * length + t)]; }
  /// Non-PAD flags in the same layout as ids.
  std::vector<std::uint8_t> mask() const;
  /// Drops trailing columns that are PAD in every row.
  TokenBatch trimmed() const;
  /// Positions 1.. of every row (the decoder's prediction targets), with PAD
  /// replaced by -1 so cross_entropy skips them.
  std::vector<int> next_token_targets() const;
  TokenSequence row(int b) const;

  static TokenBatch from_rows(const std::vector<TokenSequence>& rows);
  static TokenBatch from_flat(int size, int length, std::vector<int> ids);
};

template <typename S>
struct DecodeOutput {
  Var<S> logits;
  Var<S> soft_tokens;
};

/// Sequence-to-sequence generator. Teacher-forced outputs for source and
/// target batches hold B * (T - 1) rows ordered b * (T - 1) + t, where row t
/// predicts target position t + 1 (T = target length).
template <typename S>
class Generator {
 public:
  explicit Generator(ModelDims dims) : dims_(dims) { dims_.validate(); }
  virtual ~Generator() = default;
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;

  virtual GeneratorKind kind() const = 0;
  const ModelDims& dims() const { return dims_; }
  ParameterSet<S>& params() { return params_; }
  const ParameterSet<S>& params() const { return params_; }

  /// dropout_rng == nullptr runs in evaluation mode.
  virtual Var<S> forward_logits(Graph<S>& g, const TokenBatch& src, const TokenBatch& tgt,
                                Rng* dropout_rng) = 0;

  /// Logits plus gumbel_softmax(logits, tau, noise); noise has the logits' shape.
  DecodeOutput<S> decode_train(Graph<S>& g, const TokenBatch& src, const TokenBatch& tgt, S tau,
                               const Tensor<S>& noise, Rng* dropout_rng);

  /// Argmax decoding; each result starts with BOS, never holds PAD before
  /// EOS, and is padded to max_len.
  virtual std::vector<TokenSequence> decode_greedy(const std::vector<TokenSequence>& src,
                                                   int max_len) = 0;

  /// Mean of the encoder outputs over the non-PAD positions of seq.
  virtual std::vector<double> sentence_embedding(const TokenSequence& seq) = 0;

 protected:
  ModelDims dims_;
  ParameterSet<S> params_;
};

template <typename S>
std::unique_ptr<Generator<S>> make_generator(GeneratorKind kind, const ModelDims& dims,
                                             std::uint64_t seed);

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)) on the matrix view.
template <typename S>
void glorot_uniform(Tensor<S>& t, Rng& rng);

/// Index of the largest entry of each row, skipping the listed columns.
template <typename S>
std::vector<int> argmax_rows(const RowMatrix<S>& m, std::initializer_list<int> excluded = {});

}  // namespace fluencygan
