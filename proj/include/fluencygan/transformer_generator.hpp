#pragma once

#include "fluencygan/generator.hpp"

namespace fluencygan {

/// Post-norm transformer encoder-decoder with sinusoidal positions, embeddings
/// scaled by sqrt(D) and dropout on embeddings and sublayer outputs.
template <typename S>
class TransformerGenerator final : public Generator<S> {
 public:
  TransformerGenerator(ModelDims dims, std::uint64_t seed);

  GeneratorKind kind() const override { return GeneratorKind::kTransformer; }

  /// Encoder states [B * T, D], batch-major.
  Var<S> encode(Graph<S>& g, const TokenBatch& src, Rng* dropout_rng);
  /// Decoder states [B * T', D] for decoder inputs `tgt_in`. When
  /// `self_weights` is non-null it receives the first layer's self-attention
  /// probabilities.
  Var<S> decode(Graph<S>& g, Var<S> memory, const TokenBatch& src, const TokenBatch& tgt_in,
                Rng* dropout_rng, RowMatrix<S>* self_weights = nullptr);

  Var<S> forward_logits(Graph<S>& g, const TokenBatch& src, const TokenBatch& tgt,
                        Rng* dropout_rng) override;
  std::vector<TokenSequence> decode_greedy(const std::vector<TokenSequence>& src,
                                           int max_len) override;
  std::vector<double> sentence_embedding(const TokenSequence& seq) override;

  /// Sinusoidal table [length, D].
  static RowMatrix<S> positional_table(int length, int d);

 private:
  Var<S> embed(Graph<S>& g, const TokenBatch& tokens, Rng* dropout_rng);
  Var<S> attention(Graph<S>& g, const std::string& prefix, Var<S> xq, Var<S> xkv, int batch,
                   std::span<const std::uint8_t> key_mask, bool causal, RowMatrix<S>* weights);
  Var<S> feed_forward(Graph<S>& g, const std::string& prefix, Var<S> x);
  Var<S> residual_norm(Graph<S>& g, const std::string& prefix, Var<S> x, Var<S> sub,
                       Rng* dropout_rng);
  Var<S> p(Graph<S>& g, const std::string& name) { return g.param(this->params_.get(name)); }
};

}  // namespace fluencygan
