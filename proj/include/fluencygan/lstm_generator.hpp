#pragma once

#include "fluencygan/generator.hpp"

namespace fluencygan {

/// Single-layer LSTM encoder and decoder with additive attention. The decoder
/// starts from the encoder's final (h, c). Step i feeds [embed(y_{i-1});
/// context_{i-1}] to the cell, attends with the new state h_i and projects
/// tanh(W [h_i; context_i]) to logits.
template <typename S>
class LstmGenerator final : public Generator<S> {
 public:
  struct Encoded {
    Var<S> outputs;  // T * B rows, time-major (t * B + b)
    Var<S> h;
    Var<S> c;
    std::vector<std::uint8_t> mask;  // time-major
    int batch = 0;
  };

  LstmGenerator(ModelDims dims, std::uint64_t seed);

  GeneratorKind kind() const override { return GeneratorKind::kLstm; }

  Encoded encode(Graph<S>& g, const TokenBatch& src);

  /// Context vectors [B, H] for decoder states h [B, H].
  Var<S> attend(Graph<S>& g, const Encoded& enc, Var<S> enc_proj, Var<S> h,
                RowMatrix<S>* weights = nullptr);

  Var<S> forward_logits(Graph<S>& g, const TokenBatch& src, const TokenBatch& tgt,
                        Rng* dropout_rng) override;
  std::vector<TokenSequence> decode_greedy(const std::vector<TokenSequence>& src,
                                           int max_len) override;
  std::vector<double> sentence_embedding(const TokenSequence& seq) override;

 private:
  std::pair<Var<S>, Var<S>> cell(Graph<S>& g, Var<S> x, Var<S> h, Var<S> c, bool decoder);
  Var<S> project_encoder(Graph<S>& g, const Encoded& enc);
  Var<S> combine(Graph<S>& g, Var<S> h, Var<S> ctx);
};

}  // namespace fluencygan
