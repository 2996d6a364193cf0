#include "fluencygan/transformer_generator.hpp"

#include <algorithm>
#include <cmath>

#include "fluencygan/errors.hpp"

namespace fluencygan {

namespace {

constexpr std::uint64_t kInitTag = 0x74726e73;  // "trns"
constexpr int kGreedyChunk = 64;

std::string layer_name(const char* stack, int layer) {
  return std::string(stack) + std::to_string(layer) + ".";
}

}  // namespace

template <typename S>
TransformerGenerator<S>::TransformerGenerator(ModelDims dims, std::uint64_t seed)
    : Generator<S>(dims) {
  const int v = dims.vocab_size, d = dims.model_dim, f = dims.ff_dim;
  auto& p = this->params_;
  Rng rng(Rng::derive(seed, kInitTag));

  auto matrix = [&](const std::string& name, int rows, int cols) {
    glorot_uniform(p.add(name, {rows, cols}), rng);
  };
  auto vector = [&](const std::string& name, int n, S fill) {
    p.add(name, {n}).matrix().setConstant(fill);
  };
  auto attention_block = [&](const std::string& prefix) {
    for (const char* w : {"q", "k", "v", "o"}) {
      matrix(prefix + "w" + w, d, d);
      vector(prefix + "b" + w, d, S(0));
    }
  };
  auto norm = [&](const std::string& prefix) {
    vector(prefix + "g", d, S(1));
    vector(prefix + "b", d, S(0));
  };
  auto ff_block = [&](const std::string& prefix) {
    matrix(prefix + "w1", d, f);
    vector(prefix + "b1", f, S(0));
    matrix(prefix + "w2", f, d);
    vector(prefix + "b2", d, S(0));
  };

  // std 1/sqrt(d) so that the sqrt(d)-scaled embedding has unit scale
  auto& table = p.add("embed", {v, d});
  const double a = std::sqrt(3.0 / d);
  for (auto& x : table.values()) x = static_cast<S>(rng.uniform(-a, a));

  for (int l = 0; l < dims.layers; ++l) {
    const auto pre = layer_name("enc", l);
    attention_block(pre + "self.");
    norm(pre + "ln1.");
    ff_block(pre + "ff.");
    norm(pre + "ln2.");
  }
  for (int l = 0; l < dims.layers; ++l) {
    const auto pre = layer_name("dec", l);
    attention_block(pre + "self.");
    norm(pre + "ln1.");
    attention_block(pre + "cross.");
    norm(pre + "ln2.");
    ff_block(pre + "ff.");
    norm(pre + "ln3.");
  }
  matrix("out.w", d, v);
  vector("out.b", v, S(0));
}

template <typename S>
RowMatrix<S> TransformerGenerator<S>::positional_table(int length, int d) {
  RowMatrix<S> pe(length, d);
  for (int pos = 0; pos < length; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      pe(pos, i) = static_cast<S>(std::sin(angle));
      if (i + 1 < d) pe(pos, i + 1) = static_cast<S>(std::cos(angle));
    }
  }
  return pe;
}

template <typename S>
Var<S> TransformerGenerator<S>::embed(Graph<S>& g, const TokenBatch& tokens, Rng* dropout_rng) {
  const int d = this->dims_.model_dim;
  auto x = embedding_lookup(p(g, "embed"), std::span<const int>(tokens.ids));
  const auto pe = positional_table(tokens.length, d);
  RowMatrix<S> tiled(tokens.size * tokens.length, d);
  for (int b = 0; b < tokens.size; ++b) tiled.middleRows(b * tokens.length, tokens.length) = pe;
  x = add(scale(x, static_cast<S>(std::sqrt(static_cast<double>(d)))),
          g.constant({tokens.size * tokens.length, d}, std::move(tiled)));
  if (dropout_rng) x = dropout(x, static_cast<S>(this->dims_.dropout), *dropout_rng);
  return x;
}

template <typename S>
Var<S> TransformerGenerator<S>::attention(Graph<S>& g, const std::string& prefix, Var<S> xq,
                                          Var<S> xkv, int batch,
                                          std::span<const std::uint8_t> key_mask, bool causal,
                                          RowMatrix<S>* weights) {
  auto proj = [&](Var<S> x, const char* w) {
    return add(matmul(x, p(g, prefix + "w" + w)), p(g, prefix + "b" + w));
  };
  auto heads = multi_head_attention(proj(xq, "q"), proj(xkv, "k"), proj(xkv, "v"), batch,
                                    this->dims_.heads, key_mask, causal, weights);
  return proj(heads, "o");
}

template <typename S>
Var<S> TransformerGenerator<S>::feed_forward(Graph<S>& g, const std::string& prefix, Var<S> x) {
  auto hidden = relu(add(matmul(x, p(g, prefix + "w1")), p(g, prefix + "b1")));
  return add(matmul(hidden, p(g, prefix + "w2")), p(g, prefix + "b2"));
}

template <typename S>
Var<S> TransformerGenerator<S>::residual_norm(Graph<S>& g, const std::string& prefix, Var<S> x,
                                              Var<S> sub, Rng* dropout_rng) {
  if (dropout_rng) sub = dropout(sub, static_cast<S>(this->dims_.dropout), *dropout_rng);
  return layer_norm(add(x, sub), p(g, prefix + "g"), p(g, prefix + "b"));
}

template <typename S>
Var<S> TransformerGenerator<S>::encode(Graph<S>& g, const TokenBatch& src, Rng* dropout_rng) {
  const auto mask = src.mask();
  auto x = embed(g, src, dropout_rng);
  for (int l = 0; l < this->dims_.layers; ++l) {
    const auto pre = layer_name("enc", l);
    auto att = attention(g, pre + "self.", x, x, src.size, mask, false, nullptr);
    x = residual_norm(g, pre + "ln1.", x, att, dropout_rng);
    x = residual_norm(g, pre + "ln2.", x, feed_forward(g, pre + "ff.", x), dropout_rng);
  }
  return x;
}

template <typename S>
Var<S> TransformerGenerator<S>::decode(Graph<S>& g, Var<S> memory, const TokenBatch& src,
                                       const TokenBatch& tgt_in, Rng* dropout_rng,
                                       RowMatrix<S>* self_weights) {
  const auto src_mask = src.mask();
  const auto tgt_mask = tgt_in.mask();
  auto x = embed(g, tgt_in, dropout_rng);
  for (int l = 0; l < this->dims_.layers; ++l) {
    const auto pre = layer_name("dec", l);
    auto self = attention(g, pre + "self.", x, x, tgt_in.size, tgt_mask, true,
                          l == 0 ? self_weights : nullptr);
    x = residual_norm(g, pre + "ln1.", x, self, dropout_rng);
    auto cross = attention(g, pre + "cross.", x, memory, src.size, src_mask, false, nullptr);
    x = residual_norm(g, pre + "ln2.", x, cross, dropout_rng);
    x = residual_norm(g, pre + "ln3.", x, feed_forward(g, pre + "ff.", x), dropout_rng);
  }
  return x;
}

template <typename S>
Var<S> TransformerGenerator<S>::forward_logits(Graph<S>& g, const TokenBatch& src,
                                               const TokenBatch& tgt, Rng* dropout_rng) {
  if (src.size != tgt.size || tgt.length < 2) {
    throw DimensionError("transformer generator: source batch " + std::to_string(src.size) +
                         " vs target batch " + std::to_string(tgt.size) + " of length " +
                         std::to_string(tgt.length));
  }
  TokenBatch tgt_in{tgt.size, tgt.length - 1, {}};
  for (int b = 0; b < tgt.size; ++b) {
    for (int t = 0; t + 1 < tgt.length; ++t) tgt_in.ids.push_back(tgt.at(b, t));
  }
  auto memory = encode(g, src, dropout_rng);
  auto states = decode(g, memory, src, tgt_in, dropout_rng);
  return add(matmul(states, p(g, "out.w")), p(g, "out.b"));
}

template <typename S>
std::vector<TokenSequence> TransformerGenerator<S>::decode_greedy(
    const std::vector<TokenSequence>& src, int max_len) {
  if (max_len < 2) throw ParameterError("greedy decoding needs max_len >= 2");
  std::vector<TokenSequence> result;
  result.reserve(src.size());
  for (std::size_t start = 0; start < src.size(); start += kGreedyChunk) {
    const auto stop = std::min(src.size(), start + kGreedyChunk);
    const auto chunk = TokenBatch::from_rows({src.begin() + static_cast<std::ptrdiff_t>(start),
                                              src.begin() + static_cast<std::ptrdiff_t>(stop)})
                           .trimmed();
    const int batch = chunk.size;
    Graph<S> g;
    g.set_grad_enabled(false);
    auto memory = encode(g, chunk, nullptr);
    auto out_w = p(g, "out.w");
    auto out_b = p(g, "out.b");

    // decoder inputs so far; finished rows keep decoding but are ignored
    std::vector<std::vector<int>> prefix(static_cast<std::size_t>(batch), std::vector<int>{kBos});
    std::vector<bool> done(static_cast<std::size_t>(batch), false);
    int remaining = batch;
    for (int t = 1; t < max_len && remaining > 0; ++t) {
      TokenBatch tgt_in{batch, t, {}};
      for (const auto& row : prefix) tgt_in.ids.insert(tgt_in.ids.end(), row.begin(), row.end());
      auto states = decode(g, memory, chunk, tgt_in, nullptr);
      std::vector<int> last(static_cast<std::size_t>(batch));
      for (int b = 0; b < batch; ++b) last[static_cast<std::size_t>(b)] = b * t + t - 1;
      auto logits = add(matmul(gather_rows(states, std::span<const int>(last)), out_w), out_b);
      const auto next = argmax_rows<S>(logits.value(), {kPad, kBos});
      for (int b = 0; b < batch; ++b) {
        const auto bi = static_cast<std::size_t>(b);
        prefix[bi].push_back(next[bi]);
        if (!done[bi] && next[bi] == kEos) {
          done[bi] = true;
          --remaining;
        }
      }
    }
    for (const auto& row : prefix) {
      TokenSequence seq;
      seq.ids.assign(static_cast<std::size_t>(max_len), kPad);
      for (std::size_t t = 0; t < row.size(); ++t) {
        seq.ids[t] = row[t];
        if (t > 0 && row[t] == kEos) break;
      }
      result.push_back(std::move(seq));
    }
  }
  return result;
}

template <typename S>
std::vector<double> TransformerGenerator<S>::sentence_embedding(const TokenSequence& seq) {
  const auto tokens = TokenBatch::from_rows({seq}).trimmed();
  Graph<S> g;
  g.set_grad_enabled(false);
  const auto& out = encode(g, tokens, nullptr).value();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(out.cols());
  int count = 0;
  for (int t = 0; t < tokens.length; ++t) {
    if (tokens.at(0, t) == kPad) continue;
    acc += out.row(t).transpose().template cast<double>();
    ++count;
  }
  if (count > 0) acc /= count;
  return {acc.data(), acc.data() + acc.size()};
}

template class TransformerGenerator<float>;
template class TransformerGenerator<double>;

}  // namespace fluencygan
