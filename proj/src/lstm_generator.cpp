#include "fluencygan/lstm_generator.hpp"

#include <algorithm>

#include "fluencygan/errors.hpp"

namespace fluencygan {

namespace {

constexpr std::uint64_t kInitTag = 0x6c73746d;  // "lstm"
constexpr int kGreedyChunk = 64;

// Row permutation taking time-major rows (t * B + b) to batch-major (b * T + t).
std::vector<int> time_to_batch_major(int batch, int steps) {
  std::vector<int> rows(static_cast<std::size_t>(batch * steps));
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < steps; ++t) rows[static_cast<std::size_t>(b * steps + t)] = t * batch + b;
  }
  return rows;
}

std::vector<int> column(const TokenBatch& tokens, int t) {
  std::vector<int> ids(static_cast<std::size_t>(tokens.size));
  for (int b = 0; b < tokens.size; ++b) ids[static_cast<std::size_t>(b)] = tokens.at(b, t);
  return ids;
}

}  // namespace

template <typename S>
LstmGenerator<S>::LstmGenerator(ModelDims dims, std::uint64_t seed) : Generator<S>(dims) {
  const int v = dims.vocab_size, e = dims.embed, h = dims.hidden;
  auto& p = this->params_;
  p.add("embed", {v, e});
  p.add("enc.w", {e + h, 4 * h});
  p.add("enc.b", {4 * h});
  p.add("dec.w", {e + 2 * h, 4 * h});
  p.add("dec.b", {4 * h});
  p.add("att.enc", {h, h});
  p.add("att.dec", {h, h});
  p.add("att.b", {h});
  p.add("att.v", {h});
  p.add("comb.w", {2 * h, h});
  p.add("comb.b", {h});
  p.add("out.w", {h, v});
  p.add("out.b", {v});
  Rng rng(Rng::derive(seed, kInitTag));
  p.init_uniform(rng, -0.08, 0.08);
}

template <typename S>
std::pair<Var<S>, Var<S>> LstmGenerator<S>::cell(Graph<S>& g, Var<S> x, Var<S> h, Var<S> c,
                                                 bool decoder) {
  const int n = this->dims_.hidden;
  auto& p = this->params_;
  auto w = g.param(p.get(decoder ? "dec.w" : "enc.w"));
  auto bias = g.param(p.get(decoder ? "dec.b" : "enc.b"));
  auto gates = add(matmul(concat<S>({x, h}), w), bias);
  auto i = sigmoid(slice_cols(gates, 0, n));
  auto f = sigmoid(slice_cols(gates, n, n));
  auto cand = tanh(slice_cols(gates, 2 * n, n));
  auto o = sigmoid(slice_cols(gates, 3 * n, n));
  auto c_new = add(mul(f, c), mul(i, cand));
  return {mul(o, tanh(c_new)), c_new};
}

template <typename S>
typename LstmGenerator<S>::Encoded LstmGenerator<S>::encode(Graph<S>& g, const TokenBatch& src) {
  const int batch = src.size, steps = src.length, n = this->dims_.hidden;
  auto table = g.param(this->params_.get("embed"));

  std::vector<int> ids_tm(static_cast<std::size_t>(batch * steps));
  Encoded enc;
  enc.batch = batch;
  enc.mask.resize(ids_tm.size());
  for (int t = 0; t < steps; ++t) {
    for (int b = 0; b < batch; ++b) {
      const auto k = static_cast<std::size_t>(t * batch + b);
      ids_tm[k] = src.at(b, t);
      enc.mask[k] = src.at(b, t) != kPad;
    }
  }
  auto x_all = embedding_lookup(table, std::span<const int>(ids_tm));

  auto h = g.constant({batch, n}, RowMatrix<S>::Zero(batch, n));
  auto c = h;
  std::vector<Var<S>> outputs;
  outputs.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    auto [h_new, c_new] = cell(g, slice_rows(x_all, t * batch, batch), h, c, false);
    RowMatrix<S> m(batch, 1);
    for (int b = 0; b < batch; ++b) m(b, 0) = enc.mask[static_cast<std::size_t>(t * batch + b)];
    if (m.minCoeff() > S(0)) {
      h = h_new;
      c = c_new;
    } else {
      // padded rows keep their previous state
      auto keep = g.constant({batch, 1}, m);
      h = add(h, mul(sub(h_new, h), keep));
      c = add(c, mul(sub(c_new, c), keep));
    }
    outputs.push_back(h);
  }
  enc.outputs = concat(outputs, 0);
  enc.h = h;
  enc.c = c;
  return enc;
}

template <typename S>
Var<S> LstmGenerator<S>::combine(Graph<S>& g, Var<S> h, Var<S> ctx) {
  auto& p = this->params_;
  return tanh(add(matmul(concat<S>({h, ctx}), g.param(p.get("comb.w"))), g.param(p.get("comb.b"))));
}

template <typename S>
Var<S> LstmGenerator<S>::project_encoder(Graph<S>& g, const Encoded& enc) {
  return matmul(enc.outputs, g.param(this->params_.get("att.enc")));
}

template <typename S>
Var<S> LstmGenerator<S>::attend(Graph<S>& g, const Encoded& enc, Var<S> enc_proj, Var<S> h,
                                RowMatrix<S>* weights) {
  auto& p = this->params_;
  auto dec_proj = add(matmul(h, g.param(p.get("att.dec"))), g.param(p.get("att.b")));
  return additive_attention(enc_proj, dec_proj, g.param(p.get("att.v")), enc.outputs,
                            std::span<const std::uint8_t>(enc.mask), enc.batch, weights);
}

template <typename S>
Var<S> LstmGenerator<S>::forward_logits(Graph<S>& g, const TokenBatch& src, const TokenBatch& tgt,
                                        Rng*) {
  if (src.size != tgt.size || tgt.length < 2) {
    throw DimensionError("lstm generator: source batch " + std::to_string(src.size) +
                         " vs target batch " + std::to_string(tgt.size) + " of length " +
                         std::to_string(tgt.length));
  }
  const int batch = tgt.size, steps = tgt.length - 1;
  auto enc = encode(g, src);
  auto enc_proj = project_encoder(g, enc);
  auto table = g.param(this->params_.get("embed"));

  std::vector<int> inputs_tm;
  inputs_tm.reserve(static_cast<std::size_t>(batch * steps));
  for (int t = 0; t < steps; ++t) {
    const auto col = column(tgt, t);
    inputs_tm.insert(inputs_tm.end(), col.begin(), col.end());
  }
  auto y_all = embedding_lookup(table, std::span<const int>(inputs_tm));

  auto h = enc.h, c = enc.c;
  auto ctx = g.constant({batch, this->dims_.hidden}, RowMatrix<S>::Zero(batch, this->dims_.hidden));
  std::vector<Var<S>> states;
  states.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) {
    std::tie(h, c) = cell(g, concat<S>({slice_rows(y_all, t * batch, batch), ctx}), h, c, true);
    ctx = attend(g, enc, enc_proj, h);
    states.push_back(combine(g, h, ctx));
  }
  const auto order = time_to_batch_major(batch, steps);
  auto hs = gather_rows(concat(states, 0), std::span<const int>(order));
  auto& p = this->params_;
  return add(matmul(hs, g.param(p.get("out.w"))), g.param(p.get("out.b")));
}

template <typename S>
std::vector<TokenSequence> LstmGenerator<S>::decode_greedy(const std::vector<TokenSequence>& src,
                                                           int max_len) {
  if (max_len < 2) throw ParameterError("greedy decoding needs max_len >= 2");
  std::vector<TokenSequence> result;
  result.reserve(src.size());
  auto& p = this->params_;
  for (std::size_t start = 0; start < src.size(); start += kGreedyChunk) {
    const auto stop = std::min(src.size(), start + kGreedyChunk);
    const auto chunk = TokenBatch::from_rows({src.begin() + static_cast<std::ptrdiff_t>(start),
                                              src.begin() + static_cast<std::ptrdiff_t>(stop)})
                           .trimmed();
    const int batch = chunk.size;
    Graph<S> g;
    g.set_grad_enabled(false);
    auto enc = encode(g, chunk);
    auto enc_proj = project_encoder(g, enc);
    auto table = g.param(p.get("embed"));
    auto out_w = g.param(p.get("out.w"));
    auto out_b = g.param(p.get("out.b"));

    std::vector<TokenSequence> seqs(static_cast<std::size_t>(batch));
    for (auto& s : seqs) s.ids.assign(static_cast<std::size_t>(max_len), kPad);
    for (auto& s : seqs) s.ids[0] = kBos;
    std::vector<int> prev(static_cast<std::size_t>(batch), kBos);
    std::vector<bool> done(static_cast<std::size_t>(batch), false);
    int remaining = batch;
    auto h = enc.h, c = enc.c;
    auto ctx = g.constant({batch, this->dims_.hidden}, RowMatrix<S>::Zero(batch, this->dims_.hidden));
    for (int t = 1; t < max_len && remaining > 0; ++t) {
      auto x = concat<S>({embedding_lookup(table, std::span<const int>(prev)), ctx});
      std::tie(h, c) = cell(g, x, h, c, true);
      ctx = attend(g, enc, enc_proj, h);
      auto logits = add(matmul(combine(g, h, ctx), out_w), out_b);
      prev = argmax_rows<S>(logits.value(), {kPad, kBos});
      for (int b = 0; b < batch; ++b) {
        const auto bi = static_cast<std::size_t>(b);
        if (done[bi]) continue;
        seqs[bi].ids[static_cast<std::size_t>(t)] = prev[bi];
        if (prev[bi] == kEos) {
          done[bi] = true;
          --remaining;
        }
      }
    }
    result.insert(result.end(), seqs.begin(), seqs.end());
  }
  return result;
}

template <typename S>
std::vector<double> LstmGenerator<S>::sentence_embedding(const TokenSequence& seq) {
  const auto tokens = TokenBatch::from_rows({seq}).trimmed();
  Graph<S> g;
  g.set_grad_enabled(false);
  auto enc = encode(g, tokens);
  const auto& out = enc.outputs.value();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(out.cols());
  int count = 0;
  for (int t = 0; t < tokens.length; ++t) {
    if (!enc.mask[static_cast<std::size_t>(t)]) continue;
    acc += out.row(t).transpose().template cast<double>();
    ++count;
  }
  if (count > 0) acc /= count;
  return {acc.data(), acc.data() + acc.size()};
}

template class LstmGenerator<float>;
template class LstmGenerator<double>;

}  // namespace fluencygan
