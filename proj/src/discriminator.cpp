#include "fluencygan/discriminator.hpp"

#include "fluencygan/errors.hpp"

namespace fluencygan {

namespace {

constexpr std::uint64_t kInitTag = 0x64697363;  // "disc"

std::string conv_name(int width, const char* part) {
  return "conv" + std::to_string(width) + "." + part;
}

}  // namespace

template <typename S>
Discriminator<S>::Discriminator(const ModelDims& dims, std::uint64_t seed)
    : vocab_(dims.vocab_size), seq_len_(dims.max_len - 1) {
  dims.validate();
  const int e = dims.disc_embed, f = dims.disc_filters, hid = dims.disc_hidden;
  Rng rng(Rng::derive(seed, kInitTag));
  auto& p = params_;
  auto& table = p.add("embed", {vocab_, e});
  for (auto& x : table.values()) x = static_cast<S>(rng.uniform(-0.1, 0.1));
  for (int w : kWidths) {
    auto& k = p.add(conv_name(w, "k"), {w, e, f});
    glorot_uniform(k, rng);
    p.add(conv_name(w, "b"), {f});
  }
  glorot_uniform(p.add("dense.w", {3 * f, hid}), rng);
  p.add("dense.b", {hid});
  glorot_uniform(p.add("out.w", {hid, 1}), rng);
  p.add("out.b", {1});
}

template <typename S>
Var<S> Discriminator<S>::score(Graph<S>& g, Var<S> distribution) {
  const auto& dv = distribution.value();
  if (dv.cols() != vocab_ || dv.rows() % seq_len_ != 0) {
    throw DimensionError("discriminator expects rows of " + std::to_string(seq_len_) +
                         " positions over " + std::to_string(vocab_) + " tokens, got " +
                         shape_string(distribution.shape()));
  }
  const int batch = static_cast<int>(dv.rows() / seq_len_);
  auto& p = params_;
  auto embedded = embedding_lookup(g.param(p.get("embed")), distribution);
  embedded = reshape(embedded, {batch, seq_len_, static_cast<int>(embedded.value().cols())});
  std::vector<Var<S>> pooled;
  for (int w : kWidths) {
    auto conv = conv1d(embedded, g.param(p.get(conv_name(w, "k"))),
                       g.param(p.get(conv_name(w, "b"))));
    pooled.push_back(max_pool_over_time(relu(conv)));
  }
  auto hidden = relu(add(matmul(concat(pooled), g.param(p.get("dense.w"))),
                         g.param(p.get("dense.b"))));
  return sigmoid(add(matmul(hidden, g.param(p.get("out.w"))), g.param(p.get("out.b"))));
}

template <typename S>
Var<S> Discriminator<S>::score(Graph<S>& g, const TokenBatch& tokens) {
  return score(g, g.constant(one_hot(tokens)));
}

template <typename S>
Tensor<S> Discriminator<S>::one_hot(const TokenBatch& tokens) const {
  Tensor<S> out({tokens.size * tokens.length, vocab_});
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const int id = tokens.ids[i];
    if (id < 0 || id >= vocab_) {
      throw DimensionError("token id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(vocab_));
    }
    out.matrix()(static_cast<Eigen::Index>(i), id) = S(1);
  }
  return out;
}

template <typename S>
TokenBatch Discriminator<S>::real_input(const TokenBatch& sequences) const {
  TokenBatch out{sequences.size, seq_len_, {}};
  out.ids.reserve(static_cast<std::size_t>(sequences.size * seq_len_));
  for (int b = 0; b < sequences.size; ++b) {
    for (int t = 1; t <= seq_len_; ++t) {
      out.ids.push_back(t < sequences.length ? sequences.at(b, t) : kPad);
    }
  }
  return out;
}

template <typename S>
Var<S> Discriminator<S>::generated_input(Graph<S>& g, Var<S> soft_tokens, const TokenBatch& tgt) {
  const int steps = tgt.length - 1;
  if (soft_tokens.value().rows() != tgt.size * steps || soft_tokens.value().cols() != vocab_ ||
      steps > seq_len_) {
    throw DimensionError("generated_input: soft tokens " + shape_string(soft_tokens.shape()) +
                         " do not match a target batch of " + std::to_string(tgt.size) + " x " +
                         std::to_string(tgt.length));
  }
  std::vector<int> rows(static_cast<std::size_t>(tgt.size * seq_len_), -1);
  RowMatrix<S> pad = RowMatrix<S>::Zero(tgt.size * seq_len_, vocab_);
  for (int b = 0; b < tgt.size; ++b) {
    for (int t = 0; t < seq_len_; ++t) {
      const auto k = static_cast<std::size_t>(b * seq_len_ + t);
      if (t < steps && tgt.at(b, t + 1) != kPad) {
        rows[k] = b * steps + t;
      } else {
        pad(static_cast<Eigen::Index>(k), kPad) = S(1);
      }
    }
  }
  return add(gather_rows(soft_tokens, std::span<const int>(rows)),
             g.constant({tgt.size * seq_len_, vocab_}, std::move(pad)));
}

template <typename S>
double discriminator_accuracy(std::span<const S> real_scores, std::span<const S> fake_scores,
                              double threshold) {
  const auto total = real_scores.size() + fake_scores.size();
  if (total == 0) throw ContractError("discriminator accuracy of an empty batch");
  std::size_t correct = 0;
  for (S s : real_scores) correct += static_cast<double>(s) >= threshold;
  for (S s : fake_scores) correct += static_cast<double>(s) < threshold;
  return static_cast<double>(correct) / static_cast<double>(total);
}

template class Discriminator<float>;
template class Discriminator<double>;
template double discriminator_accuracy<float>(std::span<const float>, std::span<const float>,
                                              double);
template double discriminator_accuracy<double>(std::span<const double>, std::span<const double>,
                                               double);

}  // namespace fluencygan
