#include "fluencygan/generator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fluencygan/errors.hpp"
#include "fluencygan/lstm_generator.hpp"
#include "fluencygan/transformer_generator.hpp"

namespace fluencygan {

std::string_view generator_kind_name(GeneratorKind kind) {
  return kind == GeneratorKind::kLstm ? "lstm" : "transformer";
}

GeneratorKind parse_generator_kind(std::string_view name) {
  if (name == "lstm") return GeneratorKind::kLstm;
  if (name == "transformer") return GeneratorKind::kTransformer;
  throw ConfigError("unknown generator kind '" + std::string(name) +
                    "' (expected lstm or transformer)");
}

void ModelDims::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ParameterError("model dims: " + what);
  };
  require(vocab_size > kFirstTokenId, "vocab_size must exceed " + std::to_string(kFirstTokenId));
  // the widest discriminator kernel needs 5 positions after BOS
  require(max_len >= 6, "max_len must be at least 6");
  require(embed > 0 && hidden > 0, "embed and hidden must be positive");
  require(model_dim > 0 && heads > 0 && model_dim % heads == 0,
          "model_dim must be a positive multiple of heads");
  require(ff_dim > 0 && layers > 0, "ff_dim and layers must be positive");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(disc_embed > 0 && disc_filters > 0 && disc_hidden > 0,
          "discriminator sizes must be positive");
}

std::vector<std::uint8_t> TokenBatch::mask() const {
  std::vector<std::uint8_t> m(ids.size());
  std::transform(ids.begin(), ids.end(), m.begin(), [](int id) { return id != kPad; });
  return m;
}

TokenBatch TokenBatch::trimmed() const {
  int keep = 0;
  for (int b = 0; b < size; ++b) {
    for (int t = length - 1; t >= keep; --t) {
      if (at(b, t) != kPad) {
        keep = t + 1;
        break;
      }
    }
  }
  keep = std::max(keep, std::min(length, 2));
  if (keep == length) return *this;
  TokenBatch out{size, keep, {}};
  out.ids.reserve(static_cast<std::size_t>(size * keep));
  for (int b = 0; b < size; ++b) {
    for (int t = 0; t < keep; ++t) out.ids.push_back(at(b, t));
  }
  return out;
}

std::vector<int> TokenBatch::next_token_targets() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(size * (length - 1)));
  for (int b = 0; b < size; ++b) {
    for (int t = 1; t < length; ++t) out.push_back(at(b, t) == kPad ? -1 : at(b, t));
  }
  return out;
}

TokenSequence TokenBatch::row(int b) const {
  const auto first = ids.begin() + static_cast<std::ptrdiff_t>(b * length);
  return TokenSequence{std::vector<int>(first, first + length)};
}

TokenBatch TokenBatch::from_rows(const std::vector<TokenSequence>& rows) {
  if (rows.empty()) throw ContractError("token batch needs at least one row");
  TokenBatch out{static_cast<int>(rows.size()), rows.front().length(), {}};
  for (const auto& r : rows) {
    if (r.length() != out.length) {
      throw DimensionError("token batch rows differ in length (" + std::to_string(r.length()) +
                           " vs " + std::to_string(out.length) + ")");
    }
    out.ids.insert(out.ids.end(), r.ids.begin(), r.ids.end());
  }
  return out;
}

TokenBatch TokenBatch::from_flat(int size, int length, std::vector<int> ids) {
  if (size <= 0 || length <= 0 || ids.size() != static_cast<std::size_t>(size * length)) {
    throw DimensionError("token batch of " + std::to_string(ids.size()) + " ids is not " +
                         std::to_string(size) + " x " + std::to_string(length));
  }
  return TokenBatch{size, length, std::move(ids)};
}

template <typename S>
DecodeOutput<S> Generator<S>::decode_train(Graph<S>& g, const TokenBatch& src,
                                           const TokenBatch& tgt, S tau, const Tensor<S>& noise,
                                           Rng* dropout_rng) {
  if (!(tau > S(0))) throw ParameterError("gumbel temperature must be positive");
  auto logits = forward_logits(g, src, tgt, dropout_rng);
  return {logits, gumbel_softmax(logits, tau, noise)};
}

template <typename S>
std::unique_ptr<Generator<S>> make_generator(GeneratorKind kind, const ModelDims& dims,
                                             std::uint64_t seed) {
  if (kind == GeneratorKind::kLstm) return std::make_unique<LstmGenerator<S>>(dims, seed);
  return std::make_unique<TransformerGenerator<S>>(dims, seed);
}

template <typename S>
void glorot_uniform(Tensor<S>& t, Rng& rng) {
  const double fan = static_cast<double>(t.matrix().rows() + t.matrix().cols());
  const double a = std::sqrt(6.0 / fan);
  for (auto& v : t.values()) v = static_cast<S>(rng.uniform(-a, a));
}

template <typename S>
std::vector<int> argmax_rows(const RowMatrix<S>& m, std::initializer_list<int> excluded) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    int best = -1;
    S best_v = -std::numeric_limits<S>::infinity();
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (std::find(excluded.begin(), excluded.end(), c) != excluded.end()) continue;
      if (best < 0 || m(r, c) > best_v) {
        best = static_cast<int>(c);
        best_v = m(r, c);
      }
    }
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

#define FLUENCYGAN_INSTANTIATE_GENERATOR(S)                                                 \
  template class Generator<S>;                                                              \
  template std::unique_ptr<Generator<S>> make_generator<S>(GeneratorKind, const ModelDims&, \
                                                           std::uint64_t);                  \
  template void glorot_uniform<S>(Tensor<S>&, Rng&);                                        \
  template std::vector<int> argmax_rows<S>(const RowMatrix<S>&, std::initializer_list<int>);

FLUENCYGAN_INSTANTIATE_GENERATOR(float)
FLUENCYGAN_INSTANTIATE_GENERATOR(double)

}  // namespace fluencygan
