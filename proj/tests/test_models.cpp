#include <doctest.h>

#include <cmath>
#include <vector>

#include "fluencygan/discriminator.hpp"
#include "fluencygan/errors.hpp"
#include "fluencygan/losses.hpp"
#include "fluencygan/lstm_generator.hpp"
#include "fluencygan/optim.hpp"
#include "fluencygan/transformer_generator.hpp"

using namespace fluencygan;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.vocab_size = 17;
  d.max_len = 9;
  d.embed = 6;
  d.hidden = 7;
  d.model_dim = 8;
  d.heads = 2;
  d.ff_dim = 10;
  d.layers = 2;
  d.dropout = 0.1;
  d.disc_embed = 5;
  d.disc_filters = 4;
  d.disc_hidden = 6;
  return d;
}

TokenSequence seq(std::initializer_list<int> content, int max_len = 9) {
  TokenSequence s;
  s.ids.push_back(kBos);
  s.ids.insert(s.ids.end(), content.begin(), content.end());
  s.ids.push_back(kEos);
  s.ids.resize(static_cast<std::size_t>(max_len), kPad);
  return s;
}

TokenBatch sample_batch() {
  return TokenBatch::from_rows({seq({5, 6, 7, 8}), seq({9, 10}), seq({11, 12, 13, 14, 15, 16})})
      .trimmed();
}

const GeneratorKind kKinds[] = {GeneratorKind::kLstm, GeneratorKind::kTransformer};

}  // namespace

TEST_CASE("generator logits and soft tokens have the documented layout") {
  for (auto kind : kKinds) {
    CAPTURE(generator_kind_name(kind));
    auto gen = make_generator<double>(kind, small_dims(), 3);
    const auto batch = sample_batch();
    Graph<double> g;
    const int rows = batch.size * (batch.length - 1);
    Tensor<double> noise({rows, 17});
    auto out = gen->decode_train(g, batch, batch, 1.0, noise, nullptr);
    CHECK(out.logits.shape() == Shape{rows, 17});
    const auto& soft = out.soft_tokens.value();
    CHECK(soft.minCoeff() >= 0.0);
    for (int r = 0; r < rows; ++r) CHECK(std::abs(soft.row(r).sum() - 1.0) < 1e-5);

    Graph<double> g2;
    CHECK_THROWS_AS(gen->decode_train(g2, batch, batch, 0.0, noise, nullptr), ParameterError);
  }
}

TEST_CASE("low temperature soft tokens approach one-hot") {
  auto gen = make_generator<double>(GeneratorKind::kLstm, small_dims(), 4);
  // wide weights so the logits of each row are well separated
  Rng init(40);
  gen->params().init_uniform(init, -1.0, 1.0);
  const auto batch = sample_batch();
  Graph<double> g;
  Tensor<double> noise({batch.size * (batch.length - 1), 17});
  const auto out = gen->decode_train(g, batch, batch, 0.01, noise, nullptr);
  const auto& soft = out.soft_tokens.value();
  const auto hard = argmax_rows<double>(out.logits.value());
  for (Eigen::Index r = 0; r < soft.rows(); ++r) {
    CHECK(std::abs(soft(r, hard[static_cast<std::size_t>(r)]) - 1.0) < 1e-3);
  }
}

TEST_CASE("logits at step i ignore target tokens after i") {
  for (auto kind : kKinds) {
    CAPTURE(generator_kind_name(kind));
    auto gen = make_generator<double>(kind, small_dims(), 5);
    const auto src = sample_batch();
    auto tgt = src;
    const int steps = tgt.length - 1;
    Graph<double> g;
    const auto base = gen->forward_logits(g, src, tgt, nullptr).value();
    for (int cut = 1; cut < tgt.length; ++cut) {
      auto changed = tgt;
      for (int b = 0; b < changed.size; ++b) {
        for (int t = cut; t < changed.length; ++t) {
          changed.ids[static_cast<std::size_t>(b * changed.length + t)] = 4 + (t * 7 + b) % 13;
        }
      }
      Graph<double> g2;
      const auto alt = gen->forward_logits(g2, src, changed, nullptr).value();
      for (int b = 0; b < tgt.size; ++b) {
        // row t is computed from target positions 0..t
        for (int t = 0; t < cut; ++t) {
          CHECK((alt.row(b * steps + t) - base.row(b * steps + t)).cwiseAbs().maxCoeff() == 0.0);
        }
      }
    }
  }
}

TEST_CASE("transformer decoder self-attention is zero on future positions") {
  TransformerGenerator<double> gen(small_dims(), 6);
  const auto batch = sample_batch();
  Graph<double> g;
  auto memory = gen.encode(g, batch, nullptr);
  RowMatrix<double> weights;
  gen.decode(g, memory, batch, batch, nullptr, &weights);
  const int t = batch.length;
  REQUIRE(weights.cols() == t);
  for (Eigen::Index r = 0; r < weights.rows(); ++r) {
    const int i = static_cast<int>(r % t);
    for (int j = i + 1; j < t; ++j) CHECK(weights(r, j) == 0.0);
    CHECK(std::abs(weights.row(r).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("every generator and discriminator parameter receives gradient") {
  for (auto kind : kKinds) {
    CAPTURE(generator_kind_name(kind));
    const auto dims = small_dims();
    auto gen = make_generator<double>(kind, dims, 7);
    Discriminator<double> disc(dims, 8);
    const auto batch = sample_batch();
    Rng rng(9);
    Graph<double> g;
    auto logits = gen->forward_logits(g, batch, batch, &rng);
    const auto noise = sample_gumbel<double>(logits.shape(), rng);
    auto soft = gumbel_softmax(logits, 1.0, noise);
    const auto targets = batch.next_token_targets();
    auto fake = disc.score(g, disc.generated_input(g, soft, batch));
    auto real = disc.score(g, disc.real_input(batch));
    auto loss = add(loss_generator(loss_ae(logits, std::span<const int>(targets)), loss_dg(fake), 0.5),
                    loss_discriminator(real, fake));
    gen->params().zero_grad();
    disc.params().zero_grad();
    g.backward(loss);
    for (auto* set : {&gen->params(), &disc.params()}) {
      for (auto& [name, tensor] : set->entries()) {
        CAPTURE(name);
        REQUIRE(tensor.has_grad());
        CHECK(tensor.grad().cwiseAbs().maxCoeff() > 0.0);
      }
    }
  }
}

TEST_CASE("greedy decoding framing and determinism") {
  for (auto kind : kKinds) {
    CAPTURE(generator_kind_name(kind));
    auto gen = make_generator<float>(kind, small_dims(), 10);
    const std::vector<TokenSequence> src = {seq({5, 6, 7}), seq({}), seq({8, 9, 10, 11, 12, 13, 14})};
    const auto out = gen->decode_greedy(src, 9);
    REQUIRE(out.size() == src.size());
    for (const auto& s : out) {
      REQUIRE(s.length() == 9);
      CHECK(s.ids[0] == kBos);
      bool ended = false;
      for (int t = 1; t < 9; ++t) {
        const int id = s.ids[static_cast<std::size_t>(t)];
        if (ended) {
          CHECK(id == kPad);
        } else {
          CHECK(id != kPad);
          CHECK(id != kBos);
          ended = id == kEos;
        }
      }
    }
    CHECK(gen->decode_greedy(src, 9) == out);
  }
}

TEST_CASE("trailing PAD never changes non-PAD outputs") {
  for (auto kind : kKinds) {
    CAPTURE(generator_kind_name(kind));
    auto gen = make_generator<double>(kind, small_dims(), 11);
    const auto short_seq = seq({5, 6, 7});
    const auto alone = TokenBatch::from_rows({short_seq}).trimmed();
    const auto padded = TokenBatch::from_rows({short_seq});
    Graph<double> g1, g2;
    const auto a = gen->forward_logits(g1, alone, alone, nullptr).value();
    const auto b = gen->forward_logits(g2, padded, padded, nullptr).value();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      CHECK((a.row(r) - b.row(r)).cwiseAbs().maxCoeff() < 1e-12);
    }

    auto longer = short_seq;
    longer.ids.resize(14, kPad);
    const auto e1 = gen->sentence_embedding(short_seq);
    const auto e2 = gen->sentence_embedding(longer);
    REQUIRE(e1.size() == e2.size());
    for (std::size_t i = 0; i < e1.size(); ++i) CHECK(std::abs(e1[i] - e2[i]) < 1e-12);
    CHECK(gen->sentence_embedding(short_seq) == e1);
    const auto expected = kind == GeneratorKind::kLstm ? small_dims().hidden : small_dims().model_dim;
    CHECK(static_cast<int>(e1.size()) == expected);
  }
}

TEST_CASE("lstm encoder states: shape, finiteness and sensitivity") {
  LstmGenerator<double> gen(small_dims(), 12);
  const auto batch = TokenBatch::from_rows({seq({5, 6, 7}), seq({8, 9, 10}), seq({})});
  Graph<double> g;
  auto enc = gen.encode(g, batch);
  CHECK(enc.outputs.shape() == Shape{batch.size * batch.length, 7});
  CHECK(enc.h.value().allFinite());
  CHECK(enc.c.value().allFinite());
  CHECK((enc.h.value().row(0) - enc.h.value().row(1)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lstm attention contract") {
  LstmGenerator<double> gen(small_dims(), 13);
  // two sentences: the first has a single unmasked position
  TokenBatch batch = TokenBatch::from_rows({seq({5, 6, 7}), seq({8, 9, 10})});
  Graph<double> g;
  auto enc = gen.encode(g, batch);
  const int t = batch.length, b = batch.size;
  for (int s = 1; s < t; ++s) enc.mask[static_cast<std::size_t>(s * b + 0)] = 0;
  auto proj = matmul(enc.outputs, g.param(gen.params().get("att.enc")));
  auto h = g.constant(Tensor<double>({b, 7}, RowMatrix<double>::Random(b, 7)));
  RowMatrix<double> weights;
  auto ctx = gen.attend(g, enc, proj, h, &weights);
  CHECK((ctx.value().row(0) - enc.outputs.value().row(0)).cwiseAbs().maxCoeff() < 1e-12);
  for (int r = 0; r < b; ++r) CHECK(std::abs(weights.row(r).sum() - 1.0) < 1e-12);

  // zero scoring vector gives uniform weights, so the context is the mean
  gen.params().get("att.v").matrix().setZero();
  Graph<double> g2;
  auto enc2 = gen.encode(g2, batch);
  auto proj2 = matmul(enc2.outputs, g2.param(gen.params().get("att.enc")));
  auto ctx2 = gen.attend(g2, enc2, proj2, g2.constant(Tensor<double>({b, 7})));
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(7);
  int count = 0;
  for (int s = 0; s < t; ++s) {
    if (!enc2.mask[static_cast<std::size_t>(s * b + 1)]) continue;
    mean += enc2.outputs.value().row(s * b + 1);
    ++count;
  }
  mean /= count;
  CHECK((ctx2.value().row(1) - mean).cwiseAbs().maxCoeff() < 1e-12);

  for (int s = 0; s < t; ++s) enc2.mask[static_cast<std::size_t>(s * b + 1)] = 0;
  CHECK_THROWS_AS(gen.attend(g2, enc2, proj2, g2.constant(Tensor<double>({b, 7}))), ContractError);
}

TEST_CASE("discriminator scores lie in (0,1) and one-hot input matches hard tokens") {
  const auto dims = small_dims();
  Discriminator<double> disc(dims, 14);
  const auto batch = TokenBatch::from_rows({seq({5, 6, 7}), seq({8, 9, 10, 11, 12})});
  const auto real = disc.real_input(batch);
  CHECK(real.length == disc.seq_len());
  Graph<double> g;
  const auto hard = disc.score(g, real).value();
  const auto soft = disc.score(g, g.constant(disc.one_hot(real))).value();
  CHECK(hard.rows() == 2);
  CHECK((hard - soft).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(hard.minCoeff() > 0.0);
  CHECK(hard.maxCoeff() < 1.0);

  Rng rng(15);
  Tensor<double> noise({2 * disc.seq_len(), dims.vocab_size});
  for (auto& v : noise.values()) v = rng.uniform(-30.0, 30.0);
  const auto scores = disc.score(g, softmax(g.constant(noise))).value();
  CHECK(scores.minCoeff() > 0.0);
  CHECK(scores.maxCoeff() < 1.0);
  CHECK(disc.score(g, real).value() == hard);
}

TEST_CASE("float discriminator one-hot equivalence within 1e-6") {
  Discriminator<float> disc(small_dims(), 16);
  const auto real = disc.real_input(TokenBatch::from_rows({seq({5, 6, 7, 8})}));
  Graph<float> g;
  const auto a = disc.score(g, real).value();
  const auto b = disc.score(g, g.constant(disc.one_hot(real))).value();
  CHECK(std::abs(a(0, 0) - b(0, 0)) < 1e-6);
}

TEST_CASE("generated input places soft rows on target tokens and PAD elsewhere") {
  const auto dims = small_dims();
  Discriminator<double> disc(dims, 17);
  const auto tgt = TokenBatch::from_rows({seq({5, 6}), seq({7, 8, 9, 10})}).trimmed();
  const int steps = tgt.length - 1;
  RowMatrix<double> soft = RowMatrix<double>::Constant(tgt.size * steps, dims.vocab_size, 1.0 / 17);
  Graph<double> g;
  const auto x = disc.generated_input(g, g.constant(Tensor<double>({tgt.size * steps, 17}, soft)), tgt)
                     .value();
  const int l = disc.seq_len();
  REQUIRE(x.rows() == tgt.size * l);
  for (int b = 0; b < tgt.size; ++b) {
    for (int t = 0; t < l; ++t) {
      const bool token = t + 1 < tgt.length && tgt.at(b, t + 1) != kPad;
      CHECK(x(b * l + t, kPad) == doctest::Approx(token ? 1.0 / 17 : 1.0));
    }
  }
}

TEST_CASE("discriminator accuracy examples") {
  const std::vector<double> real_hi(4, 0.99), fake_lo(4, 0.01);
  CHECK(discriminator_accuracy<double>(real_hi, fake_lo) == 1.0);
  // hand-built batch: real {0.9, 0.3}, fake {0.6, 0.1} -> 0.9 and 0.1 correct
  const std::vector<double> real{0.9, 0.3}, fake{0.6, 0.1};
  CHECK(discriminator_accuracy<double>(real, fake) == 0.5);
  const std::vector<double> none;
  CHECK_THROWS_AS(discriminator_accuracy<double>(none, none), ContractError);
}

TEST_CASE("discriminator learns a separable toy task and starts at chance") {
  ModelDims dims = small_dims();
  dims.disc_embed = 16;
  dims.disc_filters = 16;
  dims.disc_hidden = 16;
  Discriminator<float> disc(dims, 18);
  // fluent: token 5 repeated; generated: token 6 repeated
  const auto make = [&](int token, int n) {
    std::vector<TokenSequence> rows;
    for (int i = 0; i < n; ++i) {
      TokenSequence s;
      s.ids.push_back(kBos);
      for (int k = 0; k < 3 + i % 5; ++k) s.ids.push_back(token);
      s.ids.push_back(kEos);
      s.ids.resize(static_cast<std::size_t>(dims.max_len), kPad);
      rows.push_back(s);
    }
    return disc.real_input(TokenBatch::from_rows(rows));
  };
  const auto a = make(5, 100), b = make(6, 100);

  auto accuracy = [&] {
    Graph<float> g;
    g.set_grad_enabled(false);
    const auto ra = disc.score(g, a).value();
    const auto rb = disc.score(g, b).value();
    return discriminator_accuracy<float>({ra.data(), static_cast<std::size_t>(ra.size())},
                                         {rb.data(), static_cast<std::size_t>(rb.size())});
  };
  const double untrained = accuracy();
  CHECK(untrained >= 0.35);
  CHECK(untrained <= 0.65);

  const auto rows = [](const TokenBatch& t, int start, int n) {
    return TokenBatch::from_flat(n, t.length,
                                 {t.ids.begin() + start * t.length, t.ids.begin() + (start + n) * t.length});
  };
  Adam<float> opt(disc.params(), {});
  double acc = 0.0;
  for (int epoch = 0; epoch < 20 && acc < 0.95; ++epoch) {
    for (int start = 0; start < 100; start += 10) {
      Graph<float> g;
      auto loss = loss_discriminator(disc.score(g, rows(a, start, 10)), disc.score(g, rows(b, start, 10)));
      disc.params().zero_grad();
      g.backward(loss);
      opt.step(1e-3);
    }
    acc = accuracy();
  }
  CHECK(acc >= 0.95);
}
