#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <vector>

#include "fluencygan/checkpoint.hpp"
#include "fluencygan/config.hpp"
#include "fluencygan/errors.hpp"
#include "fluencygan/losses.hpp"
#include "fluencygan/optim.hpp"
#include "fluencygan/training.hpp"

using namespace fluencygan;
namespace fs = std::filesystem;

namespace {

template <typename S>
Var<S> column(Graph<S>& g, std::initializer_list<S> values) {
  return g.constant(Tensor<S>({static_cast<int>(values.size()), 1}, values));
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fluencygan_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Desk {
  Vocabulary vocab = Vocabulary::from_tokens({});
  ParallelCorpus data;
};

Desk tiny_corpus(int sentences = 24) {
  std::vector<Tokens> fluent;
  for (const auto& s : synthesize_sentences(sentences, 3)) fluent.push_back(tokenize(s));
  const auto awkward = corrupt_corpus(fluent, default_corruption_rules(), 5);
  auto both = fluent;
  both.insert(both.end(), awkward.begin(), awkward.end());
  Desk d;
  d.vocab = Vocabulary::build(both, 2000);
  d.data = encode_parallel_corpus(awkward, fluent, d.vocab, 12);
  return d;
}

ModelDims tiny_dims(int vocab) {
  ModelDims d;
  d.vocab_size = vocab;
  d.max_len = 12;
  d.embed = 8;
  d.hidden = 8;
  d.model_dim = 8;
  d.heads = 2;
  d.ff_dim = 16;
  d.layers = 1;
  d.disc_embed = 6;
  d.disc_filters = 4;
  d.disc_hidden = 8;
  return d;
}

TrainingConfig tiny_config() {
  TrainingConfig c;
  c.batch_size = 8;
  c.warmup_steps = 10;
  c.base_lr = 1e-2;
  c.disc_lr = 1e-3;
  return c;
}

// log equality on everything except wall-clock time
void check_same_logs(const std::vector<EpochLog>& a, const std::vector<EpochLog>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto x = a[i], y = b[i];
    x.wall_ms = y.wall_ms = 0;
    CHECK(x.to_json() == y.to_json());
  }
}

void check_same_params(const ParameterSet<float>& a, const ParameterSet<float>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a.entries()[i].first);
    CHECK(a.entries()[i].second.matrix() == b.entries()[i].second.matrix());
  }
}

}  // namespace

TEST_CASE("score losses: analytic values and clamping") {
  Graph<double> g;
  CHECK(loss_dg(column<double>(g, {0.5})).item() == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(loss_dg(column<double>(g, {1.0})).item()) < 1e-6);
  CHECK(loss_dg(column<double>(g, {std::exp(-1.0)})).item() == doctest::Approx(-1.0));
  CHECK(std::abs(loss_df(column<double>(g, {1.0})).item()) < 1e-6);
  CHECK(loss_df(column<double>(g, {0.5})).item() == doctest::Approx(-0.693147).epsilon(1e-6));
  CHECK(loss_df(column<double>(g, {0.2, 0.7})).item() ==
        doctest::Approx((std::log(0.2) + std::log(0.7)) / 2));
  CHECK(std::isfinite(loss_dg(column<double>(g, {0.0})).item()));
  CHECK(loss_dg(column<double>(g, {0.0})).item() == doctest::Approx(std::log(kScoreFloor)));

  CHECK(loss_discriminator(column<double>(g, {0.5}), column<double>(g, {0.5})).item() ==
        doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(std::abs(loss_discriminator(column<double>(g, {1.0}), column<double>(g, {0.0})).item()) < 1e-6);
  CHECK(std::isfinite(loss_discriminator(column<double>(g, {0.0}), column<double>(g, {1.0})).item()));
}

TEST_CASE("losses match high-precision references") {
  Graph<double> g;
  const std::vector<int> targets{2, -1, 1};
  auto logits = g.constant(Tensor<double>({3, 4}, {0.3, -1.2, 2.0, 0.5, 1.5, 0.1, -0.7, 0.0, -0.4, 0.9, 0.2, -2.1}));
  CHECK(std::abs(loss_ae(logits, std::span<const int>(targets)).item() - 0.48371676004091520842) < 1e-12);
  auto real = column<double>(g, {0.83, 0.41, 0.97});
  auto fake = column<double>(g, {0.12, 0.66, 0.35});
  CHECK(std::abs(loss_discriminator(real, fake).item() - 0.91527095131141829118) < 1e-12);
  CHECK(std::abs(loss_dg(fake).item() - -1.1952003682201448742) < 1e-12);
}

TEST_CASE("uniform logits give ln V reconstruction loss") {
  Graph<float> g;
  const int v = 246;
  auto logits = g.constant(Tensor<float>({5, v}));
  const std::vector<int> targets{4, 9, -1, 200, 3};
  CHECK(std::abs(loss_ae(logits, std::span<const int>(targets)).item() - std::log(double(v))) < 1e-4);
}

TEST_CASE("generator loss arithmetic, lambda zero and gradient linearity") {
  Graph<double> g;
  auto one = g.constant(Tensor<double>({1}, {1.0}));
  auto half = g.constant(Tensor<double>({1}, {-0.5}));
  CHECK(loss_generator(one, half, 2.0).item() == 2.0);

  Graph<float> gf;
  auto ae = gf.constant(Tensor<float>({1}, {0.73519f}));
  auto dg = gf.constant(Tensor<float>({1}, {-0.912f}));
  const float l_g = loss_generator(ae, dg, 0.0f).item();
  CHECK(std::memcmp(&l_g, &ae.value()(0, 0), sizeof(float)) == 0);

  // grad(L_G) = grad(L_AE) - lambda * grad(L_DG) for a shared parameter
  Tensor<double> w({2, 3}, {0.2, -0.4, 0.9, 0.1, 0.3, -0.8});
  w.set_requires_grad(true);
  const std::vector<int> targets{2, 0};
  auto run = [&](double a, double b) {
    w.zero_grad();
    Graph<double> gg;
    auto p = gg.param(w);
    auto l_ae = loss_ae(p, std::span<const int>(targets));
    auto l_dg = loss_dg(sigmoid(sum(p)));
    gg.backward(add(scale(l_ae, a), scale(l_dg, b)));
    return RowMatrix<double>(w.grad());
  };
  const double lambda = 0.7;
  const auto combined = [&] {
    w.zero_grad();
    Graph<double> gg;
    auto p = gg.param(w);
    gg.backward(loss_generator(loss_ae(p, std::span<const int>(targets)), loss_dg(sigmoid(sum(p))), lambda));
    return RowMatrix<double>(w.grad());
  }();
  const auto separate = (run(1, 0) - lambda * run(0, 1)).eval();
  CHECK((combined - separate).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("adam: zero gradient leaves parameters, bias-corrected first step") {
  ParameterSet<double> params;
  auto& w = params.add("w", {2, 2});
  w.matrix() << 1, 2, 3, 4;
  Adam<double> opt(params, {});
  params.zero_grad();
  w.grad() = RowMatrix<double>::Zero(2, 2);
  opt.step(0.1);
  CHECK(w.matrix() == (RowMatrix<double>(2, 2) << 1, 2, 3, 4).finished());

  // a fresh optimizer's first step moves each entry by lr * sign(g)
  Adam<double> fresh(params, {});
  w.grad() << 0.5, -2.0, 1e-3, 0.0;
  fresh.step(0.1);
  CHECK(w.matrix()(0, 0) == doctest::Approx(0.9));
  CHECK(w.matrix()(0, 1) == doctest::Approx(2.1));
  CHECK(w.matrix()(1, 0) == doctest::Approx(2.9));
  CHECK(w.matrix()(1, 1) == 4.0);
}

TEST_CASE("transformer learning-rate schedule") {
  CHECK(transformer_lr(400, 64, 400) == doctest::Approx(0.00625).epsilon(1e-12));
  for (int s = 1; s < 400; ++s) CHECK(transformer_lr(s + 1, 64, 400) > transformer_lr(s, 64, 400));
  for (int s = 400; s < 2000; ++s) CHECK(transformer_lr(s + 1, 64, 400) < transformer_lr(s, 64, 400));
  CHECK(transformer_lr(100, 64, 400) == doctest::Approx(transformer_lr(400, 64, 400) / 4));
  CHECK(transformer_lr(1600, 64, 400) == doctest::Approx(transformer_lr(400, 64, 400) / 2));
  CHECK_THROWS_AS(transformer_lr(0, 64, 400), ParameterError);
}

TEST_CASE("gradient clipping rescales to the requested norm") {
  ParameterSet<double> params;
  auto& a = params.add("a", {2});
  auto& b = params.add("b", {1});
  a.grad() = RowMatrix<double>(1, 2);
  a.grad() << 3, 0;
  b.grad() = RowMatrix<double>(1, 1);
  b.grad() << 4;
  CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
  CHECK(a.grad()(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad()(0, 0) == doctest::Approx(0.8));
  CHECK(clip_grad_norm(params, 10.0) == doctest::Approx(1.0));
  CHECK(b.grad()(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("training config validation and temperature schedule") {
  TrainingConfig c;
  c.validate();
  CHECK(c.tau_for_round(1) == 1.0);
  c.tau_anneal = true;
  c.adversarial_rounds = 5;
  CHECK(c.tau_for_round(1) == doctest::Approx(1.0));
  CHECK(c.tau_for_round(5) == doctest::Approx(0.5));
  CHECK(c.tau_for_round(3) == doctest::Approx(std::sqrt(0.5)));
  for (auto bad : {-0.1}) {
    auto d = c;
    d.lambda = bad;
    CHECK_THROWS_AS(d.validate(), ParameterError);
  }
  auto d = c;
  d.tau = 0;
  CHECK_THROWS_AS(d.validate(), ParameterError);
  d = c;
  d.gen_epochs_per_disc_epoch = 0;
  CHECK_THROWS_AS(d.validate(), ParameterError);
}

TEST_CASE("epoch log json round trip") {
  EpochLog log;
  log.phase = "gen";
  log.round = 3;
  log.epoch = 6;
  log.loss_ae = 0.25;
  log.loss_dg = -0.7;
  log.loss_df = -0.6;
  log.disc_acc = 0.55;
  log.lr = 1e-3;
  log.wall_ms = 12.5;
  const auto back = EpochLog::from_json(log.to_json());
  CHECK(back.to_json() == log.to_json());
  EpochLog pre;
  pre.phase = "pretrain";
  pre.epoch = 1;
  CHECK(pre.to_json().find("\"round\":null") != std::string::npos);
  CHECK_FALSE(EpochLog::from_json(pre.to_json()).round.has_value());
  CHECK_THROWS_AS(EpochLog::from_json("{not json"), DataError);
}

TEST_CASE("checkpoint round trip, idempotent bytes and corrupt files") {
  const auto dir = temp_dir("ckpt");
  Checkpoint ck;
  Tensor<float> a({2, 3}, {1.5f, -2.25f, 0.0f, 3e-8f, 1e30f, -0.0f});
  Tensor<float> b({4}, {1, 2, 3, 4});
  ck.tensors = {{"gen.embed", a}, {"disc.out.b", b}};
  ck.config = {{"kind", "lstm"}, {"train.lambda", "0.1"}};
  ck.rng = {1, 2, 3, 0xffffffffffffffffULL};
  save_checkpoint(dir / "a.flgn", ck);
  const auto back = load_checkpoint(dir / "a.flgn");
  CHECK(back.tensor("gen.embed").shape() == a.shape());
  CHECK(std::memcmp(back.tensor("gen.embed").values().data(), a.values().data(), 6 * sizeof(float)) == 0);
  CHECK(back.tensor("disc.out.b").matrix() == b.matrix());
  CHECK(back.value("train.lambda") == "0.1");
  CHECK(back.rng == ck.rng);
  save_checkpoint(dir / "b.flgn", back);
  CHECK(read_bytes(dir / "a.flgn") == read_bytes(dir / "b.flgn"));

  const auto bytes = read_bytes(dir / "a.flgn");
  CHECK(bytes.substr(0, 4) == "FLGN");
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{9}, std::size_t{20},
                          bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(cut);
    std::ofstream(dir / "t.flgn", std::ios::binary) << bytes.substr(0, cut);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.flgn"), FormatError);
  }
  auto bad = bytes;
  bad[0] = 'X';
  std::ofstream(dir / "m.flgn", std::ios::binary) << bad;
  CHECK_THROWS_AS(load_checkpoint(dir / "m.flgn"), FormatError);
  bad = bytes;
  bad[4] = 7;
  std::ofstream(dir / "v.flgn", std::ios::binary) << bad;
  CHECK_THROWS_AS(load_checkpoint(dir / "v.flgn"), FormatError);
  std::ofstream(dir / "x.flgn", std::ios::binary) << bytes << "junk";
  CHECK_THROWS_AS(load_checkpoint(dir / "x.flgn"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.flgn"), DataError);
}

TEST_CASE("run config parsing, overrides and validation") {
  const auto dir = temp_dir("config");
  std::ofstream(dir / "fluent.txt") << "the cat sat .\n";
  std::ofstream(dir / "run.cfg") << "# desk run\n\nkind = transformer\nfluent_corpus = fluent.txt\n"
                                     "lambda=0.5\nbatch_size=16\ndropout=0\ncheckpoint_dir=ck\nlog=log.jsonl\n";
  auto cfg = RunConfig::load(dir / "run.cfg");
  CHECK(cfg.kind == GeneratorKind::kTransformer);
  CHECK(cfg.fluent_corpus == dir / "fluent.txt");
  CHECK(cfg.training.lambda == 0.5);
  CHECK(cfg.training.batch_size == 16);
  CHECK(cfg.dims.dropout == 0.0);
  cfg.validate();
  cfg.apply_override("lambda=10");
  CHECK(cfg.training.lambda == 10.0);
  CHECK_THROWS_AS(cfg.apply_override("lambda"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_override("lambda=abc"), ConfigError);
  cfg.apply_override("tau=-1");
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("run config errors name the file and line") {
  const auto dir = temp_dir("config_err");
  std::ofstream(dir / "bad.cfg") << "kind=lstm\nlamda=0.1\n";
  try {
    RunConfig::load(dir / "bad.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("bad.cfg:2") != std::string::npos);
    CHECK(msg.find("lamda") != std::string::npos);
  }
  RunConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.fluent_corpus = dir / "nope.txt";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.fluent_corpus.clear();
  cfg.synthetic_sentences = 10;
  cfg.log = dir / "log.jsonl";
  cfg.validate();
  cfg.training.tau = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config entries round trip") {
  RunConfig cfg;
  cfg.training.lambda = 0.01;
  cfg.training.tau_anneal = true;
  cfg.dims.heads = 8;
  RunConfig back;
  for (const auto& [k, v] : cfg.entries()) {
    if (!v.empty()) back.set(k, v);
  }
  CHECK(back.entries() == cfg.entries());
}

TEST_CASE("pretraining: zero epochs is a no-op and the loss falls") {
  const auto desk = tiny_corpus();
  for (auto kind : {GeneratorKind::kLstm, GeneratorKind::kTransformer}) {
    CAPTURE(generator_kind_name(kind));
    Trainer a(kind, tiny_dims(desk.vocab.size()), tiny_config());
    Trainer b(kind, tiny_dims(desk.vocab.size()), tiny_config());
    CHECK(a.pretrain(desk.data, 0).empty());
    check_same_params(a.generator().params(), b.generator().params());
    const auto logs = a.pretrain(desk.data, 5);
    REQUIRE(logs.size() == 5);
    for (std::size_t i = 1; i < logs.size(); ++i) CHECK(logs[i].loss_ae < logs[i - 1].loss_ae);
    CHECK(logs.back().phase == "pretrain");
    CHECK(logs.back().epoch == 5);
  }
}

TEST_CASE("adversarial schedule: two generator epochs per discriminator epoch") {
  const auto desk = tiny_corpus();
  Trainer t(GeneratorKind::kLstm, tiny_dims(desk.vocab.size()), tiny_config());
  std::vector<EpochLog> seen;
  for (int r = 1; r <= 3; ++r) {
    const auto logs = t.adversarial_round(desk.data, [&](const EpochLog& l) { seen.push_back(l); });
    REQUIRE(logs.size() == 3);
    CHECK(logs[0].phase == "disc");
    CHECK(logs[1].phase == "gen");
    CHECK(logs[2].phase == "gen");
    for (const auto& l : logs) {
      CHECK(l.round == r);
      CHECK(l.disc_acc.has_value());
      CHECK(l.loss_dg.has_value());
      CHECK(l.loss_df.has_value());
    }
    CHECK(t.gen_epochs_done() == 2 * t.disc_epochs_done());
  }
  CHECK(seen.size() == 9);
  CHECK(t.disc_epochs_done() == 3);
  CHECK(t.gen_epochs_done() == 6);
  CHECK(t.rounds_done() == 3);
}

TEST_CASE("fixed seed gives identical logs; the seed matters") {
  const auto desk = tiny_corpus();
  for (auto kind : {GeneratorKind::kLstm, GeneratorKind::kTransformer}) {
    CAPTURE(generator_kind_name(kind));
    auto run = [&](std::uint64_t seed) {
      auto cfg = tiny_config();
      cfg.seed = seed;
      Trainer t(kind, tiny_dims(desk.vocab.size()), cfg);
      auto logs = t.pretrain(desk.data, 2);
      for (auto& l : t.adversarial_round(desk.data)) logs.push_back(l);
      return logs;
    };
    const auto a = run(1), b = run(1), c = run(2);
    check_same_logs(a, b);
    CHECK(a[0].loss_ae != c[0].loss_ae);
  }
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  const auto desk = tiny_corpus();
  const auto dir = temp_dir("resume");
  for (auto kind : {GeneratorKind::kLstm, GeneratorKind::kTransformer}) {
    CAPTURE(generator_kind_name(kind));
    Trainer full(kind, tiny_dims(desk.vocab.size()), tiny_config());
    auto full_logs = full.pretrain(desk.data, 2);
    for (auto& l : full.adversarial_round(desk.data)) full_logs.push_back(l);
    for (auto& l : full.adversarial_round(desk.data)) full_logs.push_back(l);

    Trainer first(kind, tiny_dims(desk.vocab.size()), tiny_config());
    auto logs = first.pretrain(desk.data, 1);
    save_checkpoint(dir / "mid.flgn", first.checkpoint());
    Trainer second(load_checkpoint(dir / "mid.flgn"));
    for (auto& l : second.pretrain(desk.data, 1)) logs.push_back(l);
    for (auto& l : second.adversarial_round(desk.data)) logs.push_back(l);
    save_checkpoint(dir / "mid2.flgn", second.checkpoint());
    Trainer third(load_checkpoint(dir / "mid2.flgn"));
    for (auto& l : third.adversarial_round(desk.data)) logs.push_back(l);

    check_same_logs(full_logs, logs);
    check_same_params(full.generator().params(), third.generator().params());
    check_same_params(full.discriminator().params(), third.discriminator().params());
    CHECK(third.gen_epochs_done() == 4);
    CHECK(third.pretrain_epochs_done() == 2);

    save_checkpoint(dir / "c1.flgn", third.checkpoint());
    save_checkpoint(dir / "c2.flgn", Trainer(load_checkpoint(dir / "c1.flgn")).checkpoint());
    CHECK(read_bytes(dir / "c1.flgn") == read_bytes(dir / "c2.flgn"));
  }
}

TEST_CASE("non-finite losses abort with a diagnostic") {
  const auto desk = tiny_corpus();
  Trainer t(GeneratorKind::kLstm, tiny_dims(desk.vocab.size()), tiny_config());
  t.generator().params().get("out.b").matrix()(0, 5) = std::numeric_limits<float>::quiet_NaN();
  try {
    t.pretrain(desk.data, 1);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("loss_ae") != std::string::npos);
    CHECK(msg.find("step") != std::string::npos);
  }
}

TEST_CASE("training log file round trip") {
  const auto dir = temp_dir("log");
  const auto desk = tiny_corpus();
  Trainer t(GeneratorKind::kLstm, tiny_dims(desk.vocab.size()), tiny_config());
  std::ofstream out(dir / "log.jsonl");
  std::vector<EpochLog> written;
  auto cb = [&](const EpochLog& l) {
    out << l.to_json() << '\n';
    written.push_back(l);
  };
  t.pretrain(desk.data, 1, cb);
  t.adversarial_round(desk.data, cb);
  out.close();
  const auto back = read_training_log(dir / "log.jsonl");
  REQUIRE(back.size() == written.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].to_json() == written[i].to_json());
}

TEST_CASE("parallel corpus encoding rejects misaligned input") {
  const auto vocab = Vocabulary::from_tokens({"a", "b"});
  CHECK_THROWS_AS(encode_parallel_corpus({{"a"}}, {}, vocab, 8), DataError);
  CHECK_THROWS_AS(encode_parallel_corpus({}, {}, vocab, 8), DataError);
  const auto data = encode_parallel_corpus({{"a", "b"}}, {{"b"}}, vocab, 8);
  CHECK(data.awkward[0].content_length() == 4);
  CHECK(data.fluent[0].content_length() == 3);
}
