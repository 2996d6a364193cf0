#include "fluencygan/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "fluencygan/config.hpp"
#include "fluencygan/errors.hpp"
#include "fluencygan/losses.hpp"

namespace fluencygan {

namespace {

// seed derivation tags
constexpr std::uint64_t kRngTag = 0x7472616e;
constexpr std::uint64_t kGenInitTag = 1;
constexpr std::uint64_t kDiscInitTag = 2;
constexpr std::uint64_t kPretrainShuffle = 3;
constexpr std::uint64_t kDiscShuffle = 4;
constexpr std::uint64_t kGenShuffle = 5;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

void check_finite(double value, const char* loss, const std::string& phase, int epoch, int step) {
  if (!std::isfinite(value)) {
    throw NumericError("non-finite " + std::string(loss) + " (" + std::to_string(value) + ") in " +
                       phase + " epoch " + std::to_string(epoch) + ", step " +
                       std::to_string(step));
  }
}

struct BatchView {
  TokenBatch src;     // awkward, trimmed; also the reconstruction target
  TokenBatch fluent;  // full length
};

BatchView view(const Batch& b) {
  return {TokenBatch::from_flat(b.size, b.max_len, b.awkward).trimmed(),
          TokenBatch::from_flat(b.size, b.max_len, b.fluent)};
}

void check_corpus(const ParallelCorpus& data) {
  if (data.awkward.empty() || data.awkward.size() != data.fluent.size()) {
    throw DataError("training needs a non-empty aligned corpus (" +
                    std::to_string(data.awkward.size()) + " awkward vs " +
                    std::to_string(data.fluent.size()) + " fluent sentences)");
  }
}

template <typename S>
double mean_log(const RowMatrix<S>& scores) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    total += std::log(std::clamp(static_cast<double>(scores.data()[i]), kScoreFloor, 1.0 - kScoreFloor));
  }
  return total / static_cast<double>(scores.size());
}

std::string opt_name(const char* model, const char* moment, const std::string& param) {
  return std::string("opt.") + model + "." + moment + "." + param;
}

template <typename S>
void store(Checkpoint& ck, const std::string& prefix, const ParameterSet<S>& params) {
  for (const auto& [name, t] : params.entries()) {
    ck.tensors.emplace_back(prefix + name, Tensor<float>(t.shape(), t.matrix()));
  }
}

void store_adam(Checkpoint& ck, const char* model, const ParameterSet<float>& params,
                Adam<float>& opt) {
  std::size_t i = 0;
  for (const auto& [name, t] : params.entries()) {
    ck.tensors.emplace_back(opt_name(model, "m", name), Tensor<float>(t.shape(), opt.first_moments()[i]));
    ck.tensors.emplace_back(opt_name(model, "v", name), Tensor<float>(t.shape(), opt.second_moments()[i]));
    ++i;
  }
}

void restore(const Checkpoint& ck, const std::string& prefix, ParameterSet<float>& params) {
  for (auto& [name, t] : params.entries()) {
    const auto& src = ck.tensor(prefix + name);
    if (src.shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + prefix + name + "' has shape " +
                        shape_string(src.shape()) + ", expected " + shape_string(t.shape()));
    }
    t.matrix() = src.matrix();
  }
}

void restore_adam(const Checkpoint& ck, const char* model, ParameterSet<float>& params,
                  Adam<float>& opt) {
  std::size_t i = 0;
  for (auto& [name, t] : params.entries()) {
    opt.first_moments()[i] = ck.tensor(opt_name(model, "m", name)).matrix();
    opt.second_moments()[i] = ck.tensor(opt_name(model, "v", name)).matrix();
    ++i;
  }
}

int state_int(const Checkpoint& ck, const std::string& key) {
  try {
    return std::stoi(ck.value(key));
  } catch (const std::logic_error&) {
    throw FormatError("checkpoint value for '" + key + "' is not an integer");
  }
}

}  // namespace

void TrainingConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ParameterError(std::string("training config: ") + what);
  };
  require(lambda >= 0.0, "lambda must be non-negative");
  require(tau > 0.0 && tau_final > 0.0, "tau must be positive");
  require(pretrain_epochs >= 0 && adversarial_rounds >= 0, "epoch counts must be non-negative");
  require(gen_epochs_per_disc_epoch >= 1, "gen_epochs_per_disc_epoch must be at least 1");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          "adam betas must lie in [0, 1)");
  require(adam.eps > 0.0, "adam_eps must be positive");
  require(warmup_steps >= 1, "warmup_steps must be at least 1");
  require(base_lr > 0.0 && disc_lr > 0.0, "learning rates must be positive");
  require(clip_norm > 0.0, "clip_norm must be positive");
}

double TrainingConfig::tau_for_round(int round) const {
  if (!tau_anneal || adversarial_rounds <= 1) return tau;
  const double progress = std::clamp((round - 1) / static_cast<double>(adversarial_rounds - 1), 0.0, 1.0);
  return tau * std::pow(tau_final / tau, progress);
}

std::string EpochLog::to_json() const {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  nlohmann::ordered_json j;
  j["phase"] = phase;
  j["round"] = round ? nlohmann::json(*round) : nlohmann::json(nullptr);
  j["epoch"] = epoch;
  j["loss_ae"] = loss_ae;
  j["loss_dg"] = opt(loss_dg);
  j["loss_df"] = opt(loss_df);
  j["disc_acc"] = opt(disc_acc);
  j["lr"] = lr;
  j["wall_ms"] = wall_ms;
  return j.dump();
}

EpochLog EpochLog::from_json(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    auto opt = [&](const char* key) -> std::optional<double> {
      const auto& v = j.at(key);
      if (v.is_null()) return std::nullopt;
      return v.get<double>();
    };
    EpochLog log;
    log.phase = j.at("phase").get<std::string>();
    if (!j.at("round").is_null()) log.round = j.at("round").get<int>();
    log.epoch = j.at("epoch").get<int>();
    log.loss_ae = j.at("loss_ae").get<double>();
    log.loss_dg = opt("loss_dg");
    log.loss_df = opt("loss_df");
    log.disc_acc = opt("disc_acc");
    log.lr = j.at("lr").get<double>();
    log.wall_ms = j.at("wall_ms").get<double>();
    return log;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed training log line: " + std::string(e.what()));
  }
}

ParallelCorpus encode_parallel_corpus(const std::vector<Tokens>& awkward,
                                      const std::vector<Tokens>& fluent, const Vocabulary& vocab,
                                      int max_len) {
  if (awkward.size() != fluent.size() || awkward.empty()) {
    throw DataError("parallel corpus needs equal, non-zero line counts (" +
                    std::to_string(awkward.size()) + " awkward vs " +
                    std::to_string(fluent.size()) + " fluent)");
  }
  ParallelCorpus data;
  data.awkward.reserve(awkward.size());
  data.fluent.reserve(fluent.size());
  for (std::size_t i = 0; i < awkward.size(); ++i) {
    data.awkward.push_back(encode(awkward[i], vocab, max_len));
    data.fluent.push_back(encode(fluent[i], vocab, max_len));
  }
  return data;
}

std::vector<EpochLog> read_training_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read training log " + path.string());
  std::vector<EpochLog> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(EpochLog::from_json(line));
  }
  return out;
}

Trainer::Trainer(GeneratorKind kind, const ModelDims& dims, const TrainingConfig& config)
    : config_(config), rng_(Rng::derive(config.seed, kRngTag)) {
  config_.validate();
  build(kind, dims);
}

Trainer::Trainer(const Checkpoint& ck) {
  ModelDims dims;
  for (const auto& [key, value] : ck.config) {
    if (key.rfind("model.", 0) == 0) set_model_dim(dims, key.substr(6), value);
    if (key.rfind("train.", 0) == 0) set_training_option(config_, key.substr(6), value);
  }
  try {
    config_.validate();
    build(parse_generator_kind(ck.value("kind")), dims);
  } catch (const ParameterError& e) {
    throw FormatError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  }
  restore(ck, "gen.", generator_->params());
  restore(ck, "disc.", discriminator_->params());
  restore_adam(ck, "gen", generator_->params(), *gen_opt_);
  restore_adam(ck, "disc", discriminator_->params(), *disc_opt_);
  gen_opt_->set_steps(state_int(ck, "state.gen_steps"));
  disc_opt_->set_steps(state_int(ck, "state.disc_steps"));
  pretrain_epochs_ = state_int(ck, "state.pretrain_epochs");
  rounds_ = state_int(ck, "state.rounds");
  disc_epochs_ = state_int(ck, "state.disc_epochs");
  gen_epochs_ = state_int(ck, "state.gen_epochs");
  rng_ = Rng(ck.rng);
}

void Trainer::build(GeneratorKind kind, const ModelDims& dims) {
  generator_ = make_generator<float>(kind, dims, Rng::derive(config_.seed, kGenInitTag));
  discriminator_ = std::make_unique<Discriminator<float>>(dims, Rng::derive(config_.seed, kDiscInitTag));
  gen_opt_ = std::make_unique<Adam<float>>(generator_->params(), config_.adam);
  disc_opt_ = std::make_unique<Adam<float>>(discriminator_->params(), config_.adam);
}

void Trainer::set_config(const TrainingConfig& config) {
  config.validate();
  config_ = config;
}

double Trainer::generator_lr(std::int64_t step) const {
  if (kind() == GeneratorKind::kTransformer) {
    return transformer_lr(step, dims().model_dim, config_.warmup_steps);
  }
  return config_.base_lr;
}

std::vector<EpochLog> Trainer::pretrain(const ParallelCorpus& data, int epochs,
                                        const EpochCallback& on_epoch) {
  check_corpus(data);
  std::vector<EpochLog> logs;
  auto& gen = *generator_;
  for (int e = 0; e < epochs; ++e) {
    const auto start = Clock::now();
    const int epoch = pretrain_epochs_ + 1;
    const auto batches = make_batches(data.awkward, data.fluent, config_.batch_size,
                                      Rng::derive(config_.seed, kPretrainShuffle, epoch));
    double loss_sum = 0.0, lr = 0.0;
    int step = 0;
    for (const auto& batch : batches) {
      const auto v = view(batch);
      Graph<float> g;
      auto logits = gen.forward_logits(g, v.src, v.src, &rng_);
      const auto targets = v.src.next_token_targets();
      auto loss = loss_ae(logits, std::span<const int>(targets));
      check_finite(loss.item(), "loss_ae", "pretrain", epoch, step);
      gen.params().zero_grad();
      g.backward(loss);
      if (kind() == GeneratorKind::kLstm) clip_grad_norm(gen.params(), config_.clip_norm);
      lr = generator_lr(gen_opt_->steps() + 1);
      gen_opt_->step(lr);
      loss_sum += loss.item();
      ++step;
    }
    ++pretrain_epochs_;
    EpochLog log;
    log.phase = "pretrain";
    log.epoch = epoch;
    log.loss_ae = loss_sum / static_cast<double>(batches.size());
    log.lr = lr;
    log.wall_ms = elapsed_ms(start);
    if (on_epoch) on_epoch(log);
    logs.push_back(std::move(log));
  }
  return logs;
}

EpochLog Trainer::disc_epoch(const ParallelCorpus& data, double tau) {
  const auto start = Clock::now();
  const int epoch = disc_epochs_ + 1;
  auto& gen = *generator_;
  auto& disc = *discriminator_;
  const auto batches = make_batches(data.awkward, data.fluent, config_.batch_size,
                                    Rng::derive(config_.seed, kDiscShuffle, epoch));
  double ae_sum = 0.0, dg_sum = 0.0, df_sum = 0.0;
  std::size_t correct = 0, seen = 0;
  int step = 0;
  for (const auto& batch : batches) {
    const auto v = view(batch);
    const auto targets = v.src.next_token_targets();

    // generator samples are constants for the discriminator update
    Graph<float> sample_graph;
    sample_graph.set_grad_enabled(false);
    auto logits = gen.forward_logits(sample_graph, v.src, v.src, nullptr);
    const auto noise = sample_gumbel<float>(logits.shape(), rng_);
    const auto soft = gumbel_softmax(logits, static_cast<float>(tau), noise).tensor();
    const double l_ae = loss_ae(logits, std::span<const int>(targets)).item();

    Graph<float> g;
    auto fake = disc.score(g, disc.generated_input(g, g.constant(soft), v.src));
    auto real = disc.score(g, disc.real_input(v.fluent));
    auto loss = loss_discriminator(real, fake);
    check_finite(loss.item(), "loss_discriminator", "disc", epoch, step);
    disc.params().zero_grad();
    g.backward(loss);
    disc_opt_->step(config_.disc_lr);

    const auto& rv = real.value();
    const auto& fv = fake.value();
    const auto acc = discriminator_accuracy<float>({rv.data(), static_cast<std::size_t>(rv.size())},
                                                   {fv.data(), static_cast<std::size_t>(fv.size())});
    correct += static_cast<std::size_t>(std::lround(acc * static_cast<double>(rv.size() + fv.size())));
    seen += static_cast<std::size_t>(rv.size() + fv.size());
    ae_sum += l_ae;
    dg_sum += mean_log(fv);
    df_sum += mean_log(rv);
    ++step;
  }
  ++disc_epochs_;
  const auto n = static_cast<double>(batches.size());
  EpochLog log;
  log.phase = "disc";
  log.round = rounds_ + 1;
  log.epoch = epoch;
  log.loss_ae = ae_sum / n;
  log.loss_dg = dg_sum / n;
  log.loss_df = df_sum / n;
  log.disc_acc = static_cast<double>(correct) / static_cast<double>(seen);
  log.lr = config_.disc_lr;
  log.wall_ms = elapsed_ms(start);
  return log;
}

EpochLog Trainer::gen_epoch(const ParallelCorpus& data, double tau) {
  const auto start = Clock::now();
  const int epoch = gen_epochs_ + 1;
  auto& gen = *generator_;
  auto& disc = *discriminator_;
  const auto batches = make_batches(data.awkward, data.fluent, config_.batch_size,
                                    Rng::derive(config_.seed, kGenShuffle, epoch));
  double ae_sum = 0.0, dg_sum = 0.0, df_sum = 0.0, lr = 0.0;
  std::size_t correct = 0, seen = 0;
  int step = 0;
  for (const auto& batch : batches) {
    const auto v = view(batch);
    const auto targets = v.src.next_token_targets();
    Graph<float> g;
    g.freeze(disc.params());
    auto logits = gen.forward_logits(g, v.src, v.src, &rng_);
    const auto noise = sample_gumbel<float>(logits.shape(), rng_);
    auto soft = gumbel_softmax(logits, static_cast<float>(tau), noise);
    auto l_ae = loss_ae(logits, std::span<const int>(targets));
    auto fake = disc.score(g, disc.generated_input(g, soft, v.src));
    auto l_dg = loss_dg(fake);
    auto l_g = loss_generator(l_ae, l_dg, static_cast<float>(config_.lambda));
    check_finite(l_ae.item(), "loss_ae", "gen", epoch, step);
    check_finite(l_dg.item(), "loss_dg", "gen", epoch, step);
    gen.params().zero_grad();
    g.backward(l_g);
    if (kind() == GeneratorKind::kLstm) clip_grad_norm(gen.params(), config_.clip_norm);
    lr = generator_lr(gen_opt_->steps() + 1);
    gen_opt_->step(lr);

    Graph<float> probe;
    probe.set_grad_enabled(false);
    auto real = disc.score(probe, disc.real_input(v.fluent));
    const auto& rv = real.value();
    const auto& fv = fake.value();
    const auto acc = discriminator_accuracy<float>({rv.data(), static_cast<std::size_t>(rv.size())},
                                                   {fv.data(), static_cast<std::size_t>(fv.size())});
    correct += static_cast<std::size_t>(std::lround(acc * static_cast<double>(rv.size() + fv.size())));
    seen += static_cast<std::size_t>(rv.size() + fv.size());
    ae_sum += l_ae.item();
    dg_sum += l_dg.item();
    df_sum += mean_log(rv);
    ++step;
  }
  ++gen_epochs_;
  const auto n = static_cast<double>(batches.size());
  EpochLog log;
  log.phase = "gen";
  log.round = rounds_ + 1;
  log.epoch = epoch;
  log.loss_ae = ae_sum / n;
  log.loss_dg = dg_sum / n;
  log.loss_df = df_sum / n;
  log.disc_acc = static_cast<double>(correct) / static_cast<double>(seen);
  log.lr = lr;
  log.wall_ms = elapsed_ms(start);
  return log;
}

std::vector<EpochLog> Trainer::adversarial_round(const ParallelCorpus& data,
                                                 const EpochCallback& on_epoch) {
  check_corpus(data);
  const double tau = config_.tau_for_round(rounds_ + 1);
  std::vector<EpochLog> logs;
  logs.push_back(disc_epoch(data, tau));
  if (on_epoch) on_epoch(logs.back());
  for (int i = 0; i < config_.gen_epochs_per_disc_epoch; ++i) {
    logs.push_back(gen_epoch(data, tau));
    if (on_epoch) on_epoch(logs.back());
  }
  ++rounds_;
  return logs;
}

Checkpoint Trainer::checkpoint(const KeyValues& extra) const {
  Checkpoint ck;
  store(ck, "gen.", generator_->params());
  store(ck, "disc.", discriminator_->params());
  store_adam(ck, "gen", generator_->params(), *gen_opt_);
  store_adam(ck, "disc", discriminator_->params(), *disc_opt_);
  ck.config.emplace_back("kind", std::string(generator_kind_name(kind())));
  for (const auto& [k, v] : model_dims_entries(dims())) ck.config.emplace_back("model." + k, v);
  for (const auto& [k, v] : training_entries(config_)) ck.config.emplace_back("train." + k, v);
  ck.config.emplace_back("state.pretrain_epochs", std::to_string(pretrain_epochs_));
  ck.config.emplace_back("state.rounds", std::to_string(rounds_));
  ck.config.emplace_back("state.disc_epochs", std::to_string(disc_epochs_));
  ck.config.emplace_back("state.gen_epochs", std::to_string(gen_epochs_));
  ck.config.emplace_back("state.gen_steps", std::to_string(gen_opt_->steps()));
  ck.config.emplace_back("state.disc_steps", std::to_string(disc_opt_->steps()));
  for (const auto& e : extra) ck.config.push_back(e);
  ck.rng = rng_.state();
  return ck;
}

}  // namespace fluencygan
