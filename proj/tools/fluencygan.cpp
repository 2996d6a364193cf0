// Command-line driver: corpus preparation, training, inference, evaluation.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fluencygan/checkpoint.hpp"
#include "fluencygan/config.hpp"
#include "fluencygan/errors.hpp"
#include "fluencygan/evaluation.hpp"
#include "fluencygan/gradcheck.hpp"
#include "fluencygan/text.hpp"
#include "fluencygan/training.hpp"

namespace fs = std::filesystem;
using namespace fluencygan;

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kData = 3,
  kNumeric = 4,
  kCheckpoint = 5,
};

std::vector<CorruptionRule> rules_from(const std::string& spec) {
  return spec == "default" ? default_corruption_rules() : parse_corruption_rules(spec);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  auto config = RunConfig::load(path);
  for (const auto& o : overrides) config.apply_override(o);
  config.validate();
  return config;
}

struct PreparedData {
  Vocabulary vocab;
  ParallelCorpus corpus;
  fs::path vocab_path;
};

PreparedData prepare_data(const RunConfig& config) {
  std::vector<Tokens> fluent;
  if (!config.fluent_corpus.empty()) {
    fluent = load_corpus(config.fluent_corpus);
  } else {
    for (const auto& s : synthesize_sentences(config.synthetic_sentences, config.corruption_seed)) {
      fluent.push_back(tokenize(s));
    }
  }
  const auto awkward = config.awkward_corpus.empty()
                           ? corrupt_corpus(fluent, rules_from(config.corruption_rules),
                                            config.corruption_seed)
                           : load_corpus(config.awkward_corpus);

  const auto vocab_path = config.vocab.empty() ? config.checkpoint_dir / "vocab.txt" : config.vocab;
  std::optional<Vocabulary> vocab;
  if (fs::exists(vocab_path)) {
    vocab = Vocabulary::load(vocab_path);
  } else {
    auto both = fluent;
    both.insert(both.end(), awkward.begin(), awkward.end());
    vocab = Vocabulary::build(both, config.vocab_size);
    vocab->save(vocab_path);
  }
  auto corpus = encode_parallel_corpus(awkward, fluent, *vocab, config.dims.max_len);
  return {std::move(*vocab), std::move(corpus), fs::absolute(vocab_path)};
}

class LogWriter {
 public:
  LogWriter(const fs::path& path, bool append)
      : out_(path, append ? std::ios::app : std::ios::trunc), path_(path) {
    if (!out_) throw DataError("cannot write training log " + path.string());
  }
  void operator()(const EpochLog& log) {
    out_ << log.to_json() << '\n';
    out_.flush();
    std::cerr << log.phase;
    if (log.round) std::cerr << " round " << *log.round;
    std::cerr << " epoch " << log.epoch << " loss_ae " << log.loss_ae;
    if (log.disc_acc) std::cerr << " disc_acc " << *log.disc_acc;
    std::cerr << '\n';
  }

 private:
  std::ofstream out_;
  fs::path path_;
};

void save(const Trainer& trainer, const fs::path& path, const KeyValues& extra) {
  save_checkpoint(path, trainer.checkpoint(extra));
  std::cerr << "wrote " << path.string() << '\n';
}

KeyValues run_extras(const PreparedData& data) { return {{"vocab", data.vocab_path.string()}}; }

int cmd_corrupt(const std::string& in, const std::string& out, const std::string& rules,
                std::uint64_t seed) {
  const auto parsed = rules_from(rules);
  std::vector<std::string> lines;
  for (const auto& t : corrupt_corpus(load_corpus(in), parsed, seed)) lines.push_back(join_tokens(t));
  write_lines(out, lines);
  return kOk;
}

int cmd_synth(int count, std::uint64_t seed, const std::string& out) {
  if (count <= 0) throw ConfigError("--count must be positive");
  write_lines(out, synthesize_sentences(count, seed));
  return kOk;
}

int cmd_pretrain(const RunConfig& config) {
  fs::create_directories(config.checkpoint_dir);
  const auto data = prepare_data(config);
  auto dims = config.dims;
  dims.vocab_size = data.vocab.size();
  Trainer trainer(config.kind, dims, config.training);
  LogWriter log(config.log, false);
  trainer.pretrain(data.corpus, config.training.pretrain_epochs, std::ref(log));
  save(trainer, config.checkpoint_dir / "pretrain.flgn", run_extras(data));
  return kOk;
}

int cmd_train(const RunConfig& config) {
  fs::create_directories(config.checkpoint_dir);
  const auto data = prepare_data(config);
  const auto extras = run_extras(data);
  std::unique_ptr<Trainer> trainer;
  const bool resume = !config.init_checkpoint.empty();
  if (resume) {
    trainer = std::make_unique<Trainer>(load_checkpoint(config.init_checkpoint));
    if (trainer->dims().vocab_size != data.vocab.size()) {
      throw DataError("checkpoint vocabulary has " + std::to_string(trainer->dims().vocab_size) +
                      " entries but the run vocabulary has " + std::to_string(data.vocab.size()));
    }
    trainer->set_config(config.training);
  } else {
    auto dims = config.dims;
    dims.vocab_size = data.vocab.size();
    trainer = std::make_unique<Trainer>(config.kind, dims, config.training);
  }
  LogWriter log(config.log, resume);
  if (!resume) {
    trainer->pretrain(data.corpus, config.training.pretrain_epochs, std::ref(log));
    save(*trainer, config.checkpoint_dir / "pretrain.flgn", extras);
  }
  while (trainer->rounds_done() < config.training.adversarial_rounds) {
    trainer->adversarial_round(data.corpus, std::ref(log));
    char name[32];
    std::snprintf(name, sizeof name, "round_%03d.flgn", trainer->rounds_done());
    save(*trainer, config.checkpoint_dir / name, extras);
  }
  save(*trainer, config.checkpoint_dir / "final.flgn", extras);
  return kOk;
}

struct LoadedModel {
  std::unique_ptr<Trainer> trainer;
  Vocabulary vocab;
};

LoadedModel load_model(const std::string& checkpoint, const std::string& vocab_override) {
  const auto ckpt = load_checkpoint(checkpoint);
  fs::path vocab_path = vocab_override;
  if (vocab_path.empty()) {
    if (!ckpt.has_value("vocab")) throw ConfigError(checkpoint + " records no vocabulary; pass --vocab");
    vocab_path = ckpt.value("vocab");
  }
  auto vocab = Vocabulary::load(vocab_path);
  auto trainer = std::make_unique<Trainer>(ckpt);
  if (trainer->dims().vocab_size != vocab.size()) {
    throw DataError("vocabulary " + vocab_path.string() + " has " + std::to_string(vocab.size()) +
                    " entries, checkpoint expects " + std::to_string(trainer->dims().vocab_size));
  }
  return {std::move(trainer), std::move(vocab)};
}

int cmd_infer(const std::string& checkpoint, const std::string& vocab, const std::string& in,
              const std::string& out) {
  auto model = load_model(checkpoint, vocab);
  auto& gen = model.trainer->generator();
  const int max_len = gen.dims().max_len;
  std::vector<TokenSequence> inputs;
  for (const auto& tokens : load_corpus(in)) inputs.push_back(encode(tokens, model.vocab, max_len));
  std::vector<std::string> lines;
  for (const auto& seq : gen.decode_greedy(inputs, max_len)) lines.push_back(decode(seq, model.vocab));
  write_lines(out, lines);
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& vocab, const std::string& pairs,
             const std::string& report_path) {
  auto model = load_model(checkpoint, vocab);
  auto config = model.trainer->checkpoint().config;
  config.emplace_back("checkpoint", checkpoint);
  config.emplace_back("pairs", pairs);
  const auto report =
      evaluate_corpus(model.trainer->generator(), model.vocab, read_eval_pairs(pairs), config);
  report.write(report_path);
  std::cout << "bleu_bow " << report.mean_bleu_bow << "\nbleu_ngram " << report.mean_bleu_ngram
            << "\ncosine " << report.mean_cosine << '\n';
  return kOk;
}

int cmd_gradcheck(std::uint64_t seed, int instances) {
  auto reports = gradcheck::op_suite(seed, instances);
  for (auto& r : gradcheck::composite_suite(seed, instances)) reports.push_back(std::move(r));
  bool ok = true;
  std::printf("%-32s %9s %12s %9s  %s\n", "check", "instances", "max_rel_err", "tolerance", "result");
  for (const auto& r : reports) {
    std::printf("%-32s %9d %12.3e %9.0e  %s\n", r.name.c_str(), r.instances, r.max_rel_error,
                r.tolerance, r.passed() ? "PASS" : "FAIL");
    ok = ok && r.passed();
  }
  return ok ? kOk : kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial fluency rewriting: train, decode and score seq2seq generators"};
  app.require_subcommand(1);

  std::string in, out, rules = "default", config_path, checkpoint, vocab, pairs, report;
  std::uint64_t seed = 42;
  int count = 1000, instances = 5;
  std::vector<std::string> overrides;

  auto* corrupt_cmd = app.add_subcommand("corrupt", "Write an awkward copy of a corpus, line by line");
  corrupt_cmd->add_option("--in", in, "Fluent corpus, one sentence per line")->required();
  corrupt_cmd->add_option("--out", out, "Output path")->required();
  corrupt_cmd->add_option("--rules", rules, "'default', 'none' or kind:prob,...");
  corrupt_cmd->add_option("--seed", seed, "Corruption seed");

  auto* synth_cmd = app.add_subcommand("synth", "Generate grammar sentences");
  synth_cmd->add_option("--count", count, "Number of sentences");
  synth_cmd->add_option("--seed", seed, "Grammar seed");
  synth_cmd->add_option("--out", out, "Output path")->required();

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value run configuration")->required();
    cmd->add_option("--set", overrides, "Override a config entry, key=value (repeatable)");
  };
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Autoencoder pretraining only");
  add_config(pretrain_cmd);
  auto* train_cmd = app.add_subcommand(
      "train", "Pretrain (unless init_checkpoint is set) then run the adversarial rounds");
  add_config(train_cmd);

  auto* infer_cmd = app.add_subcommand("infer", "Greedy-decode one sentence per line");
  infer_cmd->add_option("--checkpoint", checkpoint)->required();
  infer_cmd->add_option("--vocab", vocab, "Vocabulary file (default: recorded in the checkpoint)");
  infer_cmd->add_option("--in", in)->required();
  infer_cmd->add_option("--out", out)->required();

  auto* eval_cmd = app.add_subcommand("eval", "Score a checkpoint on awkward<TAB>reference pairs");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--vocab", vocab, "Vocabulary file (default: recorded in the checkpoint)");
  eval_cmd->add_option("--pairs", pairs)->required();
  eval_cmd->add_option("--report", report, "JSON report path")->required();

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::uint64_t gradcheck_seed = 1;
  gradcheck_cmd->add_option("--seed", gradcheck_seed);
  gradcheck_cmd->add_option("--instances", instances, "Random instances per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*corrupt_cmd) return cmd_corrupt(in, out, rules, seed);
    if (*synth_cmd) return cmd_synth(count, seed, out);
    if (*pretrain_cmd) return cmd_pretrain(load_run_config(config_path, overrides));
    if (*train_cmd) return cmd_train(load_run_config(config_path, overrides));
    if (*infer_cmd) return cmd_infer(checkpoint, vocab, in, out);
    if (*eval_cmd) return cmd_eval(checkpoint, vocab, pairs, report);
    if (*gradcheck_cmd) return cmd_gradcheck(gradcheck_seed, instances);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kNumeric;
  } catch (const FormatError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kCheckpoint;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
