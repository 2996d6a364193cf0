#include "fluencygan/config.hpp"

#include <charconv>
#include <fstream>

#include "fluencygan/errors.hpp"
#include "fluencygan/text.hpp"

namespace fluencygan {

namespace {

template <typename T>
T parse_value(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key) +
                    " (expected true or false)");
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::filesystem::path resolve(const std::filesystem::path& base, std::string_view value) {
  std::filesystem::path p{std::string(value)};
  if (value.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

void require_readable(const std::filesystem::path& p, const char* key) {
  if (!std::ifstream(p)) {
    throw ConfigError(std::string(key) + ": cannot read '" + p.string() + "'");
  }
}

void require_writable_parent(const std::filesystem::path& p, const char* key) {
  const auto parent = p.has_parent_path() ? p.parent_path() : std::filesystem::path(".");
  if (!std::filesystem::is_directory(parent)) {
    throw ConfigError(std::string(key) + ": directory '" + parent.string() + "' does not exist");
  }
}

}  // namespace

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

KeyValues model_dims_entries(const ModelDims& d) {
  return {{"vocab_size", std::to_string(d.vocab_size)},
          {"max_len", std::to_string(d.max_len)},
          {"embed", std::to_string(d.embed)},
          {"hidden", std::to_string(d.hidden)},
          {"model_dim", std::to_string(d.model_dim)},
          {"heads", std::to_string(d.heads)},
          {"ff_dim", std::to_string(d.ff_dim)},
          {"layers", std::to_string(d.layers)},
          {"dropout", format_number(d.dropout)},
          {"disc_embed", std::to_string(d.disc_embed)},
          {"disc_filters", std::to_string(d.disc_filters)},
          {"disc_hidden", std::to_string(d.disc_hidden)}};
}

bool set_model_dim(ModelDims& d, std::string_view key, std::string_view value) {
  auto integer = [&](int& field) { field = parse_value<int>(key, value); };
  if (key == "vocab_size") integer(d.vocab_size);
  else if (key == "max_len") integer(d.max_len);
  else if (key == "embed") integer(d.embed);
  else if (key == "hidden") integer(d.hidden);
  else if (key == "model_dim") integer(d.model_dim);
  else if (key == "heads") integer(d.heads);
  else if (key == "ff_dim") integer(d.ff_dim);
  else if (key == "layers") integer(d.layers);
  else if (key == "dropout") d.dropout = parse_value<double>(key, value);
  else if (key == "disc_embed") integer(d.disc_embed);
  else if (key == "disc_filters") integer(d.disc_filters);
  else if (key == "disc_hidden") integer(d.disc_hidden);
  else return false;
  return true;
}

KeyValues training_entries(const TrainingConfig& c) {
  return {{"lambda", format_number(c.lambda)},
          {"tau", format_number(c.tau)},
          {"tau_anneal", c.tau_anneal ? "true" : "false"},
          {"tau_final", format_number(c.tau_final)},
          {"pretrain_epochs", std::to_string(c.pretrain_epochs)},
          {"gen_epochs_per_disc_epoch", std::to_string(c.gen_epochs_per_disc_epoch)},
          {"adversarial_rounds", std::to_string(c.adversarial_rounds)},
          {"batch_size", std::to_string(c.batch_size)},
          {"adam_beta1", format_number(c.adam.beta1)},
          {"adam_beta2", format_number(c.adam.beta2)},
          {"adam_eps", format_number(c.adam.eps)},
          {"warmup_steps", std::to_string(c.warmup_steps)},
          {"base_lr", format_number(c.base_lr)},
          {"disc_lr", format_number(c.disc_lr)},
          {"clip_norm", format_number(c.clip_norm)},
          {"seed", std::to_string(c.seed)}};
}

bool set_training_option(TrainingConfig& c, std::string_view key, std::string_view value) {
  auto real = [&](double& field) { field = parse_value<double>(key, value); };
  auto integer = [&](int& field) { field = parse_value<int>(key, value); };
  if (key == "lambda") real(c.lambda);
  else if (key == "tau") real(c.tau);
  else if (key == "tau_anneal") c.tau_anneal = parse_bool(key, value);
  else if (key == "tau_final") real(c.tau_final);
  else if (key == "pretrain_epochs") integer(c.pretrain_epochs);
  else if (key == "gen_epochs_per_disc_epoch") integer(c.gen_epochs_per_disc_epoch);
  else if (key == "adversarial_rounds") integer(c.adversarial_rounds);
  else if (key == "batch_size") integer(c.batch_size);
  else if (key == "adam_beta1") real(c.adam.beta1);
  else if (key == "adam_beta2") real(c.adam.beta2);
  else if (key == "adam_eps") real(c.adam.eps);
  else if (key == "warmup_steps") integer(c.warmup_steps);
  else if (key == "base_lr") real(c.base_lr);
  else if (key == "disc_lr") real(c.disc_lr);
  else if (key == "clip_norm") real(c.clip_norm);
  else if (key == "seed") c.seed = parse_value<std::uint64_t>(key, value);
  else return false;
  return true;
}

void RunConfig::set(std::string_view key, std::string_view value,
                    const std::filesystem::path& base) {
  if (key == "kind") kind = parse_generator_kind(value);
  else if (key == "fluent_corpus") fluent_corpus = resolve(base, value);
  else if (key == "awkward_corpus") awkward_corpus = resolve(base, value);
  else if (key == "corruption_rules") {
    if (value != "default") parse_corruption_rules(value);
    corruption_rules = std::string(value);
  } else if (key == "corruption_seed") corruption_seed = parse_value<std::uint64_t>(key, value);
  else if (key == "synthetic_sentences") synthetic_sentences = parse_value<int>(key, value);
  else if (key == "vocab") vocab = resolve(base, value);
  else if (key == "vocab_size") vocab_size = parse_value<int>(key, value);
  else if (key == "checkpoint_dir") checkpoint_dir = resolve(base, value);
  else if (key == "init_checkpoint") init_checkpoint = resolve(base, value);
  else if (key == "log") log = resolve(base, value);
  else if (!set_model_dim(dims, key, value) && !set_training_option(training, key, value)) {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  }
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::validate() const {
  if (fluent_corpus.empty() && synthetic_sentences <= 0) {
    throw ConfigError("set fluent_corpus or synthetic_sentences");
  }
  if (!fluent_corpus.empty()) require_readable(fluent_corpus, "fluent_corpus");
  if (!awkward_corpus.empty()) require_readable(awkward_corpus, "awkward_corpus");
  if (!init_checkpoint.empty()) require_readable(init_checkpoint, "init_checkpoint");
  if (!vocab.empty() && std::filesystem::exists(vocab)) require_readable(vocab, "vocab");
  if (!vocab.empty()) require_writable_parent(vocab, "vocab");
  require_writable_parent(log, "log");
  if (checkpoint_dir.empty()) throw ConfigError("checkpoint_dir must not be empty");
  if (std::filesystem::exists(checkpoint_dir) && !std::filesystem::is_directory(checkpoint_dir)) {
    throw ConfigError("checkpoint_dir '" + checkpoint_dir.string() + "' is not a directory");
  }
  if (vocab_size <= kFirstTokenId) throw ConfigError("vocab_size must exceed 4");
  if (corruption_rules != "default") parse_corruption_rules(corruption_rules);
  try {
    training.validate();
    ModelDims probe = dims;
    probe.vocab_size = vocab_size;
    probe.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

KeyValues RunConfig::entries() const {
  KeyValues kv{{"kind", std::string(generator_kind_name(kind))},
               {"fluent_corpus", fluent_corpus.string()},
               {"awkward_corpus", awkward_corpus.string()},
               {"corruption_rules", corruption_rules},
               {"corruption_seed", std::to_string(corruption_seed)},
               {"synthetic_sentences", std::to_string(synthetic_sentences)},
               {"vocab", vocab.string()},
               {"vocab_size", std::to_string(vocab_size)},
               {"checkpoint_dir", checkpoint_dir.string()},
               {"init_checkpoint", init_checkpoint.string()},
               {"log", log.string()}};
  for (auto& e : model_dims_entries(dims)) {
    if (e.first != "vocab_size") kv.push_back(std::move(e));
  }
  for (auto& e : training_entries(training)) kv.push_back(std::move(e));
  return kv;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  RunConfig config;
  const auto base = path.parent_path();
  std::string raw;
  int number = 0;
  while (std::getline(in, raw)) {
    ++number;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": expected key=value");
    }
    try {
      config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), base);
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return config;
}

}  // namespace fluencygan
