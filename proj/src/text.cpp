#include "fluencygan/text.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <map>
#include <sstream>

#include "fluencygan/errors.hpp"
#include "fluencygan/rng.hpp"

namespace fluencygan {
namespace {

constexpr std::string_view kPunctuation = ".,!?;:'\"()-";

const std::array<std::string, 4> kSpecialNames = {"<pad>", "<bos>", "<eos>", "<unk>"};

constexpr std::array<std::pair<std::string_view, std::string_view>, 8> kFunctionWords = {{
    {"the", "a"},
    {"a", "the"},
    {"is", "are"},
    {"are", "is"},
    {"in", "on"},
    {"on", "in"},
    {"to", "for"},
    {"for", "to"},
}};

}  // namespace

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto uc = static_cast<unsigned char>(ch);
    if (uc < 0x80 && std::isspace(uc)) {
      flush();
    } else if (kPunctuation.find(ch) != std::string_view::npos) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(uc < 0x80 ? static_cast<char>(std::tolower(uc)) : ch);
    }
  }
  flush();
  return out;
}

std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const auto& name : kSpecialNames) push(name);
}

void Vocabulary::push(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<Tokens>& corpus, int max_size) {
  if (max_size <= kFirstTokenId) {
    throw ParameterError("vocabulary size must exceed " + std::to_string(kFirstTokenId) +
                         ", got " + std::to_string(max_size));
  }
  std::map<std::string, std::int64_t> counts;
  for (const auto& sentence : corpus) {
    for (const auto& tok : sentence) ++counts[tok];
  }
  // a literal "<pad>" in the text would shadow the special id
  for (const auto& name : kSpecialNames) counts.erase(name);
  if (counts.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto keep = std::min<std::size_t>(ranked.size(), max_size - kFirstTokenId);
  Vocabulary v;
  for (std::size_t i = 0; i < keep; ++i) v.push(ranked[i].first);
  return v;
}

Vocabulary Vocabulary::from_tokens(const Tokens& ordinary_tokens) {
  Vocabulary v;
  for (const auto& tok : ordinary_tokens) {
    if (tok.empty() || v.index_.count(tok) != 0) {
      throw DataError("vocabulary token '" + tok + "' is empty or duplicated");
    }
    v.push(tok);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary file " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kFileHeader) {
    throw DataError("vocabulary file " + path.string() + " lacks header '" +
                    std::string(kFileHeader) + "'");
  }
  Tokens tokens;
  while (std::getline(in, line)) tokens.push_back(line);
  try {
    return from_tokens(tokens);
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary file " + path.string());
  out << kFileHeader << '\n';
  for (std::size_t i = kFirstTokenId; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw DataError("failed writing vocabulary file " + path.string());
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() || it->second < kFirstTokenId ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw DimensionError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

int TokenSequence::content_length() const {
  return static_cast<int>(std::count_if(ids.begin(), ids.end(), [](int i) { return i != kPad; }));
}

TokenSequence encode(const Tokens& tokens, const Vocabulary& vocab, int max_len) {
  if (max_len < 3) throw ParameterError("max_len must be at least 3, got " + std::to_string(max_len));
  TokenSequence seq;
  seq.ids.reserve(static_cast<std::size_t>(max_len));
  seq.ids.push_back(kBos);
  const auto content = std::min<std::size_t>(tokens.size(), static_cast<std::size_t>(max_len - 2));
  for (std::size_t i = 0; i < content; ++i) seq.ids.push_back(vocab.id(tokens[i]));
  seq.ids.push_back(kEos);
  seq.ids.resize(static_cast<std::size_t>(max_len), kPad);
  return seq;
}

Tokens decode_tokens(const TokenSequence& seq, const Vocabulary& vocab) {
  Tokens out;
  for (int id : seq.ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

std::string decode(const TokenSequence& seq, const Vocabulary& vocab) {
  return join_tokens(decode_tokens(seq, vocab));
}

std::string_view corruption_kind_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::kDuplicateToken:
      return "duplicate_token";
    case CorruptionKind::kDropToken:
      return "drop_token";
    case CorruptionKind::kSwapAdjacent:
      return "swap_adjacent";
    case CorruptionKind::kSubstituteFunctionWord:
      return "substitute_function_word";
  }
  return "?";
}

std::vector<CorruptionRule> parse_corruption_rules(std::string_view spec) {
  std::vector<CorruptionRule> rules;
  if (spec == "none" || spec.empty()) return rules;
  std::stringstream ss{std::string(spec)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ConfigError("corruption rule '" + item + "' is not kind:probability");
    }
    const std::string name = item.substr(0, colon);
    CorruptionRule rule{};
    bool known = false;
    for (auto kind : {CorruptionKind::kDuplicateToken, CorruptionKind::kDropToken,
                      CorruptionKind::kSwapAdjacent, CorruptionKind::kSubstituteFunctionWord}) {
      if (corruption_kind_name(kind) == name) {
        rule.kind = kind;
        known = true;
      }
    }
    if (!known) throw ConfigError("unknown corruption rule '" + name + "'");
    try {
      std::size_t used = 0;
      const std::string value = item.substr(colon + 1);
      rule.probability = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw ConfigError("corruption rule '" + item + "' has a malformed probability");
    }
    if (!(rule.probability >= 0.0 && rule.probability <= 1.0)) {
      throw ConfigError("corruption probability for " + name + " must lie in [0, 1]");
    }
    rules.push_back(rule);
  }
  return rules;
}

std::string format_corruption_rules(const std::vector<CorruptionRule>& rules) {
  if (rules.empty()) return "none";
  std::ostringstream os;
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (i) os << ',';
    os << corruption_kind_name(rules[i].kind) << ':' << rules[i].probability;
  }
  return os.str();
}

std::vector<CorruptionRule> default_corruption_rules() {
  return {{CorruptionKind::kDuplicateToken, 0.05},
          {CorruptionKind::kDropToken, 0.03},
          {CorruptionKind::kSwapAdjacent, 0.03},
          {CorruptionKind::kSubstituteFunctionWord, 0.25}};
}

std::string_view function_word_partner(std::string_view word) {
  for (const auto& [from, to] : kFunctionWords) {
    if (from == word) return to;
  }
  return {};
}

Tokens corrupt(const Tokens& tokens, const std::vector<CorruptionRule>& rules, std::uint64_t seed,
               CorruptionStats* stats) {
  for (const auto& rule : rules) {
    if (!(rule.probability >= 0.0 && rule.probability <= 1.0)) {
      throw ParameterError("corruption probability must lie in [0, 1]");
    }
  }
  if (stats) {
    stats->applied.resize(rules.size(), 0);
    stats->eligible.resize(rules.size(), 0);
  }
  Rng rng(seed);
  Tokens current = tokens;
  for (std::size_t r = 0; r < rules.size(); ++r) {
    const auto& rule = rules[r];
    std::int64_t applied = 0, eligible = 0;
    Tokens next;
    next.reserve(current.size() * 2);
    switch (rule.kind) {
      case CorruptionKind::kDuplicateToken:
        for (const auto& tok : current) {
          next.push_back(tok);
          ++eligible;
          if (rng.uniform() < rule.probability) {
            next.push_back(tok);
            ++applied;
          }
        }
        break;
      case CorruptionKind::kDropToken:
        for (std::size_t i = 0; i < current.size(); ++i) {
          ++eligible;
          const bool fire = rng.uniform() < rule.probability;
          const bool last_survivor = next.empty() && i + 1 == current.size();
          if (fire && !last_survivor) {
            ++applied;
          } else {
            next.push_back(current[i]);
          }
        }
        break;
      case CorruptionKind::kSwapAdjacent:
        for (std::size_t i = 0; i < current.size();) {
          if (i + 1 < current.size()) {
            ++eligible;
            if (rng.uniform() < rule.probability) {
              next.push_back(current[i + 1]);
              next.push_back(current[i]);
              ++applied;
              i += 2;
              continue;
            }
          }
          next.push_back(current[i]);
          ++i;
        }
        break;
      case CorruptionKind::kSubstituteFunctionWord:
        for (const auto& tok : current) {
          const auto partner = function_word_partner(tok);
          if (!partner.empty()) {
            ++eligible;
            if (rng.uniform() < rule.probability) {
              next.emplace_back(partner);
              ++applied;
              continue;
            }
          }
          next.push_back(tok);
        }
        break;
    }
    current = std::move(next);
    if (stats) {
      stats->applied[r] += applied;
      stats->eligible[r] += eligible;
    }
  }
  return current;
}

std::vector<Tokens> corrupt_corpus(const std::vector<Tokens>& corpus,
                                   const std::vector<CorruptionRule>& rules, std::uint64_t seed) {
  std::vector<Tokens> out;
  out.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    out.push_back(corrupt(corpus[i], rules, Rng::derive(seed, static_cast<std::uint64_t>(i))));
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  if (in.bad()) throw DataError("I/O error while reading " + path.string());
  return lines;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& line : lines) out << line << '\n';
  if (!out) throw DataError("I/O error while writing " + path.string());
}

std::vector<Tokens> load_corpus(const std::filesystem::path& path) {
  std::vector<Tokens> corpus;
  bool any = false;
  for (const auto& line : read_lines(path)) {
    corpus.push_back(tokenize(line));
    any = any || !corpus.back().empty();
  }
  if (!any) throw DataError("corpus " + path.string() + " contains no sentences");
  return corpus;
}

TokenSequence Batch::awkward_row(int b) const {
  const auto start = awkward.begin() + static_cast<std::ptrdiff_t>(b) * max_len;
  return TokenSequence{{start, start + max_len}};
}

TokenSequence Batch::fluent_row(int b) const {
  const auto start = fluent.begin() + static_cast<std::ptrdiff_t>(b) * max_len;
  return TokenSequence{{start, start + max_len}};
}

std::vector<TokenSequence> Batch::awkward_rows() const {
  std::vector<TokenSequence> rows;
  for (int b = 0; b < size; ++b) rows.push_back(awkward_row(b));
  return rows;
}

Batch make_batch(const std::vector<TokenSequence>& awkward, const std::vector<TokenSequence>& fluent) {
  if (awkward.empty() || awkward.size() != fluent.size()) {
    throw ContractError("make_batch: need equal, non-zero numbers of awkward and fluent rows");
  }
  Batch batch;
  batch.size = static_cast<int>(awkward.size());
  batch.max_len = awkward.front().length();
  for (std::size_t i = 0; i < awkward.size(); ++i) {
    if (awkward[i].length() != batch.max_len || fluent[i].length() != batch.max_len) {
      throw DimensionError("make_batch: sequences must share one padded length");
    }
    batch.awkward.insert(batch.awkward.end(), awkward[i].ids.begin(), awkward[i].ids.end());
    batch.fluent.insert(batch.fluent.end(), fluent[i].ids.begin(), fluent[i].ids.end());
  }
  batch.mask.reserve(batch.awkward.size());
  for (int id : batch.awkward) batch.mask.push_back(id != kPad);
  return batch;
}

std::vector<Batch> make_batches(const std::vector<TokenSequence>& awkward,
                                const std::vector<TokenSequence>& fluent, int batch_size,
                                std::uint64_t shuffle_seed) {
  if (batch_size <= 0) throw ParameterError("batch size must be positive");
  if (awkward.size() != fluent.size()) {
    throw DataError("awkward and fluent corpora differ in length (" +
                    std::to_string(awkward.size()) + " vs " + std::to_string(fluent.size()) + ")");
  }
  if (awkward.empty()) throw DataError("cannot batch an empty corpus");
  std::vector<std::size_t> order(awkward.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(shuffle_seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const auto end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<TokenSequence> a, f;
    for (std::size_t i = start; i < end; ++i) {
      a.push_back(awkward[order[i]]);
      f.push_back(fluent[order[i]]);
    }
    batches.push_back(make_batch(a, f));
  }
  return batches;
}

namespace {

class PhraseGrammar {
 public:
  explicit PhraseGrammar(std::uint64_t seed) : rng_(seed) {}

  std::string sentence() {
    Tokens out;
    switch (rng_.below(6)) {
      case 0:
        clause(out);
        break;
      case 1:
        prepositional(out);
        out.push_back(",");
        clause(out);
        break;
      case 2:
        clause(out);
        out.push_back("and");
        verb_phrase(out, rng_.below(2) == 0);
        break;
      case 3:
        clause(out);
        prepositional(out);
        break;
      case 4:
        out.push_back(pick(kOpeners));
        clause(out);
        break;
      default:
        numeric(out);
        break;
    }
    out.push_back(rng_.below(8) == 0 ? "!" : ".");
    return join_tokens(out);
  }

 private:
  static constexpr std::array<std::string_view, 40> kNouns = {
      "cat",     "dog",      "teacher", "student", "city",    "river",   "house",   "garden",
      "market",  "doctor",   "child",   "friend",  "village", "road",    "school",  "farmer",
      "book",    "letter",   "program", "family",  "officer", "worker",  "car",     "bridge",
      "window",  "monument", "company", "report",  "island",  "museum",  "train",   "painter",
      "singer",  "kitchen",  "library", "country", "mountain","forest",  "nurse",   "neighbor"};
  static constexpr std::array<std::string_view, 24> kAdjectives = {
      "small",  "large",    "old",     "young",   "quiet",  "busy",   "bright",  "dark",
      "happy",  "careful",  "famous",  "local",   "new",    "green",  "tired",   "strong",
      "simple", "beautiful","crowded", "ancient", "modern", "warm",   "cold",    "friendly"};
  static constexpr std::array<std::string_view, 24> kPastVerbs = {
      "visited", "found",    "built",    "painted", "opened",  "closed",  "watched", "helped",
      "cleaned", "followed", "reported", "moved",   "bought",  "sold",    "carried", "described",
      "restored","studied",  "reached",  "left",    "saw",     "met",     "wrote",   "read"};
  static constexpr std::array<std::string_view, 16> kIngVerbs = {
      "working", "waiting", "walking", "reading", "singing", "sleeping", "studying", "running",
      "growing", "talking", "playing", "cooking", "writing", "resting",  "moving",   "traveling"};
  static constexpr std::array<std::string_view, 9> kPrepositions = {
      "in", "on", "to", "for", "near", "with", "from", "under", "behind"};
  static constexpr std::array<std::string_view, 8> kOpeners = {
      "yesterday", "today", "later", "then", "often", "sometimes", "recently", "finally"};
  static constexpr std::array<std::string_view, 6> kAdverbs = {
      "very", "quite", "rather", "always", "still", "really"};

  template <std::size_t N>
  std::string pick(const std::array<std::string_view, N>& words) {
    return std::string(words[rng_.below(N)]);
  }

  static std::string plural_of(const std::string& noun) {
    if (noun == "child") return "children";
    if (noun.back() == 'y' && std::string_view("aeiou").find(noun[noun.size() - 2]) ==
                                  std::string_view::npos) {
      return noun.substr(0, noun.size() - 1) + "ies";
    }
    return noun + "s";
  }

  static bool starts_with_vowel(const std::string& w) {
    return !w.empty() && std::string_view("aeiou").find(w.front()) != std::string_view::npos;
  }

  void noun_phrase(Tokens& out, bool plural) {
    std::string adjective = rng_.below(3) == 0 ? pick(kAdjectives) : "";
    std::string noun = pick(kNouns);
    if (plural) noun = plural_of(noun);
    const std::string& head = adjective.empty() ? noun : adjective;
    if (plural) {
      out.push_back(rng_.below(3) == 0 ? "many" : "the");
    } else if (rng_.below(2) == 0) {
      out.push_back("the");
    } else {
      out.push_back(starts_with_vowel(head) ? "an" : "a");
    }
    if (!adjective.empty()) out.push_back(adjective);
    out.push_back(noun);
  }

  void prepositional(Tokens& out) {
    out.push_back(pick(kPrepositions));
    noun_phrase(out, rng_.below(3) == 0);
  }

  void verb_phrase(Tokens& out, bool plural) {
    switch (rng_.below(4)) {
      case 0:
        out.push_back(plural ? "are" : "is");
        if (rng_.below(2) == 0) out.push_back(pick(kAdverbs));
        out.push_back(pick(kAdjectives));
        break;
      case 1:
        out.push_back(plural ? "are" : "is");
        out.push_back(pick(kIngVerbs));
        if (rng_.below(2) == 0) prepositional(out);
        break;
      case 2:
        out.push_back(pick(kPastVerbs));
        noun_phrase(out, rng_.below(2) == 0);
        break;
      default:
        out.push_back(pick(kPastVerbs));
        noun_phrase(out, rng_.below(2) == 0);
        prepositional(out);
        break;
    }
  }

  void clause(Tokens& out) {
    const bool plural = rng_.below(2) == 0;
    noun_phrase(out, plural);
    verb_phrase(out, plural);
  }

  void numeric(Tokens& out) {
    for (const char* w : {"one", "is", "the"}) out.push_back(w);
    out.push_back(rng_.below(2) == 0 ? "increase" : "decline");
    for (const char* w : {"in", "the", "number", "of"}) out.push_back(w);
    if (rng_.below(2) == 0) out.push_back(pick(kAdjectives));
    out.push_back(plural_of(pick(kNouns)));
    out.push_back("aged");
    out.push_back("over");
    out.push_back(std::to_string(18 + rng_.below(60)));
  }

  Rng rng_;
};

}  // namespace

std::vector<std::string> synthesize_sentences(int count, std::uint64_t seed) {
  if (count < 0) throw ParameterError("sentence count must be non-negative");
  PhraseGrammar grammar(seed);
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(grammar.sentence());
  return out;
}

}  // namespace fluencygan
