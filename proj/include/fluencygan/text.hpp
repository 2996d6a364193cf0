#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fluencygan {

using Tokens = std::vector<std::string>;

/// Special token ids; ordinary tokens start at kFirstTokenId.
enum SpecialToken : int { kPad = 0, kBos = 1, kEos = 2, kUnk = 3 };
inline constexpr int kFirstTokenId = 4;

/// Lowercases, splits on whitespace, and detaches each character of
/// .,!?;:'"()- as its own token.
Tokens tokenize(std::string_view text);

std::string join_tokens(const Tokens& tokens);

class Vocabulary {
 public:
  static constexpr std::string_view kFileHeader = "#fluencygan-vocab v1";

  /// Keeps the (max_size - 4) most frequent tokens, ties broken
  /// lexicographically.
  static Vocabulary build(const std::vector<Tokens>& corpus, int max_size = 2000);
  static Vocabulary from_tokens(const Tokens& ordinary_tokens);

  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.contains(token); }
  int size() const { return static_cast<int>(tokens_.size()); }
  /// Ordinary tokens in id order (ids 4, 5, ...).
  Tokens ordinary_tokens() const { return {tokens_.begin() + kFirstTokenId, tokens_.end()}; }

 private:
  Vocabulary();
  void push(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// Integer-encoded sentence, BOS ... EOS PAD* when produced by encode().
struct TokenSequence {
  std::vector<int> ids;

  int length() const { return static_cast<int>(ids.size()); }
  /// Number of non-PAD positions.
  int content_length() const;
  bool operator==(const TokenSequence&) const = default;
};

/// BOS, ids, EOS, then PAD up to max_len; content is truncated so EOS fits.
TokenSequence encode(const Tokens& tokens, const Vocabulary& vocab, int max_len);
/// Drops BOS/EOS/PAD (stopping at the first EOS) and joins with spaces;
/// UNK is rendered as "<unk>".
std::string decode(const TokenSequence& seq, const Vocabulary& vocab);
Tokens decode_tokens(const TokenSequence& seq, const Vocabulary& vocab);

enum class CorruptionKind { kDuplicateToken, kDropToken, kSwapAdjacent, kSubstituteFunctionWord };

struct CorruptionRule {
  CorruptionKind kind;
  double probability;
};

std::string_view corruption_kind_name(CorruptionKind kind);
/// "none" or comma-separated kind:probability pairs.
std::vector<CorruptionRule> parse_corruption_rules(std::string_view spec);
std::string format_corruption_rules(const std::vector<CorruptionRule>& rules);
std::vector<CorruptionRule> default_corruption_rules();

/// Applied / eligible position counts per rule, in rule order.
struct CorruptionStats {
  std::vector<std::int64_t> applied;
  std::vector<std::int64_t> eligible;
};

/// Rules run in order, each as one left-to-right pass that fires per eligible
/// position with the rule's probability. A drop never empties the sentence.
Tokens corrupt(const Tokens& tokens, const std::vector<CorruptionRule>& rules,
               std::uint64_t seed, CorruptionStats* stats = nullptr);

/// Corrupts line i with seed Rng::derive(seed, i), so each line's output is
/// independent of the rest of the corpus.
std::vector<Tokens> corrupt_corpus(const std::vector<Tokens>& corpus,
                                   const std::vector<CorruptionRule>& rules, std::uint64_t seed);

/// The function-word partner used by substitute_function_word, or empty.
std::string_view function_word_partner(std::string_view word);

/// One tokenized sentence per line. Blank lines are kept as empty token
/// lists so files stay line-aligned.
std::vector<Tokens> load_corpus(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);
void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);

/// Aligned awkward/fluent id matrices, row-major B x max_len.
struct Batch {
  int size = 0;
  int max_len = 0;
  std::vector<int> awkward;
  std::vector<int> fluent;
  /// True on non-PAD positions of `awkward`.
  std::vector<std::uint8_t> mask;

  TokenSequence awkward_row(int b) const;
  TokenSequence fluent_row(int b) const;
  std::vector<TokenSequence> awkward_rows() const;
};

Batch make_batch(const std::vector<TokenSequence>& awkward, const std::vector<TokenSequence>& fluent);

/// Shuffles pair indices deterministically from `shuffle_seed` and cuts them
/// into batches of `batch_size`; the final partial batch is kept.
std::vector<Batch> make_batches(const std::vector<TokenSequence>& awkward,
                                const std::vector<TokenSequence>& fluent, int batch_size,
                                std::uint64_t shuffle_seed);

/// Grammatical English-like sentences drawn from a small phrase grammar.
std::vector<std::string> synthesize_sentences(int count, std::uint64_t seed);

}  // namespace fluencygan
