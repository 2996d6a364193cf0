#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fluencygan/checkpoint.hpp"
#include "fluencygan/generator.hpp"
#include "fluencygan/text.hpp"

namespace fluencygan {

/// Unique-token precision |set(c) ∩ set(r)| / |set(c)|; 0 for an empty candidate.
double bleu_bow(const Tokens& candidate, const Tokens& reference);

/// Geometric mean of clipped n-gram precisions for n = 1..max_n times the
/// brevity penalty exp(1 - |r|/|c|) when |c| < |r|. Zero precisions are
/// replaced by 1e-9; orders longer than the candidate are left out of the mean.
double bleu_ngram(const Tokens& candidate, const Tokens& reference, int max_n = 4);

/// dot(a, b) / (|a| |b|); 0 with a warning on stderr when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

/// Matching positions after BOS over the reference's non-PAD positions
/// (EOS included), pooled across the corpus.
double reconstruction_accuracy(const std::vector<TokenSequence>& outputs,
                               const std::vector<TokenSequence>& references);

/// Matching positions after BOS divided by the longer of the two non-PAD
/// lengths, so truncated or rambling outputs both score below 1.
double token_overlap(const TokenSequence& output, const TokenSequence& reference);

/// Fraction of outputs identical to their references.
double exact_match_rate(const std::vector<TokenSequence>& outputs,
                        const std::vector<TokenSequence>& references);

struct EvalPair {
  std::string awkward;
  std::string reference;
};

/// "awkward<TAB>reference" per line; blank lines are skipped.
std::vector<EvalPair> read_eval_pairs(const std::filesystem::path& path);

struct SentenceScore {
  std::string input;
  std::string output;
  std::string reference;
  double bleu_bow = 0;
  double bleu_ngram = 0;
  double cosine = 0;
};

struct EvalReport {
  KeyValues config;
  std::vector<SentenceScore> sentences;
  double mean_bleu_bow = 0;
  double mean_bleu_ngram = 0;
  double mean_cosine = 0;

  /// Recompute the means from the sentence records.
  void aggregate();
  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
};

/// Greedy-decodes every awkward input and scores it against its reference.
/// Cosine compares the model's own sentence embeddings of output and reference.
template <typename S>
EvalReport evaluate_corpus(Generator<S>& model, const Vocabulary& vocab,
                           const std::vector<EvalPair>& pairs, KeyValues config = {});

}  // namespace fluencygan
