#include "fluencygan/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "fluencygan/errors.hpp"

namespace fluencygan {

namespace {

constexpr double kZeroPrecision = 1e-9;

std::map<Tokens, int> ngram_counts(const Tokens& tokens, int n) {
  std::map<Tokens, int> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
    ++counts[Tokens(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                    tokens.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return counts;
}

}  // namespace

double bleu_bow(const Tokens& candidate, const Tokens& reference) {
  const std::set<std::string> cand(candidate.begin(), candidate.end());
  if (cand.empty()) return 0.0;
  const std::set<std::string> ref(reference.begin(), reference.end());
  const auto shared = std::count_if(cand.begin(), cand.end(),
                                    [&](const std::string& t) { return ref.contains(t); });
  return static_cast<double>(shared) / static_cast<double>(cand.size());
}

double bleu_ngram(const Tokens& candidate, const Tokens& reference, int max_n) {
  if (max_n < 1) throw ParameterError("bleu_ngram: max_n must be >= 1");
  if (candidate.empty()) return 0.0;
  const int orders = std::min<int>(max_n, static_cast<int>(candidate.size()));
  double log_sum = 0;
  for (int n = 1; n <= orders; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    int clipped = 0, total = 0;
    for (const auto& [gram, count] : cand) {
      total += count;
      const auto it = ref.find(gram);
      if (it != ref.end()) clipped += std::min(count, it->second);
    }
    const double p = clipped > 0 ? static_cast<double>(clipped) / total : kZeroPrecision;
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c < r ? std::exp(1.0 - r / c) : 1.0;
  return bp * std::exp(log_sum / orders);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("cosine: vectors of length " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) {
    std::cerr << "warning: cosine of a zero vector is taken as 0\n";
    return 0.0;
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double reconstruction_accuracy(const std::vector<TokenSequence>& outputs,
                               const std::vector<TokenSequence>& references) {
  if (outputs.size() != references.size()) {
    throw DimensionError("reconstruction_accuracy: " + std::to_string(outputs.size()) +
                         " outputs vs " + std::to_string(references.size()) + " references");
  }
  std::int64_t matched = 0, total = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& out = outputs[i].ids;
    const auto& ref = references[i].ids;
    const int n = references[i].content_length();
    for (int t = 1; t < n; ++t) {
      const auto k = static_cast<std::size_t>(t);
      ++total;
      matched += k < out.size() && out[k] == ref[k];
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

double token_overlap(const TokenSequence& output, const TokenSequence& reference) {
  const int n_out = output.content_length(), n_ref = reference.content_length();
  const int span = std::max(n_out, n_ref) - 1;
  if (span <= 0) return 1.0;
  int matched = 0;
  for (int t = 1; t < std::min(n_out, n_ref); ++t) {
    const auto k = static_cast<std::size_t>(t);
    matched += output.ids[k] == reference.ids[k];
  }
  return static_cast<double>(matched) / span;
}

double exact_match_rate(const std::vector<TokenSequence>& outputs,
                        const std::vector<TokenSequence>& references) {
  if (outputs.size() != references.size() || outputs.empty()) {
    throw DimensionError("exact_match_rate: " + std::to_string(outputs.size()) + " outputs vs " +
                         std::to_string(references.size()) + " references");
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < outputs.size(); ++i) same += outputs[i] == references[i];
  return static_cast<double>(same) / static_cast<double>(outputs.size());
}

std::vector<EvalPair> read_eval_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read pair file " + path.string());
  std::vector<EvalPair> pairs;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": expected awkward<TAB>reference");
    }
    pairs.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return pairs;
}

void EvalReport::aggregate() {
  mean_bleu_bow = mean_bleu_ngram = mean_cosine = 0;
  if (sentences.empty()) return;
  for (const auto& s : sentences) {
    mean_bleu_bow += s.bleu_bow;
    mean_bleu_ngram += s.bleu_ngram;
    mean_cosine += s.cosine;
  }
  const auto n = static_cast<double>(sentences.size());
  mean_bleu_bow /= n;
  mean_bleu_ngram /= n;
  mean_cosine /= n;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  auto& cfg = j["config"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config) cfg[k] = v;
  j["means"] = {{"bleu_bow", mean_bleu_bow}, {"bleu_ngram", mean_bleu_ngram}, {"cosine", mean_cosine}};
  auto& rows = j["sentences"] = nlohmann::ordered_json::array();
  for (const auto& s : sentences) {
    rows.push_back({{"input", s.input},
                    {"output", s.output},
                    {"reference", s.reference},
                    {"bleu_bow", s.bleu_bow},
                    {"bleu_ngram", s.bleu_ngram},
                    {"cosine", s.cosine}});
  }
  return j.dump(2);
}

void EvalReport::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path.string());
  out << to_json() << '\n';
  if (!out) throw DataError("failed writing report " + path.string());
}

template <typename S>
EvalReport evaluate_corpus(Generator<S>& model, const Vocabulary& vocab,
                           const std::vector<EvalPair>& pairs, KeyValues config) {
  if (pairs.empty()) throw DataError("evaluate_corpus: no sentence pairs");
  const int max_len = model.dims().max_len;
  std::vector<TokenSequence> inputs;
  inputs.reserve(pairs.size());
  for (const auto& p : pairs) inputs.push_back(encode(tokenize(p.awkward), vocab, max_len));
  const auto outputs = model.decode_greedy(inputs, max_len);

  EvalReport report;
  report.config = std::move(config);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto reference = tokenize(pairs[i].reference);
    const auto candidate = decode_tokens(outputs[i], vocab);
    SentenceScore s;
    s.input = pairs[i].awkward;
    s.output = join_tokens(candidate);
    s.reference = pairs[i].reference;
    s.bleu_bow = bleu_bow(candidate, reference);
    s.bleu_ngram = bleu_ngram(candidate, reference);
    const auto a = model.sentence_embedding(outputs[i]);
    const auto b = model.sentence_embedding(encode(reference, vocab, max_len));
    s.cosine = cosine(a, b);
    report.sentences.push_back(std::move(s));
  }
  report.aggregate();
  return report;
}

template EvalReport evaluate_corpus<float>(Generator<float>&, const Vocabulary&,
                                           const std::vector<EvalPair>&, KeyValues);
template EvalReport evaluate_corpus<double>(Generator<double>&, const Vocabulary&,
                                            const std::vector<EvalPair>&, KeyValues);

}  // namespace fluencygan
