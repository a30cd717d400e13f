#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sublm/corpus.hpp"
#include "sublm/neural.hpp"

namespace sublm {

enum class Granularity { Subword, Word, BigramWord };

std::string granularity_name(Granularity g);

struct EvalReport {
  std::string model_name;
  Granularity granularity = Granularity::Subword;
  double perplexity = 0.0;
  std::size_t token_count = 0;  // predicted positions
  std::map<std::string, std::string> metadata;  // seed, config_hash, ...
};

/// exp(mean token NLL) over the id stream, eval mode, state carried across
/// windows, <s> never a predicted position, </s> always one. The vocab must
/// match the model (size always checked; content hash checked when the
/// caller passes the hash recorded at training time).
EvalReport neural_perplexity(const NeuralLMParams& params,
                             const SubwordVocab& vocab,
                             std::span<const TokenId> test_ids,
                             std::string model_name,
                             std::optional<std::string> expected_vocab_hash =
                                 std::nullopt);

/// Same, but encodes the corpus first (one <s>...</s> run per document).
EvalReport neural_perplexity(const NeuralLMParams& params,
                             const SubwordVocab& vocab, const Corpus& test,
                             std::string model_name,
                             std::optional<std::string> expected_vocab_hash =
                                 std::nullopt);

struct GenerationConfig {
  std::string prompt;
  std::size_t max_tokens = 100;  // generated tokens, prompt excluded
  enum class Strategy { Greedy, TemperatureSample };
  Strategy strategy = Strategy::TemperatureSample;
  double temperature = 0.8;
  std::uint64_t seed = 0;
};

/// Feeds the encoded prompt, then extends it token by token (argmax, or
/// softmax of logits/temperature sampled with a seeded generator) until
/// </s> or max_tokens. Returns the decoded text, prompt included.
std::string generate(const NeuralLMParams& params, const SubwordVocab& vocab,
                     const GenerationConfig& gen);

/// CSV `model,granularity,perplexity,token_count,seed,config_hash`, input
/// order preserved.
std::string reports_csv(const std::vector<EvalReport>& reports);

/// Two-column aligned table sorted ascending by perplexity; appends a
/// footnote when the rows mix token granularities (their perplexities are
/// not directly comparable).
std::string comparison_table(std::vector<EvalReport> reports);

}  // namespace sublm
