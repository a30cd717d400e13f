#include "sublm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "sublm/sched.hpp"
#include "sublm/util.hpp"

namespace sublm {

std::string granularity_name(Granularity g) {
  switch (g) {
    case Granularity::Subword: return "subword";
    case Granularity::Word: return "word";
    case Granularity::BigramWord: return "bigram-word";
  }
  return "?";
}

namespace {
void check_vocab(const NeuralLMParams& params, const SubwordVocab& vocab,
                 const std::optional<std::string>& expected_hash) {
  if (params.config.vocab_size != vocab.size())
    throw std::runtime_error(
        "vocab/config mismatch: model expects " +
        std::to_string(params.config.vocab_size) + " tokens, vocabulary has " +
        std::to_string(vocab.size()));
  if (expected_hash &&
      *expected_hash != std::to_string(vocab.content_hash()))
    throw std::runtime_error(
        "vocab/config mismatch: vocabulary hash " +
        std::to_string(vocab.content_hash()) +
        " differs from the one recorded at training time (" + *expected_hash +
        ")");
}
}  // namespace

EvalReport neural_perplexity(const NeuralLMParams& params,
                             const SubwordVocab& vocab,
                             std::span<const TokenId> test_ids,
                             std::string model_name,
                             std::optional<std::string> expected_vocab_hash) {
  check_vocab(params, vocab, expected_vocab_hash);
  const BatchedStream stream = make_batches(test_ids, 1);
  const DropMasks none = DropMasks::none(params.config, 1);
  LSTMState state = LSTMState::zeros(params.config, 1);
  double nll = 0.0;
  std::size_t n = 0;
  for (std::size_t w = 0; w < stream.num_windows(params.config.bptt_len); ++w) {
    ForwardResult f =
        forward_sequence(stream.inputs(w, params.config.bptt_len), params,
                         state, none, RunMode::Eval);
    const auto [sum, count] =
        nll_sum(f.logits, stream.targets(w, params.config.bptt_len),
                SubwordVocab::kBos);
    nll += sum;
    n += count;
    state = std::move(f.state);
  }
  if (n == 0)
    throw std::invalid_argument("neural_perplexity: nothing to score");

  EvalReport r;
  r.model_name = std::move(model_name);
  r.granularity = vocab.mode() == TokenizerMode::Word ? Granularity::Word
                                                      : Granularity::Subword;
  r.perplexity = std::exp(nll / static_cast<double>(n));
  r.token_count = n;
  return r;
}

EvalReport neural_perplexity(const NeuralLMParams& params,
                             const SubwordVocab& vocab, const Corpus& test,
                             std::string model_name,
                             std::optional<std::string> expected_vocab_hash) {
  std::vector<TokenId> ids;
  for (const Document& doc : test.documents) {
    const std::vector<TokenId> enc = encode(doc.text, vocab, true);
    ids.insert(ids.end(), enc.begin(), enc.end());
  }
  return neural_perplexity(params, vocab, ids, std::move(model_name),
                           std::move(expected_vocab_hash));
}

std::string generate(const NeuralLMParams& params, const SubwordVocab& vocab,
                     const GenerationConfig& gen) {
  if (gen.max_tokens < 1)
    throw std::invalid_argument("generate: max_tokens must be >= 1");
  if (gen.temperature <= 0)
    throw std::invalid_argument("generate: temperature must be > 0");
  check_vocab(params, vocab, std::nullopt);

  // prompt without the closing </s>, so the model continues instead of stopping
  std::vector<TokenId> ids = encode(gen.prompt, vocab, true);
  ids.pop_back();

  const DropMasks none = DropMasks::none(params.config, 1);
  LSTMState state = LSTMState::zeros(params.config, 1);
  Rng rng(derive_seed(gen.seed, "sample"));

  auto feed = [&](std::span<const TokenId> tokens) {
    IdWindow w;
    w.steps = tokens.size();
    w.lanes = 1;
    w.ids.assign(tokens.begin(), tokens.end());
    ForwardResult f = forward_sequence(w, params, state, none, RunMode::Eval);
    state = std::move(f.state);
    return Eigen::VectorXd(f.logits.col(f.logits.cols() - 1));
  };

  Eigen::VectorXd logits = feed(ids);
  for (std::size_t k = 0; k < gen.max_tokens; ++k) {
    TokenId next = 0;
    if (gen.strategy == GenerationConfig::Strategy::Greedy) {
      Eigen::Index arg = 0;
      logits.maxCoeff(&arg);
      next = static_cast<TokenId>(arg);
    } else {
      const Eigen::ArrayXd scaled = logits.array() / gen.temperature;
      const Eigen::ArrayXd p = (scaled - scaled.maxCoeff()).exp();
      const double total = p.sum();
      double u = rng.uniform() * total;
      Eigen::Index pick = p.size() - 1;
      for (Eigen::Index i = 0; i < p.size(); ++i) {
        u -= p(i);
        if (u <= 0) {
          pick = i;
          break;
        }
      }
      next = static_cast<TokenId>(pick);
    }
    ids.push_back(next);
    if (next == SubwordVocab::kEos) break;
    const TokenId fed = next;
    logits = feed(std::span<const TokenId>(&fed, 1));
  }
  return decode(ids, vocab);
}

std::string reports_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "model,granularity,perplexity,token_count,seed,config_hash\n";
  for (const EvalReport& r : reports) {
    const auto meta = [&](const char* key) {
      auto it = r.metadata.find(key);
      return it == r.metadata.end() ? std::string() : it->second;
    };
    out << r.model_name << ',' << granularity_name(r.granularity) << ','
        << format_double(r.perplexity) << ',' << r.token_count << ','
        << meta("seed") << ',' << meta("config_hash") << '\n';
  }
  return out.str();
}

std::string comparison_table(std::vector<EvalReport> reports) {
  if (reports.empty())
    throw std::invalid_argument("comparison_table: no reports");
  std::stable_sort(reports.begin(), reports.end(),
                   [](const EvalReport& a, const EvalReport& b) {
                     return a.perplexity < b.perplexity;
                   });
  bool mixed = false;
  for (const EvalReport& r : reports)
    if (r.granularity != reports.front().granularity) mixed = true;

  std::size_t name_width = std::string("Model").size();
  for (const EvalReport& r : reports) {
    std::string label = r.model_name;
    if (mixed) label += " [" + granularity_name(r.granularity) + "]";
    name_width = std::max(name_width, label.size());
  }

  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_width)) << "Model"
      << "  Perplexity\n";
  out << std::string(name_width, '-') << "  ----------\n";
  out << std::fixed << std::setprecision(2);
  for (const EvalReport& r : reports) {
    std::string label = r.model_name;
    if (mixed) label += " [" + granularity_name(r.granularity) + "]";
    out << std::left << std::setw(static_cast<int>(name_width)) << label
        << "  " << r.perplexity << '\n';
  }
  if (mixed)
    out << "note: rows mix token granularities; perplexities over different "
           "token inventories are not directly comparable\n";
  return out.str();
}

}  // namespace sublm
