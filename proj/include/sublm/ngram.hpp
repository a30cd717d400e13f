#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sublm/subword.hpp"

namespace sublm {

/// Sliding-window n-gram counts for orders 1..3. Windows never cross
/// document boundaries; a document is a <s>...</s> run of the id stream
/// (streams without markers count as one document). Context marginals are
/// maintained per window length, so marginal(ctx) = sum_w count(ctx, w)
/// holds exactly in integer arithmetic.
class NgramCounts {
 public:
  static constexpr int kMaxOrder = 3;

  explicit NgramCounts(int order);
  NgramCounts() : NgramCounts(1) {}

  int order() const { return order_; }

  /// Count of the exact k-gram (k = gram.size() <= order); 0 when absent.
  std::uint64_t count(std::span<const TokenId> gram) const;
  /// Total windows extending this context: sum_w count(context, w).
  /// context.size() may be 0 (total unigram windows) up to order-1.
  std::uint64_t marginal(std::span<const TokenId> context) const;

  /// Adds every window of every length k <= order within one document.
  void add_document(std::span<const TokenId> doc);
  /// Exact integer merge of another count table of the same order.
  void merge(const NgramCounts& other);

  /// Stored k-grams of one length in deterministic (lexicographic) order.
  void for_each(int k,
                const std::function<void(std::span<const TokenId>,
                                         std::uint64_t)>& fn) const;

  bool operator==(const NgramCounts&) const = default;

  /// TSV rows `k<TAB>id_1..id_k<TAB>count`, plus leading `#key value`
  /// metadata lines; marginals are recomputed on load.
  void save(const std::filesystem::path& path) const;
  static NgramCounts load(const std::filesystem::path& path);

  std::map<std::string, std::string> metadata;

 private:
  struct Key {
    std::array<TokenId, kMaxOrder> t;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  static Key make_key(std::span<const TokenId> gram);

  int order_ = 1;
  // tables_[k-1]: k-gram -> count; marginals_[k-1]: (k-1)-context -> total
  std::array<std::unordered_map<Key, std::uint64_t, KeyHash>, kMaxOrder> tables_;
  std::array<std::unordered_map<Key, std::uint64_t, KeyHash>, kMaxOrder> marginals_;
};

/// Splits an id stream into documents (see NgramCounts) and counts all
/// windows of length 1..order.
NgramCounts count_ngrams(std::span<const TokenId> ids, int order);

/// count(context, w) / marginal(context). Returns 0 for an unseen pair
/// under a seen context; throws std::domain_error when the context itself
/// was never observed (callers interpolate around this).
double mle_prob(const NgramCounts& counts, std::span<const TokenId> context,
                TokenId w);

/// Which frequency drives the interpolation bucket for a position.
enum class QtMode {
  PrevWord,  // frequency of w_{t-1} as a bigram context
  PrevPair,  // frequency of the (w_{t-2}, w_{t-1}) pair when available
};

/// Frequency-bucketed mixture weights for the interpolated bigram:
/// bucket i covers q in [bucket_lo[i], bucket_lo[i+1]). Each row is a
/// point on the 2-simplex.
struct InterpolationWeights {
  struct Alpha {
    double a0 = 1.0 / 3, a1 = 1.0 / 3, a2 = 1.0 / 3;  // uniform, unigram, bigram
  };
  std::vector<std::uint64_t> bucket_lo;  // ascending, first element 0
  std::vector<Alpha> alphas;             // one per bucket

  static std::vector<std::uint64_t> default_buckets() { return {0, 1, 10, 100}; }
  static InterpolationWeights uniform(std::vector<std::uint64_t> bucket_lo);

  std::size_t bucket_of(std::uint64_t q) const;
  /// Throws std::invalid_argument unless every row is on the simplex
  /// within 1e-12 with non-negative entries and buckets are well-formed.
  void validate() const;

  /// TSV rows `bucket_lo<TAB>alpha0<TAB>alpha1<TAB>alpha2` plus leading
  /// `#key value` metadata lines.
  void save(const std::filesystem::path& path) const;
  static InterpolationWeights load(const std::filesystem::path& path);

  std::map<std::string, std::string> metadata;
};

/// a0/|V| + a1 * unigram MLE + a2 * bigram MLE, weights chosen by the
/// bucket of the context frequency. The bigram term is 0 when the context
/// is unseen. `context` holds the most recent tokens, last = w_{t-1};
/// PrevPair uses the pair count when two tokens are given.
double interpolated_prob(const NgramCounts& counts,
                         const InterpolationWeights& weights,
                         std::span<const TokenId> context, TokenId w,
                         std::size_t vocab_size,
                         QtMode qt = QtMode::PrevWord);

/// Per-bucket EM over held-out events maximizing held-out log-likelihood
/// (deleted interpolation). Buckets with no held-out events fall back to
/// weights fitted globally over all events.
InterpolationWeights fit_weights(const NgramCounts& counts,
                                 std::span<const TokenId> heldout,
                                 std::vector<std::uint64_t> bucket_lo,
                                 std::size_t vocab_size,
                                 QtMode qt = QtMode::PrevWord,
                                 std::size_t max_iterations = 200,
                                 double rel_tolerance = 1e-12,
                                 std::vector<double>* ll_trace = nullptr);

/// exp(mean negative log interpolated probability) over every predicted
/// position of the test stream: eos is predicted, bos never is. A zero
/// probability event yields +infinity rather than an error.
double ngram_perplexity(const NgramCounts& counts,
                        const InterpolationWeights& weights,
                        std::span<const TokenId> test, std::size_t vocab_size,
                        QtMode qt = QtMode::PrevWord);

/// Documents of an id stream: <s> opens one, </s> closes one, text without
/// markers is one document. Shared by counting, fitting and evaluation.
std::vector<std::span<const TokenId>> split_documents(
    std::span<const TokenId> ids);

/// Positions a language model is scored on: every token except <s>.
std::size_t count_predicted_positions(std::span<const TokenId> ids);

}  // namespace sublm
