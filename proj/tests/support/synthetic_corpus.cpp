#include "support/synthetic_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "sublm/util.hpp"

namespace testsupport {

namespace {

using sublm::Rng;

// Cumulative-weight sampler (Zipf-like tables stay tiny, linear scan is fine
// for construction; sampling uses binary search).
class WeightedPicker {
 public:
  explicit WeightedPicker(std::vector<double> weights) {
    cum_.reserve(weights.size());
    double total = 0.0;
    for (double w : weights) {
      total += w;
      cum_.push_back(total);
    }
  }
  std::size_t pick(Rng& rng) const {
    const double r = rng.uniform(0.0, cum_.back());
    return std::lower_bound(cum_.begin(), cum_.end(), r) - cum_.begin();
  }

 private:
  std::vector<double> cum_;
};

std::vector<double> zipf_weights(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k)
    w[k] = 1.0 / std::pow(static_cast<double>(k + 3), exponent);
  return w;
}

std::vector<std::string> make_stems(std::size_t n, Rng& rng) {
  static const char* onsets[] = {"b",  "d",  "f",  "g",  "k",  "l",
                                 "m",  "n",  "p",  "r",  "s",  "t",
                                 "v",  "br", "dr", "gr", "st", "tr"};
  static const char* vowels[] = {"a", "e", "i", "o", "u", "ai", "ea", "ou"};
  static const char* codas[] = {"", "n", "r", "l", "s", "t"};
  std::set<std::string> seen;
  std::vector<std::string> stems;
  while (stems.size() < n) {
    std::string s = onsets[rng.uniform_int(std::size(onsets))];
    s += vowels[rng.uniform_int(std::size(vowels))];
    s += onsets[rng.uniform_int(std::size(onsets))];
    s += vowels[rng.uniform_int(std::size(vowels))];
    if (rng.bernoulli(0.4)) {
      s += onsets[rng.uniform_int(std::size(onsets))];
      s += vowels[rng.uniform_int(std::size(vowels))];
    }
    s += codas[rng.uniform_int(std::size(codas))];
    if (seen.insert(s).second) stems.push_back(std::move(s));
  }
  return stems;
}

}  // namespace

sublm::Corpus synthetic_corpus(std::size_t approx_bytes, std::uint64_t seed) {
  Rng rng(sublm::derive_seed(seed, "synthetic-corpus"));

  constexpr std::size_t kStems = 320;
  constexpr std::size_t kTopics = 8;
  constexpr std::size_t kTopicSpan = 80;  // stems visible per topic

  const std::vector<std::string> stems = make_stems(kStems, rng);
  const WeightedPicker stem_picker(zipf_weights(kTopicSpan, 1.07));

  // Two concord classes; the sentence-initial marker fixes which suffix
  // family every content word in the sentence takes.
  static const char* markers[2] = {"tho", "ki"};
  static const char* noun_suffix[2][4] = {{"an", "ani", "anor", "anese"},
                                          {"ul", "uli", "ulor", "ulese"}};
  static const char* verb_suffix[2][3] = {{"eth", "ethi", "ethane"},
                                          {"ash", "ashi", "ashane"}};
  const WeightedPicker noun_picker({0.45, 0.30, 0.15, 0.10});
  const WeightedPicker verb_picker({0.50, 0.30, 0.20});

  static const char* function_words[] = {"the", "of",  "and", "to",  "in",
                                         "on",  "with", "for", "as",  "by"};
  const WeightedPicker func_picker(
      zipf_weights(std::size(function_words), 1.0));

  sublm::Corpus corpus;
  std::size_t bytes = 0;
  std::int64_t next_id = 0;
  while (bytes < approx_bytes) {
    const std::size_t topic = rng.uniform_int(kTopics);
    const std::size_t base = topic * (kStems / kTopics);
    std::string text;

    const std::size_t sentences = 10 + rng.uniform_int(15);
    for (std::size_t s = 0; s < sentences; ++s) {
      const std::size_t cls = rng.uniform_int(2);
      if (!text.empty()) text += ' ';
      text += markers[cls];
      const std::size_t clauses = 2 + rng.uniform_int(4);
      for (std::size_t c = 0; c < clauses; ++c) {
        text += ' ';
        text += function_words[func_picker.pick(rng)];
        text += ' ';
        text += stems[(base + stem_picker.pick(rng)) % kStems];
        text += noun_suffix[cls][noun_picker.pick(rng)];
        text += ' ';
        text += stems[(base + stem_picker.pick(rng)) % kStems];
        text += verb_suffix[cls][verb_picker.pick(rng)];
      }
      text += " .";
    }

    bytes += text.size() + 1;
    corpus.documents.push_back(
        {next_id++, "topic" + std::to_string(topic), std::move(text)});
  }
  return corpus;
}

}  // namespace testsupport
