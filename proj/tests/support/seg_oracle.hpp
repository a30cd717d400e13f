#pragma once

#include <optional>
#include <string>

#include "sublm/subword.hpp"

namespace testsupport {

/// Exhaustive best-segmentation score: recurses over all 2^(n-1) split
/// points, accumulating log-probs left to right — the same association
/// order a forward DP uses, so the maxima are comparable bit for bit.
inline std::optional<double> best_score_exhaustive(
    const std::u32string& text, const sublm::SubwordVocab& vocab,
    std::size_t pos = 0, double acc = 0.0) {
  if (pos == text.size()) return acc;
  std::optional<double> best;
  for (std::size_t len = 1; pos + len <= text.size(); ++len) {
    const sublm::TokenId id = vocab.find(text.substr(pos, len));
    if (id == sublm::SubwordVocab::npos) continue;
    const auto sub = best_score_exhaustive(text, vocab, pos + len,
                                           acc + vocab.piece(id).log_prob);
    if (sub && (!best || *sub > *best)) best = sub;
  }
  return best;
}

/// Score of a production segmentation, summed in span order.
inline double span_score(const std::vector<sublm::SegmentSpan>& spans,
                         const sublm::SubwordVocab& vocab) {
  double acc = 0.0;
  for (const sublm::SegmentSpan& s : spans) acc += vocab.piece(s.id).log_prob;
  return acc;
}

}  // namespace testsupport
