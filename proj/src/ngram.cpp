#include "sublm/ngram.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "sublm/util.hpp"

namespace sublm {

namespace {
constexpr TokenId kNoTok = static_cast<TokenId>(-1);
}

// ---- NgramCounts -------------------------------------------------------

std::size_t NgramCounts::KeyHash::operator()(const Key& k) const {
  return static_cast<std::size_t>(fnv1a(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(k.t.data()), sizeof(k.t))));
}

NgramCounts::Key NgramCounts::make_key(std::span<const TokenId> gram) {
  Key k{{kNoTok, kNoTok, kNoTok}};
  for (std::size_t i = 0; i < gram.size(); ++i) k.t[i] = gram[i];
  return k;
}

NgramCounts::NgramCounts(int order) : order_(order) {
  if (order < 1 || order > kMaxOrder)
    throw std::invalid_argument("ngram order must be 1..3, got " +
                                std::to_string(order));
}

std::uint64_t NgramCounts::count(std::span<const TokenId> gram) const {
  if (gram.empty() || gram.size() > static_cast<std::size_t>(order_))
    throw std::invalid_argument("gram length out of range for order " +
                                std::to_string(order_));
  const auto& table = tables_[gram.size() - 1];
  auto it = table.find(make_key(gram));
  return it == table.end() ? 0 : it->second;
}

std::uint64_t NgramCounts::marginal(std::span<const TokenId> context) const {
  if (context.size() >= static_cast<std::size_t>(order_))
    throw std::invalid_argument("context length out of range for order " +
                                std::to_string(order_));
  const auto& table = marginals_[context.size()];
  auto it = table.find(make_key(context));
  return it == table.end() ? 0 : it->second;
}

void NgramCounts::add_document(std::span<const TokenId> doc) {
  for (std::size_t k = 1; k <= static_cast<std::size_t>(order_); ++k) {
    if (doc.size() < k) continue;
    auto& table = tables_[k - 1];
    auto& marg = marginals_[k - 1];
    for (std::size_t i = 0; i + k <= doc.size(); ++i) {
      table[make_key(doc.subspan(i, k))] += 1;
      marg[make_key(doc.subspan(i, k - 1))] += 1;
    }
  }
}

void NgramCounts::merge(const NgramCounts& other) {
  if (other.order_ != order_)
    throw std::invalid_argument("cannot merge counts of different orders");
  for (int k = 0; k < order_; ++k) {
    for (const auto& [key, c] : other.tables_[k]) tables_[k][key] += c;
    for (const auto& [key, c] : other.marginals_[k]) marginals_[k][key] += c;
  }
}

void NgramCounts::for_each(
    int k, const std::function<void(std::span<const TokenId>, std::uint64_t)>&
               fn) const {
  if (k < 1 || k > order_)
    throw std::invalid_argument("k out of range for order " +
                                std::to_string(order_));
  std::vector<std::pair<Key, std::uint64_t>> rows(tables_[k - 1].begin(),
                                                  tables_[k - 1].end());
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first.t < b.first.t; });
  for (const auto& [key, c] : rows)
    fn(std::span<const TokenId>(key.t.data(), static_cast<std::size_t>(k)), c);
}

std::vector<std::span<const TokenId>> split_documents(
    std::span<const TokenId> ids) {
  std::vector<std::span<const TokenId>> docs;
  std::size_t start = 0, i = 0;
  for (; i < ids.size(); ++i) {
    if (ids[i] == SubwordVocab::kBos && i > start) {
      docs.push_back(ids.subspan(start, i - start));
      start = i;
    } else if (ids[i] == SubwordVocab::kEos) {
      docs.push_back(ids.subspan(start, i - start + 1));
      start = i + 1;
    }
  }
  if (start < ids.size()) docs.push_back(ids.subspan(start));
  return docs;
}

std::size_t count_predicted_positions(std::span<const TokenId> ids) {
  std::size_t n = 0;
  for (TokenId id : ids)
    if (id != SubwordVocab::kBos) ++n;
  return n;
}

NgramCounts count_ngrams(std::span<const TokenId> ids, int order) {
  NgramCounts counts(order);
  for (std::span<const TokenId> doc : split_documents(ids)) {
    NgramCounts part(order);
    part.add_document(doc);
    counts.merge(part);
  }
  return counts;
}

void NgramCounts::save(const std::filesystem::path& path) const {
  std::ostringstream out;
  out << "#order " << order_ << '\n';
  for (const auto& [k, v] : metadata) out << '#' << k << ' ' << v << '\n';
  for (int k = 1; k <= order_; ++k) {
    for_each(k, [&](std::span<const TokenId> gram, std::uint64_t c) {
      out << k;
      for (TokenId t : gram) out << '\t' << t;
      out << '\t' << c << '\n';
    });
  }
  write_file(path.string(), out.str());
}

NgramCounts NgramCounts::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open counts: " + path.string());
  std::string line;
  int order = 0;
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::vector<TokenId>, std::uint64_t>> rows;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto sp = line.find(' ');
      const std::string key = line.substr(1, sp - 1);
      const std::string value =
          sp == std::string::npos ? "" : line.substr(sp + 1);
      if (key == "order") order = std::atoi(value.c_str());
      else metadata[key] = value;
      continue;
    }
    const std::vector<std::string> cols = split(line, '\t');
    if (cols.size() < 3)
      throw std::runtime_error("counts line " + std::to_string(lineno) +
                               " malformed: " + path.string());
    const int k = std::atoi(cols[0].c_str());
    if (k < 1 || static_cast<std::size_t>(k) != cols.size() - 2)
      throw std::runtime_error("counts line " + std::to_string(lineno) +
                               " has wrong column count: " + path.string());
    std::vector<TokenId> gram(k);
    for (int i = 0; i < k; ++i)
      gram[i] = static_cast<TokenId>(std::strtoul(cols[i + 1].c_str(), nullptr, 10));
    rows.emplace_back(std::move(gram),
                      std::strtoull(cols.back().c_str(), nullptr, 10));
  }
  if (order == 0)
    throw std::runtime_error("counts file missing #order: " + path.string());
  NgramCounts counts(order);
  counts.metadata = std::move(metadata);
  for (const auto& [gram, c] : rows) {
    const std::size_t k = gram.size();
    counts.tables_[k - 1][make_key(gram)] += c;
    counts.marginals_[k - 1][make_key(
        std::span<const TokenId>(gram.data(), k - 1))] += c;
  }
  return counts;
}

// ---- probabilities -------------------------------------------------------

double mle_prob(const NgramCounts& counts, std::span<const TokenId> context,
                TokenId w) {
  const std::uint64_t denom = counts.marginal(context);
  if (denom == 0) {
    std::string ctx;
    for (TokenId t : context) ctx += std::to_string(t) + " ";
    throw std::domain_error("mle_prob: unseen context [" + ctx + "]");
  }
  std::vector<TokenId> gram(context.begin(), context.end());
  gram.push_back(w);
  return static_cast<double>(counts.count(gram)) / static_cast<double>(denom);
}

InterpolationWeights InterpolationWeights::uniform(
    std::vector<std::uint64_t> lo) {
  InterpolationWeights w;
  w.bucket_lo = std::move(lo);
  w.alphas.assign(w.bucket_lo.size(), Alpha{});
  w.validate();
  return w;
}

std::size_t InterpolationWeights::bucket_of(std::uint64_t q) const {
  std::size_t b = 0;
  while (b + 1 < bucket_lo.size() && q >= bucket_lo[b + 1]) ++b;
  return b;
}

void InterpolationWeights::validate() const {
  if (bucket_lo.empty() || bucket_lo.size() != alphas.size())
    throw std::invalid_argument("interpolation weights: bucket/alpha size mismatch");
  if (bucket_lo.front() != 0)
    throw std::invalid_argument("interpolation weights: first bucket must start at 0");
  for (std::size_t i = 1; i < bucket_lo.size(); ++i)
    if (bucket_lo[i] <= bucket_lo[i - 1])
      throw std::invalid_argument("interpolation weights: buckets not ascending");
  for (const Alpha& a : alphas) {
    if (a.a0 < 0 || a.a1 < 0 || a.a2 < 0)
      throw std::invalid_argument("interpolation weights: negative alpha");
    if (std::abs(a.a0 + a.a1 + a.a2 - 1.0) > 1e-12)
      throw std::invalid_argument("interpolation weights: alphas must sum to 1");
  }
}

namespace {

// Context frequency that selects the bucket for one position.
std::uint64_t qt_frequency(const NgramCounts& counts,
                           std::span<const TokenId> context, QtMode qt) {
  if (context.empty()) return 0;
  if (qt == QtMode::PrevPair && context.size() >= 2 && counts.order() >= 2) {
    const TokenId pair[2] = {context[context.size() - 2], context.back()};
    return counts.count(pair);
  }
  const TokenId prev = context.back();
  return counts.marginal(std::span<const TokenId>(&prev, 1));
}

// The three mixture components of the interpolated bigram at one position.
struct Components {
  double p0, p1, p2;
  std::size_t bucket;
};

Components components_at(const NgramCounts& counts,
                         const InterpolationWeights& weights,
                         std::span<const TokenId> context, TokenId w,
                         std::size_t vocab_size, QtMode qt) {
  Components c{};
  c.p0 = 1.0 / static_cast<double>(vocab_size);
  const std::uint64_t total = counts.marginal({});
  c.p1 = total == 0 ? 0.0
                    : static_cast<double>(counts.count(
                          std::span<const TokenId>(&w, 1))) /
                          static_cast<double>(total);
  c.p2 = 0.0;
  if (!context.empty()) {
    const TokenId prev = context.back();
    if (counts.marginal(std::span<const TokenId>(&prev, 1)) > 0) {
      const TokenId bigram[2] = {prev, w};
      c.p2 = static_cast<double>(counts.count(bigram)) /
             static_cast<double>(
                 counts.marginal(std::span<const TokenId>(&prev, 1)));
    }
  }
  c.bucket = weights.bucket_of(qt_frequency(counts, context, qt));
  return c;
}

}  // namespace

double interpolated_prob(const NgramCounts& counts,
                         const InterpolationWeights& weights,
                         std::span<const TokenId> context, TokenId w,
                         std::size_t vocab_size, QtMode qt) {
  if (vocab_size == 0)
    throw std::invalid_argument("interpolated_prob: vocab_size must be >= 1");
  weights.validate();
  const Components c =
      components_at(counts, weights, context, w, vocab_size, qt);
  const auto& a = weights.alphas[c.bucket];
  return a.a0 * c.p0 + a.a1 * c.p1 + a.a2 * c.p2;
}

namespace {

// Every predicted position of a stream: (context window, target). bos is
// never a target; everything else including eos is.
template <typename Fn>
void for_each_event(std::span<const TokenId> ids, const Fn& fn) {
  for (std::span<const TokenId> doc : split_documents(ids)) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      if (doc[i] == SubwordVocab::kBos) continue;
      const std::size_t ctx_len = std::min<std::size_t>(i, 2);
      fn(doc.subspan(i - ctx_len, ctx_len), doc[i]);
    }
  }
}

}  // namespace

InterpolationWeights fit_weights(const NgramCounts& counts,
                                 std::span<const TokenId> heldout,
                                 std::vector<std::uint64_t> bucket_lo,
                                 std::size_t vocab_size, QtMode qt,
                                 std::size_t max_iterations,
                                 double rel_tolerance,
                                 std::vector<double>* ll_trace) {
  if (heldout.empty())
    throw std::invalid_argument("fit_weights: held-out stream is empty");
  InterpolationWeights weights =
      InterpolationWeights::uniform(std::move(bucket_lo));

  struct Event {
    double p0, p1, p2;
    std::size_t bucket;
  };
  std::vector<Event> events;
  for_each_event(heldout, [&](std::span<const TokenId> ctx, TokenId w) {
    const Components c =
        components_at(counts, weights, ctx, w, vocab_size, qt);
    events.push_back({c.p0, c.p1, c.p2, c.bucket});
  });
  if (events.empty())
    throw std::invalid_argument("fit_weights: no predicted positions");

  const std::size_t nb = weights.bucket_lo.size();

  // one EM pass over a set of buckets; group < 0 means "all in one pool"
  auto em = [&](std::vector<InterpolationWeights::Alpha>& alphas,
                bool pooled) {
    double prev_ll = -std::numeric_limits<double>::infinity();
    for (std::size_t it = 0; it < max_iterations; ++it) {
      std::vector<std::array<double, 3>> resp(alphas.size(),
                                              {0.0, 0.0, 0.0});
      std::vector<double> n(alphas.size(), 0.0);
      double ll = 0.0;
      for (const Event& e : events) {
        const std::size_t b = pooled ? 0 : e.bucket;
        const auto& a = alphas[b];
        const double m0 = a.a0 * e.p0, m1 = a.a1 * e.p1, m2 = a.a2 * e.p2;
        const double p = m0 + m1 + m2;
        ll += std::log(p);
        resp[b][0] += m0 / p;
        resp[b][1] += m1 / p;
        resp[b][2] += m2 / p;
        n[b] += 1.0;
      }
      if (ll_trace && !pooled) ll_trace->push_back(ll);
      for (std::size_t b = 0; b < alphas.size(); ++b) {
        if (n[b] == 0.0) continue;  // untouched bucket keeps its init
        alphas[b] = {resp[b][0] / n[b], resp[b][1] / n[b], resp[b][2] / n[b]};
      }
      if (std::isfinite(prev_ll) &&
          std::abs(ll - prev_ll) <= rel_tolerance * std::abs(prev_ll))
        break;
      prev_ll = ll;
    }
  };

  // global fallback weights first, then the per-bucket fit
  std::vector<InterpolationWeights::Alpha> global(1);
  em(global, /*pooled=*/true);
  em(weights.alphas, /*pooled=*/false);

  std::vector<bool> seen(nb, false);
  for (const Event& e : events) seen[e.bucket] = true;
  for (std::size_t b = 0; b < nb; ++b)
    if (!seen[b]) weights.alphas[b] = global[0];

  // squash EM round-off so the simplex invariant holds exactly
  for (auto& a : weights.alphas) {
    const double s = a.a0 + a.a1 + a.a2;
    a.a0 /= s;
    a.a1 /= s;
    a.a2 /= s;
  }
  weights.validate();
  return weights;
}

double ngram_perplexity(const NgramCounts& counts,
                        const InterpolationWeights& weights,
                        std::span<const TokenId> test, std::size_t vocab_size,
                        QtMode qt) {
  weights.validate();
  double nll = 0.0;
  std::size_t n = 0;
  bool zero = false;
  for_each_event(test, [&](std::span<const TokenId> ctx, TokenId w) {
    const Components c = components_at(counts, weights, ctx, w, vocab_size, qt);
    const auto& a = weights.alphas[c.bucket];
    const double p = a.a0 * c.p0 + a.a1 * c.p1 + a.a2 * c.p2;
    if (p <= 0.0) zero = true;
    else nll -= std::log(p);
    ++n;
  });
  if (n == 0)
    throw std::invalid_argument("ngram_perplexity: no predicted positions");
  if (zero) return std::numeric_limits<double>::infinity();
  return std::exp(nll / static_cast<double>(n));
}

// ---- weights file --------------------------------------------------------

void InterpolationWeights::save(const std::filesystem::path& path) const {
  validate();
  std::ostringstream out;
  for (const auto& [k, v] : metadata) out << '#' << k << ' ' << v << '\n';
  for (std::size_t b = 0; b < bucket_lo.size(); ++b)
    out << bucket_lo[b] << '\t' << format_double(alphas[b].a0) << '\t'
        << format_double(alphas[b].a1) << '\t' << format_double(alphas[b].a2)
        << '\n';
  write_file(path.string(), out.str());
}

InterpolationWeights InterpolationWeights::load(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open weights: " + path.string());
  InterpolationWeights w;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto sp = line.find(' ');
      w.metadata[line.substr(1, sp - 1)] =
          sp == std::string::npos ? "" : line.substr(sp + 1);
      continue;
    }
    const std::vector<std::string> cols = split(line, '\t');
    if (cols.size() != 4)
      throw std::runtime_error("weights line " + std::to_string(lineno) +
                               " malformed: " + path.string());
    w.bucket_lo.push_back(std::strtoull(cols[0].c_str(), nullptr, 10));
    w.alphas.push_back({std::strtod(cols[1].c_str(), nullptr),
                        std::strtod(cols[2].c_str(), nullptr),
                        std::strtod(cols[3].c_str(), nullptr)});
  }
  w.validate();
  return w;
}

}  // namespace sublm
