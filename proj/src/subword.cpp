#include "sublm/subword.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "sublm/util.hpp"

namespace sublm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double logsumexp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

const std::u32string kSpecialText[3] = {U"<s>", U"</s>", U"<unk>"};

// Whitespace-split words of normalized text, marker applied in subword mode.
std::vector<std::u32string> text_words(std::string_view text, bool marker) {
  std::vector<std::u32string> out;
  for (const std::string& w : split(normalize_text(text), ' ')) {
    if (w.empty()) continue;
    std::u32string u = utf8_to_u32(w);
    if (marker) u.insert(u.begin(), SubwordVocab::kWordMarker);
    out.push_back(std::move(u));
  }
  return out;
}

// Distinct marked words of a corpus with frequencies, sorted for
// deterministic iteration.
std::vector<std::pair<std::u32string, std::uint64_t>> word_frequencies(
    const Corpus& corpus, bool marker) {
  std::unordered_map<std::u32string, std::uint64_t> freq;
  for (const Document& doc : corpus.documents)
    for (std::u32string& w : text_words(doc.text, marker)) freq[std::move(w)] += 1;
  std::vector<std::pair<std::u32string, std::uint64_t>> out(freq.begin(),
                                                            freq.end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---- EM working set --------------------------------------------------

struct PieceEntry {
  std::u32string text;
  double log_prob = 0.0;
};

struct WorkingSet {
  std::vector<PieceEntry> pieces;
  std::unordered_map<std::u32string, std::size_t> index;
  std::size_t max_len = 0;

  void rebuild() {
    index.clear();
    index.reserve(pieces.size() * 2);
    max_len = 0;
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      index.emplace(pieces[i].text, i);
      max_len = std::max(max_len, pieces[i].text.size());
    }
  }

  void renormalize() {
    double total = 0.0;
    for (const PieceEntry& p : pieces) total += std::exp(p.log_prob);
    const double log_total = std::log(total);
    for (PieceEntry& p : pieces) p.log_prob -= log_total;
  }
};

struct WordEdge {
  std::uint32_t start, end;
  std::uint32_t piece;  // index into WorkingSet::pieces
};

// Edge lists per distinct word, rebuilt whenever the piece set changes.
std::vector<std::vector<WordEdge>> build_edge_lists(
    const std::vector<std::pair<std::u32string, std::uint64_t>>& words,
    const WorkingSet& ws) {
  std::vector<std::vector<WordEdge>> lists(words.size());
  std::u32string key;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::u32string& word = words[w].first;
    const std::size_t n = word.size();
    auto& edges = lists[w];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t max_j = std::min(n, i + ws.max_len);
      for (std::size_t j = i + 1; j <= max_j; ++j) {
        key.assign(word, i, j - i);
        auto it = ws.index.find(key);
        if (it != ws.index.end())
          edges.push_back({static_cast<std::uint32_t>(i),
                           static_cast<std::uint32_t>(j),
                           static_cast<std::uint32_t>(it->second)});
      }
    }
  }
  return lists;
}

// Forward-backward over one word lattice; adds freq-weighted expected piece
// counts and returns freq * log Z.
double accumulate_expectations(const std::u32string& word, std::uint64_t freq,
                               const std::vector<WordEdge>& edges,
                               const WorkingSet& ws,
                               std::vector<double>& expected) {
  const std::size_t n = word.size();
  std::vector<double> fwd(n + 1, kNegInf), bwd(n + 1, kNegInf);
  fwd[0] = 0.0;
  for (const WordEdge& e : edges)  // edges sorted by start ascending
    fwd[e.end] = logsumexp(fwd[e.end], fwd[e.start] + ws.pieces[e.piece].log_prob);
  bwd[n] = 0.0;
  for (auto it = edges.rbegin(); it != edges.rend(); ++it)
    bwd[it->start] =
        logsumexp(bwd[it->start], ws.pieces[it->piece].log_prob + bwd[it->end]);
  const double z = fwd[n];
  if (!std::isfinite(z))
    throw std::runtime_error("em_train: non-finite likelihood for a word (vocabulary does not cover it)");
  const double w = static_cast<double>(freq);
  for (const WordEdge& e : edges) {
    const double post =
        std::exp(fwd[e.start] + ws.pieces[e.piece].log_prob + bwd[e.end] - z);
    expected[e.piece] += w * post;
  }
  return w * z;
}

// Max-score path over precomputed edges; returns per-piece use counts.
// dp ties keep the earliest-scanned parent, which is deterministic.
double viterbi_over_edges(std::size_t n, const std::vector<WordEdge>& edges,
                          const WorkingSet& ws,
                          std::vector<std::uint32_t>* path_pieces,
                          std::uint32_t exclude_piece = UINT32_MAX) {
  std::vector<double> dp(n + 1, kNegInf);
  std::vector<std::size_t> back(n + 1, SIZE_MAX);
  dp[0] = 0.0;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const WordEdge& ed = edges[e];
    if (ed.piece == exclude_piece) continue;
    const double s = dp[ed.start] + ws.pieces[ed.piece].log_prob;
    if (s > dp[ed.end]) {
      dp[ed.end] = s;
      back[ed.end] = e;
    }
  }
  if (path_pieces && std::isfinite(dp[n])) {
    std::size_t pos = n;
    while (pos > 0) {
      const WordEdge& ed = edges[back[pos]];
      path_pieces->push_back(ed.piece);
      pos = ed.start;
    }
  }
  return dp[n];
}

std::vector<double> viterbi_counts(
    const std::vector<std::pair<std::u32string, std::uint64_t>>& words,
    const std::vector<std::vector<WordEdge>>& edge_lists,
    const WorkingSet& ws) {
  std::vector<double> counts(ws.pieces.size(), 0.0);
  std::vector<std::uint32_t> path;
  for (std::size_t w = 0; w < words.size(); ++w) {
    path.clear();
    viterbi_over_edges(words[w].first.size(), edge_lists[w], ws, &path);
    for (std::uint32_t p : path)
      counts[p] += static_cast<double>(words[w].second);
  }
  return counts;
}

SubwordVocab finalize_vocab(WorkingSet ws, TokenizerMode mode, bool marker);

}  // namespace

// ---- SubwordVocab ------------------------------------------------------

SubwordVocab build_vocab(std::vector<std::pair<std::u32string, double>> entries,
                         TokenizerMode mode, bool use_marker) {
  // descending probability, ties lexicographic: fixes piece ids and the
  // byte-identical file order
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  SubwordVocab v;
  v.mode_ = mode;
  v.use_word_marker_ = use_marker;
  v.pieces_.reserve(entries.size() + 3);
  for (const auto& s : kSpecialText) v.pieces_.push_back({s, kNegInf});
  for (auto& [text, lp] : entries) v.pieces_.push_back({std::move(text), lp});
  v.rebuild_index();
  return v;
}

void SubwordVocab::rebuild_index() {
  index_.clear();
  known_chars_.clear();
  max_piece_chars_ = 0;
  for (TokenId id = kFirstPiece; id < pieces_.size(); ++id) {
    const Piece& p = pieces_[id];
    index_.emplace(p.text, id);
    if (p.text.size() == 1) known_chars_.emplace(p.text[0], id);
    max_piece_chars_ = std::max(max_piece_chars_, p.text.size());
  }
}

SubwordVocab SubwordVocab::from_pieces(
    const std::map<std::string, double>& log_probs, TokenizerMode mode,
    bool use_word_marker) {
  std::vector<std::pair<std::u32string, double>> entries;
  entries.reserve(log_probs.size());
  for (const auto& [text, lp] : log_probs)
    entries.emplace_back(utf8_to_u32(text), lp);
  return build_vocab(std::move(entries), mode, use_word_marker);
}

TokenId SubwordVocab::find(const std::u32string& piece) const {
  auto it = index_.find(piece);
  return it == index_.end() ? npos : it->second;
}

const SubwordVocab::Piece& SubwordVocab::piece(TokenId id) const {
  if (id >= pieces_.size())
    throw std::out_of_range("unknown token id " + std::to_string(id));
  return pieces_[id];
}

double SubwordVocab::piece_prob_sum() const {
  double total = 0.0;
  for (TokenId id = kFirstPiece; id < pieces_.size(); ++id)
    total += std::exp(pieces_[id].log_prob);
  return total;
}

// ---- vocabulary file -----------------------------------------------------

namespace {
std::string vocab_body(const SubwordVocab& v) {
  std::ostringstream out;
  out << "#mode " << (v.mode() == TokenizerMode::Subword ? "subword" : "word")
      << '\n';
  out << "#word_marker ";
  if (v.uses_word_marker()) {
    std::string m;
    append_utf8(m, SubwordVocab::kWordMarker);
    out << m;
  }
  out << '\n';
  for (TokenId id = 0; id < v.size(); ++id) {
    const auto& p = v.piece(id);
    out << u32_to_utf8(p.text) << '\t';
    if (v.is_special(id)) out << "NA";
    else out << format_double(p.log_prob);
    out << '\n';
  }
  return out.str();
}
}  // namespace

void SubwordVocab::save(const std::filesystem::path& path) const {
  const std::string body = vocab_body(*this);
  std::string head;
  for (const auto& [k, vv] : metadata) head += "#" + k + " " + vv + "\n";
  // body starts with the two required header lines; metadata goes after them
  const std::size_t second_nl = body.find('\n', body.find('\n') + 1) + 1;
  write_file(path.string(), body.substr(0, second_nl) + head + body.substr(second_nl));
}

SubwordVocab SubwordVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path.string());
  std::string line;
  TokenizerMode mode = TokenizerMode::Subword;
  bool marker = false;
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::u32string, double>> entries;
  std::size_t specials_seen = 0;
  bool in_header = true;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (in_header && !line.empty() && line[0] == '#') {
      const auto sp = line.find(' ');
      const std::string key = line.substr(1, sp - 1);
      const std::string value = sp == std::string::npos ? "" : line.substr(sp + 1);
      if (key == "mode") {
        if (value == "word") mode = TokenizerMode::Word;
        else if (value == "subword") mode = TokenizerMode::Subword;
        else throw std::runtime_error("bad #mode in " + path.string());
      } else if (key == "word_marker") {
        marker = !value.empty();
      } else {
        metadata[key] = value;
      }
      continue;
    }
    in_header = false;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error("vocabulary line " + std::to_string(lineno) +
                               " has no tab: " + path.string());
    const std::string text = line.substr(0, tab);
    const std::string val = line.substr(tab + 1);
    if (specials_seen < 3) {
      if (utf8_to_u32(text) != kSpecialText[specials_seen] || val != "NA")
        throw std::runtime_error("vocabulary specials malformed at line " +
                                 std::to_string(lineno));
      ++specials_seen;
      continue;
    }
    entries.emplace_back(utf8_to_u32(text), std::strtod(val.c_str(), nullptr));
  }
  if (specials_seen != 3)
    throw std::runtime_error("vocabulary missing specials: " + path.string());
  SubwordVocab v = build_vocab(std::move(entries), mode, marker);
  v.metadata = std::move(metadata);
  return v;
}

std::uint64_t SubwordVocab::content_hash() const {
  return fnv1a(vocab_body(*this));
}

// ---- lattice & segmentation ---------------------------------------------

SegmentationLattice build_lattice(std::u32string_view text,
                                  const SubwordVocab& vocab) {
  SegmentationLattice lat;
  lat.num_chars = text.size();
  lat.edges_from.resize(text.size() + 1);
  std::u32string key;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const std::size_t max_j = std::min(text.size(), i + vocab.max_piece_chars());
    for (std::size_t j = i + 1; j <= max_j; ++j) {
      key.assign(text.substr(i, j - i));
      const TokenId id = vocab.find(key);
      if (id != SubwordVocab::npos)
        lat.edges_from[i].push_back({i, j, id, vocab.piece(id).log_prob});
    }
  }
  return lat;
}

std::vector<SegmentSpan> segment_chars(std::u32string_view text,
                                       const SubwordVocab& vocab) {
  std::vector<SegmentSpan> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    if (!vocab.has_char(text[pos])) {
      // maximal run of uncovered characters -> one <unk>
      std::size_t end = pos;
      while (end < text.size() && !vocab.has_char(text[end])) ++end;
      out.push_back({pos, end - pos, SubwordVocab::kUnk});
      pos = end;
      continue;
    }
    std::size_t end = pos;
    while (end < text.size() && vocab.has_char(text[end])) ++end;
    const std::u32string_view run = text.substr(pos, end - pos);
    const SegmentationLattice lat = build_lattice(run, vocab);
    const std::size_t n = run.size();
    std::vector<double> dp(n + 1, kNegInf);
    std::vector<const SegmentationLattice::Edge*> back(n + 1, nullptr);
    dp[0] = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (dp[i] == kNegInf) continue;
      for (const auto& e : lat.edges_from[i]) {
        const double s = dp[i] + e.score;
        if (s > dp[e.end]) {
          dp[e.end] = s;
          back[e.end] = &e;
        }
      }
    }
    std::vector<SegmentSpan> spans;
    for (std::size_t p = n; p > 0;) {
      const auto* e = back[p];
      spans.push_back({pos + e->start, e->end - e->start, e->piece});
      p = e->start;
    }
    out.insert(out.end(), spans.rbegin(), spans.rend());
    pos = end;
  }
  return out;
}

// ---- seeding -------------------------------------------------------------

std::vector<SeedPiece> seed_vocabulary(const Corpus& corpus,
                                       const TokenizerConfig& config) {
  if (corpus.empty()) throw std::runtime_error("seed_vocabulary: empty corpus");
  const bool marker = config.mode == TokenizerMode::Subword;
  const auto words = word_frequencies(corpus, marker);
  if (words.empty()) throw std::runtime_error("seed_vocabulary: empty corpus");

  std::unordered_map<std::u32string, std::uint64_t> counts;
  for (const auto& [word, freq] : words) {
    const std::size_t n = word.size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t len = 1; len <= std::min(config.max_piece_length, n - i);
           ++len)
        counts[std::u32string(word, i, len)] += freq;
  }

  std::size_t num_chars = 0;
  for (const auto& [text, c] : counts)
    if (text.size() == 1) ++num_chars;
  if (config.resolved_seed_size() < num_chars + 3)
    throw std::runtime_error(
        "seed_vocab_size " + std::to_string(config.resolved_seed_size()) +
        " cannot cover alphabet (" + std::to_string(num_chars) +
        " characters) plus specials");

  std::vector<SeedPiece> singles, multis;
  for (auto& [text, c] : counts) {
    SeedPiece p{text, c, 0.0};
    (text.size() == 1 ? singles : multis).push_back(std::move(p));
  }
  auto by_count = [](const SeedPiece& a, const SeedPiece& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.text < b.text;
  };
  std::sort(singles.begin(), singles.end(), by_count);
  std::sort(multis.begin(), multis.end(), by_count);
  const std::size_t budget = config.resolved_seed_size() - 3;
  if (multis.size() > budget - singles.size())
    multis.resize(budget - singles.size());

  std::vector<SeedPiece> out = std::move(singles);
  out.insert(out.end(), multis.begin(), multis.end());
  std::uint64_t total = 0;
  for (const SeedPiece& p : out) total += p.count;
  const double log_total = std::log(static_cast<double>(total));
  for (SeedPiece& p : out)
    p.log_prob = std::log(static_cast<double>(p.count)) - log_total;
  return out;
}

// ---- EM training -----------------------------------------------------

namespace {
SubwordVocab finalize_vocab(WorkingSet ws, TokenizerMode mode, bool marker) {
  std::vector<std::pair<std::u32string, double>> entries;
  entries.reserve(ws.pieces.size());
  for (PieceEntry& p : ws.pieces)
    entries.emplace_back(std::move(p.text), p.log_prob);
  return build_vocab(std::move(entries), mode, marker);
}
}  // namespace

SubwordVocab em_train(const Corpus& corpus, const TokenizerConfig& config,
                      EmTrace* trace) {
  if (config.mode == TokenizerMode::Word)
    throw std::invalid_argument("em_train: word mode uses word_tokenize");
  if (config.target_vocab_size < 4)
    throw std::runtime_error("em_train: target vocabulary size unreachable");

  const bool marker = true;
  const auto words = word_frequencies(corpus, marker);
  std::vector<SeedPiece> seed = seed_vocabulary(corpus, config);

  WorkingSet ws;
  ws.pieces.reserve(seed.size());
  std::size_t num_chars = 0;
  for (SeedPiece& p : seed) {
    if (p.text.size() == 1) ++num_chars;
    ws.pieces.push_back({std::move(p.text), p.log_prob});
  }
  const std::size_t target_pieces = config.target_vocab_size - 3;
  if (target_pieces < num_chars)
    throw std::runtime_error(
        "em_train: target size unreachable (smaller than alphabet " +
        std::to_string(num_chars) + " + specials)");

  for (;;) {
    ws.rebuild();
    auto edge_lists = build_edge_lists(words, ws);
    EmTrace::Round round;

    double prev_ll = kNegInf;
    for (std::size_t iter = 0; iter < config.max_em_iterations; ++iter) {
      // E-step
      std::vector<double> expected(ws.pieces.size(), 0.0);
      double ll = 0.0;
      for (std::size_t w = 0; w < words.size(); ++w)
        ll += accumulate_expectations(words[w].first, words[w].second,
                                      edge_lists[w], ws, expected);
      if (!std::isfinite(ll))
        throw std::runtime_error("em_train: non-finite corpus likelihood");
      round.log_likelihood.push_back(ll);

      // M-step: renormalized expected counts. Pieces whose expectation
      // underflowed to zero are dropped (single characters always retain
      // mass from the words that contain them).
      double total = 0.0;
      for (double e : expected) total += e;
      const double log_total = std::log(total);
      std::vector<PieceEntry> kept;
      kept.reserve(ws.pieces.size());
      bool dropped = false;
      for (std::size_t i = 0; i < ws.pieces.size(); ++i) {
        if (expected[i] <= 0.0 && ws.pieces[i].text.size() > 1) {
          dropped = true;
          continue;
        }
        // single chars whose edge posterior underflowed keep a tiny floor
        const double e = std::max(expected[i], 1e-300);
        kept.push_back({std::move(ws.pieces[i].text), std::log(e) - log_total});
      }
      if (dropped) {
        ws.pieces = std::move(kept);
        ws.rebuild();
        edge_lists = build_edge_lists(words, ws);
      } else {
        ws.pieces = std::move(kept);
        for (std::size_t i = 0; i < ws.pieces.size(); ++i)
          ws.index[ws.pieces[i].text] = i;  // text order unchanged
      }

      if (prev_ll != kNegInf &&
          std::abs(ll - prev_ll) < config.em_rel_tolerance * std::abs(prev_ll)) {
        prev_ll = ll;
        break;
      }
      prev_ll = ll;
    }

    if (ws.pieces.size() <= target_pieces) {
      round.vocab_size_after_prune = ws.pieces.size();
      if (trace) trace->rounds.push_back(std::move(round));
      break;
    }

    // Prune the lowest-utility multi-character pieces: removing piece p
    // forces its Viterbi occurrences onto the best alternative segmentation
    // of p's own surface string, so the likelihood loss is
    // count(p) * (logP(p) - altLogP(p)).
    ws.rebuild();
    auto prune_edges = build_edge_lists(words, ws);
    const std::vector<double> counts = viterbi_counts(words, prune_edges, ws);
    struct Cand {
      double loss;
      std::size_t idx;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < ws.pieces.size(); ++i) {
      if (ws.pieces[i].text.size() == 1) continue;  // single chars stay
      const auto self_edges = build_edge_lists(
          {{ws.pieces[i].text, 1}}, ws);
      const double alt =
          viterbi_over_edges(ws.pieces[i].text.size(), self_edges[0], ws,
                             nullptr, static_cast<std::uint32_t>(i));
      const double loss = counts[i] * (ws.pieces[i].log_prob - alt);
      cands.push_back({loss, i});
    }
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      if (a.loss != b.loss) return a.loss < b.loss;
      return ws.pieces[a.idx].text > ws.pieces[b.idx].text;
    });
    const std::size_t want_drop = static_cast<std::size_t>(
        std::ceil(config.prune_fraction * static_cast<double>(ws.pieces.size())));
    const std::size_t n_drop =
        std::min({want_drop, ws.pieces.size() - target_pieces, cands.size()});
    std::vector<bool> drop(ws.pieces.size(), false);
    for (std::size_t k = 0; k < n_drop; ++k) drop[cands[k].idx] = true;
    std::vector<PieceEntry> kept;
    kept.reserve(ws.pieces.size() - n_drop);
    for (std::size_t i = 0; i < ws.pieces.size(); ++i)
      if (!drop[i]) kept.push_back(std::move(ws.pieces[i]));
    ws.pieces = std::move(kept);
    ws.renormalize();
    round.vocab_size_after_prune = ws.pieces.size();
    if (trace) trace->rounds.push_back(std::move(round));
    if (n_drop == 0) break;  // nothing prunable left
  }

  // Final sweep. Multi-character pieces must be used min_token_frequency
  // times in the Viterbi-tokenized corpus. Single characters are judged by
  // their raw text frequency instead: a whole-word piece can starve its own
  // characters of standalone uses, but dropping them would break the promise
  // that every frequent training character stays encodable. Characters that
  // really are rare in the text go, along with every piece containing them
  // (those occurrences become <unk>).
  if (config.min_token_frequency > 1) {
    ws.rebuild();
    const auto edge_lists = build_edge_lists(words, ws);
    const std::vector<double> counts = viterbi_counts(words, edge_lists, ws);
    std::unordered_map<char32_t, std::uint64_t> char_freq;
    for (const auto& [word, freq] : words)
      for (char32_t c : word) char_freq[c] += freq;
    const auto char_rare = [&](char32_t c) {
      const auto it = char_freq.find(c);
      return it == char_freq.end() || it->second < config.min_token_frequency;
    };
    std::vector<PieceEntry> kept;
    for (std::size_t i = 0; i < ws.pieces.size(); ++i) {
      const std::u32string& text = ws.pieces[i].text;
      if (text.size() > 1 &&
          counts[i] < static_cast<double>(config.min_token_frequency))
        continue;
      bool has_rare_char = false;
      for (char32_t c : text)
        if (char_rare(c)) has_rare_char = true;
      if (!has_rare_char) kept.push_back(std::move(ws.pieces[i]));
    }
    ws.pieces = std::move(kept);
    ws.renormalize();
  }

  SubwordVocab vocab = finalize_vocab(std::move(ws), TokenizerMode::Subword, marker);
  vocab.metadata["target_vocab_size"] = std::to_string(config.target_vocab_size);
  vocab.metadata["seed_vocab_size"] = std::to_string(config.resolved_seed_size());
  vocab.metadata["prune_fraction"] = format_double(config.prune_fraction);
  vocab.metadata["max_piece_length"] = std::to_string(config.max_piece_length);
  vocab.metadata["min_token_frequency"] =
      std::to_string(config.min_token_frequency);
  return vocab;
}

SubwordVocab word_tokenize(const Corpus& corpus, std::size_t vocab_size,
                           std::size_t min_frequency) {
  if (corpus.empty()) throw std::runtime_error("word_tokenize: empty corpus");
  auto words = word_frequencies(corpus, /*marker=*/false);
  std::vector<std::pair<std::u32string, std::uint64_t>> kept;
  for (auto& [word, freq] : words)
    if (freq >= min_frequency) kept.emplace_back(std::move(word), freq);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (kept.size() > vocab_size) kept.resize(vocab_size);
  if (kept.empty())
    throw std::runtime_error("word_tokenize: no word meets min_frequency");

  std::uint64_t total = 0;
  for (const auto& [w, c] : kept) total += c;
  const double log_total = std::log(static_cast<double>(total));
  std::vector<std::pair<std::u32string, double>> entries;
  entries.reserve(kept.size());
  for (auto& [w, c] : kept)
    entries.emplace_back(std::move(w),
                         std::log(static_cast<double>(c)) - log_total);
  SubwordVocab v = build_vocab(std::move(entries), TokenizerMode::Word, false);
  v.metadata["vocab_size"] = std::to_string(vocab_size);
  v.metadata["min_token_frequency"] = std::to_string(min_frequency);
  return v;
}

// ---- encode / decode -------------------------------------------------

std::vector<TokenId> viterbi_segment(std::string_view text,
                                     const SubwordVocab& vocab) {
  std::vector<TokenId> out;
  if (vocab.mode() == TokenizerMode::Word) {
    for (const std::string& w : split(normalize_text(text), ' ')) {
      if (w.empty()) continue;
      const TokenId id = vocab.find(utf8_to_u32(w));
      out.push_back(id == SubwordVocab::npos ? SubwordVocab::kUnk : id);
    }
    return out;
  }
  for (const std::u32string& word :
       text_words(text, vocab.uses_word_marker())) {
    for (const SegmentSpan& s : segment_chars(word, vocab)) out.push_back(s.id);
  }
  return out;
}

std::vector<TokenId> encode(std::string_view text, const SubwordVocab& vocab,
                            bool add_markers) {
  std::vector<TokenId> ids;
  if (add_markers) ids.push_back(SubwordVocab::kBos);
  std::vector<TokenId> body = viterbi_segment(text, vocab);
  ids.insert(ids.end(), body.begin(), body.end());
  if (add_markers) ids.push_back(SubwordVocab::kEos);
  return ids;
}

std::string decode(std::span<const TokenId> ids, const SubwordVocab& vocab) {
  std::u32string out;
  bool first_word_token = true;
  for (TokenId id : ids) {
    if (id == SubwordVocab::kBos || id == SubwordVocab::kEos) continue;
    if (vocab.mode() == TokenizerMode::Word && !first_word_token)
      out.push_back(U' ');
    first_word_token = false;
    if (id == SubwordVocab::kUnk) {
      out.push_back(SubwordVocab::kUnkGlyph);
      continue;
    }
    out += vocab.piece(id).text;  // throws on unknown id
  }
  if (vocab.mode() == TokenizerMode::Subword && vocab.uses_word_marker()) {
    std::u32string spaced;
    spaced.reserve(out.size());
    for (char32_t c : out) {
      if (c == SubwordVocab::kWordMarker) {
        if (!spaced.empty()) spaced.push_back(U' ');
      } else {
        spaced.push_back(c);
      }
    }
    out = std::move(spaced);
  }
  return u32_to_utf8(out);
}

// ---- encoded-corpus cache ---------------------------------------------

namespace {
constexpr char kIdsMagic[8] = {'S', 'W', 'I', 'D', 'S', '0', '0', '1'};
}

void write_id_stream(const std::filesystem::path& path,
                     std::span<const TokenId> ids) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kIdsMagic, 8);
  for (TokenId id : ids) {
    const unsigned char b[4] = {
        static_cast<unsigned char>(id & 0xFF),
        static_cast<unsigned char>((id >> 8) & 0xFF),
        static_cast<unsigned char>((id >> 16) & 0xFF),
        static_cast<unsigned char>((id >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<TokenId> read_id_stream(const std::filesystem::path& path) {
  const std::string data = read_file(path.string());
  if (data.size() < 8 || std::memcmp(data.data(), kIdsMagic, 8) != 0)
    throw std::runtime_error("not an id stream (bad magic): " + path.string());
  if ((data.size() - 8) % 4 != 0)
    throw std::runtime_error("truncated id stream: " + path.string());
  std::vector<TokenId> ids((data.size() - 8) / 4);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto* b =
        reinterpret_cast<const unsigned char*>(data.data() + 8 + 4 * i);
    ids[i] = static_cast<TokenId>(b[0]) | (static_cast<TokenId>(b[1]) << 8) |
             (static_cast<TokenId>(b[2]) << 16) |
             (static_cast<TokenId>(b[3]) << 24);
  }
  return ids;
}

}  // namespace sublm
