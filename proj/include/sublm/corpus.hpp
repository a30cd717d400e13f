#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sublm {

struct Document {
  std::int64_t id = 0;
  std::string category;
  std::string text;  // normalized UTF-8
};

struct Corpus {
  std::vector<Document> documents;

  bool empty() const { return documents.empty(); }
  std::size_t size() const { return documents.size(); }
};

/// One row of the dataset-statistics report. The report ends with an
/// "average" row (rounded per-category means) and a "total" row whose
/// unique_words counts distinct tokens corpus-wide.
struct CategoryStats {
  std::string category;
  std::uint64_t samples = 0;
  std::uint64_t total_words = 0;
  std::uint64_t unique_words = 0;
};

enum class CorpusFormat { Jsonl, TextDir };

/// NFC-normalizes, collapses whitespace runs to single spaces, trims ends.
/// Idempotent.
std::string normalize_text(std::string_view raw);

/// Reads a corpus from disk.
///   Jsonl: one object per line with string fields "category" and "text".
///   TextDir: <root>/<category>/*.txt, one document per file.
/// Lines/files whose text normalizes to empty are skipped; malformed jsonl
/// raises with the line number; zero usable documents raises.
Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format);

/// Per-category rows in order of first appearance, then "average" and
/// "total". Words are maximal runs of non-whitespace.
std::vector<CategoryStats> corpus_stats(const Corpus& corpus);

std::string stats_to_csv(const std::vector<CategoryStats>& rows);

/// Deterministic shuffle keyed by seed; ceil(fraction*N) documents go to the
/// test split. With stratify, the fraction is applied per category.
std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, double fraction,
                                        std::uint64_t seed,
                                        bool stratify = false);

void write_jsonl(const std::filesystem::path& path, const Corpus& corpus);

}  // namespace sublm
