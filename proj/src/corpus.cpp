#include "sublm/corpus.hpp"

#include <algorithm>
#include <boost/locale.hpp>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "sublm/util.hpp"

namespace sublm {

namespace {

const std::locale& icu_locale() {
  static const std::locale loc = [] {
    boost::locale::generator gen;
    return gen("en_US.UTF-8");
  }();
  return loc;
}

std::string collapse_whitespace(std::string_view s) {
  const std::u32string u = utf8_to_u32(s);
  std::u32string out;
  out.reserve(u.size());
  bool pending_space = false;
  for (char32_t c : u) {
    if (is_ascii_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(U' ');
      pending_space = false;
    }
    out.push_back(c);
  }
  return u32_to_utf8(out);
}

// CSV field quoting per RFC 4180, applied only when needed.
std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> words_of(const std::string& normalized_text) {
  return split(normalized_text, ' ');
}

}  // namespace

std::string normalize_text(std::string_view raw) {
  const std::string nfc = boost::locale::normalize(
      std::string(raw), boost::locale::norm_nfc, icu_locale());
  return collapse_whitespace(nfc);
}

Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("corpus path does not exist: " + path.string());

  Corpus corpus;
  std::int64_t next_id = 0;

  auto add_document = [&](std::string category, std::string_view raw_text) {
    std::string text = normalize_text(raw_text);
    if (category.empty() || text.empty()) return;  // unusable
    corpus.documents.push_back({next_id++, std::move(category), std::move(text)});
  };

  if (format == CorpusFormat::Jsonl) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open corpus: " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json obj;
      try {
        obj = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("malformed jsonl line " + std::to_string(lineno) +
                                 ": " + e.what());
      }
      if (!obj.contains("category") || !obj["category"].is_string() ||
          !obj.contains("text") || !obj["text"].is_string())
        throw std::runtime_error("malformed jsonl line " + std::to_string(lineno) +
                                 ": expected string fields 'category' and 'text'");
      add_document(obj["category"].get<std::string>(),
                   obj["text"].get<std::string>());
    }
  } else {
    std::vector<std::filesystem::path> files;
    for (const auto& cat_entry : std::filesystem::directory_iterator(path)) {
      if (!cat_entry.is_directory()) continue;
      for (const auto& f : std::filesystem::directory_iterator(cat_entry.path()))
        if (f.is_regular_file()) files.push_back(f.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      add_document(f.parent_path().filename().string(), read_file(f.string()));
  }

  if (corpus.empty()) throw std::runtime_error("zero usable documents in " + path.string());
  return corpus;
}

std::vector<CategoryStats> corpus_stats(const Corpus& corpus) {
  if (corpus.empty()) throw std::runtime_error("corpus_stats: empty corpus");

  std::vector<std::string> order;
  std::unordered_map<std::string, std::size_t> index;
  std::vector<CategoryStats> rows;
  std::vector<std::unordered_set<std::string>> per_cat_words;
  std::unordered_set<std::string> all_words;

  for (const Document& doc : corpus.documents) {
    auto [it, inserted] = index.emplace(doc.category, rows.size());
    if (inserted) {
      rows.push_back({doc.category, 0, 0, 0});
      per_cat_words.emplace_back();
    }
    CategoryStats& row = rows[it->second];
    row.samples += 1;
    for (std::string& w : words_of(doc.text)) {
      row.total_words += 1;
      per_cat_words[it->second].insert(w);
      all_words.insert(std::move(w));
    }
  }

  CategoryStats avg{"average", 0, 0, 0};
  CategoryStats total{"total", 0, 0, 0};
  std::uint64_t unique_sum = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].unique_words = per_cat_words[i].size();
    total.samples += rows[i].samples;
    total.total_words += rows[i].total_words;
    unique_sum += rows[i].unique_words;
  }
  const double n = static_cast<double>(rows.size());
  avg.samples = static_cast<std::uint64_t>(std::llround(total.samples / n));
  avg.total_words = static_cast<std::uint64_t>(std::llround(total.total_words / n));
  avg.unique_words = static_cast<std::uint64_t>(std::llround(unique_sum / n));
  total.unique_words = all_words.size();

  rows.push_back(avg);
  rows.push_back(total);
  return rows;
}

std::string stats_to_csv(const std::vector<CategoryStats>& rows) {
  std::ostringstream out;
  out << "category,samples,total_words,unique_words\n";
  for (const CategoryStats& r : rows)
    out << csv_field(r.category) << ',' << r.samples << ',' << r.total_words
        << ',' << r.unique_words << '\n';
  return out.str();
}

std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, double fraction,
                                        std::uint64_t seed, bool stratify) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw std::invalid_argument("split_holdout: fraction must be in [0,1)");

  auto shuffle_split = [&](std::vector<std::size_t> idx, Rng& rng,
                           std::vector<std::size_t>& train,
                           std::vector<std::size_t>& test) {
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
    const auto n_test = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(idx.size())));
    test.insert(test.end(), idx.begin(), idx.begin() + n_test);
    train.insert(train.end(), idx.begin() + n_test, idx.end());
  };

  Rng rng(derive_seed(seed, "split"));
  std::vector<std::size_t> train_idx, test_idx;
  if (!stratify) {
    std::vector<std::size_t> idx(corpus.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    shuffle_split(std::move(idx), rng, train_idx, test_idx);
  } else {
    std::map<std::string, std::vector<std::size_t>> by_cat;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      by_cat[corpus.documents[i].category].push_back(i);
    for (auto& [cat, idx] : by_cat)
      shuffle_split(std::move(idx), rng, train_idx, test_idx);
  }

  // keep original document order within each split
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  Corpus train, test;
  for (std::size_t i : train_idx) train.documents.push_back(corpus.documents[i]);
  for (std::size_t i : test_idx) test.documents.push_back(corpus.documents[i]);
  return {std::move(train), std::move(test)};
}

void write_jsonl(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const Document& doc : corpus.documents) {
    nlohmann::json obj{{"category", doc.category}, {"text", doc.text}};
    out << obj.dump() << '\n';
  }
}

}  // namespace sublm
