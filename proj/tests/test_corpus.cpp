#include <doctest.h>

#include <fstream>
#include <set>

#include "sublm/corpus.hpp"
#include "sublm/util.hpp"
#include "support/synthetic_corpus.hpp"
#include "support/testutil.hpp"

using namespace sublm;

TEST_CASE("normalize_text composes NFC and collapses whitespace") {
  // e + combining acute must compose to the single code point U+00E9
  CHECK(normalize_text("café") == "café");
  CHECK(normalize_text("  a\t\n b\r\n") == "a b");
  CHECK(normalize_text(" \t ") == "");
  // idempotent
  const std::string once = normalize_text("x  ý  z");
  CHECK(normalize_text(once) == once);
}

TEST_CASE("ingest_corpus reads jsonl and rejects malformed lines") {
  testsupport::TempDir dir;
  const auto path = dir / "corpus.jsonl";
  write_file(path.string(),
             "{\"category\":\"news\",\"text\":\"one  two\"}\n"
             "\n"
             "{\"category\":\"sport\",\"text\":\"   \"}\n"  // empty -> skipped
             "{\"category\":\"news\",\"text\":\"three\"}\n");
  const Corpus c = ingest_corpus(path, CorpusFormat::Jsonl);
  REQUIRE(c.size() == 2);
  CHECK(c.documents[0].category == "news");
  CHECK(c.documents[0].text == "one two");
  CHECK(c.documents[1].text == "three");
  CHECK(c.documents[0].id != c.documents[1].id);

  write_file(path.string(), "{\"category\":\"x\"}\n");
  CHECK_THROWS_WITH_AS(ingest_corpus(path, CorpusFormat::Jsonl),
                       doctest::Contains("line 1"), std::runtime_error);
  write_file(path.string(), "not json\n");
  CHECK_THROWS_AS(ingest_corpus(path, CorpusFormat::Jsonl),
                  std::runtime_error);
  write_file(path.string(), "");
  CHECK_THROWS_AS(ingest_corpus(path, CorpusFormat::Jsonl),
                  std::runtime_error);  // zero usable documents
}

TEST_CASE("ingest_corpus reads a category-per-directory tree") {
  testsupport::TempDir dir;
  std::filesystem::create_directories(dir / "econ");
  std::filesystem::create_directories(dir / "sport");
  write_file((dir.path() / "econ" / "a.txt").string(), "market news");
  write_file((dir.path() / "econ" / "b.txt").string(), "more market news");
  write_file((dir.path() / "sport" / "a.txt").string(), "match report");
  const Corpus c = ingest_corpus(dir.path(), CorpusFormat::TextDir);
  REQUIRE(c.size() == 3);
  std::multiset<std::string> cats;
  for (const Document& d : c.documents) cats.insert(d.category);
  CHECK(cats == std::multiset<std::string>{"econ", "econ", "sport"});
  CHECK_THROWS_AS(ingest_corpus(dir / "nowhere", CorpusFormat::TextDir),
                  std::runtime_error);
}

TEST_CASE("corpus_stats aggregates per category plus average and total") {
  Corpus c;
  c.documents = {{0, "A", "x y"},   // 2 words
                 {1, "A", "y z"},   // 2 words, unique within A: x y z
                 {2, "B", "x x"}};  // 2 words, unique within B: x
  const auto rows = corpus_stats(c);
  REQUIRE(rows.size() == 4);  // A, B, average, total

  CHECK(rows[0].category == "A");
  CHECK(rows[0].samples == 2);
  CHECK(rows[0].total_words == 4);
  CHECK(rows[0].unique_words == 3);

  CHECK(rows[1].category == "B");
  CHECK(rows[1].samples == 1);
  CHECK(rows[1].total_words == 2);
  CHECK(rows[1].unique_words == 1);

  CHECK(rows[2].category == "average");
  CHECK(rows[2].samples == 2);      // llround(1.5)
  CHECK(rows[2].total_words == 3);  // llround(3.0)
  CHECK(rows[2].unique_words == 2);

  CHECK(rows[3].category == "total");
  CHECK(rows[3].samples == 3);
  CHECK(rows[3].total_words == 6);
  CHECK(rows[3].unique_words == 3);  // distinct corpus-wide: x y z

  const std::string csv = stats_to_csv(rows);
  CHECK(csv.rfind("category,samples,total_words,unique_words\n", 0) == 0);
  CHECK(csv.find("A,2,4,3\n") != std::string::npos);
  CHECK(csv.find("total,3,6,3\n") != std::string::npos);
}

TEST_CASE("split_holdout is deterministic and partitions the corpus") {
  Corpus c;
  for (int i = 0; i < 10; ++i)
    c.documents.push_back(
        {i, i % 2 ? "odd" : "even", "doc " + std::to_string(i)});

  const auto [train, test] = split_holdout(c, 0.2, 7);
  CHECK(train.size() == 8);
  CHECK(test.size() == 2);  // ceil(0.2 * 10)

  // disjoint union of the originals
  std::set<std::int64_t> ids;
  for (const Document& d : train.documents) ids.insert(d.id);
  for (const Document& d : test.documents) ids.insert(d.id);
  CHECK(ids.size() == 10);

  // original relative order preserved inside each side
  for (std::size_t i = 1; i < train.size(); ++i)
    CHECK(train.documents[i - 1].id < train.documents[i].id);

  const auto [train2, test2] = split_holdout(c, 0.2, 7);
  CHECK(train2.size() == train.size());
  for (std::size_t i = 0; i < test.size(); ++i)
    CHECK(test2.documents[i].id == test.documents[i].id);

  const auto [train3, test3] = split_holdout(c, 0.2, 8);
  bool same = test3.size() == test.size();
  if (same)
    for (std::size_t i = 0; i < test.size(); ++i)
      same = same && test3.documents[i].id == test.documents[i].id;
  CHECK_FALSE(same);  // a different seed moves the split

  SUBCASE("stratified split applies the fraction per category") {
    const auto [strain, stest] = split_holdout(c, 0.2, 7, true);
    std::size_t odd = 0, even = 0;
    for (const Document& d : stest.documents)
      (d.category == "odd" ? odd : even) += 1;
    CHECK(odd == 1);  // ceil(0.2 * 5) per category
    CHECK(even == 1);
  }
}

TEST_CASE("write_jsonl then ingest reproduces the documents") {
  testsupport::TempDir dir;
  Corpus c;
  c.documents = {{0, "cat\"quoted", "text with \"quotes\" and \\slashes"},
                 {1, "plain", "café বা"}};
  const auto path = dir / "out.jsonl";
  write_jsonl(path, c);
  const Corpus back = ingest_corpus(path, CorpusFormat::Jsonl);
  REQUIRE(back.size() == 2);
  CHECK(back.documents[0].category == "cat\"quoted");
  CHECK(back.documents[0].text == "text with \"quotes\" and \\slashes");
  CHECK(back.documents[1].text == "café বা");
}

TEST_CASE("synthetic corpus generator is deterministic and sized") {
  const Corpus a = testsupport::synthetic_corpus(50000, 11);
  const Corpus b = testsupport::synthetic_corpus(50000, 11);
  REQUIRE(a.size() == b.size());
  CHECK(a.documents.back().text == b.documents.back().text);

  std::size_t bytes = 0;
  for (const Document& d : a.documents) bytes += d.text.size();
  CHECK(bytes >= 50000);
  CHECK(bytes < 80000);  // overshoot bounded by one document

  const Corpus c = testsupport::synthetic_corpus(50000, 12);
  CHECK(c.documents.front().text != a.documents.front().text);
}
