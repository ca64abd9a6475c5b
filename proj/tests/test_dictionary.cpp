#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "distner/dictionary.hpp"

using namespace distner;

namespace {

std::string write_file(const std::string& name, const std::string& body) {
  const std::string path = testing::TempDir() + name;
  std::ofstream(path) << body;
  return path;
}

DictEntry entry(std::string surface, EntityType t, std::string added = "2020-01-01") {
  return DictEntry{std::move(surface), t, "test", parse_date(added)};
}

std::size_t count_of(const Dictionary& d, EntityType t) { return d.counts()[static_cast<std::size_t>(t)]; }

}  // namespace

TEST(LoadLookupTables, ThreeRows) {
  auto path = write_file("three.tsv",
                         "surface\tentity_type\tsource\tadded_at\n"
                         "cat\tCMD\twiki\t2019-01-01\n"
                         "bios\tSOC\twiki\t2019-01-01\n"
                         "x86\tARC\twiki\t2019-01-01\n");
  auto dict = load_lookup_tables(path);
  EXPECT_EQ(dict.size(), 3u);
  EXPECT_EQ(count_of(dict, EntityType::CMD), 1u);
  EXPECT_EQ(count_of(dict, EntityType::SOC), 1u);
  EXPECT_EQ(count_of(dict, EntityType::ARC), 1u);
  EXPECT_EQ(count_of(dict, EntityType::PKG), 0u);
}

TEST(LoadLookupTables, DuplicateKeepsEarliestDate) {
  auto path = write_file("dup.tsv",
                         "surface\tentity_type\tsource\tadded_at\n"
                         "cat\tCMD\ta\t2019-05-01\n"
                         "Cat\tCMD\tb\t2018-02-03\n");
  LoadReport report;
  auto dict = load_lookup_tables(path, default_stopwords(), &report);
  EXPECT_EQ(count_of(dict, EntityType::CMD), 1u);
  EXPECT_EQ(report.duplicates, 1u);
  EXPECT_EQ(dict.entries().begin()->second.added_at, (Date{2018, 2, 3}));
}

TEST(LoadLookupTables, PerTypeFileUsesFileName) {
  auto path = write_file("PKG.tsv", "surface\tsource\tadded_at\napt\tubuntu\t2019-01-01\ndocker-ce\tubuntu\t2019-01-01\n");
  auto dict = load_lookup_tables(path);
  EXPECT_EQ(count_of(dict, EntityType::PKG), 2u);
}

TEST(LoadLookupTables, Errors) {
  auto bad_row = write_file("bad_row.tsv", "surface\tentity_type\tsource\tadded_at\ncat\tCMD\n");
  try {
    load_lookup_tables(bad_row);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "malformed_row");
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
  }
  auto bad_type = write_file("bad_type.tsv", "surface\tentity_type\tsource\tadded_at\ncat\tGPU\tx\t2019-01-01\n");
  try {
    load_lookup_tables(bad_type);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unknown_entity_type");
  }
}

TEST(LoadLookupTables, StopwordsRejectedAtLoad) {
  auto path = write_file("stop.tsv", "surface\tentity_type\tsource\tadded_at\nthe\tPKG\tx\t2019-01-01\napt\tPKG\tx\t2019-01-01\n");
  LoadReport report;
  auto dict = load_lookup_tables(path, default_stopwords(), &report);
  EXPECT_EQ(dict.size(), 1u);
  EXPECT_EQ(report.stopword_rejected, 1u);
}

TEST(AddEntries, Report) {
  auto [d1, r1] = add_entries(Dictionary{}, {entry("docker-ce", EntityType::PKG)});
  EXPECT_EQ(r1.inserted.size(), 1u);

  auto [d2, r2] = add_entries(std::move(d1), {entry("cat", EntityType::CMD)});
  auto [d3, r3] = add_entries(std::move(d2), {entry("cat", EntityType::CMD)});
  EXPECT_EQ(r3.already_present.size(), 1u);
  EXPECT_EQ(r3.inserted.size(), 0u);

  auto [d4, r4] = add_entries(std::move(d3), {entry("the", EntityType::PKG)});
  EXPECT_EQ(r4.rejected.size(), 1u);
  EXPECT_EQ(d4.size(), 2u);
}

TEST(Query, Examples) {
  Dictionary d;
  d.add({entry("No such process", EntityType::ERR), entry("Desktop", EntityType::SOC)});
  EXPECT_EQ(query(d, {"no", "such", "process"}), std::vector<EntityType>{EntityType::ERR});
  EXPECT_EQ(query(d, {"desktop"}), std::vector<EntityType>{EntityType::SOC});
  EXPECT_TRUE(query(d, {"zzz"}).empty());
  EXPECT_TRUE(query(d, {"no", "such"}).empty());
  EXPECT_TRUE(query(d, {}).empty());
}

TEST(Query, SameSurfaceSeveralTypes) {
  Dictionary d;
  d.add({entry("ubuntu", EntityType::OS), entry("Ubuntu", EntityType::ORG)});
  auto types = query(d, {"ubuntu"});
  EXPECT_EQ(types, (std::vector<EntityType>{EntityType::ORG, EntityType::OS}));
}

TEST(Dictionary, RemoveKeepsIndexConsistent) {
  Dictionary d;
  d.add({entry("Linux 4.15", EntityType::OS), entry("Linux", EntityType::OS)});
  EXPECT_TRUE(d.remove("linux", EntityType::OS));
  EXPECT_TRUE(query(d, {"linux"}).empty());
  EXPECT_EQ(query(d, {"linux", "4.15"}), std::vector<EntityType>{EntityType::OS});
  EXPECT_FALSE(d.remove("linux", EntityType::OS));
}

// query(q) is nonempty exactly when some entry tokenizes to q, checked on random entries.
TEST(Dictionary, QueryMatchesEntryTokenization) {
  std::mt19937 rng(3);
  const std::vector<std::string> words = {"apt", "Get", "x86", "lib-c", "a.b", "Z"};
  for (int round = 0; round < 100; ++round) {
    Dictionary d(std::set<std::string>{});
    std::vector<DictEntry> batch;
    for (int i = 0; i < 8; ++i) {
      std::string s;
      const int n = 1 + static_cast<int>(rng() % 3);
      for (int k = 0; k < n; ++k) s += (k ? " " : "") + words[rng() % words.size()];
      batch.push_back(entry(s, static_cast<EntityType>(rng() % 9)));
    }
    d.add(batch);
    for (int q = 0; q < 30; ++q) {
      std::vector<std::string> query_tokens;
      const int n = 1 + static_cast<int>(rng() % 3);
      for (int k = 0; k < n; ++k) query_tokens.push_back(to_lower(words[rng() % words.size()]));
      std::set<EntityType> expected;
      for (const auto& [key, e] : d.entries()) {
        auto doc = make_document("e", e.surface);
        if (lowered_tokens(doc, 0, doc.tokens.size()) == query_tokens) expected.insert(e.entity_type);
      }
      auto got = query(d, query_tokens);
      ASSERT_EQ(std::set<EntityType>(got.begin(), got.end()), expected);
    }
  }
}

TEST(SaveLookupTables, RoundTrip) {
  Dictionary d;
  d.add({entry("apt", EntityType::PKG, "2019-03-04"), entry("No such process", EntityType::ERR),
         entry("x86", EntityType::ARC), entry("Ubuntu", EntityType::OS)});
  const std::string path = testing::TempDir() + "saved.tsv";
  save_lookup_tables(d, path);
  auto back = load_lookup_tables(path);
  ASSERT_EQ(back.size(), d.size());
  auto a = d.entries().begin();
  for (auto b = back.entries().begin(); b != back.entries().end(); ++a, ++b) {
    EXPECT_EQ(a->first, b->first);
    EXPECT_EQ(a->second.surface, b->second.surface);
    EXPECT_EQ(a->second.source, b->second.source);
    EXPECT_EQ(a->second.added_at, b->second.added_at);
  }
  EXPECT_EQ(back.counts(), d.counts());
}

TEST(Stopwords, DefaultListSize) {
  const auto sw = default_stopwords();
  EXPECT_GE(sw.size(), 280u);
  EXPECT_TRUE(sw.count("the"));
  // Words that are also command or package names stay matchable.
  EXPECT_FALSE(sw.count("cat"));
  EXPECT_FALSE(sw.count("less"));
}
