#include <gtest/gtest.h>

#include <random>

#include "distner/core_model.hpp"
#include "distner/corpus_io.hpp"

using namespace distner;

namespace {

std::vector<std::string> surfaces(const std::vector<Token>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.surface);
  return out;
}

Document doc_with_words(std::size_t n) {
  std::string text;
  for (std::size_t i = 0; i < n; ++i) text += (i ? " w" : "w") + std::to_string(i);
  return make_document("d", text);
}

const char* kExampleText =
    "After upgrading to Ubuntu 18.04 and thus from Linux 4.13 to Linux 4.15) the Monitor connected "
    "via VGA (through DVI-I) shows a `No Signal' message after amdgpu takes over from efifb and turns off.";

}  // namespace

TEST(Tokenize, Whitespace) {
  EXPECT_EQ(surfaces(tokenize("sudo apt update")), (std::vector<std::string>{"sudo", "apt", "update"}));
}

TEST(Tokenize, DetachesTrailingPunctuationKeepsInternalHyphen) {
  EXPECT_EQ(surfaces(tokenize("pypy-configparser crashed.")),
            (std::vector<std::string>{"pypy-configparser", "crashed", "."}));
}

TEST(Tokenize, Empty) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize("   \n\t ").empty());
}

TEST(Tokenize, VersionStringsAndPaths) {
  EXPECT_EQ(surfaces(tokenize("(Linux 4.15) /usr/lib/x86_64-linux-gnu, g++")),
            (std::vector<std::string>{"(", "Linux", "4.15", ")", "/", "usr/lib/x86_64-linux-gnu", ",", "g", "+", "+"}));
}

TEST(Tokenize, OffsetsReconstructText) {
  std::mt19937 rng(7);
  const std::string alphabet = "ab1.-_/+(),;:'\" \t\n\xC3\xA9";
  for (int round = 0; round < 500; ++round) {
    std::string text;
    const int len = static_cast<int>(rng() % 40);
    for (int i = 0; i < len; ++i) {
      const auto k = rng() % (alphabet.size() - 1);
      if (alphabet[k] == '\xC3') {
        text += "\xC3\xA9";
      } else if (alphabet[k] == '\xA9') {
        text += 'a';
      } else {
        text += alphabet[k];
      }
    }
    const auto tokens = tokenize(text);
    std::size_t last_end = 0;
    for (const auto& t : tokens) {
      ASSERT_LT(t.char_start, t.char_end);
      ASSERT_GE(t.char_start, last_end);
      ASSERT_EQ(text.substr(t.char_start, t.char_end - t.char_start), t.surface);
      last_end = t.char_end;
    }
    // Everything not covered by a token is whitespace.
    std::string stripped;
    for (char c : text) {
      if (!is_ascii_space(c)) stripped += c;
    }
    std::string joined;
    for (const auto& t : tokens) joined += t.surface;
    ASSERT_EQ(joined, stripped);
  }
}

TEST(Document, RejectsInvalidUtf8) {
  EXPECT_THROW(make_document("x", "bad \xC3 byte"), Error);
  EXPECT_THROW(make_document("x", "\xED\xA0\x80"), Error);  // surrogate
  EXPECT_NO_THROW(make_document("x", "caf\xC3\xA9"));
}

TEST(ValidateDocument, LengthThresholds) {
  EXPECT_EQ(validate_document(doc_with_words(59)), Verdict::too_short);
  EXPECT_EQ(validate_document(doc_with_words(60)), Verdict::accept);
  EXPECT_EQ(validate_document(doc_with_words(400)), Verdict::accept);
  EXPECT_EQ(validate_document(doc_with_words(401)), Verdict::too_long);
}

TEST(ValidateDocument, CrossReferenceOnly) {
  auto d = make_document("b1", "Automatically imported from Debian bug report #257568");
  EXPECT_EQ(validate_document(d), Verdict::cross_reference);
  // A real description that merely mentions the phrase is judged on length.
  auto long_doc = doc_with_words(80);
  long_doc.text = "Automatically imported from Debian bug report #1 but then " + long_doc.text;
  long_doc.tokens = tokenize(long_doc.text);
  EXPECT_EQ(validate_document(long_doc), Verdict::accept);
}

TEST(ValidateDocument, CustomPattern) {
  ValidationConfig cfg;
  cfg.cross_reference_pattern = "dup of #\\d+";
  cfg.min_words = 1;
  EXPECT_EQ(validate_document(make_document("a", "dup of #12"), cfg), Verdict::cross_reference);
  EXPECT_EQ(validate_document(make_document("a", "Automatically imported from Debian bug report"), cfg),
            Verdict::accept);
}

TEST(SpansToTags, ExampleBox) {
  auto doc = make_document("ex", kExampleText);
  // Ubuntu 18.04 | Linux 4.13 | Linux 4.15 | Monitor | VGA
  std::vector<Span> spans = {{3, 5, EntityType::OS},   {8, 10, EntityType::OS},  {11, 13, EntityType::OS},
                             {15, 16, EntityType::PRP}, {18, 19, EntityType::PRP}};
  ASSERT_EQ(doc.tokens[3].surface, "Ubuntu");
  ASSERT_EQ(doc.tokens[15].surface, "Monitor");
  ASSERT_EQ(doc.tokens[18].surface, "VGA");
  auto tags = spans_to_tags(doc, spans);

  // Compare on the word-level view: drop tokens that are detached punctuation.
  std::vector<std::string> word_tags;
  for (std::size_t i = 0; i < doc.tokens.size() && word_tags.size() < 19; ++i) {
    const auto& s = doc.tokens[i].surface;
    if (s.size() == 1 && is_ascii_punct(s[0])) continue;
    word_tags.push_back(to_string(tags[i]));
  }
  const std::vector<std::string> expected = {"O",    "O", "O", "I_OS", "I_OS",  "O", "O", "O",     "I_OS", "I_OS",
                                             "O", "I_OS", "I_OS", "O", "I_PRP", "O", "O", "I_PRP", "O"};
  EXPECT_EQ(word_tags, expected);
}

TEST(SpansToTags, NoSpansAllO) {
  auto doc = make_document("d", "a b c");
  EXPECT_EQ(spans_to_tags(doc, {}), TagSequence(3, Tag::O));
}

TEST(SpansToTags, WholeDocumentSpan) {
  auto doc = make_document("d", "No such process");
  EXPECT_EQ(spans_to_tags(doc, {{0, 3, EntityType::ERR}}), TagSequence(3, Tag::I_ERR));
}

TEST(SpansToTags, OverlapIsAnError) {
  auto doc = make_document("d", "Windows NT 4.0");
  try {
    spans_to_tags(doc, {{0, 3, EntityType::OS}, {0, 1, EntityType::OS}});
    FAIL() << "expected unresolved_overlap";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "unresolved_overlap");
  }
}

TEST(TagsToSpans, Runs) {
  auto spans = tags_to_spans({Tag::O, Tag::I_OS, Tag::I_OS, Tag::O});
  ASSERT_EQ(spans.size(), 1u);
  EXPECT_EQ(spans[0].token_start, 1u);
  EXPECT_EQ(spans[0].token_end, 3u);
  EXPECT_EQ(spans[0].entity_type, EntityType::OS);

  EXPECT_TRUE(tags_to_spans(TagSequence(5, Tag::O)).empty());

  auto two = tags_to_spans({Tag::I_PKG, Tag::I_OS});
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].entity_type, EntityType::PKG);
  EXPECT_EQ(two[1].entity_type, EntityType::OS);
}

TEST(TagsToSpans, UnknownSymbol) {
  EXPECT_THROW(tags_from_strings({"O", "I_FOO"}), Error);
  EXPECT_THROW(tags_from_strings({"B_PKG"}), Error);
  EXPECT_EQ(tags_from_strings({"O", "I_SOC"}), (TagSequence{Tag::O, Tag::I_SOC}));
}

TEST(TagsToSpans, AdjacentSameTypeMerges) {
  auto doc = make_document("d", "apt dpkg");
  auto tags = spans_to_tags(doc, {{0, 1, EntityType::PKG}, {1, 2, EntityType::PKG}});
  auto back = tags_to_spans(tags);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].token_end, 2u);
}

// Round trip: only adjacent same-type spans get merged.
TEST(TagsToSpans, RoundTripProperty) {
  std::mt19937 rng(11);
  for (int round = 0; round < 1000; ++round) {
    const std::size_t n = 1 + rng() % 20;
    std::vector<Span> spans;
    std::size_t i = 0;
    while (i < n) {
      if (rng() % 3 == 0) {
        const std::size_t len = 1 + rng() % std::min<std::size_t>(4, n - i);
        spans.push_back(Span{i, i + len, static_cast<EntityType>(rng() % 3)});
        i += len;
      } else {
        ++i;
      }
    }
    std::string text;
    for (std::size_t k = 0; k < n; ++k) text += "t ";
    auto doc = make_document("d", text);
    auto back = tags_to_spans(spans_to_tags(doc, spans));

    std::vector<Span> merged;
    for (const auto& s : spans) {
      if (!merged.empty() && merged.back().token_end == s.token_start && merged.back().entity_type == s.entity_type) {
        merged.back().token_end = s.token_end;
      } else {
        merged.push_back(s);
      }
    }
    ASSERT_EQ(back.size(), merged.size());
    for (std::size_t k = 0; k < back.size(); ++k) ASSERT_TRUE(back[k].same_extent(merged[k]));
  }
}

TEST(EntityType, NineStableNames) {
  EXPECT_EQ(kAllEntityTypes.size(), 9u);
  for (auto t : kAllEntityTypes) EXPECT_EQ(entity_type_from(to_string(t)), t);
  EXPECT_EQ(kTagCount, 10u);
  EXPECT_THROW(entity_type_from("GPU"), Error);
}

TEST(CorpusIo, RoundTrip) {
  const std::string path = testing::TempDir() + "corpus.jsonl";
  auto d = make_document("b1", "apt fails", parse_date("2010-05-02T10:00:00Z"), Source::qa);
  d.metadata["title"] = "x";
  write_corpus(path, {d});
  auto back = read_corpus(path);
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].id, "b1");
  EXPECT_EQ(back[0].created_at, (Date{2010, 5, 2}));
  EXPECT_EQ(back[0].source, Source::qa);
  EXPECT_EQ(back[0].metadata.at("title"), "x");
  EXPECT_EQ(back[0].tokens.size(), 2u);
}

TEST(CorpusIo, DuplicateIdRejected) {
  const std::string path = testing::TempDir() + "dup.jsonl";
  {
    auto out = open_output(path);
    out << R"({"id":"a","text":"x","created_at":"2010-01-01","source":"bug"})" << '\n';
    out << R"({"id":"a","text":"y","created_at":"2010-01-01","source":"bug"})" << '\n';
  }
  try {
    read_corpus(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "duplicate_id");
  }
}

TEST(CorpusIo, AnnotationsRoundTrip) {
  const std::string path = testing::TempDir() + "ann.jsonl";
  Annotations ann;
  ann["d1"] = {Span{0, 2, EntityType::OS, Provenance::human, 0.75}};
  ann["d2"] = {Span{1, 2, EntityType::PKG, Provenance::model, 0.5}};
  write_annotations(path, ann);
  auto back = read_annotations(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back["d1"][0].same_extent(ann["d1"][0]));
  EXPECT_EQ(back["d1"][0].provenance, Provenance::human);
  EXPECT_DOUBLE_EQ(back["d2"][0].confidence, 0.5);
}
