#include <gtest/gtest.h>

#include <fstream>

#include "distner/relation_extractor.hpp"
#include "distner/testing/synthetic.hpp"

using namespace distner;

namespace {

// A tagger trained once on the triplet documents, shared by the tests below.
const synthetic::TripletFixture& fixture() {
  static const auto f = synthetic::triplet_corpus();
  return f;
}

const CrfModel& tagger() {
  static const CrfModel m = [] {
    TrainOptions opt;
    opt.iterations = 10;
    opt.seed = 1;
    return train_pa(fixture().tagged, opt);
  }();
  return m;
}

std::vector<Triplet> pick(const std::vector<Triplet>& all, const std::vector<std::size_t>& idx) {
  std::vector<Triplet> out;
  for (auto i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

TEST(RelationType, Parsing) {
  EXPECT_EQ(relation_from("dependency"), RelationType::dependency);
  EXPECT_EQ(relation_from("interaction_control"), RelationType::interaction_control);
  EXPECT_FALSE(relation_from("conflict"));
  EXPECT_THROW(relation_from("likes"), Error);
}

TEST(Triplets, FileDropsConflicts) {
  const std::string path = testing::TempDir() + "triplets.jsonl";
  std::ofstream(path)
      << R"({"doc_id":"a","head":{"start":0,"end":1,"type":"PKG"},"tail":{"start":2,"end":3,"type":"OS"},"relation":"dependency"})"
      << "\n"
      << R"({"doc_id":"a","head":{"start":0,"end":1,"type":"PKG"},"tail":{"start":2,"end":3,"type":"OS"},"relation":"conflict"})"
      << "\n";
  auto set = read_triplets(path);
  EXPECT_EQ(set.triplets.size(), 1u);
  EXPECT_EQ(set.conflicts_dropped, 1u);
  EXPECT_EQ(triplet_to_json(set.triplets[0])["tail"]["type"], "OS");
}

TEST(Triplets, FixtureDistribution) {
  const auto& f = fixture();
  std::array<std::size_t, kRelationCount> n{};
  for (const auto& t : f.set.triplets) ++n[static_cast<std::size_t>(t.relation)];
  // 642 rows at 27/21/17/31% with the remainder as conflict
  EXPECT_EQ(n[0], 173u);
  EXPECT_EQ(n[1], 135u);
  EXPECT_EQ(n[2], 109u);
  EXPECT_EQ(n[3], 199u);
  EXPECT_EQ(f.set.conflicts_dropped, 26u);
  EXPECT_EQ(f.lines.size(), 642u);
}

TEST(FeaturizePair, Properties) {
  const auto& f = fixture();
  NativeCrfEncoder enc(tagger());
  const auto& t = f.set.triplets[0];
  const auto& doc = *index_documents(f.docs).at(t.doc_id);
  auto a = featurize_pair(doc, t.head, t.tail, enc);
  auto b = featurize_pair(doc, t.head, t.tail, enc);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), pair_feature_dims(enc));
  const std::size_t d = enc.dims();
  EXPECT_DOUBLE_EQ(a[2 * d], std::abs(static_cast<double>(t.tail.token_start) - static_cast<double>(t.head.token_start)));
  auto swapped = featurize_pair(doc, t.tail, t.head, enc);
  EXPECT_DOUBLE_EQ(a[2 * d + 1], -swapped[2 * d + 1]);
  EXPECT_DOUBLE_EQ(a[2 * d], swapped[2 * d]);
  Span bad{0, doc.tokens.size() + 1, EntityType::PKG};
  EXPECT_THROW(featurize_pair(doc, bad, t.tail, enc), Error);

  BagOfWordsEncoder bow;
  EXPECT_EQ(featurize_pair(doc, t.head, t.tail, bow).size(), 2u * 32u + 2u);
}

TEST(RelationClassifier, FullDataIsPerfect) {
  const auto& f = fixture();
  auto docs = index_documents(f.docs);
  NativeCrfEncoder enc(tagger());
  RelationTrainOptions opt;
  opt.train_fraction = 1.0;
  auto r = train_relation_clf(f.set.triplets, docs, enc, opt);
  EXPECT_EQ(r.train_indices.size(), f.set.triplets.size());
  auto report = evaluate_relations(r.model, f.set.triplets, docs, enc);
  EXPECT_DOUBLE_EQ(report.accuracy, 1.0);
  EXPECT_DOUBLE_EQ(report.macro_f1, 1.0);
}

TEST(RelationClassifier, SmallSliceBeatsChanceAndAblation) {
  const auto& f = fixture();
  auto docs = index_documents(f.docs);
  NativeCrfEncoder enc(tagger());
  RelationTrainOptions opt;
  opt.train_fraction = 0.03;
  opt.seed = 4;
  auto r = train_relation_clf(f.set.triplets, docs, enc, opt);
  EXPECT_EQ(r.train_indices.size(), 5u + 4u + 3u + 6u);
  EXPECT_EQ(r.train_indices.size() + r.held_out_indices.size(), f.set.triplets.size());
  const auto held_out = pick(f.set.triplets, r.held_out_indices);
  auto native = evaluate_relations(r.model, held_out, docs, enc);
  EXPECT_GT(native.accuracy, 0.25);

  BagOfWordsEncoder bow;
  auto rb = train_relation_clf(f.set.triplets, docs, bow, opt);
  EXPECT_EQ(rb.held_out_indices, r.held_out_indices);
  auto ablation = evaluate_relations(rb.model, held_out, docs, bow);
  EXPECT_GT(native.accuracy, ablation.accuracy);

  // the same seed gives the same model
  auto again = train_relation_clf(f.set.triplets, docs, enc, opt);
  EXPECT_EQ(again.model.to_json().dump(), r.model.to_json().dump());
}

TEST(RelationClassifier, ReportUsesSharedScores) {
  const auto& f = fixture();
  auto docs = index_documents(f.docs);
  BagOfWordsEncoder bow;
  RelationTrainOptions opt;
  opt.train_fraction = 0.1;
  auto r = train_relation_clf(f.set.triplets, docs, bow, opt);
  auto report = evaluate_relations(r.model, f.set.triplets, docs, bow);
  for (const auto& c : report.per_class) {
    auto again = class_scores(c.matched, c.gold, c.predicted);
    EXPECT_DOUBLE_EQ(again.f1, c.f1);
  }
  EXPECT_DOUBLE_EQ(report.macro_f1, macro_f1(report.per_class));
}

TEST(RelationClassifier, OnePerClassTrains) {
  const auto& f = fixture();
  std::vector<Triplet> four;
  for (auto rel : kAllRelations) {
    for (const auto& t : f.set.triplets) {
      if (t.relation == rel) {
        four.push_back(t);
        break;
      }
    }
  }
  auto docs = index_documents(f.docs);
  BagOfWordsEncoder bow;
  RelationTrainOptions opt;
  opt.train_fraction = 1.0;
  auto r = train_relation_clf(four, docs, bow, opt);
  EXPECT_EQ(r.model.train_size, 4u);
  opt.train_fraction = 0.03;
  try {
    train_relation_clf(four, docs, bow, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "class_missing");
  }
}

TEST(RelationClassifier, ZeroModelAndModeMismatch) {
  auto doc = make_document("d", "libx needs liby");
  Span h{0, 1, EntityType::PKG}, t{2, 3, EntityType::PKG};
  BagOfWordsEncoder bow;
  auto zero = RelationModel::zero("bow", pair_feature_dims(bow));
  auto p = classify_triplet(zero, doc, h, t, bow);
  EXPECT_EQ(p.relation, RelationType::dependency);
  EXPECT_DOUBLE_EQ(p.scores[3], 0.25);
  NativeCrfEncoder native(tagger());
  EXPECT_THROW(classify_triplet(zero, doc, h, t, native), Error);
  auto round_trip = RelationModel::from_json(zero.to_json());
  EXPECT_EQ(round_trip.to_json(), zero.to_json());
}

TEST(RelationClassifier, PatternedExamples) {
  const auto& f = fixture();
  auto docs = index_documents(f.docs);
  NativeCrfEncoder enc(tagger());
  RelationTrainOptions opt;
  opt.train_fraction = 1.0;
  auto model = train_relation_clf(f.set.triplets, docs, enc, opt).model;
  auto dep = make_document("x1", "the sane-utils package needs the Scanner attached");
  EXPECT_EQ(classify_triplet(model, dep, {1, 2, EntityType::PKG}, {5, 6, EntityType::PKG}, enc).relation,
            RelationType::dependency);
  auto ctl = make_document("x2", "use apt install to fetch it");
  EXPECT_EQ(classify_triplet(model, ctl, {1, 2, EntityType::PKG}, {2, 3, EntityType::CMD}, enc).relation,
            RelationType::interaction_control);
}

TEST(EntityEncoder, Plugin) {
  ProcessEntityEncoder enc(std::string(FAKE_PLUGIN) + " encoder-length", 2);
  auto doc = make_document("d", "a b c d");
  EXPECT_EQ(enc.encode(doc, {0, 1, EntityType::PKG}), (std::vector<double>{4.0, 1.0}));
  ProcessEntityEncoder wrong(std::string(FAKE_PLUGIN) + " encoder-length", 3);
  EXPECT_THROW(wrong.encode(doc, {0, 1, EntityType::PKG}), Error);
}

TEST(CandidatePairs, Window) {
  std::vector<Span> e = {{0, 1, EntityType::PKG}, {5, 6, EntityType::OS}, {50, 51, EntityType::CMD}};
  auto pairs = candidate_pairs(e, 40);
  EXPECT_EQ(pairs.size(), 2u);  // (0,5) and (5,0)
  EXPECT_EQ(candidate_pairs(e, 100).size(), 6u);
}
