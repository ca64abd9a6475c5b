#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "distner/service.hpp"
#include "distner/matcher.hpp"
#include "distner/testing/synthetic.hpp"

using namespace distner;
namespace fs = std::filesystem;

namespace {

// Ten planted entities and five decoys; a zero threshold queues all fifteen in round 0.
struct Rig {
  synthetic::ActiveLearningFixture f = synthetic::active_learning_fixture(10, 5, 10, 7);
  FixtureProvider provider{f.mentions};
  std::unique_ptr<ActiveLearner> learner;

  Rig() {
    LoopConfig cfg;
    cfg.threshold = 0.0;
    cfg.seed = 1;
    auto silver = annotate_corpus(f.corpus, f.seed_dictionary).dataset;
    learner = std::make_unique<ActiveLearner>(f.corpus, silver, f.seed_dictionary, provider,
                                              std::make_unique<LinearEntityClassifier>(), cfg);
  }

  std::optional<EntityType> answer(const std::string& surface) const { return f.answers.at(to_lower(surface)); }
};

std::string fresh_dir(const std::string& name) {
  const auto dir = fs::path(testing::TempDir()) / ("service_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

ServiceOptions options(const std::string& dir, double* now = nullptr) {
  ServiceOptions o;
  o.journal_path = dir + "/journal.jsonl";
  o.audit_path = dir + "/audit.jsonl";
  o.metrics_path = dir + "/report.json";
  o.snapshot_dir = dir + "/snapshots";
  o.claim_ttl_seconds = 60.0;
  if (now) o.clock = [now] { return *now; };
  return o;
}

json label_body(const json& cand, std::optional<EntityType> type) {
  json b = {{"candidate_id", cand["candidate_id"]}, {"version", cand["version"]}};
  b["decision"] = type ? "entity" : "non-entity";
  if (type) b["entity_type"] = std::string(to_string(*type));
  return b;
}

std::size_t count_lines(const std::string& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string l; std::getline(in, l);) n += !l.empty();
  return n;
}

}  // namespace

TEST(AnnotationService, ClaimLabelProgress) {
  Rig rig;
  AnnotationService svc(*rig.learner, options(fresh_dir("basic")));
  ASSERT_EQ(svc.progress().body["queued"], 15);
  auto next = svc.next_candidate("ann1");
  ASSERT_EQ(next.status, 200);
  EXPECT_EQ(next.body["state"], "queued");
  EXPECT_EQ(next.body["claimed_by"], "ann1");
  EXPECT_TRUE(next.body.contains("left_context"));
  EXPECT_TRUE(next.body.contains("provider_score"));
  EXPECT_TRUE(next.body.contains("classifier_confidence"));

  auto r = svc.post_label(label_body(next.body, EntityType::PKG), "ann1");
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body["candidate"]["state"], "labeled");
  auto p = svc.progress().body;
  EXPECT_EQ(p["labeled"], 1);
  EXPECT_EQ(p["queued"], 14);
}

TEST(AnnotationService, OneClaimPerAnnotatorAndExpiry) {
  Rig rig;
  double now = 1000.0;
  AnnotationService svc(*rig.learner, options(fresh_dir("claims"), &now));
  auto a1 = svc.next_candidate("a").body;
  auto a2 = svc.next_candidate("a").body;
  EXPECT_EQ(a1["candidate_id"], a2["candidate_id"]);
  auto b1 = svc.next_candidate("b").body;
  EXPECT_NE(a1["candidate_id"], b1["candidate_id"]);

  // b may not label a's claimed candidate
  auto stolen = svc.post_label(label_body(a1, EntityType::PKG), "b");
  EXPECT_EQ(stolen.status, 409);
  EXPECT_EQ(stolen.body["error"]["code"], "claimed");

  // once a's claim lapses, the candidate is up for grabs again
  now += 61.0;
  auto c = svc.next_candidate("c").body;
  EXPECT_EQ(c["candidate_id"], a1["candidate_id"]);
}

TEST(AnnotationService, LabelErrors) {
  Rig rig;
  AnnotationService svc(*rig.learner, options(fresh_dir("errors")));
  auto cand = svc.next_candidate("a").body;

  auto no_type = label_body(cand, std::nullopt);
  no_type["decision"] = "entity";
  EXPECT_EQ(svc.post_label(no_type, "a").status, 400);

  auto bad_decision = label_body(cand, EntityType::PKG);
  bad_decision["decision"] = "maybe";
  EXPECT_EQ(svc.post_label(bad_decision, "a").status, 400);

  auto bad_type = label_body(cand, EntityType::PKG);
  bad_type["entity_type"] = "FOO";
  EXPECT_EQ(svc.post_label(bad_type, "a").status, 400);

  EXPECT_EQ(svc.post_label(json{{"candidate_id", 1}}, "a").status, 400);
  EXPECT_EQ(svc.post_label(label_body(cand, EntityType::PKG), "").status, 400);

  auto unknown = label_body(cand, EntityType::PKG);
  unknown["candidate_id"] = 99999;
  EXPECT_EQ(svc.post_label(unknown, "a").status, 404);

  auto stale = label_body(cand, EntityType::PKG);
  stale["version"] = cand["version"].get<int>() + 3;
  EXPECT_EQ(svc.post_label(stale, "a").status, 409);
  EXPECT_EQ(svc.progress().body["labeled"], 0);
}

TEST(AnnotationService, RetryIsIdempotent) {
  Rig rig;
  const auto dir = fresh_dir("retry");
  AnnotationService svc(*rig.learner, options(dir));
  auto cand = svc.next_candidate("a").body;
  const auto body = label_body(cand, EntityType::OS);
  ASSERT_EQ(svc.post_label(body, "a").status, 200);
  auto again = svc.post_label(body, "a");
  EXPECT_EQ(again.status, 200);
  EXPECT_EQ(again.body["status"], "already_applied");
  EXPECT_EQ(svc.progress().body["human_labels"], 1);
  EXPECT_EQ(count_lines(dir + "/journal.jsonl"), 1u);

  // a different decision on the same version is a conflict, not a retry
  auto changed = label_body(cand, EntityType::PKG);
  EXPECT_EQ(svc.post_label(changed, "a").status, 409);
}

TEST(AnnotationService, JournalIsWrittenBeforeAcknowledging) {
  Rig rig;
  const auto dir = fresh_dir("wal");
  AnnotationService svc(*rig.learner, options(dir));
  for (int i = 0; i < 3; ++i) {
    auto cand = svc.next_candidate("a").body;
    ASSERT_EQ(svc.post_label(label_body(cand, rig.answer(cand["surface"])), "a").status, 200);
    EXPECT_EQ(count_lines(dir + "/journal.jsonl"), static_cast<std::size_t>(i + 1));
  }
}

TEST(AnnotationService, AdvanceNeedsDrainedQueueAndMergesEntities) {
  Rig rig;
  const auto dir = fresh_dir("advance");
  AnnotationService svc(*rig.learner, options(dir));
  const auto dict_before = rig.learner->dictionary().size();
  auto blocked = svc.advance();
  EXPECT_EQ(blocked.status, 409);
  EXPECT_EQ(blocked.body["error"]["code"], "cannot_advance");

  std::set<std::string> entity_surfaces;
  std::size_t labeled = 0;
  for (;;) {
    auto next = svc.next_candidate("a");
    if (next.status == 204) break;
    ASSERT_EQ(next.status, 200);
    const auto type = rig.answer(next.body["surface"]);
    if (type) entity_surfaces.insert(to_lower(next.body["surface"].get<std::string>()));
    ASSERT_EQ(svc.post_label(label_body(next.body, type), "a").status, 200);
    ++labeled;
  }
  EXPECT_EQ(labeled, 15u);
  EXPECT_EQ(entity_surfaces.size(), 10u);
  EXPECT_EQ(svc.progress().body["labeled"], 10);

  auto adv = svc.advance();
  ASSERT_EQ(adv.status, 200) << adv.body.dump();
  EXPECT_EQ(rig.learner->dictionary().size(), dict_before + entity_surfaces.size());
  for (const auto& s : entity_surfaces) {
    EXPECT_TRUE(rig.learner->dictionary().contains(s, *rig.answer(s))) << s;
  }
  EXPECT_EQ(adv.body["stop_reason"], "pool_exhausted");
  EXPECT_EQ(count_lines(dir + "/audit.jsonl"), 1u);
  EXPECT_TRUE(fs::exists(dir + "/snapshots/dictionary.round1.tsv"));
  // once stopped there is nothing left to advance
  EXPECT_EQ(svc.advance().status, 409);
}

TEST(AnnotationService, JournalReplayRestoresState) {
  const auto dir = fresh_dir("replay");
  json before;
  {
    Rig rig;
    AnnotationService svc(*rig.learner, options(dir));
    for (int i = 0; i < 15; ++i) {
      auto c = svc.next_candidate("a").body;
      ASSERT_EQ(svc.post_label(label_body(c, rig.answer(c["surface"])), "a").status, 200);
    }
    ASSERT_EQ(svc.advance().status, 200);
    before = svc.progress().body;
  }
  Rig rig;
  AnnotationService svc(*rig.learner, options(dir));
  EXPECT_EQ(svc.replayed(), 16u);
  EXPECT_EQ(svc.progress().body, before);
  EXPECT_EQ(count_lines(dir + "/audit.jsonl"), 1u);
}

TEST(AnnotationService, CorruptJournalIsRefused) {
  const auto dir = fresh_dir("corrupt");
  std::ofstream(dir + "/journal.jsonl")
      << R"({"event":"label","candidate_id":4242,"version":0,"decision":"entity","entity_type":"PKG","annotator":"a"})"
      << "\n";
  Rig rig;
  try {
    AnnotationService svc(*rig.learner, options(dir));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "journal_mismatch");
  }
}

TEST(AnnotationService, Metrics) {
  Rig rig;
  const auto dir = fresh_dir("metrics");
  AnnotationService svc(*rig.learner, options(dir));
  auto missing = svc.metrics();
  EXPECT_EQ(missing.status, 404);
  EXPECT_EQ(missing.body["error"]["code"], "no_metrics");
  std::ofstream(dir + "/report.json") << R"({"exact":{"recall":0.5}})";
  auto m = svc.metrics();
  EXPECT_EQ(m.status, 200);
  EXPECT_EQ(m.body["exact"]["recall"], 0.5);
}

namespace {

struct LiveServer {
  Rig rig;
  AnnotationService svc;
  httplib::Server server;
  int port = -1;
  std::thread thread;

  explicit LiveServer(const std::string& dir) : svc(*rig.learner, options(dir)) {
    mount_annotation_api(server, svc);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LiveServer() {
    server.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_connection_timeout(5);
    return c;
  }
};

httplib::Headers as(const std::string& who) { return {{"X-Annotator-Id", who}}; }

}  // namespace

TEST(AnnotationApi, HttpRoundTrip) {
  LiveServer live(fresh_dir("http"));
  auto cli = live.client();

  auto no_header = cli.Get("/api/candidates/next");
  ASSERT_TRUE(no_header);
  EXPECT_EQ(no_header->status, 400);
  EXPECT_EQ(json::parse(no_header->body)["error"]["code"], "missing_annotator");

  auto next = cli.Get("/api/candidates/next", as("ann"));
  ASSERT_TRUE(next);
  ASSERT_EQ(next->status, 200);
  const auto cand = json::parse(next->body);

  auto bad = cli.Post("/api/labels", as("ann"), "{not json", "application/json");
  EXPECT_EQ(bad->status, 400);

  auto no_type = label_body(cand, std::nullopt);
  no_type["decision"] = "entity";
  EXPECT_EQ(cli.Post("/api/labels", as("ann"), no_type.dump(), "application/json")->status, 400);

  auto ok = cli.Post("/api/labels", as("ann"), label_body(cand, live.rig.answer(cand["surface"])).dump(), "application/json");
  ASSERT_EQ(ok->status, 200);
  auto progress = json::parse(cli.Get("/api/progress")->body);
  EXPECT_EQ(progress["labeled"].get<int>() + progress["rejected"].get<int>(), 1);

  auto adv = cli.Post("/api/rounds/advance", "", "application/json");
  EXPECT_EQ(adv->status, 409);
  EXPECT_EQ(cli.Get("/api/metrics")->status, 404);
}

TEST(AnnotationApi, ConcurrentDoubleLabelHasOneWinner) {
  LiveServer live(fresh_dir("race"));
  for (int round = 0; round < 5; ++round) {
    // the candidate is unclaimed, so both posts pass the claim check and race on the version
    const auto* c = live.rig.learner->queue().front();
    json body = {{"candidate_id", c->id}, {"version", c->version}, {"decision", "non-entity"}};
    std::atomic<int> ok{0}, conflict{0};
    std::vector<std::thread> ts;
    for (int k = 0; k < 2; ++k) {
      ts.emplace_back([&, k] {
        auto cli = live.client();
        auto r = cli.Post("/api/labels", as("racer" + std::to_string(k)), body.dump(), "application/json");
        if (r && r->status == 200) ++ok;
        if (r && r->status == 409) ++conflict;
      });
    }
    for (auto& t : ts) t.join();
    EXPECT_EQ(ok.load(), 1);
    EXPECT_EQ(conflict.load(), 1);
  }
}

TEST(AnnotationApi, ConcurrentClaimsNeverShareACandidate) {
  LiveServer live(fresh_dir("claims_race"));
  std::vector<json> got(8);
  std::vector<std::thread> ts;
  for (int k = 0; k < 8; ++k) {
    ts.emplace_back([&, k] {
      auto cli = live.client();
      auto r = cli.Get("/api/candidates/next", as("a" + std::to_string(k)));
      if (r && r->status == 200) got[k] = json::parse(r->body);
    });
  }
  for (auto& t : ts) t.join();
  std::set<std::uint64_t> ids;
  for (const auto& g : got) {
    ASSERT_FALSE(g.is_null());
    ids.insert(g["candidate_id"].get<std::uint64_t>());
  }
  EXPECT_EQ(ids.size(), 8u);
}

TEST(AnnotationApi, DrainedQueueGives204) {
  LiveServer live(fresh_dir("drain"));
  auto cli = live.client();
  for (;;) {
    auto r = cli.Get("/api/candidates/next", as("a"));
    ASSERT_TRUE(r);
    if (r->status == 204) {
      EXPECT_TRUE(r->body.empty());
      break;
    }
    const auto c = json::parse(r->body);
    ASSERT_EQ(cli.Post("/api/labels", as("a"), label_body(c, live.rig.answer(c["surface"])).dump(), "application/json")->status,
              200);
  }
  auto adv = cli.Post("/api/rounds/advance", "", "application/json");
  EXPECT_EQ(adv->status, 200);
}
