#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "crw/annotation_server.hpp"
#include "stats_fixtures.hpp"
#include "test_support.hpp"

using namespace crw;
namespace fx = crw::fixtures;
using crw::testing::TempDir;

namespace {

struct FakeClock {
  std::shared_ptr<std::int64_t> now = std::make_shared<std::int64_t>(1'700'000'000'000);
  Clock fn() const {
    auto p = now;
    return [p] { return Instant{*p}; };
  }
  void advance(std::int64_t ms) const { *now += ms; }
};

json phase1(const std::string& rater, const std::string& sample, json criteria, int interactions = 1,
            const std::string& experiment = "exp1") {
  json row = fx::rubric_row(rater, experiment, sample, std::move(criteria));
  row.erase("is_draft");
  row["results_metadata"]["interaction_count"] = interactions;
  return row;
}

json complete_criteria() {
  return json::array({fx::criterion("c1", 0, 5, true, true), fx::criterion("c2", 1, 4, false, false, true),
                      fx::criterion("n1", 2, 3, json(), true, false, true)});
}

json phase2(const std::string& rater, const std::string& sample, int pairs, bool chosen = true) {
  json arr = json::array();
  for (int i = 0; i < pairs; ++i) {
    fx::PairVerdict v{rater, chosen ? "A" : "", i % 2 == 0};
    auto p = fx::pair_entry("pair" + std::to_string(i), "ours", "base" + std::to_string(i), v);
    if (!chosen) p["choice"] = nullptr;
    arr.push_back(p);
  }
  json row = fx::ab_row(rater, "exp2", sample, arr);
  row.erase("is_draft");
  return row;
}

}  // namespace

TEST(Time, FormatRoundTrips) {
  for (std::int64_t ms : {0LL, 1'700'000'000'123LL, 5'000'000'000'000LL, -86'400'001LL}) {
    const auto text = format_iso8601(Instant{ms});
    const auto back = parse_iso8601(text);
    ASSERT_TRUE(back) << text;
    EXPECT_EQ(back->millis, ms) << text;
  }
  EXPECT_EQ(format_iso8601(Instant{0}), "1970-01-01T00:00:00.000Z");
}

TEST(Store, FirstDraftThenUpsertInPlace) {
  TempDir dir;
  FakeClock clock;
  AnnotationStore store(dir.path, clock.fn());
  const auto first = store.upsert_draft(phase1("r1", "s1", complete_criteria(), 3));
  EXPECT_TRUE(first["is_draft"].get<bool>());
  EXPECT_EQ(first["created_at"], first["updated_at"]);
  clock.advance(1000);
  const auto second = store.upsert_draft(phase1("r1", "s1", complete_criteria(), 1));
  EXPECT_EQ(store.size(), 1u);
  EXPECT_EQ(second["created_at"], first["created_at"]);
  EXPECT_GT(*parse_iso8601(second["updated_at"].get<std::string>()), *parse_iso8601(first["updated_at"].get<std::string>()));
  // interaction count never goes backwards
  EXPECT_EQ(second["results_metadata"]["interaction_count"], 3);
  const auto third = store.upsert_draft(phase1("r1", "s1", complete_criteria(), 7));
  EXPECT_EQ(third["results_metadata"]["interaction_count"], 7);
}

TEST(Store, ReplayIsIdenticalExceptUpdatedAt) {
  TempDir dir;
  FakeClock clock;
  AnnotationStore store(dir.path, clock.fn());
  auto a = store.upsert_draft(phase1("r1", "s1", complete_criteria(), 2));
  clock.advance(5);
  auto b = store.upsert_draft(phase1("r1", "s1", complete_criteria(), 2));
  EXPECT_NE(a["updated_at"], b["updated_at"]);
  a.erase("updated_at");
  b.erase("updated_at");
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(Store, TimestampsStrictlyIncreaseUnderAFrozenClock) {
  TempDir dir;
  FakeClock clock;
  AnnotationStore store(dir.path, clock.fn());
  const auto a = store.upsert_draft(phase1("r1", "s1", complete_criteria()));
  const auto b = store.upsert_draft(phase1("r1", "s1", complete_criteria()));
  EXPECT_LT(a["updated_at"].get<std::string>(), b["updated_at"].get<std::string>());
}

TEST(Store, FinalizeGuardsAndStateMachine) {
  TempDir dir;
  AnnotationStore store(dir.path);
  EXPECT_THROW(store.finalize({"r1", "nope", "clinical_reasoning"}), Error);
  try {
    store.finalize({"r1", "nope", "clinical_reasoning"});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoDraft);
  }

  auto crit = complete_criteria();
  crit[1]["not_relevant"] = nullptr;  // suitability not decided
  crit[0]["verdict"] = nullptr;
  store.upsert_draft(phase1("r1", "s1", crit));
  try {
    store.finalize({"r1", "s1", "clinical_reasoning"});
    FAIL() << "guard should block";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GuardFailed);
    EXPECT_NE(e.detail().find("c1: verdict"), std::string::npos);
    EXPECT_NE(e.detail().find("c2: suitability"), std::string::npos);
  }
  store.upsert_draft(phase1("r1", "s1", complete_criteria()));
  const auto done = store.finalize({"r1", "s1", "clinical_reasoning"});
  EXPECT_FALSE(done["is_draft"].get<bool>());
  try {
    store.upsert_draft(phase1("r1", "s1", complete_criteria()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FinalizedRecordExists);
  }
  EXPECT_THROW(store.finalize({"r1", "s1", "clinical_reasoning"}), Error);
}

TEST(Store, PhaseTwoNeedsAllThreePairs) {
  TempDir dir;
  AnnotationStore store(dir.path);
  store.upsert_draft(phase2("r1", "s1", 2));
  try {
    store.finalize({"r1", "s1", "ab_clinical_reasoning"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GuardFailed);
    EXPECT_NE(e.detail().find("2 of 3"), std::string::npos);
  }
  store.upsert_draft(phase2("r1", "s2", 3, false));
  EXPECT_EQ(guard_missing(*store.get({"r1", "s2", "ab_clinical_reasoning"})).size(), 3u);
  store.upsert_draft(phase2("r1", "s1", 3));
  EXPECT_FALSE(store.finalize({"r1", "s1", "ab_clinical_reasoning"})["is_draft"].get<bool>());
}

TEST(Store, SchemaViolations) {
  TempDir dir;
  AnnotationStore store(dir.path);
  auto expect_schema = [&](json sub) {
    try {
      store.upsert_draft(std::move(sub));
      FAIL() << "accepted";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::SchemaViolation);
    }
  };
  auto invalid = phase1("r1", "s1", complete_criteria());
  invalid["is_invalid"] = true;
  invalid["invalid_reason"] = "  ";
  expect_schema(invalid);
  auto bad_type = phase1("r1", "s1", complete_criteria());
  bad_type["submission_type"] = "other";
  expect_schema(bad_type);
  auto bad_axis = phase1("r1", "s1", complete_criteria());
  bad_axis["payload"]["criteria"][0]["axis"] = "Vibes";
  expect_schema(bad_axis);
  auto dup = phase1("r1", "s1", json::array({fx::criterion("c1", 0, 5, true, true), fx::criterion("c1", 1, 5, true, true)}));
  expect_schema(dup);
  auto mapping = phase2("r1", "s1", 3);
  mapping["payload"]["pairs"][0]["displayedAsB"] = mapping["payload"]["pairs"][0]["displayedAsA"];
  expect_schema(mapping);
  auto choice = phase2("r1", "s1", 3);
  choice["payload"]["pairs"][0]["choice"] = "C";
  expect_schema(choice);
  auto no_sample = phase1("r1", "", complete_criteria());
  expect_schema(no_sample);
  EXPECT_EQ(store.size(), 0u);
}

TEST(Store, InvalidRecordsSkipGuardsAndExportFlagged) {
  TempDir dir;
  AnnotationStore store(dir.path);
  auto sub = phase2("r1", "s1", 1, false);
  sub["is_invalid"] = true;
  sub["invalid_reason"] = "reference response is empty";
  store.upsert_draft(sub);
  store.finalize({"r1", "s1", "ab_clinical_reasoning"});
  const auto rows = store.export_rows("exp2");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_TRUE(rows[0]["is_invalid"].get<bool>());
  EXPECT_EQ(load_export(rows).ab_invalid, 1u);
}

TEST(Store, ExportFinalizedOnlyAndOrderIndependent) {
  TempDir d1, d2;
  AnnotationStore a(d1.path), b(d2.path);
  EXPECT_TRUE(a.export_rows("exp1").empty());
  const std::vector<std::pair<std::string, std::string>> subs{{"r1", "s1"}, {"r2", "s1"}, {"r1", "s2"}};
  for (const auto& [r, s] : subs) a.upsert_draft(phase1(r, s, complete_criteria()));
  for (auto it = subs.rbegin(); it != subs.rend(); ++it) b.upsert_draft(phase1(it->first, it->second, complete_criteria()));
  for (auto* st : {&a, &b}) {
    st->finalize({"r1", "s1", "clinical_reasoning"});
    st->finalize({"r1", "s2", "clinical_reasoning"});
  }
  const auto ea = a.export_rows("exp1"), eb = b.export_rows("exp1");
  ASSERT_EQ(ea.size(), 2u);
  ASSERT_EQ(eb.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(key_of(ea[i]), key_of(eb[i]));
  EXPECT_TRUE(a.export_rows("other").empty());
  const auto data = load_export(ea);
  EXPECT_EQ(data.rubrics.size(), 2u);
  EXPECT_NEAR(rubric_quality(data.rubrics).relevance_rate, 0.5, 1e-12);
}

TEST(Store, JournalReplayAndCompaction) {
  TempDir dir;
  {
    AnnotationStore store(dir.path);
    for (int i = 0; i < 5; ++i) store.upsert_draft(phase1("r1", "s1", complete_criteria(), i));
    store.upsert_draft(phase1("r2", "s1", complete_criteria()));
    store.finalize({"r2", "s1", "clinical_reasoning"});
    EXPECT_EQ(read_jsonl(store.journal_path()).size(), 7u);
  }
  AnnotationStore reopened(dir.path);
  EXPECT_EQ(reopened.size(), 2u);
  EXPECT_EQ(read_jsonl(reopened.journal_path()).size(), 2u);
  EXPECT_EQ((*reopened.get({"r1", "s1", "clinical_reasoning"}))["results_metadata"]["interaction_count"], 4);
  EXPECT_EQ(reopened.export_rows("").size(), 1u);
  reopened.upsert_draft(phase1("r3", "s1", complete_criteria()));
  EXPECT_EQ(read_jsonl(reopened.journal_path()).size(), 3u);
}

TEST(Store, ConcurrentUpsertsLastWriterWins) {
  TempDir dir;
  AnnotationStore store(dir.path);
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 40; ++i) {
        auto crit = complete_criteria();
        const std::string tag = "w" + std::to_string(t) + "-" + std::to_string(i);
        for (auto& c : crit) c["rationale"] = tag;
        store.upsert_draft(phase1("r1", "s1", crit, i));
      }
    });
  }
  for (auto& th : threads) th.join();
  const auto rec = *store.get({"r1", "s1", "clinical_reasoning"});
  const auto& crit = rec["payload"]["criteria"];
  for (const auto& c : crit) EXPECT_EQ(c["rationale"], crit[0]["rationale"]);
  EXPECT_EQ(rec["results_metadata"]["interaction_count"], 39);
  const auto lines = read_jsonl(store.journal_path());
  EXPECT_EQ(lines.size(), 320u);
  EXPECT_EQ(lines.back().dump(), rec.dump());
}

TEST(Catalog, KeywordAndCohortFilters) {
  CaseCatalog cat({json{{"case_id", "a"}, {"cohort", "spine"}, {"timeline_text", "Lumbar MRI shows stenosis"}},
                   json::parse(R"({"case_id": "b", "cohort": "obesity", "item": {"past": [{"data": "BMI 41"}]}})"),
                   json{{"case_id", "c"}, {"cohort", "spine"}, {"timeline_text", "cervical collar"}}});
  EXPECT_EQ(cat.list("", "").size(), 3u);
  EXPECT_EQ(cat.list("spine", "").size(), 2u);
  EXPECT_EQ(cat.list("", "STENOSIS").size(), 1u);
  EXPECT_EQ(cat.list("", "bmi").size(), 1u);
  EXPECT_EQ(cat.list("obesity", "stenosis").size(), 0u);
  EXPECT_THROW(cat.get("zzz"), Error);
  EXPECT_THROW(CaseCatalog({json{{"case_id", "a"}}, json{{"case_id", "a"}}}), Error);
}

// ---------------------------------------------------------------------------
// HTTP surface

namespace {

struct Running {
  TempDir dir;
  AnnotationStore store{dir.path};
  CaseCatalog cases{{json{{"case_id", "s1"}, {"cohort", "spine"}, {"timeline_text", "lumbar fusion"}},
                     json{{"case_id", "s2"}, {"cohort", "obesity"}, {"timeline_text", "gastric sleeve"}}}};
  AnnotationServer server;
  std::thread thread;

  explicit Running(double redisplay = 0.0)
      : server(store, cases, {{"tok-1", "r1"}, {"tok-2", "r2"}}, ServeOptions{"127.0.0.1", 0, redisplay, 42}) {
    server.bind();
    thread = std::thread([this] { server.listen(); });
    server.wait_until_ready();
  }
  ~Running() {
    server.stop();
    thread.join();
  }

  httplib::Client client(const std::string& token = "tok-1") const {
    httplib::Client c("127.0.0.1", server.port());
    if (!token.empty()) c.set_bearer_token_auth(token);
    return c;
  }
};

}  // namespace

TEST(Http, AuthRequired) {
  Running srv;
  auto anon = srv.client("");
  EXPECT_EQ(anon.Get("/cases")->status, 401);
  auto wrong = srv.client("nope");
  EXPECT_EQ(wrong.Get("/cases")->status, 401);
  EXPECT_EQ(anon.Get("/health")->status, 200);
}

TEST(Http, CaseListingAndLookup) {
  Running srv;
  auto c = srv.client();
  auto all = c.Get("/cases");
  ASSERT_EQ(all->status, 200);
  EXPECT_EQ(json::parse(all->body)["cases"].size(), 2u);
  auto spine = json::parse(c.Get("/cases?cohort=spine")->body);
  ASSERT_EQ(spine["cases"].size(), 1u);
  EXPECT_EQ(spine["cases"][0]["case_id"], "s1");
  EXPECT_EQ(json::parse(c.Get("/cases?keyword=sleeve")->body)["cases"][0]["case_id"], "s2");
  auto one = c.Get("/cases/s1");
  ASSERT_EQ(one->status, 200);
  EXPECT_FALSE(json::parse(one->body)["redisplay"].get<bool>());
  EXPECT_EQ(c.Get("/cases/missing")->status, 404);
}

TEST(Http, DraftFinalizeExportFlow) {
  Running srv;
  auto c = srv.client();
  auto draft = phase1("r1", "s1", complete_criteria());
  draft["payload"]["criteria"][0]["verdict"] = nullptr;
  auto put = c.Put("/submissions", draft.dump(), "application/json");
  ASSERT_EQ(put->status, 200) << put->body;
  EXPECT_TRUE(json::parse(put->body)["is_draft"].get<bool>());

  auto fetched = c.Get("/submissions/s1:clinical_reasoning");
  ASSERT_EQ(fetched->status, 200);
  EXPECT_EQ(json::parse(fetched->body)["payload"], json::parse(put->body)["payload"]);

  auto blocked = c.Post("/submissions/s1:clinical_reasoning/finalize", "", "application/json");
  ASSERT_EQ(blocked->status, 422);
  EXPECT_EQ(json::parse(blocked->body)["missing"], json::array({"c1: verdict"}));

  ASSERT_EQ(c.Put("/submissions", phase1("r1", "s1", complete_criteria()).dump(), "application/json")->status, 200);
  auto fin = c.Post("/submissions/s1:clinical_reasoning/finalize", "", "application/json");
  ASSERT_EQ(fin->status, 200);
  EXPECT_FALSE(json::parse(fin->body)["is_draft"].get<bool>());

  EXPECT_EQ(c.Put("/submissions", phase1("r1", "s1", complete_criteria()).dump(), "application/json")->status, 409);
  EXPECT_EQ(c.Post("/submissions/s2:clinical_reasoning/finalize", "", "application/json")->status, 404);
  EXPECT_EQ(c.Post("/submissions/bad/finalize", "", "application/json")->status, 400);

  // a second rater's draft stays out of the export
  auto c2 = srv.client("tok-2");
  ASSERT_EQ(c2.Put("/submissions", phase1("r2", "s1", complete_criteria()).dump(), "application/json")->status, 200);
  auto exp = c.Get("/export?experiment=exp1");
  ASSERT_EQ(exp->status, 200);
  const auto rows = parse_jsonl(exp->body);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0]["rater_id"], "r1");
  EXPECT_TRUE(parse_jsonl(c.Get("/export?experiment=none")->body).empty());
}

TEST(Http, RaterIdentityComesFromToken) {
  Running srv;
  auto c = srv.client("tok-2");
  EXPECT_EQ(c.Put("/submissions", phase1("r1", "s1", complete_criteria()).dump(), "application/json")->status, 401);
  auto body = phase1("r1", "s1", complete_criteria());
  body.erase("rater_id");
  auto ok = c.Put("/submissions", body.dump(), "application/json");
  ASSERT_EQ(ok->status, 200);
  EXPECT_EQ(json::parse(ok->body)["rater_id"], "r2");
  EXPECT_EQ(c.Put("/submissions", "{not json", "application/json")->status, 400);
  auto bad = phase2("r2", "s1", 3);
  bad["payload"]["pairs"][1]["displayedAsA"] = "someone";
  EXPECT_EQ(c.Put("/submissions", bad.dump(), "application/json")->status, 400);
}

TEST(Http, RedisplayProbabilityIsSeededPerRaterAndCase) {
  Running always(1.0);
  auto c = always.client();
  EXPECT_TRUE(json::parse(c.Get("/cases/s1")->body)["redisplay"].get<bool>());
  TempDir dir;
  AnnotationStore store(dir.path);
  CaseCatalog cases;
  AnnotationServer half(store, cases, {{"t", "r"}}, ServeOptions{"127.0.0.1", 0, 0.5, 42});
  int shown = 0;
  for (int i = 0; i < 2000; ++i) shown += half.redisplay("r", "case" + std::to_string(i));
  EXPECT_NEAR(shown / 2000.0, 0.5, 0.05);
  EXPECT_EQ(half.redisplay("r", "case7"), half.redisplay("r", "case7"));
}

TEST(Http, ConcurrentClientsSameKey) {
  Running srv;
  std::atomic<int> ok{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      auto c = srv.client();
      for (int i = 0; i < 10; ++i) {
        auto crit = complete_criteria();
        for (auto& x : crit) x["rationale"] = "t" + std::to_string(t);
        if (c.Put("/submissions", phase1("r1", "s1", crit, i).dump(), "application/json")->status == 200) ++ok;
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(ok.load(), 40);
  const auto rec = *srv.store.get({"r1", "s1", "clinical_reasoning"});
  for (const auto& x : rec["payload"]["criteria"]) EXPECT_EQ(x["rationale"], rec["payload"]["criteria"][0]["rationale"]);
}

TEST(Tokens, LoadAndReject) {
  TempDir dir;
  write_json(dir.path / "tokens.json", json{{"abc", "r1"}});
  EXPECT_EQ(load_tokens(dir.path / "tokens.json").at("abc"), "r1");
  write_json(dir.path / "bad.json", json::array());
  EXPECT_THROW(load_tokens(dir.path / "bad.json"), Error);
  write_json(dir.path / "empty.json", json::object());
  EXPECT_THROW(load_tokens(dir.path / "empty.json"), Error);
}
