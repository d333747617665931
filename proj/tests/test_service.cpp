#include "raredx/http.hpp"
#include "raredx/service.hpp"

#include <gtest/gtest.h>

#include <thread>

using namespace raredx;

namespace {

KnowledgeBase demo() { return load_kb(std::string(RAREDX_DATA_DIR) + "/demo_kb.json"); }

struct Fixture : ::testing::Test {
    std::shared_ptr<const KbBundle> bundle = make_bundle("demo", demo());
    SessionManager mgr;

    void SetUp() override { mgr.add_kb(bundle); }

    bool recommends(const SessionView& v, const SymptomCode& c) {
        for (const auto& r : v.recommendations)
            if (r.code == c) return true;
        return false;
    }
};

json comparable(const SessionView& v) {
    json j = view_json(v);
    j.erase("session");
    j.erase("history");
    return j;
}

} // namespace

TEST_F(Fixture, FreshSessionShowsPriorsAndEntryPoints) {
    auto v = mgr.create("demo", "greedy");
    EXPECT_EQ(v.status, "active");
    EXPECT_EQ(v.scope, "");
    const auto& kb = bundle->kb;
    for (const auto& [d, p] : v.posterior) {
        const double prior = d == kOther ? kb.other_prior : kb.find(d)->prior;
        EXPECT_NEAR(p, prior, 1e-12) << d;
    }
    for (std::size_t i = 1; i < v.posterior.size(); ++i) EXPECT_GE(v.posterior[i - 1].second, v.posterior[i].second);
    ASSERT_EQ(v.recommendations.size(), kRecommendations);
    for (const auto& r : v.recommendations) {
        EXPECT_EQ(r.rationale, "entry_point");
        EXPECT_TRUE(bundle->tasks.count(r.code));
        EXPECT_TRUE(std::isfinite(r.score));
    }
    EXPECT_EQ(v.recommendations[0].label, kb.label(v.recommendations[0].code));
}

TEST_F(Fixture, UnknownIdsAndDistinctSessions) {
    auto a = mgr.create("demo", "greedy");
    auto b = mgr.create("demo", "greedy");
    EXPECT_NE(a.id, b.id);
    try {
        mgr.create("demo", "nope");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::not_found);
    }
    EXPECT_THROW(mgr.create("nope", "greedy"), Error);
    EXPECT_THROW(mgr.view("missing"), Error);
    EXPECT_THROW(mgr.answer(a.id, "not_a_code", true), Error);
}

TEST_F(Fixture, NegativeRootRemovesDescendants) {
    auto v = mgr.create("demo", "greedy");
    v = mgr.answer(v.id, "heart", false);
    for (const char* c : {"heart", "ventricle", "rv_hypoplasia", "lv_hypoplasia", "vsd", "asd"}) {
        EXPECT_EQ(v.resolved.at(c), false);
        EXPECT_FALSE(recommends(v, c)) << c;
    }
    v = mgr.answer(v.id, "polydactyly", true);
    EXPECT_EQ(v.scope, "polydactyly");
    EXPECT_EQ(v.policy_kind, "greedy_entropy");
    for (const char* c : {"rv_hypoplasia", "vsd", "asd", "polydactyly"}) EXPECT_FALSE(recommends(v, c)) << c;
    EXPECT_FALSE(v.recommendations.empty());
    for (std::size_t i = 1; i < v.recommendations.size(); ++i) {
        EXPECT_GE(v.recommendations[i - 1].score, v.recommendations[i].score);
    }
}

TEST_F(Fixture, ImprecisePositiveMatchesMixtureOracle) {
    auto v = mgr.create("demo", "greedy");
    v = mgr.answer(v.id, "heart", true);
    ASSERT_EQ(v.pending.size(), 1u);
    EXPECT_EQ(v.pending[0].candidates.size(), 4u);
    // One candidate present, the rest unobserved: weight prior * sum_c P(c | h).
    const auto& kb = bundle->kb;
    std::map<std::string, double> w;
    double z = 0;
    auto p_of = [&](const std::string& d, const std::string& c) {
        if (d == kOther) return 1e-5;
        for (const auto& t : kb.find(d)->typical)
            if (t.code == c) return t.p;
        return 1e-5;
    };
    std::vector<std::string> hyps{kOther};
    for (const auto& d : kb.diseases) hyps.push_back(d.id);
    for (const auto& h : hyps) {
        const double prior = h == kOther ? kb.other_prior : kb.find(h)->prior;
        double s = 0;
        for (const auto& c : v.pending[0].candidates) s += p_of(h, c);
        w[h] = prior * s;
        z += w[h];
    }
    for (const auto& [d, p] : v.posterior) EXPECT_NEAR(p, w[d] / z, 1e-12) << d;
}

TEST_F(Fixture, ConflictLeavesSessionUntouched) {
    auto v = mgr.create("demo", "greedy");
    v = mgr.answer(v.id, "heart", false);
    try {
        mgr.answer(v.id, "vsd", true);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::conflict);
        EXPECT_NE(e.details().find("vsd"), std::string::npos);
        EXPECT_NE(e.details().find("heart"), std::string::npos);
    }
    EXPECT_EQ(comparable(mgr.view(v.id)), comparable(v));
    EXPECT_EQ(mgr.view(v.id).history.size(), 1u);
}

TEST_F(Fixture, RoutesToTaskPolicy) {
    const auto& sc = bundle->scopes.at("polydactyly");
    auto ps = std::make_shared<PolicySet>();
    ps->id = "vi";
    ps->by_task["polydactyly"] = PolicyArtifact{"polydactyly", sc.symptoms, value_iteration(bundle->env, sc), ""};
    mgr.add_policy(ps);
    auto v = mgr.create("demo", "vi");
    v = mgr.answer(v.id, "polydactyly", true);
    EXPECT_EQ(v.policy_kind, "tabular");
    const auto& vi = std::get<TabularQ>(ps->by_task["polydactyly"].policy);
    ASSERT_FALSE(v.recommendations.empty());
    EXPECT_EQ(v.recommendations[0].code, sc.symptoms[vi.greedy(sc.initial_state())]);
    EXPECT_EQ(v.recommendations[0].score, vi.value(sc.initial_state()));
    // A task without its own policy falls back to greedy entropy.
    auto w = mgr.create("demo", "vi");
    w = mgr.answer(w.id, "deafness", true);
    EXPECT_EQ(w.policy_kind, "greedy_entropy");

    auto bad = std::make_shared<PolicySet>();
    bad->id = "bad";
    bad->by_task["polydactyly"] = PolicyArtifact{"polydactyly", {"x"}, EnergyPolicy{}, ""};
    EXPECT_THROW(mgr.add_policy(bad), Error);
}

TEST_F(Fixture, ConcludedSessionIsImmutable) {
    auto v = mgr.create("demo", "greedy", 0.05);
    std::vector<std::pair<std::string, bool>> script{{"polydactyly", true}, {"short_stature", true}, {"hydronephrosis", false},
                                                     {"vsd", true},         {"asd", true},           {"cleft_palate", true}};
    for (const auto& [c, p] : script) {
        if (v.status != "active") break;
        v = mgr.answer(v.id, c, p);
    }
    ASSERT_EQ(v.status, "concluded");
    EXPECT_GE(v.posterior[0].second, std::exp(-0.05));
    EXPECT_TRUE(v.recommendations.empty());
    const auto frozen = comparable(v);
    EXPECT_THROW(mgr.answer(v.id, "deafness", true), Error);
    EXPECT_EQ(comparable(mgr.view(v.id)), frozen);
    EXPECT_EQ(comparable(mgr.close(v.id)), frozen);
}

TEST_F(Fixture, CloseEndsSession) {
    auto v = mgr.create("demo", "greedy");
    v = mgr.close(v.id);
    EXPECT_EQ(v.status, "closed");
    EXPECT_THROW(mgr.answer(v.id, "vsd", true), Error);
}

TEST_F(Fixture, ReplayIsDeterministic) {
    std::vector<std::pair<std::string, bool>> script{{"kidney", true}, {"heart", false}, {"deafness", false}, {"short_stature", true}, {"vertebral", true}};
    auto a = mgr.create("demo", "greedy");
    auto b = mgr.create("demo", "greedy");
    for (const auto& [c, p] : script) {
        auto va = mgr.answer(a.id, c, p);
        auto vb = mgr.answer(b.id, c, p);
        EXPECT_EQ(comparable(va), comparable(vb));
        if (va.status != "active") break;
    }
}

TEST(Service, TooImpreciseAnswerIsAdvisory) {
    json j = json::parse(R"({"diseases":[
        {"id":"x","prior":0.3,"symptoms":[{"code":"a1","p":0.5},{"code":"b1","p":0.5},{"code":"c","p":0.5}]},
        {"id":"y","prior":0.3,"symptoms":[{"code":"a2","p":0.5},{"code":"b2","p":0.5},{"code":"c","p":0.9}]}],
        "ontology":{"edges":[],"base_level":[]},"other_prior":0.4})");
    json edges = json::array(), base = json::array();
    for (int i = 1; i <= 9; ++i) {
        edges.push_back({"a" + std::to_string(i), "A"});
        edges.push_back({"b" + std::to_string(i), "B"});
        base.push_back("a" + std::to_string(i));
        base.push_back("b" + std::to_string(i));
    }
    base.push_back("c");
    j["ontology"]["edges"] = edges;
    j["ontology"]["base_level"] = base;
    SessionManager mgr;
    mgr.add_kb(make_bundle("k", kb_from_json(j)));
    auto v = mgr.create("k", "greedy");
    v = mgr.answer(v.id, "A", true);
    EXPECT_TRUE(v.advisories.empty());
    v = mgr.answer(v.id, "B", true);
    ASSERT_EQ(v.advisories.size(), 1u);
    EXPECT_EQ(v.pending.size(), 2u);
    auto fresh = mgr.create("k", "greedy");
    for (const auto& [d, p] : v.posterior) EXPECT_NEAR(p, [&] {
        for (const auto& [e, q] : fresh.posterior)
            if (e == d) return q;
        return -1.0;
    }(), 1e-12);
}

TEST_F(Fixture, ConcurrentSessions) {
    std::vector<std::string> ids;
    for (int i = 0; i < 4; ++i) ids.push_back(mgr.create("demo", "greedy").id);
    std::vector<std::thread> th;
    for (int i = 0; i < 8; ++i) {
        th.emplace_back([&, i] {
            const auto& id = ids[i % 4];
            for (const char* c : {"heart", "kidney", "deafness"}) {
                try {
                    mgr.answer(id, c, false);
                } catch (const Error&) {
                }
            }
        });
    }
    for (auto& t : th) t.join();
    for (const auto& id : ids) {
        auto v = mgr.view(id);
        EXPECT_EQ(v.history.size(), 6u);   // repeated identical answers are recorded again
        for (std::size_t k = 0; k < v.history.size(); ++k) EXPECT_EQ(v.history[k].seq, long(k + 1));
    }
}

TEST_F(Fixture, HttpRoundTrip) {
    httplib::Server srv;
    install_routes(srv, mgr);
    const int port = srv.bind_to_any_port("127.0.0.1");
    std::thread th([&] { srv.listen_after_bind(); });
    srv.wait_until_ready();
    httplib::Client cli("127.0.0.1", port);

    auto r = cli.Get("/healthz");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    r = cli.Post("/sessions", R"({"kb":"demo","policy":"greedy"})", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 201);
    const std::string id = json::parse(r->body)["session"];
    r = cli.Post("/sessions/" + id + "/answers", R"({"code":"heart","presence":false})", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    r = cli.Post("/sessions/" + id + "/answers", R"({"code":"vsd","presence":true})", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 409);
    auto err = json::parse(r->body);
    EXPECT_EQ(err["code"], "conflict");
    EXPECT_TRUE(err.contains("message") && err.contains("details"));
    r = cli.Get("/sessions/" + id + "/posterior");
    ASSERT_TRUE(r);
    auto post = json::parse(r->body);
    EXPECT_EQ(post["schema"], kApiSchema);
    double sum = 0;
    for (const auto& x : post["posterior"]) sum += x["probability"].get<double>();
    EXPECT_NEAR(sum, 1.0, 1e-12);
    r = cli.Get("/sessions/" + id + "/recommendations");
    ASSERT_TRUE(r);
    EXPECT_EQ(json::parse(r->body)["recommendations"].size(), kRecommendations);
    r = cli.Get("/sessions/nope/posterior");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 404);
    r = cli.Post("/sessions/" + id + "/answers", R"({"code":"vsd"})", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);
    r = cli.Post("/sessions", "[1,", "application/json");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 400);
    srv.stop();
    th.join();
}
