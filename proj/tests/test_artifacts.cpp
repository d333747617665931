#include "raredx/artifacts.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

using namespace raredx;

namespace {

std::string tmp(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / "raredx_artifacts_test";
    std::filesystem::create_directories(dir);
    return (dir / name).string();
}

KnowledgeBase three_disease() { return load_kb(std::string(RAREDX_DATA_DIR) + "/three_disease_kb.json"); }

} // namespace

TEST(Fnv, KnownVectors) {
    EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
    EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ULL);
    EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(PolicyArtifact, RoundTripAllKinds) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto task = make_task(kb, "S9");
    auto sc = task_scope(env, task);
    std::mt19937_64 rng(1);
    QNetwork net(sc.dim(), rng);
    std::vector<QSample> batch{{sc.initial_state(), 2, -3.0}};
    net.train_step(batch, 1e-3);
    std::vector<PolicyArtifact> arts{
        {task.initial, sc.symptoms, value_iteration(env, sc), "abc"},
        {task.initial, sc.symptoms, net, config_digest(train_config_json({}))},
        {"", {}, EnergyPolicy{{1.25, -0.5, 3.0}}, ""},
    };
    for (const auto& a : arts) {
        const std::string path = tmp("policy_" + a.kind() + ".json");
        save_policy(a, path);
        auto b = load_policy(path);
        EXPECT_EQ(a, b) << a.kind();
        EXPECT_EQ(b.kind(), a.kind());
    }
    auto t = std::get<TabularQ>(load_policy(tmp("policy_tabular.json")).policy);
    EXPECT_TRUE(std::isinf(t.values(sc.initial_state())[0]) == false);
    auto s = sc.initial_state();
    s[0] = kAbsent;
    EXPECT_TRUE(std::isinf(t.values(s)[0]));
}

TEST(PolicyArtifact, CorruptionIsDetected) {
    const std::string path = tmp("policy_corrupt.json");
    save_policy({"", {}, EnergyPolicy{{1, 2, 3}}, ""}, path);
    json j = read_json_file(path);
    j["payload"]["theta"][0] = 1.5;
    write_json_file(j, path);
    try {
        load_policy(path);
        FAIL() << "expected a checksum error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::checksum);
    }
    std::ofstream(path) << "{ not json";
    EXPECT_THROW(load_policy(path), Error);
}

TEST(PolicyArtifact, OldVersionGetsMigrationError) {
    const std::string path = tmp("policy_old.json");
    save_policy({"", {}, EnergyPolicy{{1, 2, 3}}, ""}, path);
    json j = read_json_file(path);
    j["version"] = 0;
    write_json_file(j, path);
    try {
        load_policy(path);
        FAIL() << "expected a version error";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::version);
        EXPECT_NE(e.message().find("regenerate"), std::string::npos);
    }
}

TEST(PolicyArtifact, WrongArtifactKind) {
    const std::string path = tmp("model_as_policy.json");
    save_model(IndependentModel{"d", {"a"}, {0.5}}, path);
    try {
        load_policy(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::schema);
    }
}

TEST(ModelArtifact, RoundTripAllKinds) {
    auto kb = three_disease();
    const auto& d1 = *kb.find("d1");
    MaxentConfig cfg;
    cfg.epsilon = 1;
    std::vector<double> expert;
    for (const auto& t : d1.typical) expert.push_back(t.p);
    auto sol = solve_maxent(expert, {}, cfg, 1, d1.codes(), d1.id);
    JointModel joint = sol.table;

    KnowledgeBase g = kb_from_json(json::parse(R"({"diseases":[{"id":"g","prior":0.5,"symptoms":[
        {"code":"a","p":0.6},{"code":"b","p":0.5},{"code":"c","p":0.7},{"code":"d","p":0.4}]}],
        "ontology":{"base_level":["a","b","c","d"]},"other_prior":0.5})"));
    JointModel groups = fit_group_model(g, "g", {{"a", "x"}, {"b", "x"}, {"c", "y"}, {"d", "y"}}, {});
    JointModel indep = independent_model(d1);
    int k = 0;
    for (const auto& m : {joint, groups, indep}) {
        const std::string path = tmp("model_" + std::to_string(k++) + ".json");
        save_model(m, path);
        EXPECT_EQ(load_model(path), m);
    }
    std::filesystem::create_directories(tmp("models"));
    save_model(indep, tmp("models") + "/d1.json");
    auto all = load_models_dir(tmp("models"));
    ASSERT_EQ(all.size(), 1u);
    EXPECT_EQ(all[0], indep);
}

TEST(ModelArtifact, DimensionMismatchRejected) {
    json payload = table_json(JointTable{"d", 2, {"a", "b"}, {0.25, 0.25, 0.25, 0.25}, {0.5, 0.5}, {}, 0});
    payload["kind"] = "joint";
    payload["pi"].push_back(0.0);
    const std::string path = tmp("model_bad.json");
    write_json_file(wrap_artifact("model", payload), path);
    EXPECT_THROW(load_model(path), Error);
}

TEST(Report, ContainsBothCounters) {
    TrainResult r;
    r.reports.push_back({0, 0, 3.5, 1.0, 1e-3, 0});
    r.reports.push_back({1, 100, 3.0, 0.5, 1e-3, 0.2});
    auto j = report_json(r);
    EXPECT_EQ(j["iterations"][1]["games"], 100);
    EXPECT_EQ(j["iterations"][1]["eval_mean_I"], 3.0);
}
