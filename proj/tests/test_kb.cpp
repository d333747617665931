#include "raredx/kb.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace raredx;

namespace {

std::string data_path(const char* name) { return std::string(RAREDX_DATA_DIR) + "/" + name; }

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("raredx_" + name)).string();
}

// Four-level chain heart -> ventricle -> right-ventricle -> hypoplasia-RV, plus
// a second subtree under ventricle.
Ontology chain() {
    return Ontology({{"ventricle", "heart"},
                     {"right-ventricle", "ventricle"},
                     {"hypoplasia-RV", "right-ventricle"},
                     {"left-ventricle", "ventricle"},
                     {"hypoplasia-LV", "left-ventricle"}},
                    {"hypoplasia-RV", "hypoplasia-LV"});
}

json minimal_kb(double p1, double p2, double other) {
    return json::parse(R"({"diseases":[{"id":"a","prior":)" + std::to_string(p1) +
                       R"(,"symptoms":[{"code":"x","p":0.5}]},{"id":"b","prior":)" + std::to_string(p2) +
                       R"(,"symptoms":[{"code":"x","p":0.9},{"code":"y","p":0.2,"lambda":0}]}],
                       "ontology":{"edges":[],"base_level":["x","y"]},"other_prior":)" +
                       std::to_string(other) + "}");
}

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return Errc::io;
}

} // namespace

TEST(LoadKb, ThreeDiseaseExample) {
    auto kb = load_kb(data_path("three_disease_kb.json"));
    ASSERT_EQ(kb.diseases.size(), 3u);
    EXPECT_DOUBLE_EQ(kb.find("d1")->prior, 0.042);
    EXPECT_DOUBLE_EQ(kb.find("d2")->prior, 0.0083);
    EXPECT_DOUBLE_EQ(kb.find("d3")->prior, 0.0083);
    EXPECT_EQ(kb.symptom_universe().size(), 9u);
    EXPECT_TRUE(kb.warnings.empty());
}

TEST(LoadKb, PriorSumViolation) {
    EXPECT_EQ(code_of([] { kb_from_json(minimal_kb(0.6, 0.6, 0.0)); }), Errc::prior_sum);
}

TEST(LoadKb, EmptyDiseaseListIsValid) {
    auto kb = kb_from_json(json::parse(R"({"diseases":[],"ontology":{"base_level":[]},"other_prior":1})"));
    EXPECT_TRUE(kb.diseases.empty());
    EXPECT_EQ(kb.other_prior, 1.0);
}

TEST(LoadKb, SchemaErrorNamesLocation) {
    auto j = minimal_kb(0.25, 0.25, 0.5);
    j["diseases"][1]["symptoms"][0].erase("p");
    try {
        kb_from_json(j);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), Errc::schema);
        EXPECT_NE(e.message().find("'p'"), std::string::npos);
        EXPECT_EQ(e.details(), "$.diseases[1].symptoms[0]");
    }
}

TEST(LoadKb, DanglingReference) {
    auto j = minimal_kb(0.25, 0.25, 0.5);
    j["diseases"][0]["symptoms"][0]["code"] = "zz";
    EXPECT_EQ(code_of([&] { kb_from_json(j); }), Errc::dangling_reference);
}

TEST(LoadKb, MinSymptomsDefaultsAndBounds) {
    auto kb = kb_from_json(minimal_kb(0.25, 0.25, 0.5));
    EXPECT_EQ(kb.find("a")->min_symptoms, 1);
    EXPECT_EQ(kb.find("b")->typical[1].lambda, 0.0);
    EXPECT_EQ(kb.find("b")->typical[0].lambda, 100.0);
    auto j = minimal_kb(0.25, 0.25, 0.5);
    j["diseases"][0]["min_symptoms"] = 2;
    EXPECT_EQ(code_of([&] { kb_from_json(j); }), Errc::schema);
}

TEST(LoadKb, MultiParentRejected) {
    EXPECT_EQ(code_of([] { Ontology({{"a", "b"}, {"a", "c"}}, {"a"}); }), Errc::ontology);
    EXPECT_EQ(code_of([] { Ontology({{"a", "b"}, {"b", "a"}}, {"a"}); }), Errc::ontology);
}

TEST(LoadKb, NestedBaseLevelWarns) {
    auto j = json::parse(R"({"diseases":[{"id":"a","prior":0.5,"symptoms":[{"code":"x","p":0.5},{"code":"y","p":0.5}]}],
        "ontology":{"edges":[["y","x"]],"base_level":["x","y"]},"other_prior":0.5})");
    auto kb = kb_from_json(j);
    ASSERT_EQ(kb.warnings.size(), 1u);
}

TEST(Ontology, AncestorsOfLeaf) {
    auto o = chain();
    EXPECT_EQ(ancestors(o, "hypoplasia-RV"), (std::set<SymptomCode>{"right-ventricle", "ventricle", "heart"}));
    EXPECT_TRUE(ancestors(o, "heart").empty());
    EXPECT_EQ(ancestors(o, "right-ventricle"), (std::set<SymptomCode>{"ventricle", "heart"}));
    EXPECT_EQ(code_of([&] { ancestors(o, "nope"); }), Errc::unknown_code);
}

TEST(Ontology, Descendants) {
    auto o = chain();
    EXPECT_EQ(descendants(o, "right-ventricle"), (std::set<SymptomCode>{"hypoplasia-RV"}));
    EXPECT_TRUE(descendants(o, "hypoplasia-LV").empty());
    EXPECT_EQ(descendants(o, "ventricle"),
              (std::set<SymptomCode>{"right-ventricle", "hypoplasia-RV", "left-ventricle", "hypoplasia-LV"}));
    EXPECT_EQ(descendants(o, "heart").size(), 5u);
}

TEST(Ontology, AncestorDescendantDuality) {
    // Random forests: b in ancestors(a) iff a in descendants(b).
    std::mt19937 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Ontology::Edge> edges;
        const int n = 30;
        for (int i = 1; i < n; ++i) {
            if (rng() % 4 == 0) continue;
            edges.emplace_back("n" + std::to_string(i), "n" + std::to_string(rng() % i));
        }
        Ontology o(edges, {"n0"});
        for (const auto& a : o.nodes()) {
            auto anc = ancestors(o, a);
            for (const auto& b : o.nodes()) {
                EXPECT_EQ(anc.count(b) > 0, descendants(o, b).count(a) > 0);
            }
        }
    }
}

TEST(RelevantSet, ThreeDiseaseSymptom9) {
    auto kb = load_kb(data_path("three_disease_kb.json"));
    auto seed = relevant_set(kb, "S9");
    EXPECT_EQ(seed.diseases, (std::vector<std::string>{"d1", "d2", "d3"}));
    EXPECT_EQ(seed.relevant, (std::vector<SymptomCode>{"S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8"}));
}

TEST(RelevantSet, SingleDisease) {
    auto kb = load_kb(data_path("three_disease_kb.json"));
    auto seed = relevant_set(kb, "S5");
    EXPECT_EQ(seed.diseases, (std::vector<std::string>{"d1"}));
    EXPECT_EQ(seed.relevant.size(), kb.find("d1")->typical.size() - 1);
}

TEST(RelevantSet, SynthSeed42AgainstUnionOracle) {
    SynthOptions opt;
    opt.seed = 42;
    auto kb = synth_kb(opt);
    for (const auto& code : kb.ontology.base_level()) {
        std::set<SymptomCode> u;
        std::set<std::string> ds;
        for (const auto& d : kb.diseases) {
            auto cs = d.codes();
            if (std::find(cs.begin(), cs.end(), code) == cs.end()) continue;
            ds.insert(d.id);
            u.insert(cs.begin(), cs.end());
        }
        u.erase(code);
        auto seed = relevant_set(kb, code);
        EXPECT_EQ(std::vector<SymptomCode>(u.begin(), u.end()), seed.relevant);
        EXPECT_EQ(std::vector<std::string>(ds.begin(), ds.end()), seed.diseases);
    }
}

TEST(RelevantSet, PermutationInvariant) {
    auto j = kb_to_json(synth_kb({}));
    auto kb1 = kb_from_json(j);
    std::reverse(j["diseases"].begin(), j["diseases"].end());
    auto kb2 = kb_from_json(j);
    for (const auto& code : kb1.ontology.base_level()) {
        auto a = relevant_set(kb1, code), b = relevant_set(kb2, code);
        EXPECT_EQ(a.diseases, b.diseases);
        EXPECT_EQ(a.relevant, b.relevant);
    }
}

TEST(RelevantSet, NonBaseCodeRejected) {
    auto o = chain();
    KnowledgeBase kb;
    kb.ontology = o;
    kb.other_prior = 1;
    EXPECT_EQ(code_of([&] { relevant_set(kb, "heart"); }), Errc::invalid_argument);
}

TEST(SynthKb, DeterministicAndRoundTrips) {
    SynthOptions opt;
    auto a = synth_kb(opt), b = synth_kb(opt);
    EXPECT_EQ(kb_to_json(a).dump(), kb_to_json(b).dump());
    const auto path = tmp_path("synth.json");
    save_kb(a, path);
    auto c = load_kb(path);
    EXPECT_EQ(a, c);
    EXPECT_EQ(kb_to_json(a).dump(), kb_to_json(c).dump());
    std::remove(path.c_str());
}

TEST(SynthKb, TypicalCountsBounded) {
    for (std::uint64_t s = 1; s <= 10; ++s) {
        SynthOptions opt;
        opt.seed = s;
        opt.n_diseases = 30;
        opt.n_symptoms = 120;
        auto kb = synth_kb(opt);
        for (const auto& d : kb.diseases) {
            EXPECT_GE(d.typical.size(), 3u);
            EXPECT_LE(d.typical.size(), 19u);
        }
    }
}

TEST(SynthKb, InfeasibleParameters) {
    SynthOptions opt;
    opt.n_symptoms = 2;
    EXPECT_EQ(code_of([&] { synth_kb(opt); }), Errc::infeasible);
    opt = {};
    opt.n_diseases = 0;
    EXPECT_EQ(code_of([&] { synth_kb(opt); }), Errc::invalid_argument);
}
