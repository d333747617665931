#pragma once

// On-disk artifacts. Every file is a JSON envelope
//   {"format": "raredx.<kind>", "version": N, "checksum": "<fnv1a-64 hex>", "payload": {...}}
// where the checksum covers the compact dump of the payload.

#include "raredx/deeprl.hpp"
#include "raredx/error.hpp"
#include "raredx/kb.hpp"
#include "raredx/maxent.hpp"
#include "raredx/policies.hpp"
#include "raredx/qnet.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace raredx {

inline constexpr int kArtifactVersion = 1;

inline std::uint64_t fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline json wrap_artifact(const std::string& kind, json payload) {
    return {{"format", "raredx." + kind},
            {"version", kArtifactVersion},
            {"checksum", hex64(fnv1a64(payload.dump()))},
            {"payload", std::move(payload)}};
}

inline json unwrap_artifact(const json& j, const std::string& kind) {
    if (!j.is_object() || !j.contains("format") || !j.contains("payload")) {
        fail(Errc::schema, "not a raredx artifact", "missing format/payload");
    }
    if (j.at("format") != "raredx." + kind) {
        fail(Errc::schema, "expected a " + kind + " artifact", j.at("format").dump());
    }
    const int v = j.value("version", 0);
    if (v != kArtifactVersion) {
        fail(Errc::version,
             "artifact version " + std::to_string(v) + " is not supported by this build (expects " +
                 std::to_string(kArtifactVersion) + "); regenerate it",
             kind);
    }
    const std::string want = j.value("checksum", "");
    const std::string got = hex64(fnv1a64(j.at("payload").dump()));
    if (want != got) fail(Errc::checksum, "artifact checksum mismatch; the file is corrupted", "expected " + want + ", got " + got);
    return j.at("payload");
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::io, "cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        fail(Errc::checksum, std::string("unreadable artifact: ") + e.what(), path);
    }
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(Errc::io, "cannot write '" + path + "'");
    out << j.dump(1) << '\n';
    if (!out) fail(Errc::io, "write failed for '" + path + "'");
}

// --- numbers that may be infinite ------------------------------------------------

inline json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

inline double num_from(const json& j) {
    if (j.is_null()) return -std::numeric_limits<double>::infinity();
    return j.get<double>();
}

inline json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Eigen::VectorXd vec_from(const json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// --- models ----------------------------------------------------------------------

inline json table_json(const JointTable& t) {
    return {{"disease", t.disease}, {"K", t.K},          {"symptoms", t.symptoms},     {"pi", t.pi},
            {"marginals", t.marginals}, {"impossible", t.impossible}, {"min_symptoms", t.min_symptoms}};
}

inline JointTable table_from(const json& j) {
    JointTable t;
    t.disease = j.at("disease").get<std::string>();
    t.K = j.at("K").get<int>();
    t.symptoms = j.at("symptoms").get<std::vector<SymptomCode>>();
    t.pi = j.at("pi").get<std::vector<double>>();
    t.marginals = j.at("marginals").get<std::vector<double>>();
    t.impossible = j.at("impossible").get<std::vector<CellIndex>>();
    t.min_symptoms = j.value("min_symptoms", 0);
    if (t.K < 0 || t.K > kMaxExplicitK || t.pi.size() != (std::size_t(1) << t.K) || t.symptoms.size() != std::size_t(t.K) ||
        t.marginals.size() != std::size_t(t.K)) {
        fail(Errc::schema, "joint table dimensions disagree", t.disease);
    }
    return t;
}

inline json model_json(const JointModel& m) {
    return std::visit(
        [](const auto& x) -> json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, JointTable>) {
                json j = table_json(x);
                j["kind"] = "joint";
                return j;
            } else if constexpr (std::is_same_v<T, IndependentModel>) {
                return {{"kind", "independent"}, {"disease", x.disease}, {"symptoms", x.symptoms}, {"p", x.p}};
            } else {
                json within = json::array();
                for (const auto& w : x.within) within.push_back(table_json(w));
                return {{"kind", "groups"},  {"disease", x.disease}, {"symptoms", x.symptoms},
                        {"groups", x.groups}, {"members", x.members}, {"within", within},
                        {"group_table", table_json(x.group_table)}};
            }
        },
        m);
}

inline JointModel model_from(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "joint") return table_from(j);
    if (kind == "independent") {
        return IndependentModel{j.at("disease").get<std::string>(), j.at("symptoms").get<std::vector<SymptomCode>>(),
                                j.at("p").get<std::vector<double>>()};
    }
    if (kind == "groups") {
        GroupFactorization g;
        g.disease = j.at("disease").get<std::string>();
        g.symptoms = j.at("symptoms").get<std::vector<SymptomCode>>();
        g.groups = j.at("groups").get<std::vector<std::string>>();
        g.members = j.at("members").get<std::vector<std::vector<int>>>();
        for (const auto& w : j.at("within")) g.within.push_back(table_from(w));
        g.group_table = table_from(j.at("group_table"));
        return g;
    }
    fail(Errc::schema, "unknown model kind '" + kind + "'");
}

inline void save_model(const JointModel& m, const std::string& path) { write_json_file(wrap_artifact("model", model_json(m)), path); }

inline JointModel load_model(const std::string& path) {
    try {
        return model_from(unwrap_artifact(read_json_file(path), "model"));
    } catch (const json::exception& e) {
        fail(Errc::schema, std::string("bad model artifact: ") + e.what(), path);
    }
}

/// Every *.json model in a directory, sorted by file name.
inline std::vector<JointModel> load_models_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) fail(Errc::io, "'" + dir + "' is not a directory");
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    std::vector<JointModel> out;
    for (const auto& f : files) out.push_back(load_model(f));
    return out;
}

// --- policies --------------------------------------------------------------------

struct PolicyArtifact {
    std::string task;                    // initial symptom; empty for a whole-KB policy
    std::vector<SymptomCode> symptoms;   // action order
    std::variant<TabularQ, QNetwork, EnergyPolicy> policy;
    std::string config_digest;

    std::string kind() const {
        switch (policy.index()) {
        case 0: return "tabular";
        case 1: return "qnet";
        default: return "energy";
        }
    }
    int dim() const { return static_cast<int>(symptoms.size()); }

    bool operator==(const PolicyArtifact&) const = default;
};

inline json train_config_json(const TrainConfig& c) {
    return {{"games_per_iter", c.games_per_iter},       {"sample_fraction", c.sample_fraction},
            {"lr0", c.lr0},                             {"lr_halving_period", c.lr_halving_period},
            {"frozen_update_period", c.frozen_update_period}, {"epsilon_greedy", c.epsilon_greedy},
            {"iters", c.iters},                         {"batch_size", c.batch_size},
            {"replay_iterations", c.replay_iterations}, {"eval_games", c.eval_games},
            {"eval_every", c.eval_every},               {"eval_seed", c.eval_seed},
            {"init_scale", c.init_scale},               {"divergence_window", c.divergence_window},
            {"divergence_factor", c.divergence_factor}};
}

inline std::string config_digest(const json& cfg) { return hex64(fnv1a64(cfg.dump())); }

inline json policy_json(const PolicyArtifact& p) {
    json j{{"kind", p.kind()}, {"task", p.task}, {"dim", p.dim()}, {"symptoms", p.symptoms}, {"config_digest", p.config_digest}};
    if (const auto* t = std::get_if<TabularQ>(&p.policy)) {
        json q = json::array();
        for (double x : t->q) q.push_back(num(x));
        j["table"] = {{"dim", t->dim}, {"q", q}, {"terminal", t->terminal}, {"residual", t->residual}};
    } else if (const auto* n = std::get_if<QNetwork>(&p.policy)) {
        j["weights"] = {{"params", vec_json(n->params())}, {"adam_m", vec_json(n->adam_m())},
                        {"adam_v", vec_json(n->adam_v())}, {"steps", n->steps()}};
    } else {
        j["theta"] = std::get<EnergyPolicy>(p.policy).theta;
    }
    return j;
}

inline PolicyArtifact policy_from(const json& j) {
    PolicyArtifact p;
    p.task = j.at("task").get<std::string>();
    p.symptoms = j.at("symptoms").get<std::vector<SymptomCode>>();
    p.config_digest = j.value("config_digest", "");
    const std::string kind = j.at("kind").get<std::string>();
    if (j.at("dim").get<int>() != p.dim()) fail(Errc::schema, "policy dim disagrees with its symptom list");
    if (kind == "tabular") {
        TabularQ t;
        const auto& tj = j.at("table");
        t.dim = tj.at("dim").get<int>();
        for (const auto& x : tj.at("q")) t.q.push_back(num_from(x));
        t.terminal = tj.at("terminal").get<std::vector<std::uint8_t>>();
        t.residual = tj.at("residual").get<double>();
        std::size_t states = 1;
        for (int i = 0; i < t.dim; ++i) states *= 3;
        if (t.dim != p.dim() || t.terminal.size() != states || t.q.size() != states * t.dim) {
            fail(Errc::schema, "tabular policy has the wrong number of entries");
        }
        p.policy = std::move(t);
    } else if (kind == "qnet") {
        const auto& w = j.at("weights");
        QNetwork net(p.dim());
        net.set_params(vec_from(w.at("params")));
        net.set_optimizer_state(vec_from(w.at("adam_m")), vec_from(w.at("adam_v")), w.at("steps").get<long>());
        p.policy = std::move(net);
    } else if (kind == "energy") {
        p.policy = EnergyPolicy{j.at("theta").get<std::array<double, 3>>()};
    } else {
        fail(Errc::schema, "unknown policy kind '" + kind + "'");
    }
    return p;
}

inline void save_policy(const PolicyArtifact& p, const std::string& path) { write_json_file(wrap_artifact("policy", policy_json(p)), path); }

inline PolicyArtifact load_policy(const std::string& path) {
    try {
        return policy_from(unwrap_artifact(read_json_file(path), "policy"));
    } catch (const json::exception& e) {
        fail(Errc::schema, std::string("bad policy artifact: ") + e.what(), path);
    }
}

inline json report_json(const TrainResult& r) {
    json it = json::array();
    for (const auto& x : r.reports) {
        it.push_back({{"iter", x.iter}, {"games", x.games}, {"eval_mean_I", x.eval_mean}, {"eval_var", x.eval_var}, {"lr", x.lr},
                      {"loss", x.loss}});
    }
    return {{"schema", 1}, {"diverged", r.diverged}, {"note", r.note}, {"iterations", it}};
}

} // namespace raredx
