#pragma once

// Consultation sessions over loaded artifacts. A session keeps the answers
// given so far (at any ontology level), routes to the subtask opened by the
// latest positive answer that has a task, and ranks the next questions with
// that task's policy.

#include "raredx/artifacts.hpp"
#include "raredx/deeprl.hpp"
#include "raredx/env.hpp"
#include "raredx/error.hpp"
#include "raredx/kb.hpp"
#include "raredx/policies.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <shared_mutex>
#include <string>
#include <vector>

namespace raredx {

inline constexpr int kApiSchema = 1;
inline constexpr std::size_t kRecommendations = 5;

struct KbBundle {
    std::string id;
    KnowledgeBase kb;
    EnvModel env;
    std::map<SymptomCode, TaskSpec> tasks;
    std::map<SymptomCode, Scope> scopes;
    Scope global;
};

/// Builds the env and every task scope once; scopes hold no references, so
/// the bundle can be moved before it is shared.
inline std::shared_ptr<const KbBundle> make_bundle(std::string id, KnowledgeBase kb, std::optional<std::vector<JointModel>> models = {}) {
    auto b = std::make_shared<KbBundle>();
    b->id = std::move(id);
    b->env = models ? make_env(kb, *models) : independent_env(kb);
    b->kb = std::move(kb);
    for (auto& t : build_tasks(b->kb)) {
        b->scopes.emplace(t.initial, task_scope(b->env, t));
        b->tasks.emplace(t.initial, std::move(t));
    }
    b->global = global_scope(b->env);
    return b;
}

struct PolicySet {
    std::string id;
    std::map<SymptomCode, PolicyArtifact> by_task;
    std::optional<EnergyPolicy> fallback;   // used on tasks without their own artifact
};

/// Checks that every task policy matches the task's action order.
inline void check_policy_set(const KbBundle& b, const PolicySet& ps) {
    for (const auto& [code, art] : ps.by_task) {
        auto it = b.scopes.find(code);
        if (it == b.scopes.end()) fail(Errc::not_found, "policy for unknown task '" + code + "'", ps.id);
        if (art.symptoms != it->second.symptoms) {
            fail(Errc::dimension, "policy symptom order does not match task '" + code + "'", ps.id);
        }
    }
}

/// Loads every *.json policy in a directory. Task policies are keyed by their
/// task; an energy policy without a task becomes the fallback.
inline PolicySet load_policy_dir(const std::string& id, const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) fail(Errc::io, "'" + dir + "' is not a directory");
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".json") files.push_back(e.path().string());
    }
    std::sort(files.begin(), files.end());
    PolicySet ps{id, {}, {}};
    for (const auto& f : files) {
        if (fs::path(f).filename() == "report.json" || fs::path(f).filename().string().rfind("report_", 0) == 0) continue;
        PolicyArtifact a = load_policy(f);
        if (a.task.empty()) {
            if (a.kind() != "energy") fail(Errc::schema, "only energy policies may omit the task", f);
            ps.fallback = std::get<EnergyPolicy>(a.policy);
        } else {
            ps.by_task[a.task] = std::move(a);
        }
    }
    return ps;
}

struct HistoryItem {
    SymptomCode code;
    bool presence = false;
    long seq = 0;
    std::int64_t time_ms = 0;
};

struct RecommendationItem {
    SymptomCode code;
    std::string label;
    double score = 0;
    std::string rationale;
};

struct SessionView {
    std::string id;
    std::string status;                 // active | concluded | closed
    std::string scope;                  // task code, or "" before any routed positive
    std::string policy_kind;
    std::vector<std::pair<std::string, double>> posterior;  // descending
    double entropy = 0;
    double eps = 0;
    std::vector<RecommendationItem> recommendations;
    std::vector<HistoryItem> history;
    std::vector<PendingCode> pending;
    std::map<SymptomCode, bool> resolved;
    std::vector<std::string> advisories;
};

struct Session {
    std::string id;
    std::shared_ptr<const KbBundle> kb;
    std::shared_ptr<const PolicySet> policy;
    double eps = 1e-6;
    FuzzyEvidence evidence;
    std::vector<HistoryItem> history;
    bool closed = false;
    SessionView view;
    mutable std::mutex mu;
};

namespace detail {

inline const Scope* active_scope(const KbBundle& b, const FuzzyEvidence& ev, const std::vector<HistoryItem>& history,
                                 std::string* task) {
    std::vector<SymptomCode> present;
    for (const auto& [c, p] : ev.resolved) {
        if (p && b.kb.ontology.is_base(c)) present.push_back(c);
    }
    for (auto it = history.rbegin(); it != history.rend(); ++it) {
        if (!it->presence) continue;
        auto sc = b.scopes.find(it->code);
        if (sc == b.scopes.end()) continue;
        bool fits = true;
        for (const auto& c : present) fits &= (c == it->code || sc->second.position(c) >= 0);
        if (!fits) continue;
        *task = it->code;
        return &sc->second;
    }
    task->clear();
    return &b.global;
}

inline void rank(std::vector<RecommendationItem>& r) {
    std::sort(r.begin(), r.end(), [](const RecommendationItem& a, const RecommendationItem& b) {
        return a.score != b.score ? a.score > b.score : a.code < b.code;
    });
    if (r.size() > kRecommendations) r.resize(kRecommendations);
}

} // namespace detail

/// Recomputes posterior, status and recommendations from the evidence alone.
inline SessionView compute_view(const Session& s) {
    const KbBundle& b = *s.kb;
    SessionView v;
    v.id = s.id;
    v.eps = s.eps;
    v.history = s.history;
    v.pending = s.evidence.pending;
    v.resolved = s.evidence.resolved;
    const Scope& sc = *detail::active_scope(b, s.evidence, s.history, &v.scope);

    FuzzyPosterior fp;
    try {
        fp = fuzzy_posterior(b.env, sc, s.evidence);
    } catch (const Error& e) {
        if (e.code() != Errc::too_imprecise) throw;
        v.advisories.push_back("answer too imprecise: " + e.details() + " kept but excluded from the posterior");
        FuzzyEvidence precise = s.evidence;
        precise.pending.clear();
        fp = fuzzy_posterior(b.env, sc, precise);
    }
    for (std::size_t h = 0; h < fp.belief.labels.size(); ++h) v.posterior.emplace_back(fp.belief.labels[h], fp.belief.probs[h]);
    std::stable_sort(v.posterior.begin(), v.posterior.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
    v.entropy = fp.belief.entropy;

    bool open = false;
    for (const auto& st : fp.states) open |= !all_observed(st);
    const bool concluded = is_terminal(fp.belief, s.eps) || !open;
    v.status = s.closed ? "closed" : concluded ? "concluded" : "active";
    if (v.status != "active") return v;

    auto skip = [&](const SymptomCode& c) { return s.evidence.resolved.count(c) > 0; };
    std::vector<RecommendationItem> recs;

    if (v.scope.empty()) {
        // Entry points: the initial symptoms of tasks, by how likely they are present.
        v.policy_kind = "entry_point";
        std::vector<double> p(sc.dim(), 0.0);
        for (std::size_t k = 0; k < fp.states.size(); ++k) {
            if (fp.weights[k] == 0) continue;
            const Analysis an = analyze(b.env, sc, fp.states[k], true, fp.out_of_scope[k]);
            for (int a = 0; a < sc.dim(); ++a) {
                if (fp.states[k][a] == kUnobserved) p[a] += fp.weights[k] * an.p_present[a];
            }
        }
        for (const auto& [code, task] : b.tasks) {
            const int a = sc.position(code);
            if (a < 0 || skip(code)) continue;
            recs.push_back({code, b.kb.label(code), p[a], "entry_point"});
        }
        detail::rank(recs);
        v.recommendations = std::move(recs);
        return v;
    }

    std::vector<double> score(sc.dim(), -std::numeric_limits<double>::infinity());
    std::string rationale;
    auto art = s.policy->by_task.find(v.scope);
    if (art != s.policy->by_task.end() && art->second.kind() != "energy") {
        const auto& pa = art->second;
        const QFunction q = pa.kind() == "tabular" ? as_qfunction(std::get<TabularQ>(pa.policy)) : as_qfunction(std::get<QNetwork>(pa.policy));
        score = fuzzy_q(q, fp.states, fp.weights);
        rationale = "q_value";
        v.policy_kind = pa.kind();
    } else {
        std::optional<EnergyPolicy> energy = s.policy->fallback;
        if (art != s.policy->by_task.end()) energy = std::get<EnergyPolicy>(art->second.policy);
        std::fill(score.begin(), score.end(), 0.0);
        std::vector<bool> any(sc.dim(), false);
        for (std::size_t k = 0; k < fp.states.size(); ++k) {
            const auto& st = fp.states[k];
            if (all_observed(st)) continue;
            const Analysis an = analyze(b.env, sc, st, true, fp.out_of_scope[k]);
            std::vector<double> f(sc.dim(), 0.0);
            if (energy) {
                f = energy_probs(energy->theta, st, all_features(sc, st, an));
            } else {
                for (int a = 0; a < sc.dim(); ++a) {
                    if (st[a] == kUnobserved) f[a] = an.H - an.expected_H[a];
                }
            }
            for (int a = 0; a < sc.dim(); ++a) {
                score[a] += fp.weights[k] * f[a];
                any[a] = any[a] || st[a] == kUnobserved;
            }
        }
        for (int a = 0; a < sc.dim(); ++a) {
            if (!any[a]) score[a] = -std::numeric_limits<double>::infinity();
        }
        rationale = energy ? "softmax" : "info_gain";
        v.policy_kind = energy ? "energy" : "greedy_entropy";
    }
    for (int a = 0; a < sc.dim(); ++a) {
        if (!std::isfinite(score[a]) || skip(sc.symptoms[a])) continue;
        recs.push_back({sc.symptoms[a], b.kb.label(sc.symptoms[a]), score[a], rationale});
    }
    detail::rank(recs);
    v.recommendations = std::move(recs);
    return v;
}

inline json view_json(const SessionView& v) {
    json post = json::array();
    for (const auto& [d, p] : v.posterior) post.push_back({{"disease", d}, {"probability", p}});
    json recs = json::array();
    for (const auto& r : v.recommendations) {
        recs.push_back({{"code", r.code}, {"label", r.label}, {"score", r.score}, {"rationale", r.rationale}});
    }
    json hist = json::array();
    for (const auto& h : v.history) {
        hist.push_back({{"seq", h.seq}, {"code", h.code}, {"presence", h.presence}, {"time_ms", h.time_ms}});
    }
    json pending = json::array();
    for (const auto& p : v.pending) pending.push_back({{"code", p.code}, {"candidates", p.candidates}});
    return {{"schema", kApiSchema},     {"session", v.id},         {"status", v.status},
            {"scope", v.scope},         {"policy_kind", v.policy_kind}, {"entropy", v.entropy},
            {"eps", v.eps},             {"posterior", post},       {"recommendations", recs},
            {"history", hist},          {"pending", pending},      {"resolved", v.resolved},
            {"advisories", v.advisories}};
}

class SessionManager {
public:
    explicit SessionManager(std::string event_log = {}) : log_path_(std::move(event_log)) {
        std::random_device rd;
        salt_ = (std::uint64_t(rd()) << 32) ^ rd();
    }

    void add_kb(std::shared_ptr<const KbBundle> b) {
        std::unique_lock lock(mu_);
        kbs_[b->id] = std::move(b);
    }

    void add_policy(std::shared_ptr<const PolicySet> p) {
        std::unique_lock lock(mu_);
        for (const auto& [_, b] : kbs_) {
            bool applies = true;
            for (const auto& [code, art] : p->by_task) applies &= b->tasks.count(code) > 0;
            if (applies) check_policy_set(*b, *p);
        }
        policies_[p->id] = std::move(p);
    }

    std::vector<std::string> kb_ids() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> out;
        for (const auto& [k, _] : kbs_) out.push_back(k);
        return out;
    }

    std::vector<std::string> policy_ids() const {
        std::shared_lock lock(mu_);
        std::vector<std::string> out{"greedy"};
        for (const auto& [k, _] : policies_) out.push_back(k);
        return out;
    }

    SessionView create(const std::string& kb_id, const std::string& policy_id, std::optional<double> eps = {}) {
        auto s = std::make_shared<Session>();
        {
            std::shared_lock lock(mu_);
            auto k = kbs_.find(kb_id);
            if (k == kbs_.end()) fail(Errc::not_found, "unknown kb '" + kb_id + "'", kb_id);
            s->kb = k->second;
            if (policy_id == "greedy") {
                s->policy = std::make_shared<const PolicySet>(PolicySet{"greedy", {}, {}});
            } else {
                auto p = policies_.find(policy_id);
                if (p == policies_.end()) fail(Errc::not_found, "unknown policy '" + policy_id + "'", policy_id);
                s->policy = p->second;
            }
        }
        if (!s->policy->by_task.empty()) check_policy_set(*s->kb, *s->policy);
        s->eps = eps.value_or(s->kb->env.entropy_threshold);
        if (!(s->eps > 0 && s->eps < 1)) fail(Errc::invalid_argument, "eps must lie in (0, 1)");
        const long n = ++counter_;
        s->id = "s" + std::to_string(n) + "-" + hex64(fnv1a64(std::to_string(salt_) + ":" + std::to_string(n))).substr(0, 8);
        s->view = compute_view(*s);
        SessionView v = s->view;
        {
            std::unique_lock lock(mu_);
            sessions_[s->id] = s;
        }
        log({{"event", "create"}, {"session", s->id}, {"kb", kb_id}, {"policy", policy_id}, {"eps", s->eps}});
        return v;
    }

    /// Applies one answer. Conflicts and unknown codes leave the session untouched.
    SessionView answer(const std::string& id, const SymptomCode& code, bool presence) {
        auto s = find(id);
        std::lock_guard lock(s->mu);
        if (s->view.status != "active") {
            fail(Errc::conflict, "session is " + s->view.status + "; answers are no longer accepted", id);
        }
        FuzzyEvidence ev = apply_deterministic_rules(s->kb->kb.ontology, s->evidence, code, presence);
        Session next_probe;
        next_probe.id = s->id;
        next_probe.kb = s->kb;
        next_probe.policy = s->policy;
        next_probe.eps = s->eps;
        next_probe.evidence = ev;
        next_probe.history = s->history;
        next_probe.history.push_back({code, presence, static_cast<long>(s->history.size()) + 1, now_ms()});
        SessionView v = compute_view(next_probe);
        s->evidence = std::move(ev);
        s->history = std::move(next_probe.history);
        s->view = v;
        log({{"event", "answer"}, {"session", id}, {"code", code}, {"presence", presence}});
        return v;
    }

    SessionView close(const std::string& id) {
        auto s = find(id);
        std::lock_guard lock(s->mu);
        if (!s->closed && s->view.status == "active") {
            s->closed = true;
            s->view = compute_view(*s);
            log({{"event", "close"}, {"session", id}});
        }
        return s->view;
    }

    SessionView view(const std::string& id) const {
        auto s = find(id);
        std::lock_guard lock(s->mu);
        return s->view;
    }

    std::size_t size() const {
        std::shared_lock lock(mu_);
        return sessions_.size();
    }

private:
    mutable std::shared_mutex mu_;
    std::map<std::string, std::shared_ptr<const KbBundle>> kbs_;
    std::map<std::string, std::shared_ptr<const PolicySet>> policies_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::atomic<long> counter_{0};
    std::uint64_t salt_ = 0;
    std::string log_path_;
    std::mutex log_mu_;

    std::shared_ptr<Session> find(const std::string& id) const {
        std::shared_lock lock(mu_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) fail(Errc::not_found, "unknown session '" + id + "'", id);
        return it->second;
    }

    static std::int64_t now_ms() {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    }

    void log(json event) {
        if (log_path_.empty()) return;
        event["time_ms"] = now_ms();
        std::lock_guard lock(log_mu_);
        std::ofstream out(log_path_, std::ios::app);
        if (!out) fail(Errc::io, "cannot append to event log '" + log_path_ + "'");
        out << event.dump() << '\n';
    }
};

} // namespace raredx
