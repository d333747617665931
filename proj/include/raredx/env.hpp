#pragma once

// Simulated examination environment: beliefs over diseases given a ternary
// knowledge state, entropy stopping, answer sampling from the per-disease
// joint models, and ontology-level (imprecise) evidence.

#include "raredx/error.hpp"
#include "raredx/kb.hpp"
#include "raredx/maxent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace raredx {

inline constexpr std::uint8_t kAbsent = 0;
inline constexpr std::uint8_t kPresent = 1;
inline constexpr std::uint8_t kUnobserved = 2;

using KnowledgeState = std::vector<std::uint8_t>;

inline const std::string kOther = "other";

struct EnvModel {
    std::vector<std::string> diseases;   // sorted ids
    std::vector<double> priors;
    std::vector<JointModel> models;      // same order as diseases
    double other_prior = 0;
    double non_typical_p = 1e-5;
    double entropy_threshold = 1e-6;
    std::vector<SymptomCode> universe;   // sorted
    Ontology ontology;

    int index_of(const std::string& id) const {
        auto it = std::lower_bound(diseases.begin(), diseases.end(), id);
        if (it == diseases.end() || *it != id) fail(Errc::not_found, "unknown disease '" + id + "'");
        return static_cast<int>(it - diseases.begin());
    }
};

/// Pairs the KB with one fitted model per disease (matched by disease id).
inline EnvModel make_env(const KnowledgeBase& kb, const std::vector<JointModel>& models, double entropy_threshold = 1e-6,
                         double non_typical_p = 1e-5) {
    if (!(non_typical_p > 0 && non_typical_p < 0.01)) fail(Errc::invalid_argument, "non_typical_p must lie in (0, 0.01)");
    if (!(entropy_threshold > 0)) fail(Errc::invalid_argument, "entropy threshold must be positive");
    EnvModel env;
    env.other_prior = kb.other_prior;
    env.non_typical_p = non_typical_p;
    env.entropy_threshold = entropy_threshold;
    env.universe = kb.symptom_universe();
    env.ontology = kb.ontology;
    std::map<std::string, const JointModel*> by_id;
    for (const auto& m : models) by_id[model_disease(m)] = &m;
    for (const auto& d : kb.diseases) {
        auto it = by_id.find(d.id);
        if (it == by_id.end()) fail(Errc::not_found, "no fitted model for disease '" + d.id + "'");
        if (model_symptoms(*it->second) != d.codes()) {
            fail(Errc::schema, "model for '" + d.id + "' does not match the KB's typical symptoms");
        }
        env.diseases.push_back(d.id);
        env.priors.push_back(d.prior);
        env.models.push_back(*it->second);
    }
    return env;
}

/// Conditional independence of symptoms given the disease.
inline EnvModel independent_env(const KnowledgeBase& kb, double entropy_threshold = 1e-6, double non_typical_p = 1e-5) {
    std::vector<JointModel> models;
    for (const auto& d : kb.diseases) models.emplace_back(independent_model(d));
    return make_env(kb, models, entropy_threshold, non_typical_p);
}

/// Maxent tables for every disease.
inline EnvModel fitted_env(const KnowledgeBase& kb, const std::map<std::string, ObservedCounts>& counts,
                           const FitOptions& opt = {}, double entropy_threshold = 1e-6) {
    std::vector<JointModel> models;
    for (const auto& d : kb.diseases) {
        auto it = counts.find(d.id);
        models.emplace_back(fit_disease(d, it == counts.end() ? ObservedCounts{} : it->second, opt));
    }
    return make_env(kb, models, entropy_threshold);
}

/// The part of the problem a state lives in: which symptoms are action
/// positions, which evidence is fixed, and which hypotheses compete.
/// Hypotheses are the candidate diseases followed by "other" when included.
struct Scope {
    std::vector<SymptomCode> symptoms;
    std::vector<std::pair<SymptomCode, bool>> given;
    std::vector<int> candidates;
    bool include_other = true;

    std::vector<std::string> labels;
    std::vector<double> prior;
    std::vector<std::vector<int>> bit;     // per hypothesis, position -> model bit or -1
    std::vector<Mask> given_mask, given_value;
    std::vector<int> given_nt_present, given_nt_absent;

    int hypotheses() const { return static_cast<int>(labels.size()); }
    int dim() const { return static_cast<int>(symptoms.size()); }
    bool is_other(int h) const { return include_other && h == hypotheses() - 1; }

    int position(const SymptomCode& c) const {
        auto it = std::lower_bound(symptoms.begin(), symptoms.end(), c);
        if (it == symptoms.end() || *it != c) return -1;
        return static_cast<int>(it - symptoms.begin());
    }

    KnowledgeState initial_state() const { return KnowledgeState(symptoms.size(), kUnobserved); }
};

inline Scope make_scope(const EnvModel& env, std::vector<SymptomCode> symptoms,
                        std::vector<std::pair<SymptomCode, bool>> given, std::vector<int> candidates,
                        bool include_other = true) {
    std::sort(symptoms.begin(), symptoms.end());
    if (std::adjacent_find(symptoms.begin(), symptoms.end()) != symptoms.end()) {
        fail(Errc::invalid_argument, "duplicate symptom position");
    }
    std::sort(candidates.begin(), candidates.end());
    Scope sc;
    sc.symptoms = std::move(symptoms);
    sc.given = std::move(given);
    sc.candidates = std::move(candidates);
    sc.include_other = include_other;
    if (sc.candidates.empty() && !include_other) fail(Errc::invalid_argument, "scope has no hypothesis");
    for (const auto& [code, _] : sc.given) {
        if (sc.position(code) >= 0) fail(Errc::invalid_argument, "given evidence '" + code + "' is also an action position");
    }
    auto add = [&](const std::string& label, double prior, const std::vector<SymptomCode>* typical) {
        sc.labels.push_back(label);
        sc.prior.push_back(prior);
        std::vector<int> bits(sc.symptoms.size(), -1);
        Mask gm = 0, gv = 0;
        int ntp = 0, nta = 0;
        auto bit_of = [&](const SymptomCode& c) {
            if (!typical) return -1;
            auto it = std::lower_bound(typical->begin(), typical->end(), c);
            return (it == typical->end() || *it != c) ? -1 : static_cast<int>(it - typical->begin());
        };
        for (std::size_t i = 0; i < sc.symptoms.size(); ++i) bits[i] = bit_of(sc.symptoms[i]);
        for (const auto& [code, present] : sc.given) {
            const int b = bit_of(code);
            if (b < 0) {
                (present ? ntp : nta) += 1;
            } else {
                gm |= Mask{1} << b;
                if (present) gv |= Mask{1} << b;
            }
        }
        sc.bit.push_back(std::move(bits));
        sc.given_mask.push_back(gm);
        sc.given_value.push_back(gv);
        sc.given_nt_present.push_back(ntp);
        sc.given_nt_absent.push_back(nta);
    };
    for (int d : sc.candidates) {
        if (d < 0 || d >= static_cast<int>(env.diseases.size())) fail(Errc::invalid_argument, "candidate index out of range");
        add(env.diseases[d], env.priors[d], &model_symptoms(env.models[d]));
    }
    if (include_other) add(kOther, env.other_prior, nullptr);
    return sc;
}

/// Every disease plus "other", every symptom in the universe.
inline Scope global_scope(const EnvModel& env) {
    std::vector<int> all(env.diseases.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return make_scope(env, env.universe, {}, all, true);
}

struct Belief {
    std::vector<std::string> labels;
    std::vector<double> probs;
    double entropy = 0;

    double of(const std::string& label) const {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] == label) return probs[i];
        }
        fail(Errc::not_found, "no hypothesis '" + label + "' in belief");
    }

    std::size_t argmax() const {
        return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    }
};

inline double entropy(const std::vector<double>& p) {
    double h = 0;
    for (double x : p) {
        if (x > 0) h -= x * std::log(x);
    }
    return h;
}

inline double entropy(const Belief& b) { return entropy(b.probs); }

inline bool is_terminal(const Belief& b, double eps) {
    if (!(eps > 0)) fail(Errc::invalid_argument, "entropy threshold must be positive");
    return entropy(b) <= eps;
}

/// Posterior and, optionally, per-action answer statistics at one state.
struct Analysis {
    std::vector<double> joint;   // prior x likelihood per hypothesis
    double evidence = 0;
    std::vector<double> post;
    double H = 0;
    std::vector<std::vector<double>> cond;  // [h][position] P[S=1 | h, s]; only with actions
    std::vector<double> p_present;          // [position] P[S=1 | s]
    std::vector<double> expected_H;         // [position] E[H(D | s, answer)]
};

namespace detail {

inline void check_state(const Scope& sc, const KnowledgeState& s) {
    if (s.size() != sc.symptoms.size()) {
        fail(Errc::dimension, "state has " + std::to_string(s.size()) + " entries, scope has " +
                                  std::to_string(sc.symptoms.size()));
    }
    for (auto v : s) {
        if (v > kUnobserved) fail(Errc::invalid_argument, "state entries must be 0, 1 or 2");
    }
}

} // namespace detail

/// `extra_nt_present` counts positive observations outside the scope; they
/// are non-typical for every hypothesis.
inline Analysis analyze(const EnvModel& env, const Scope& sc, const KnowledgeState& s, bool actions = false,
                        int extra_nt_present = 0) {
    detail::check_state(sc, s);
    const int H = sc.hypotheses();
    const int n = sc.dim();
    const double q = env.non_typical_p;
    Analysis out;
    out.joint.resize(H);
    if (actions) out.cond.assign(H, std::vector<double>(n, q));
    for (int h = 0; h < H; ++h) {
        int ntp = sc.given_nt_present[h] + extra_nt_present, nta = sc.given_nt_absent[h];
        Mask mask = sc.given_mask[h], value = sc.given_value[h];
        const auto& bits = sc.bit[h];
        for (int i = 0; i < n; ++i) {
            if (s[i] == kUnobserved) continue;
            if (bits[i] < 0) {
                (s[i] == kPresent ? ntp : nta) += 1;
            } else {
                mask |= Mask{1} << bits[i];
                if (s[i] == kPresent) value |= Mask{1} << bits[i];
            }
        }
        const double nt = std::pow(q, ntp) * std::pow(1 - q, nta);
        if (sc.is_other(h)) {
            out.joint[h] = sc.prior[h] * nt;
            continue;
        }
        const JointModel& m = env.models[sc.candidates[h]];
        if (!actions) {
            out.joint[h] = sc.prior[h] * nt * query_bits(m, mask, value);
            continue;
        }
        const Conditional c = conditional_bits(m, mask, value);
        out.joint[h] = sc.prior[h] * nt * c.mass;
        for (int i = 0; i < n; ++i) {
            if (s[i] != kUnobserved || bits[i] < 0) continue;
            out.cond[h][i] = c.mass > 0 ? std::clamp(c.present[bits[i]] / c.mass, 0.0, 1.0) : 0.0;
        }
    }
    for (double v : out.joint) out.evidence += v;
    if (!(out.evidence > 0)) fail(Errc::evidence_impossible, "evidence has zero probability under every hypothesis");
    out.post.resize(H);
    for (int h = 0; h < H; ++h) out.post[h] = out.joint[h] / out.evidence;
    out.H = entropy(out.post);
    if (actions) {
        out.p_present.assign(n, 0.0);
        out.expected_H.assign(n, 0.0);
        std::vector<double> yes(H), no(H);
        for (int i = 0; i < n; ++i) {
            if (s[i] != kUnobserved) continue;
            double p1 = 0, p0 = 0;
            for (int h = 0; h < H; ++h) {
                yes[h] = out.post[h] * out.cond[h][i];
                no[h] = out.post[h] * (1 - out.cond[h][i]);
                p1 += yes[h];
                p0 += no[h];
            }
            double e = 0;
            if (p1 > 0) {
                for (auto& v : yes) v /= p1;
                e += p1 * entropy(yes);
            }
            if (p0 > 0) {
                for (auto& v : no) v /= p0;
                e += p0 * entropy(no);
            }
            out.p_present[i] = p1 / (p1 + p0);
            out.expected_H[i] = e;
        }
    }
    return out;
}

inline Belief posterior(const EnvModel& env, const Scope& sc, const KnowledgeState& s) {
    Analysis a = analyze(env, sc, s);
    return {sc.labels, std::move(a.post), a.H};
}

inline bool all_observed(const KnowledgeState& s) {
    return std::none_of(s.begin(), s.end(), [](std::uint8_t v) { return v == kUnobserved; });
}

/// Entropy at or below the threshold, or nothing left to ask.
inline bool state_terminal(const EnvModel& env, const Scope& sc, const KnowledgeState& s) {
    if (all_observed(s)) return true;
    return analyze(env, sc, s).H <= env.entropy_threshold;
}

inline double expected_posterior_entropy(const EnvModel& env, const Scope& sc, const KnowledgeState& s, int a) {
    if (a < 0 || a >= sc.dim() || s.at(a) != kUnobserved) {
        fail(Errc::contract_violation, "expected entropy requested for an observed or invalid symptom");
    }
    return analyze(env, sc, s, true).expected_H[a];
}

/// Draws a hypothesis index from the posterior at the scope's initial state.
template <class Rng>
int sample_hypothesis(const EnvModel& env, const Scope& sc, Rng& rng) {
    const Analysis a = analyze(env, sc, sc.initial_state());
    const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    double acc = 0;
    for (int h = 0; h < sc.hypotheses(); ++h) {
        acc += a.post[h];
        if (u < acc) return h;
    }
    for (int h = sc.hypotheses() - 1; h >= 0; --h) {
        if (a.post[h] > 0) return h;
    }
    return 0;
}

/// P[S_a = 1 | observed pattern, hypothesis h].
inline double answer_probability(const EnvModel& env, const Scope& sc, const KnowledgeState& s, int h, int a) {
    detail::check_state(sc, s);
    const int b = sc.bit[h][a];
    if (sc.is_other(h) || b < 0) return env.non_typical_p;
    Mask mask = sc.given_mask[h], value = sc.given_value[h];
    for (int i = 0; i < sc.dim(); ++i) {
        const int bi = sc.bit[h][i];
        if (s[i] == kUnobserved || bi < 0) continue;
        mask |= Mask{1} << bi;
        if (s[i] == kPresent) value |= Mask{1} << bi;
    }
    const JointModel& m = env.models[sc.candidates[h]];
    const double base = query_bits(m, mask, value);
    if (!(base > 0)) fail(Errc::evidence_impossible, "observed pattern impossible under '" + sc.labels[h] + "'");
    return std::clamp(query_bits(m, mask | (Mask{1} << b), value | (Mask{1} << b)) / base, 0.0, 1.0);
}

struct Transition {
    KnowledgeState s;
    int a = -1;
    KnowledgeState s_next;
    double reward = -1;
    bool terminal = false;
    std::optional<double> mc_return;
};

template <class Rng>
Transition step(const EnvModel& env, const Scope& sc, const KnowledgeState& s, int a, int h, Rng& rng) {
    if (a < 0 || a >= sc.dim()) fail(Errc::contract_violation, "action out of range");
    if (s.at(a) != kUnobserved) fail(Errc::contract_violation, "symptom '" + sc.symptoms[a] + "' was already observed");
    const double p = answer_probability(env, sc, s, h, a);
    Transition t;
    t.s = s;
    t.a = a;
    t.s_next = s;
    t.s_next[a] = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p ? kPresent : kAbsent;
    t.terminal = state_terminal(env, sc, t.s_next);
    return t;
}

using Policy = std::function<int(const KnowledgeState&)>;

struct Episode {
    std::vector<Transition> transitions;
    int questions = 0;
    int hypothesis = -1;
};

/// Plays until the state is terminal; each transition's mc_return is minus
/// the number of questions from it to the end.
template <class Rng>
Episode play_episode(const EnvModel& env, const Scope& sc, const Policy& policy, const KnowledgeState& start, Rng& rng,
                     std::optional<int> hypothesis = std::nullopt) {
    Episode ep;
    ep.hypothesis = hypothesis ? *hypothesis : sample_hypothesis(env, sc, rng);
    KnowledgeState s = start;
    bool done = state_terminal(env, sc, s);
    while (!done) {
        Transition t = step(env, sc, s, policy(s), ep.hypothesis, rng);
        s = t.s_next;
        done = t.terminal;
        ep.transitions.push_back(std::move(t));
    }
    ep.questions = static_cast<int>(ep.transitions.size());
    for (int i = 0; i < ep.questions; ++i) ep.transitions[i].mc_return = -(ep.questions - i);
    return ep;
}

// --- imprecise evidence -----------------------------------------------------

struct PendingCode {
    SymptomCode code;
    std::vector<SymptomCode> candidates;   // base-level descendants not known absent

    bool operator==(const PendingCode&) const = default;
};

struct FuzzyEvidence {
    std::vector<std::pair<SymptomCode, bool>> answered;
    std::map<SymptomCode, bool> resolved;       // every node whose status is implied
    std::map<SymptomCode, SymptomCode> because; // implied node -> answer that implied it
    std::vector<PendingCode> pending;
};

namespace detail {

inline std::vector<PendingCode> pending_codes(const Ontology& o, const std::map<SymptomCode, bool>& resolved) {
    auto has_base_below = [&](const SymptomCode& c) {
        for (const auto& d : descendants(o, c)) {
            if (o.is_base(d)) return true;
        }
        return false;
    };
    std::vector<PendingCode> out;
    for (const auto& [code, present] : resolved) {
        if (!present || o.is_base(code) || !has_base_below(code)) continue;
        bool minimal = true;
        for (const auto& d : descendants(o, code)) {
            auto it = resolved.find(d);
            if (it != resolved.end() && it->second && (o.is_base(d) || has_base_below(d))) {
                minimal = false;
                break;
            }
        }
        if (!minimal) continue;
        PendingCode p{code, {}};
        for (const auto& d : descendants(o, code)) {
            if (!o.is_base(d)) continue;
            auto it = resolved.find(d);
            if (it == resolved.end()) p.candidates.push_back(d);
        }
        if (p.candidates.empty()) {
            fail(Errc::conflict, "'" + code + "' is present but every base-level descendant is absent", code);
        }
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace detail

/// Positive answers propagate to every ancestor, negative answers to every
/// descendant. A contradiction names both the new and the conflicting code.
inline FuzzyEvidence apply_deterministic_rules(const Ontology& o, FuzzyEvidence ev, const SymptomCode& code, bool presence) {
    o.require(code);
    for (const auto& [c, p] : ev.answered) {
        if (c == code && p == presence) return ev;
    }
    std::set<SymptomCode> targets = presence ? ancestors(o, code) : descendants(o, code);
    targets.insert(code);
    for (const auto& t : targets) {
        auto it = ev.resolved.find(t);
        if (it != ev.resolved.end() && it->second != presence) {
            const SymptomCode& other = ev.because.at(t);
            fail(Errc::conflict,
                 "'" + code + "' " + (presence ? "present" : "absent") + " contradicts '" + other + "' " +
                     (presence ? "absent" : "present"),
                 code + "," + other);
        }
    }
    FuzzyEvidence next = ev;
    for (const auto& t : targets) {
        if (next.resolved.emplace(t, presence).second) next.because[t] = code;
    }
    next.answered.emplace_back(code, presence);
    next.pending = detail::pending_codes(o, next.resolved);
    return next;
}

struct FuzzyPosterior {
    Belief belief;
    std::vector<KnowledgeState> states;  // one per assignment of the pending codes
    std::vector<double> weights;         // p(state | imprecise evidence)
    std::vector<int> out_of_scope;       // chosen candidates outside the scope, per state
};

/// Base-level resolved codes written into a state over the scope's positions.
inline KnowledgeState resolved_state(const Scope& sc, const FuzzyEvidence& ev) {
    KnowledgeState s = sc.initial_state();
    for (const auto& [code, present] : ev.resolved) {
        const int i = sc.position(code);
        if (i >= 0) s[i] = present ? kPresent : kAbsent;
    }
    return s;
}

/// Mixture over one present candidate per pending code; the other candidates
/// stay unobserved.
inline FuzzyPosterior fuzzy_posterior(const EnvModel& env, const Scope& sc, const FuzzyEvidence& ev, std::size_t budget = 64) {
    std::size_t combos = 1;
    for (const auto& p : ev.pending) {
        if (p.candidates.empty()) fail(Errc::invalid_argument, "pending code without candidates");
        combos *= p.candidates.size();
        if (combos > budget) {
            std::string codes;
            for (const auto& q : ev.pending) codes += (codes.empty() ? "" : ",") + q.code;
            fail(Errc::too_imprecise, "imprecise answers admit more than " + std::to_string(budget) + " precise states", codes);
        }
    }
    const KnowledgeState base = resolved_state(sc, ev);
    FuzzyPosterior out;
    std::vector<double> mixture(sc.hypotheses(), 0.0);
    double total = 0;
    std::vector<std::size_t> pick(ev.pending.size(), 0);
    for (std::size_t it = 0; it < combos; ++it) {
        KnowledgeState s = base;
        int extra = 0;
        for (std::size_t k = 0; k < pick.size(); ++k) {
            const int i = sc.position(ev.pending[k].candidates[pick[k]]);
            if (i >= 0) s[i] = kPresent;
            else ++extra;
        }
        double evidence = 0;
        try {
            Analysis a = analyze(env, sc, s, false, extra);
            evidence = a.evidence;
            for (int h = 0; h < sc.hypotheses(); ++h) mixture[h] += a.joint[h];
        } catch (const Error& e) {
            if (e.code() != Errc::evidence_impossible) throw;
        }
        total += evidence;
        out.states.push_back(std::move(s));
        out.weights.push_back(evidence);
        out.out_of_scope.push_back(extra);
        for (std::size_t k = 0; k < pick.size(); ++k) {
            if (++pick[k] < ev.pending[k].candidates.size()) break;
            pick[k] = 0;
        }
    }
    if (!(total > 0)) fail(Errc::evidence_impossible, "imprecise evidence has zero probability under every hypothesis");
    for (auto& w : out.weights) w /= total;
    for (auto& v : mixture) v /= total;
    out.belief.labels = sc.labels;
    out.belief.entropy = entropy(mixture);
    out.belief.probs = std::move(mixture);
    return out;
}

} // namespace raredx
