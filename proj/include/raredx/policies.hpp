#pragma once

// Baseline question-asking policies: greedy expected-entropy, uniform random,
// and the three-feature energy (softmax) policy trained by REINFORCE.

#include "raredx/env.hpp"
#include "raredx/error.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace raredx {

struct FeatureTriple {
    double info_gain = 0;
    double p_positive = 0;
    double in_top_disease = 0;

    std::array<double, 3> vec() const { return {info_gain, p_positive, in_top_disease}; }
};

/// Hypothesis with the largest posterior; ties go to the first (smallest id).
inline int top_hypothesis(const std::vector<double>& post) {
    int best = 0;
    for (int h = 1; h < static_cast<int>(post.size()); ++h) {
        if (post[h] > post[best]) best = h;
    }
    return best;
}

/// Features of every position; entries for observed positions are left zero.
inline std::vector<FeatureTriple> all_features(const Scope& sc, const KnowledgeState& s, const Analysis& an) {
    std::vector<FeatureTriple> out(sc.dim());
    const int top = top_hypothesis(an.post);
    for (int a = 0; a < sc.dim(); ++a) {
        if (s[a] != kUnobserved) continue;
        out[a].info_gain = an.H - an.expected_H[a];
        out[a].p_positive = an.p_present[a];
        out[a].in_top_disease = (!sc.is_other(top) && sc.bit[top][a] >= 0) ? 1.0 : 0.0;
    }
    return out;
}

inline FeatureTriple features(const EnvModel& env, const Scope& sc, const KnowledgeState& s, int a) {
    if (a < 0 || a >= sc.dim() || s.at(a) != kUnobserved) {
        fail(Errc::contract_violation, "features requested for an observed or invalid symptom");
    }
    return all_features(sc, s, analyze(env, sc, s, true))[a];
}

struct EnergyPolicy {
    std::array<double, 3> theta{0, 0, 0};

    bool operator==(const EnergyPolicy&) const = default;
};

/// Softmax of theta . phi over unobserved positions (zero elsewhere).
inline std::vector<double> energy_probs(const std::array<double, 3>& theta, const KnowledgeState& s,
                                        const std::vector<FeatureTriple>& phi) {
    std::vector<double> energy(s.size(), -std::numeric_limits<double>::infinity());
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < s.size(); ++a) {
        if (s[a] != kUnobserved) continue;
        const auto f = phi[a].vec();
        energy[a] = theta[0] * f[0] + theta[1] * f[1] + theta[2] * f[2];
        top = std::max(top, energy[a]);
    }
    if (top == -std::numeric_limits<double>::infinity()) fail(Errc::contract_violation, "no unobserved action left");
    std::vector<double> p(s.size(), 0.0);
    double z = 0;
    for (std::size_t a = 0; a < s.size(); ++a) {
        if (s[a] != kUnobserved) continue;
        p[a] = std::exp(energy[a] - top);
        z += p[a];
    }
    for (double& v : p) v /= z;
    return p;
}

inline std::vector<double> energy_action_probs(const EnergyPolicy& pol, const EnvModel& env, const Scope& sc,
                                               const KnowledgeState& s) {
    const Analysis an = analyze(env, sc, s, true);
    return energy_probs(pol.theta, s, all_features(sc, s, an));
}

/// Largest energy, ties by position.
inline int energy_greedy_action(const EnergyPolicy& pol, const EnvModel& env, const Scope& sc, const KnowledgeState& s) {
    const auto p = energy_action_probs(pol, env, sc, s);
    int best = -1;
    for (int a = 0; a < sc.dim(); ++a) {
        if (s[a] == kUnobserved && (best < 0 || p[a] > p[best])) best = a;
    }
    return best;
}

inline int greedy_entropy_action(const EnvModel& env, const Scope& sc, const KnowledgeState& s) {
    const Analysis an = analyze(env, sc, s, true);
    int best = -1;
    for (int a = 0; a < sc.dim(); ++a) {
        if (s[a] != kUnobserved) continue;
        if (best < 0 || an.expected_H[a] < an.expected_H[best] - 1e-12) best = a;
    }
    if (best < 0) fail(Errc::contract_violation, "no unobserved action left");
    return best;
}

inline Policy greedy_entropy_policy(const EnvModel& env, const Scope& sc) {
    return [&env, &sc](const KnowledgeState& s) { return greedy_entropy_action(env, sc, s); };
}

inline Policy energy_policy(const EnergyPolicy& pol, const EnvModel& env, const Scope& sc) {
    return [pol, &env, &sc](const KnowledgeState& s) { return energy_greedy_action(pol, env, sc, s); };
}

template <class Rng>
Policy random_policy(Rng& rng) {
    return [&rng](const KnowledgeState& s) {
        std::vector<int> open;
        for (int a = 0; a < static_cast<int>(s.size()); ++a) {
            if (s[a] == kUnobserved) open.push_back(a);
        }
        if (open.empty()) fail(Errc::contract_violation, "no unobserved action left");
        return open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)];
    };
}

/// Exact expected number of questions of a deterministic policy, summing
/// over answer branches; branches below `prune` probability are dropped.
inline double expected_questions(const EnvModel& env, const Scope& sc, const Policy& policy, const KnowledgeState& start,
                                 double prune = 1e-12) {
    struct Rec {
        const EnvModel& env;
        const Scope& sc;
        const Policy& policy;
        double prune;
        double go(KnowledgeState& s, double weight) const {
            if (all_observed(s)) return 0;
            const Analysis an = analyze(env, sc, s, true);
            if (an.H <= env.entropy_threshold) return 0;
            const int a = policy(s);
            if (a < 0 || a >= sc.dim() || s[a] != kUnobserved) fail(Errc::contract_violation, "policy chose an observed symptom");
            const double p1 = an.p_present[a];
            double v = 1;
            for (std::uint8_t ans : {kPresent, kAbsent}) {
                const double p = ans == kPresent ? p1 : 1 - p1;
                if (p * weight < prune) continue;
                s[a] = ans;
                v += p * go(s, p * weight);
                s[a] = kUnobserved;
            }
            return v;
        }
    };
    KnowledgeState s = start;
    return Rec{env, sc, policy, prune}.go(s, 1.0);
}

struct ReinforceConfig {
    double lr0 = 0.01;           // lr = lr0 / sqrt(episode)
    bool baseline = true;        // running mean of returns
    std::array<double, 3> theta0{0, 0, 0};
    double divergence_norm = 1e6;
};

struct ReinforceResult {
    EnergyPolicy policy;
    std::vector<int> questions;  // per training episode
};

/// One game per update; theta moves along (G - b) * sum_t grad log pi(s_t, a_t)
/// with G = -I.
template <class Rng>
ReinforceResult reinforce_train(const EnvModel& env, const Scope& sc, int episodes, const ReinforceConfig& cfg, Rng& rng) {
    if (episodes < 0) fail(Errc::invalid_argument, "episodes must be >= 0");
    ReinforceResult out;
    out.policy.theta = cfg.theta0;
    double baseline = 0;
    for (int ep = 1; ep <= episodes; ++ep) {
        const int h = sample_hypothesis(env, sc, rng);
        KnowledgeState s = sc.initial_state();
        std::array<double, 3> grad{0, 0, 0};
        int questions = 0;
        while (!all_observed(s)) {
            const Analysis an = analyze(env, sc, s, true);
            if (an.H <= env.entropy_threshold) break;
            const auto phi = all_features(sc, s, an);
            const auto p = energy_probs(out.policy.theta, s, phi);
            double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            int a = -1;
            for (int i = 0; i < sc.dim(); ++i) {
                if (s[i] != kUnobserved) continue;
                a = i;
                if ((u -= p[i]) < 0) break;
            }
            std::array<double, 3> mean{0, 0, 0};
            for (int i = 0; i < sc.dim(); ++i) {
                if (s[i] != kUnobserved) continue;
                const auto f = phi[i].vec();
                for (int k = 0; k < 3; ++k) mean[k] += p[i] * f[k];
            }
            const auto fa = phi[a].vec();
            for (int k = 0; k < 3; ++k) grad[k] += fa[k] - mean[k];
            const double pa = answer_probability(env, sc, s, h, a);
            s[a] = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < pa ? kPresent : kAbsent;
            ++questions;
        }
        const double G = -questions;
        if (cfg.baseline && ep == 1) baseline = G;
        const double adv = G - (cfg.baseline ? baseline : 0.0);
        const double lr = cfg.lr0 / std::sqrt(static_cast<double>(ep));
        double norm = 0;
        for (int k = 0; k < 3; ++k) {
            out.policy.theta[k] += lr * adv * grad[k];
            norm += out.policy.theta[k] * out.policy.theta[k];
        }
        if (!(std::sqrt(norm) <= cfg.divergence_norm)) {
            fail(Errc::diverged, "REINFORCE parameters diverged", "episode " + std::to_string(ep));
        }
        if (cfg.baseline) baseline += (G - baseline) / ep;
        out.questions.push_back(questions);
    }
    return out;
}

} // namespace raredx
