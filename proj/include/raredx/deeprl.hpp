#pragma once

// Subtask decomposition, exact value iteration for small tasks, and Q-network
// training from simulated games (Monte-Carlo and TD targets, replay memory,
// frozen target network, bootstrapping on solved subtasks).

#include "raredx/env.hpp"
#include "raredx/error.hpp"
#include "raredx/kb.hpp"
#include "raredx/policies.hpp"
#include "raredx/qnet.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <variant>
#include <vector>

namespace raredx {

// --- tasks -------------------------------------------------------------------

struct TaskSpec {
    SymptomCode initial;
    std::vector<SymptomCode> relevant;   // sorted; the action positions
    std::vector<std::string> diseases;   // candidates, sorted; "other" always competes
    int dim() const { return static_cast<int>(relevant.size()); }

    bool operator==(const TaskSpec&) const = default;
};

inline TaskSpec make_task(const KnowledgeBase& kb, const SymptomCode& initial) {
    TaskSeed seed = relevant_set(kb, initial);
    return {seed.initial, seed.relevant, seed.diseases};
}

/// One task per base-level code typical of at least one disease, by dim then id.
inline std::vector<TaskSpec> build_tasks(const KnowledgeBase& kb) {
    std::vector<TaskSpec> out;
    for (const auto& code : kb.ontology.base_level()) {
        TaskSeed seed = relevant_set(kb, code);
        if (seed.empty()) continue;
        out.push_back({seed.initial, seed.relevant, seed.diseases});
    }
    std::stable_sort(out.begin(), out.end(), [](const TaskSpec& a, const TaskSpec& b) {
        return a.dim() != b.dim() ? a.dim() < b.dim() : a.initial < b.initial;
    });
    return out;
}

inline Scope task_scope(const EnvModel& env, const TaskSpec& t) {
    std::vector<int> cands;
    for (const auto& d : t.diseases) cands.push_back(env.index_of(d));
    return make_scope(env, t.relevant, {{t.initial, true}}, cands, true);
}

// --- tabular -----------------------------------------------------------------

inline std::size_t ternary_index(const KnowledgeState& s) {
    std::size_t idx = 0;
    for (std::size_t i = s.size(); i-- > 0;) idx = idx * 3 + s[i];
    return idx;
}

inline KnowledgeState ternary_state(std::size_t idx, int dim) {
    KnowledgeState s(dim);
    for (int i = 0; i < dim; ++i) {
        s[i] = static_cast<std::uint8_t>(idx % 3);
        idx /= 3;
    }
    return s;
}

struct TabularQ {
    int dim = 0;
    std::vector<double> q;               // [state][action]; -inf on observed actions, 0 on terminal states
    std::vector<std::uint8_t> terminal;
    double residual = 0;                 // sup-norm Bellman residual of the final table

    std::size_t states() const { return terminal.size(); }

    std::vector<double> values(const KnowledgeState& s) const {
        check(s);
        const std::size_t i = ternary_index(s);
        return {q.begin() + i * dim, q.begin() + (i + 1) * dim};
    }

    /// Values with observed actions scored as a wasted question: -1 + V(s).
    std::vector<double> raw_values(const KnowledgeState& s) const {
        auto v = values(s);
        const double V = value(s);
        for (int a = 0; a < dim; ++a) {
            if (s[a] != kUnobserved) v[a] = -1 + V;
        }
        return v;
    }

    bool is_terminal(const KnowledgeState& s) const { return terminal.at(ternary_index(s)) != 0; }

    double value(const KnowledgeState& s) const {
        if (is_terminal(s)) return 0;
        return values(s)[greedy(s)];
    }

    /// Best action, ties (within 1e-12) to the smallest position.
    int greedy(const KnowledgeState& s) const {
        const auto v = values(s);
        double best = -std::numeric_limits<double>::infinity();
        for (int a = 0; a < dim; ++a) {
            if (s[a] == kUnobserved) best = std::max(best, v[a]);
        }
        if (best == -std::numeric_limits<double>::infinity()) fail(Errc::contract_violation, "no unobserved action left");
        for (int a = 0; a < dim; ++a) {
            if (s[a] == kUnobserved && v[a] >= best - 1e-12 * (1 + std::abs(best))) return a;
        }
        return -1;
    }

    /// Every action attaining the optimum within `tol`.
    std::vector<int> optimal_actions(const KnowledgeState& s, double tol = 1e-12) const {
        const auto v = values(s);
        const int g = greedy(s);
        std::vector<int> out;
        for (int a = 0; a < dim; ++a) {
            if (s[a] == kUnobserved && v[a] >= v[g] - tol) out.push_back(a);
        }
        return out;
    }

    bool operator==(const TabularQ&) const = default;

private:
    void check(const KnowledgeState& s) const {
        if (static_cast<int>(s.size()) != dim) fail(Errc::dimension, "state length does not match the table");
    }
};

/// Exact backward induction: every answer reveals one more symptom, so states
/// form a DAG ordered by the number of unobserved entries.
inline TabularQ value_iteration(const EnvModel& env, const Scope& sc, int max_dim = 10) {
    const int n = sc.dim();
    if (n > max_dim) fail(Errc::dimension, "task dimension " + std::to_string(n) + " exceeds the tabular limit " + std::to_string(max_dim));
    if (n > 13) fail(Errc::dimension, "tabular value iteration is limited to 13 symptoms");
    std::size_t total = 1;
    for (int i = 0; i < n; ++i) total *= 3;
    std::vector<std::size_t> pow3(n + 1, 1);
    for (int i = 1; i <= n; ++i) pow3[i] = pow3[i - 1] * 3;

    TabularQ t;
    t.dim = n;
    t.q.assign(total * n, -std::numeric_limits<double>::infinity());
    t.terminal.assign(total, 0);
    std::vector<double> V(total, 0.0);
    std::vector<std::vector<std::size_t>> by_open(n + 1);
    for (std::size_t i = 0; i < total; ++i) {
        std::size_t x = i;
        int open = 0;
        for (int k = 0; k < n; ++k, x /= 3) open += (x % 3) == kUnobserved;
        by_open[open].push_back(i);
    }
    auto backup = [&](std::size_t idx, const KnowledgeState& s, const Analysis& an, int a) {
        const std::size_t base = idx - pow3[a] * kUnobserved;
        const std::size_t yes = base + pow3[a] * kPresent;
        const std::size_t no = base + pow3[a] * kAbsent;
        (void)s;
        return -1 + an.p_present[a] * V[yes] + (1 - an.p_present[a]) * V[no];
    };
    for (int open = 0; open <= n; ++open) {
        for (std::size_t idx : by_open[open]) {
            const KnowledgeState s = ternary_state(idx, n);
            if (open == 0) {
                t.terminal[idx] = 1;
                continue;
            }
            const Analysis an = analyze(env, sc, s, true);
            if (an.H <= env.entropy_threshold) {
                t.terminal[idx] = 1;
                for (int a = 0; a < n; ++a) t.q[idx * n + a] = 0;
                continue;
            }
            double best = -std::numeric_limits<double>::infinity();
            for (int a = 0; a < n; ++a) {
                if (s[a] != kUnobserved) continue;
                const double q = backup(idx, s, an, a);
                t.q[idx * n + a] = q;
                best = std::max(best, q);
            }
            V[idx] = best;
        }
    }
    // Verification sweep.
    double res = 0;
    for (std::size_t idx = 0; idx < total; ++idx) {
        if (t.terminal[idx]) continue;
        const KnowledgeState s = ternary_state(idx, n);
        const Analysis an = analyze(env, sc, s, true);
        for (int a = 0; a < n; ++a) {
            if (s[a] == kUnobserved) res = std::max(res, std::abs(backup(idx, s, an, a) - t.q[idx * n + a]));
        }
    }
    t.residual = res;
    if (res > 1e-10) fail(Errc::not_converged, "Bellman residual above 1e-10", std::to_string(res));
    return t;
}

inline Policy tabular_policy(const TabularQ& t) {
    return [&t](const KnowledgeState& s) { return t.greedy(s); };
}

inline Policy qnet_policy(const QNetwork& net) {
    return [&net](const KnowledgeState& s) { return net.greedy(s); };
}

// --- evaluation --------------------------------------------------------------

struct EvalResult {
    double mean = 0;
    double variance = 0;
    double std_error = 0;
    int games = 0;
    std::map<int, int> histogram;
};

inline EvalResult summarize(const std::vector<int>& questions) {
    EvalResult r;
    r.games = static_cast<int>(questions.size());
    if (r.games == 0) return r;
    for (int q : questions) {
        r.mean += q;
        ++r.histogram[q];
    }
    r.mean /= r.games;
    for (int q : questions) r.variance += (q - r.mean) * (q - r.mean);
    r.variance /= r.games;
    r.std_error = std::sqrt(r.variance / r.games);
    return r;
}

/// Greedy play from the scope's initial state with a fixed seed, so repeated
/// evaluations share their random numbers.
inline EvalResult evaluate_policy(const EnvModel& env, const Scope& sc, const Policy& policy, int n_games, std::uint64_t seed) {
    if (n_games < 1) fail(Errc::invalid_argument, "n_games must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<int> qs;
    qs.reserve(n_games);
    for (int g = 0; g < n_games; ++g) qs.push_back(play_episode(env, sc, policy, sc.initial_state(), rng).questions);
    return summarize(qs);
}

// --- replay --------------------------------------------------------------------

class ReplayMemory {
public:
    explicit ReplayMemory(std::size_t capacity = 0) : capacity_(capacity) {}

    void set_capacity(std::size_t c) {
        capacity_ = c;
        evict();
    }
    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return buf_.size(); }
    const Transition& operator[](std::size_t i) const { return buf_[i]; }

    void push(Transition t) {
        buf_.push_back(std::move(t));
        evict();
    }

    /// k distinct transitions, uniformly.
    template <class Rng>
    std::vector<std::size_t> sample(std::size_t k, Rng& rng) const {
        std::vector<std::size_t> idx(buf_.size());
        std::iota(idx.begin(), idx.end(), 0);
        k = std::min(k, idx.size());
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(idx[i], idx[std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng)]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::size_t capacity_;
    std::deque<Transition> buf_;

    void evict() {
        if (capacity_ == 0) return;
        while (buf_.size() > capacity_) buf_.pop_front();
    }
};

// --- training ------------------------------------------------------------------

struct TrainConfig {
    int games_per_iter = 100;
    double sample_fraction = 1.0 / 20;
    double lr0 = 1e-3;
    int lr_halving_period = 300;
    int frozen_update_period = 2;
    double epsilon_greedy = 0.1;
    int iters = 200;
    int batch_size = 32;
    int replay_iterations = 50;       // capacity = this many iterations' worth of transitions
    int eval_games = 500;
    int eval_every = 1;
    std::uint64_t eval_seed = 12345;
    double init_scale = 0.05;
    int divergence_window = 5;
    double divergence_factor = 2.0;
    bool stop_on_divergence = true;

    void validate() const {
        if (games_per_iter < 1 || !(sample_fraction > 0 && sample_fraction <= 1) || !(lr0 > 0) || lr_halving_period < 1 ||
            frozen_update_period < 1 || !(epsilon_greedy >= 0 && epsilon_greedy <= 1) || iters < 0 || batch_size < 1 ||
            replay_iterations < 1 || eval_games < 1 || eval_every < 1) {
            fail(Errc::invalid_argument, "invalid training configuration");
        }
    }
};

struct IterReport {
    int iter = 0;
    long games = 0;
    double eval_mean = 0;
    double eval_var = 0;
    double lr = 0;
    double loss = 0;
};

struct TrainResult {
    QNetwork net;
    std::vector<IterReport> reports;   // reports[0] evaluates the untrained net
    bool diverged = false;
    std::string note;
};

/// A subtask whose value function is available for bootstrapping.
struct SolvedTask {
    TaskSpec task;
    Scope scope;
    std::variant<TabularQ, QNetwork> q;

    int greedy(const KnowledgeState& s) const {
        return std::visit([&](const auto& m) { return m.greedy(s); }, q);
    }
    double value(const EnvModel& env, const KnowledgeState& s) const {
        if (state_terminal(env, scope, s)) return 0;
        return std::visit([&](const auto& m) { return m.value(s); }, q);
    }
};

using SolvedMap = std::map<SymptomCode, SolvedTask>;

/// Rewrites evidence from one scope into another. Fails when an observed
/// positive has no place in the target (its candidates would be wrong);
/// negatives outside the target are non-typical there and dropped.
inline std::optional<KnowledgeState> project_state(const Scope& from, const KnowledgeState& s, const Scope& to) {
    KnowledgeState out = to.initial_state();
    auto place = [&](const SymptomCode& code, bool present) {
        const int i = to.position(code);
        if (i >= 0) {
            out[i] = present ? kPresent : kAbsent;
            return true;
        }
        for (const auto& [g, p] : to.given) {
            if (g == code) return p == present;
        }
        return !present;
    };
    for (const auto& [code, present] : from.given) {
        if (!place(code, present)) return std::nullopt;
    }
    for (int i = 0; i < from.dim(); ++i) {
        if (s[i] != kUnobserved && !place(from.symptoms[i], s[i] == kPresent)) return std::nullopt;
    }
    for (const auto& [g, p] : to.given) {
        bool seen = false;
        for (const auto& [c, q] : from.given) seen |= (c == g && q == p);
        const int i = from.position(g);
        seen |= (i >= 0 && s[i] == (p ? kPresent : kAbsent));
        if (!seen) return std::nullopt;
    }
    return out;
}

namespace detail {

enum class Target { mc, td };

struct Trainer {
    const EnvModel& env;
    const Scope& sc;
    const TrainConfig& cfg;
    Target target;
    const SolvedMap* solved = nullptr;
    std::function<EvalResult(const QNetwork&)> evaluate;

    TrainResult run(std::mt19937_64& rng) {
        cfg.validate();
        TrainResult out;
        out.net = QNetwork(sc.dim(), rng, cfg.init_scale);
        QNetwork frozen = out.net;
        ReplayMemory memory;
        long games = 0;
        double best = std::numeric_limits<double>::infinity();
        int worse = 0;

        auto record = [&](int iter, double lr, double loss) {
            const EvalResult e = evaluate(out.net);
            out.reports.push_back({iter, games, e.mean, e.variance, lr, loss});
            if (e.mean > cfg.divergence_factor * best) {
                if (++worse >= cfg.divergence_window) {
                    out.diverged = true;
                    out.note = "evaluation worse than " + std::to_string(cfg.divergence_factor) + "x the best for " +
                               std::to_string(cfg.divergence_window) + " consecutive evaluations";
                }
            } else {
                worse = 0;
            }
            best = std::min(best, e.mean);
        };
        record(0, cfg.lr0, 0);

        for (int iter = 1; iter <= cfg.iters; ++iter) {
            const double lr = cfg.lr0 * std::pow(0.5, (iter - 1) / cfg.lr_halving_period);
            std::size_t added = 0;
            for (int g = 0; g < cfg.games_per_iter; ++g) {
                for (auto& t : play(out.net, rng)) {
                    memory.push(std::move(t));
                    ++added;
                }
                ++games;
            }
            if (iter == 1) memory.set_capacity(std::max<std::size_t>(1, added * cfg.replay_iterations));
            if (target == Target::td && (iter - 1) % cfg.frozen_update_period == 0) frozen = out.net;

            const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.sample_fraction * memory.size())));
            const auto idx = memory.sample(k, rng);
            double loss_sum = 0;
            int batches = 0;
            try {
                for (std::size_t start = 0; start < idx.size(); start += cfg.batch_size) {
                    std::vector<QSample> batch;
                    for (std::size_t j = start; j < std::min(idx.size(), start + cfg.batch_size); ++j) {
                        const Transition& t = memory[idx[j]];
                        batch.push_back({t.s, t.a, label(t, frozen)});
                    }
                    loss_sum += out.net.train_step(batch, lr);
                    ++batches;
                }
            } catch (const Error& e) {
                if (e.code() != Errc::diverged) throw;
                out.diverged = true;
                out.note = e.message() + " (" + e.details() + ")";
                break;
            }
            if (iter % cfg.eval_every == 0 || iter == cfg.iters) record(iter, lr, batches ? loss_sum / batches : 0);
            if (out.diverged && cfg.stop_on_divergence) break;
        }
        return out;
    }

    double label(const Transition& t, const QNetwork& frozen) const {
        if (target == Target::mc) return *t.mc_return;
        if (t.terminal) return -1.0;
        return -1.0 + frozen.value(t.s_next);
    }

    std::vector<Transition> play(const QNetwork& net, std::mt19937_64& rng) const {
        const int h = sample_hypothesis(env, sc, rng);
        std::vector<Transition> ts;
        KnowledgeState s = sc.initial_state();
        double tail = 0;
        if (state_terminal(env, sc, s)) return ts;
        while (true) {
            int a;
            if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.epsilon_greedy) {
                std::vector<int> open;
                for (int i = 0; i < sc.dim(); ++i) {
                    if (s[i] == kUnobserved) open.push_back(i);
                }
                a = open[std::uniform_int_distribution<std::size_t>(0, open.size() - 1)(rng)];
            } else {
                a = net.greedy(s);
            }
            Transition t = step(env, sc, s, a, h, rng);
            s = t.s_next;
            const bool done = t.terminal;
            ts.push_back(std::move(t));
            if (done) break;
            if (solved && s[a] == kPresent) {
                auto it = solved->find(sc.symptoms[a]);
                if (it != solved->end()) {
                    if (auto proj = project_state(sc, s, it->second.scope)) {
                        tail = it->second.value(env, *proj);
                        break;
                    }
                }
            }
        }
        const int n = static_cast<int>(ts.size());
        for (int i = 0; i < n; ++i) ts[i].mc_return = -(n - i) + tail;
        return ts;
    }
};

} // namespace detail

inline std::function<EvalResult(const QNetwork&)> greedy_evaluator(const EnvModel& env, const Scope& sc, const TrainConfig& cfg) {
    return [&env, &sc, &cfg](const QNetwork& net) { return evaluate_policy(env, sc, qnet_policy(net), cfg.eval_games, cfg.eval_seed); };
}

inline TrainResult dqn_mc_train(const EnvModel& env, const Scope& sc, const TrainConfig& cfg, std::mt19937_64& rng) {
    detail::Trainer t{env, sc, cfg, detail::Target::mc, nullptr, greedy_evaluator(env, sc, cfg)};
    return t.run(rng);
}

inline TrainResult dqn_td_train(const EnvModel& env, const Scope& sc, const TrainConfig& cfg, std::mt19937_64& rng) {
    detail::Trainer t{env, sc, cfg, detail::Target::td, nullptr, greedy_evaluator(env, sc, cfg)};
    return t.run(rng);
}

/// Composite play: the task network asks until a positive answer lands on a
/// solved subtask whose scope can hold the evidence, then that subtask's
/// policy takes over in its own scope. Answers always come from the true
/// disease's model.
template <class Rng>
int composite_episode(const EnvModel& env, const Scope& sc, const Policy& policy, const SolvedMap& solved, Rng& rng) {
    const int h = sample_hypothesis(env, sc, rng);
    KnowledgeState s = sc.initial_state();
    int questions = 0;
    while (!state_terminal(env, sc, s)) {
        const int a = policy(s);
        s[a] = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < answer_probability(env, sc, s, h, a) ? kPresent : kAbsent;
        ++questions;
        if (s[a] != kPresent) continue;
        auto it = solved.find(sc.symptoms[a]);
        if (it == solved.end()) continue;
        auto proj = project_state(sc, s, it->second.scope);
        if (!proj) continue;
        const SolvedTask& sub = it->second;
        // The true hypothesis, seen from the subtask.
        int hs = sub.scope.hypotheses() - 1;
        for (int k = 0; k < sub.scope.hypotheses(); ++k) {
            if (sub.scope.labels[k] == sc.labels[h]) hs = k;
        }
        const bool foreign = sub.scope.labels[hs] != sc.labels[h];
        KnowledgeState t = *proj;
        while (!state_terminal(env, sub.scope, t)) {
            const int b = sub.greedy(t);
            double p;
            if (!foreign) {
                p = answer_probability(env, sub.scope, t, hs, b);
            } else {
                // A candidate of the task that is not one of the subtask's: map
                // the question back into the task scope to query its model.
                const int j = sc.position(sub.scope.symptoms[b]);
                p = j >= 0 ? answer_probability(env, sc, s, h, j) : env.non_typical_p;
            }
            const bool yes = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p;
            t[b] = yes ? kPresent : kAbsent;
            const int j = sc.position(sub.scope.symptoms[b]);
            if (j >= 0) s[j] = t[b];
            ++questions;
        }
        return questions;
    }
    return questions;
}

inline EvalResult evaluate_composite(const EnvModel& env, const Scope& sc, const Policy& policy, const SolvedMap& solved,
                                     int n_games, std::uint64_t seed) {
    if (n_games < 1) fail(Errc::invalid_argument, "n_games must be >= 1");
    std::mt19937_64 rng(seed);
    std::vector<int> qs;
    for (int g = 0; g < n_games; ++g) qs.push_back(composite_episode(env, sc, policy, solved, rng));
    return summarize(qs);
}

/// Monte-Carlo training where episodes stop at the first positive answer on a
/// solved subtask; the subtask's value stands in for the remaining questions.
inline TrainResult dqn_mc_bootstrap_train(const EnvModel& env, const Scope& sc, const SolvedMap& solved, const TrainConfig& cfg,
                                          std::mt19937_64& rng) {
    auto eval = [&env, &sc, &cfg, &solved](const QNetwork& net) {
        return evaluate_composite(env, sc, qnet_policy(net), solved, cfg.eval_games, cfg.eval_seed);
    };
    detail::Trainer t{env, sc, cfg, detail::Target::mc, &solved, eval};
    return t.run(rng);
}

/// Unsolved task with the largest share of its positive-answer probability
/// already covered by solved subtasks; ties to the smallest dim, then id.
inline const TaskSpec& next_task_to_solve(const EnvModel& env, const std::vector<TaskSpec>& tasks,
                                          const std::set<SymptomCode>& solved) {
    const TaskSpec* best = nullptr;
    double best_score = -1;
    for (const auto& t : tasks) {
        if (solved.count(t.initial)) continue;
        double covered = 0, total = 0;
        if (t.dim() > 0) {
            const Scope sc = task_scope(env, t);
            const Analysis an = analyze(env, sc, sc.initial_state(), true);
            for (int i = 0; i < sc.dim(); ++i) {
                total += an.p_present[i];
                if (solved.count(sc.symptoms[i])) covered += an.p_present[i];
            }
        }
        const double score = total > 0 ? covered / total : 0.0;
        const bool better = !best || score > best_score + 1e-15 ||
                            (std::abs(score - best_score) <= 1e-15 &&
                             (t.dim() < best->dim() || (t.dim() == best->dim() && t.initial < best->initial)));
        if (better) {
            best = &t;
            best_score = score;
        }
    }
    if (!best) fail(Errc::invalid_argument, "every task is already solved");
    return *best;
}

// --- imprecise states ------------------------------------------------------------

using QFunction = std::function<std::vector<double>(const KnowledgeState&)>;

/// Weighted average of per-state Q vectors; actions observed in every state
/// are masked to -inf.
inline std::vector<double> fuzzy_q(const QFunction& q, const std::vector<KnowledgeState>& states, const std::vector<double>& weights) {
    if (states.empty() || states.size() != weights.size()) fail(Errc::invalid_argument, "one weight per state required");
    double wsum = 0;
    for (double w : weights) {
        if (!(w >= 0)) fail(Errc::invalid_argument, "weights must be non-negative");
        wsum += w;
    }
    if (std::abs(wsum - 1) > 1e-9) fail(Errc::invalid_argument, "weights must sum to 1");
    const std::size_t n = states[0].size();
    std::vector<double> out(n, 0.0);
    std::vector<bool> open(n, false);
    for (std::size_t i = 0; i < states.size(); ++i) {
        if (states[i].size() != n) fail(Errc::dimension, "states of different lengths");
        const auto v = q(states[i]);
        if (v.size() != n) fail(Errc::dimension, "Q vector length mismatch");
        for (std::size_t a = 0; a < n; ++a) {
            out[a] += weights[i] * v[a];
            if (states[i][a] == kUnobserved) open[a] = true;
        }
    }
    for (std::size_t a = 0; a < n; ++a) {
        if (!open[a]) out[a] = -std::numeric_limits<double>::infinity();
    }
    return out;
}

inline QFunction as_qfunction(const QNetwork& net) {
    return [&net](const KnowledgeState& s) {
        const auto v = net.forward(s);
        return std::vector<double>(v.data(), v.data() + v.size());
    };
}

inline QFunction as_qfunction(const TabularQ& t) {
    return [&t](const KnowledgeState& s) { return t.raw_values(s); };
}

} // namespace raredx
