#include "raredx/deeprl.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace raredx;

namespace {

KnowledgeBase three_disease() { return load_kb(std::string(RAREDX_DATA_DIR) + "/three_disease_kb.json"); }

KnowledgeBase small_kb() {
    return kb_from_json(json::parse(R"({"diseases":[
        {"id":"a","prior":0.3,"symptoms":[{"code":"x","p":0.9},{"code":"y","p":0.2},{"code":"i","p":0.9},{"code":"u","p":0.6}]},
        {"id":"b","prior":0.2,"symptoms":[{"code":"x","p":0.1},{"code":"i","p":0.6}]},
        {"id":"c","prior":0.1,"symptoms":[{"code":"y","p":0.8},{"code":"i","p":0.5},{"code":"z","p":0.7},{"code":"v","p":0.5}]},
        {"id":"d","prior":0.05,"symptoms":[{"code":"z","p":0.4},{"code":"w","p":0.5}]}],
        "ontology":{"base_level":["i","u","v","w","x","y","z"]},"other_prior":0.35})"));
}

KnowledgeState with(const Scope& sc, std::initializer_list<std::pair<const char*, bool>> ev) {
    auto s = sc.initial_state();
    for (auto [c, p] : ev) s[sc.position(c)] = p ? kPresent : kAbsent;
    return s;
}

} // namespace

TEST(Tasks, ThreeDiseaseDecomposition) {
    auto kb = three_disease();
    auto tasks = build_tasks(kb);
    ASSERT_EQ(tasks.size(), 9u);
    auto s9 = make_task(kb, "S9");
    EXPECT_EQ(s9.dim(), 8);
    EXPECT_EQ(s9.diseases, (std::vector<std::string>{"d1", "d2", "d3"}));
    EXPECT_EQ(tasks.front().initial, "S7");
    EXPECT_EQ(tasks.front().dim(), 2);
    EXPECT_EQ(tasks.back().initial, "S9");
    for (std::size_t i = 1; i < tasks.size(); ++i) {
        EXPECT_TRUE(tasks[i - 1].dim() < tasks[i].dim() ||
                    (tasks[i - 1].dim() == tasks[i].dim() && tasks[i - 1].initial < tasks[i].initial));
    }
    auto sc = task_scope(independent_env(kb), s9);
    EXPECT_EQ(sc.dim(), 8);
    EXPECT_EQ(sc.position("S9"), -1);
    EXPECT_EQ(sc.hypotheses(), 4);
}

TEST(Ternary, IndexRoundTrip) {
    for (std::size_t i = 0; i < 243; ++i) EXPECT_EQ(ternary_index(ternary_state(i, 5)), i);
    EXPECT_EQ(ternary_index(KnowledgeState{2, 0, 1}), 2u + 0 + 9);
}

TEST(ValueIteration, ThreeDiseaseTree) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    auto vi = value_iteration(env, sc);
    EXPECT_LE(vi.residual, 1e-10);
    const auto root = sc.initial_state();
    EXPECT_EQ(sc.symptoms[vi.greedy(root)], "S5");
    EXPECT_EQ(vi.optimal_actions(root, 1e-6).size(), 1u);
    EXPECT_NEAR(vi.value(root), -4.92998, 1e-5);

    const auto y5 = with(sc, {{"S5", true}});
    std::vector<std::string> ties;
    for (int a : vi.optimal_actions(y5)) ties.push_back(sc.symptoms[a]);
    EXPECT_EQ(ties, (std::vector<std::string>{"S1", "S3", "S8"}));
    EXPECT_EQ(sc.symptoms[vi.greedy(y5)], "S1");

    const auto y5y3 = with(sc, {{"S5", true}, {"S3", true}});
    EXPECT_TRUE(vi.is_terminal(y5y3));
    EXPECT_EQ(posterior(env, sc, y5y3).argmax(), 0);
    EXPECT_EQ(sc.symptoms[vi.greedy(with(sc, {{"S5", false}}))], "S4");
}

TEST(ValueIteration, ValuesNonPositiveAndZeroOnTerminal) {
    auto kb = small_kb();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "i"));
    auto vi = value_iteration(env, sc);
    for (std::size_t idx = 0; idx < vi.states(); ++idx) {
        const auto s = ternary_state(idx, sc.dim());
        if (vi.is_terminal(s)) {
            EXPECT_EQ(vi.value(s), 0.0);
            EXPECT_TRUE(state_terminal(env, sc, s));
            continue;
        }
        for (int a = 0; a < sc.dim(); ++a) {
            if (s[a] == kUnobserved) {
                EXPECT_LE(vi.values(s)[a], -1.0);
            }
        }
    }
}

TEST(ValueIteration, SingleSymptomTask) {
    auto kb = small_kb();
    auto env = independent_env(kb);
    auto t = make_task(kb, "w");
    ASSERT_EQ(t.dim(), 1);
    auto sc = task_scope(env, t);
    auto vi = value_iteration(env, sc);
    const auto s = sc.initial_state();
    ASSERT_FALSE(state_terminal(env, sc, s));
    EXPECT_EQ(vi.greedy(s), 0);
    EXPECT_DOUBLE_EQ(vi.value(s), -1.0);
}

TEST(ValueIteration, BeatsEveryDeterministicPolicy) {
    auto kb = small_kb();
    auto env = independent_env(kb);
    auto t = make_task(kb, "u");
    ASSERT_EQ(t.dim(), 3);
    auto sc = task_scope(env, t);
    auto vi = value_iteration(env, sc);

    // Reachable decision states and their open actions.
    std::vector<std::size_t> states;
    std::vector<std::vector<int>> choices;
    std::function<void(KnowledgeState)> walk = [&](KnowledgeState s) {
        if (state_terminal(env, sc, s)) return;
        const std::size_t i = ternary_index(s);
        if (std::find(states.begin(), states.end(), i) != states.end()) return;
        states.push_back(i);
        choices.emplace_back();
        for (int a = 0; a < sc.dim(); ++a) {
            if (s[a] != kUnobserved) continue;
            choices.back().push_back(a);
            for (std::uint8_t v : {kAbsent, kPresent}) {
                s[a] = v;
                walk(s);
                s[a] = kUnobserved;
            }
        }
    };
    walk(sc.initial_state());
    std::vector<std::size_t> pick(states.size(), 0);
    double best = std::numeric_limits<double>::infinity();
    int policies = 0;
    while (true) {
        std::map<std::size_t, int> table;
        for (std::size_t k = 0; k < states.size(); ++k) table[states[k]] = choices[k][pick[k]];
        const double I = expected_questions(env, sc, [&](const KnowledgeState& s) { return table.at(ternary_index(s)); },
                                            sc.initial_state(), 0.0);
        EXPECT_GE(I, -vi.value(sc.initial_state()) - 1e-12);
        best = std::min(best, I);
        ++policies;
        std::size_t k = 0;
        while (k < pick.size() && ++pick[k] == choices[k].size()) pick[k++] = 0;
        if (k == pick.size()) break;
    }
    EXPECT_GT(policies, 10);
    EXPECT_NEAR(best, -vi.value(sc.initial_state()), 1e-12);
}

TEST(ValueIteration, RejectsLargeTasks) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    EXPECT_THROW(value_iteration(env, sc, 7), Error);
}

TEST(Evaluation, SummaryStatistics) {
    auto r = summarize({2, 4, 4, 6});
    EXPECT_DOUBLE_EQ(r.mean, 4.0);
    EXPECT_DOUBLE_EQ(r.variance, 2.0);
    EXPECT_DOUBLE_EQ(r.std_error, std::sqrt(0.5));
    EXPECT_EQ(r.histogram.at(4), 2);
}

TEST(Evaluation, SameSeedSameResult) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    auto vi = value_iteration(env, sc);
    auto a = evaluate_policy(env, sc, tabular_policy(vi), 2000, 9);
    auto b = evaluate_policy(env, sc, tabular_policy(vi), 2000, 9);
    EXPECT_EQ(a.mean, b.mean);
    const double exact = expected_questions(env, sc, tabular_policy(vi), sc.initial_state());
    EXPECT_NEAR(a.mean, exact, 4 * a.std_error + 1e-9);
}

TEST(Replay, FifoEvictionAndSampling) {
    ReplayMemory m;
    auto tr = [](int a) {
        Transition t;
        t.a = a;
        return t;
    };
    for (int i = 0; i < 10; ++i) m.push(tr(i));
    m.set_capacity(4);
    ASSERT_EQ(m.size(), 4u);
    EXPECT_EQ(m[0].a, 6);
    m.push(tr(10));
    EXPECT_EQ(m[0].a, 7);
    EXPECT_EQ(m[3].a, 10);
    std::mt19937_64 rng(1);
    auto idx = m.sample(3, rng);
    std::sort(idx.begin(), idx.end());
    EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
    EXPECT_EQ(m.sample(99, rng).size(), 4u);
}

TEST(Training, TdTargets) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    TrainConfig cfg;
    std::mt19937_64 rng(1);
    QNetwork frozen(sc.dim(), rng, 0.3);
    detail::Trainer tr{env, sc, cfg, detail::Target::td, nullptr, {}};
    Transition t;
    t.s = sc.initial_state();
    t.a = 0;
    t.s_next = t.s;
    t.s_next[0] = kAbsent;
    t.terminal = true;
    EXPECT_EQ(tr.label(t, frozen), -1.0);
    t.terminal = false;
    EXPECT_DOUBLE_EQ(tr.label(t, frozen), -1.0 + frozen.value(t.s_next));
    detail::Trainer mc{env, sc, cfg, detail::Target::mc, nullptr, {}};
    t.mc_return = -3;
    EXPECT_EQ(mc.label(t, frozen), -3.0);
}

TEST(Training, ZeroIterationsReturnsInitialNet) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    TrainConfig cfg;
    cfg.iters = 0;
    cfg.eval_games = 50;
    std::mt19937_64 a(4), b(4);
    auto res = dqn_mc_train(env, sc, cfg, a);
    EXPECT_EQ(res.net, QNetwork(sc.dim(), b, cfg.init_scale));
    ASSERT_EQ(res.reports.size(), 1u);
    EXPECT_EQ(res.reports[0].iter, 0);
}

TEST(Training, ShortRunBookkeeping) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    TrainConfig cfg;
    cfg.iters = 6;
    cfg.games_per_iter = 20;
    cfg.eval_games = 50;
    cfg.lr_halving_period = 2;
    std::mt19937_64 rng(8);
    auto res = dqn_mc_train(env, sc, cfg, rng);
    ASSERT_EQ(res.reports.size(), 7u);
    EXPECT_EQ(res.reports[6].games, 120);
    EXPECT_DOUBLE_EQ(res.reports[1].lr, 1e-3);
    EXPECT_DOUBLE_EQ(res.reports[3].lr, 5e-4);
    EXPECT_DOUBLE_EQ(res.reports[6].lr, 2.5e-4);
    EXPECT_GT(res.net.steps(), 0);
}

TEST(Training, BootstrapWithoutSolvedTasksIsPlainMonteCarlo) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    TrainConfig cfg;
    cfg.iters = 4;
    cfg.games_per_iter = 20;
    cfg.eval_games = 40;
    std::mt19937_64 a(2), b(2);
    auto mc = dqn_mc_train(env, sc, cfg, a);
    auto boot = dqn_mc_bootstrap_train(env, sc, {}, cfg, b);
    EXPECT_EQ(mc.net, boot.net);
    ASSERT_EQ(mc.reports.size(), boot.reports.size());
    for (std::size_t i = 0; i < mc.reports.size(); ++i) EXPECT_EQ(mc.reports[i].eval_mean, boot.reports[i].eval_mean);
}

TEST(Bootstrap, ProjectState) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto big = task_scope(env, make_task(kb, "S9"));
    auto sub = task_scope(env, make_task(kb, "S6"));
    auto s = with(big, {{"S6", true}, {"S1", false}, {"S4", true}});
    auto p = project_state(big, s, sub);
    ASSERT_TRUE(p);
    EXPECT_EQ((*p)[sub.position("S9")], kPresent);
    EXPECT_EQ((*p)[sub.position("S4")], kPresent);
    EXPECT_EQ(std::count(p->begin(), p->end(), kUnobserved), sub.dim() - 2);
    // A positive with no place in the subtask.
    EXPECT_FALSE(project_state(big, with(big, {{"S6", true}, {"S5", true}}), sub));
    // The subtask's initial symptom must be known present.
    EXPECT_FALSE(project_state(big, with(big, {{"S6", false}}), sub));
}

TEST(Bootstrap, CompositeFallsBackWithoutSolvedTasks) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    auto vi = value_iteration(env, sc);
    auto a = evaluate_policy(env, sc, tabular_policy(vi), 300, 5);
    auto b = evaluate_composite(env, sc, tabular_policy(vi), {}, 300, 5);
    EXPECT_EQ(a.mean, b.mean);
}

TEST(Bootstrap, SolvedSubtaskTakesOver) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    auto sub_task = make_task(kb, "S5");
    SolvedMap solved;
    auto sub_sc = task_scope(env, sub_task);
    solved.emplace("S5", SolvedTask{sub_task, sub_sc, value_iteration(env, sub_sc)});
    auto vi = value_iteration(env, sc);
    auto r = evaluate_composite(env, sc, tabular_policy(vi), solved, 2000, 3);
    EXPECT_GT(r.mean, 1.0);
    EXPECT_LT(r.mean, 8.0);
    std::mt19937_64 rng(1);
    TrainConfig cfg;
    cfg.iters = 2;
    cfg.games_per_iter = 30;
    cfg.eval_games = 30;
    auto res = dqn_mc_bootstrap_train(env, sc, solved, cfg, rng);
    EXPECT_EQ(res.reports.size(), 3u);
}

TEST(Curriculum, NextTaskToSolve) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto tasks = build_tasks(kb);
    EXPECT_EQ(next_task_to_solve(env, tasks, {}).initial, "S7");
    // S7 solved: only tasks containing S7 get coverage.
    const auto& t = next_task_to_solve(env, tasks, {"S7"});
    EXPECT_NE(std::find(t.relevant.begin(), t.relevant.end(), "S7"), t.relevant.end());
    std::set<SymptomCode> all_but_one;
    for (const auto& x : tasks)
        if (x.initial != "S2") all_but_one.insert(x.initial);
    EXPECT_EQ(next_task_to_solve(env, tasks, all_but_one).initial, "S2");
    all_but_one.insert("S2");
    EXPECT_THROW(next_task_to_solve(env, tasks, all_but_one), Error);
}

TEST(FuzzyQ, Identities) {
    auto kb = three_disease();
    auto env = independent_env(kb);
    auto sc = task_scope(env, make_task(kb, "S9"));
    auto vi = value_iteration(env, sc);
    auto q = as_qfunction(vi);
    const auto s1 = with(sc, {{"S5", true}});
    auto single = fuzzy_q(q, {s1}, {1.0});
    auto direct = vi.values(s1);
    for (int a = 0; a < sc.dim(); ++a) {
        if (s1[a] == kUnobserved) {
            EXPECT_EQ(single[a], direct[a]);
        } else {
            EXPECT_TRUE(std::isinf(single[a]));
        }
    }
    auto twice = fuzzy_q(q, {s1, s1}, {0.5, 0.5});
    for (int a = 0; a < sc.dim(); ++a) EXPECT_EQ(twice[a], single[a]);

    const auto s2 = with(sc, {{"S6", true}});
    auto mix = fuzzy_q(q, {s1, s2}, {0.25, 0.75});
    auto r1 = vi.raw_values(s1), r2 = vi.raw_values(s2);
    for (int a = 0; a < sc.dim(); ++a) {
        // Observed in one state only: that state scores it as a wasted question.
        EXPECT_NEAR(mix[a], 0.25 * r1[a] + 0.75 * r2[a], 1e-14);
    }
    EXPECT_THROW(fuzzy_q(q, {s1}, {0.5}), Error);
    EXPECT_THROW(fuzzy_q(q, {}, {}), Error);

    std::mt19937_64 rng(3);
    QNetwork net(sc.dim(), rng);
    auto qn = fuzzy_q(as_qfunction(net), {s1}, {1.0});
    EXPECT_NEAR(qn[0], net.forward(s1)[0], 1e-15);
}
