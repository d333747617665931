// raredx command line: knowledge bases, model fitting, policy training,
// evaluation and the consultation server.

#include "raredx/artifacts.hpp"
#include "raredx/deeprl.hpp"
#include "raredx/http.hpp"
#include "raredx/kb.hpp"
#include "raredx/maxent.hpp"
#include "raredx/policies.hpp"
#include "raredx/service.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>

using namespace raredx;
namespace fs = std::filesystem;

namespace {

EnvModel load_env(const std::string& kb_path, const std::string& models_dir, const KnowledgeBase& kb) {
    (void)kb_path;
    if (models_dir.empty()) return independent_env(kb);
    return make_env(kb, load_models_dir(models_dir));
}

struct TrainArgs {
    std::string kb, models, task, algo = "dqn-mc", out = "policies";
    bool all = false;
    int iters = 200;
    std::uint64_t seed = 1;
    double lr0 = 1e-3;
    int games = 100;
    int eval_games = 500;
    int vi_max = 10;
};

PolicyArtifact to_artifact(const TaskSpec& t, const Scope& sc, std::variant<TabularQ, QNetwork, EnergyPolicy> p, const std::string& digest) {
    return {t.initial, sc.symptoms, std::move(p), digest};
}

void write_report(const std::string& out, const std::string& task, const json& j) {
    write_json_file(j, (fs::path(out) / ("report_" + task + ".json")).string());
}

/// Loads previously written tabular/qnet policies for bootstrapping.
SolvedMap load_solved(const EnvModel& env, const std::map<SymptomCode, TaskSpec>& tasks, const std::string& dir) {
    SolvedMap solved;
    if (!fs::is_directory(dir)) return solved;
    for (const auto& e : fs::directory_iterator(dir)) {
        const std::string name = e.path().filename().string();
        if (e.path().extension() != ".json" || name.rfind("policy_", 0) != 0) continue;
        PolicyArtifact a = load_policy(e.path().string());
        if (a.kind() == "energy" || !tasks.count(a.task)) continue;
        const TaskSpec& t = tasks.at(a.task);
        Scope sc = task_scope(env, t);
        if (sc.symptoms != a.symptoms) continue;
        if (a.kind() == "tabular") {
            solved.emplace(a.task, SolvedTask{t, sc, std::get<TabularQ>(a.policy)});
        } else {
            solved.emplace(a.task, SolvedTask{t, sc, std::get<QNetwork>(a.policy)});
        }
    }
    return solved;
}

void train_one(const TrainArgs& args, const EnvModel& env, const TaskSpec& task, SolvedMap& solved, std::mt19937_64& rng) {
    const Scope sc = task_scope(env, task);
    TrainConfig cfg;
    cfg.iters = args.iters;
    cfg.lr0 = args.lr0;
    cfg.games_per_iter = args.games;
    cfg.eval_games = args.eval_games;
    const json cfg_json = train_config_json(cfg);
    const std::string file = (fs::path(args.out) / ("policy_" + task.initial + ".json")).string();
    std::cout << "task " << task.initial << " (dim " << task.dim() << ", " << task.diseases.size() << " diseases): ";

    if (args.algo == "vi" || (args.all && args.algo == "dqn-mc-boot" && task.dim() <= args.vi_max)) {
        TabularQ q = value_iteration(env, sc, args.vi_max);
        const double I = -q.value(sc.initial_state());
        std::cout << "value iteration, optimal E[I] = " << I << "\n";
        save_policy(to_artifact(task, sc, q, config_digest({{"algo", "vi"}})), file);
        solved.emplace(task.initial, SolvedTask{task, sc, std::move(q)});
        return;
    }
    if (args.algo == "reinforce") {
        ReinforceConfig rc;
        auto res = reinforce_train(env, sc, args.iters, rc, rng);
        const auto ev = evaluate_policy(env, sc, energy_policy(res.policy, env, sc), args.eval_games, cfg.eval_seed);
        std::cout << "REINFORCE theta = [" << res.policy.theta[0] << ", " << res.policy.theta[1] << ", " << res.policy.theta[2]
                  << "], mean I = " << ev.mean << "\n";
        save_policy(to_artifact(task, sc, res.policy, config_digest({{"algo", "reinforce"}, {"episodes", args.iters}})), file);
        write_report(args.out, task.initial, {{"schema", 1}, {"questions", res.questions}, {"eval_mean_I", ev.mean}, {"eval_var", ev.variance}});
        return;
    }
    TrainResult res;
    if (args.algo == "dqn-mc") {
        res = dqn_mc_train(env, sc, cfg, rng);
    } else if (args.algo == "dqn-td") {
        res = dqn_td_train(env, sc, cfg, rng);
    } else if (args.algo == "dqn-mc-boot") {
        res = dqn_mc_bootstrap_train(env, sc, solved, cfg, rng);
    } else {
        fail(Errc::invalid_argument, "unknown algorithm '" + args.algo + "'");
    }
    const auto& last = res.reports.back();
    std::cout << args.algo << " iter " << last.iter << ", mean I = " << last.eval_mean << (res.diverged ? " [diverged: " + res.note + "]" : "")
              << "\n";
    save_policy(to_artifact(task, sc, res.net, config_digest(cfg_json)), file);
    json rep = report_json(res);
    rep["config"] = cfg_json;
    write_report(args.out, task.initial, rep);
    solved.emplace(task.initial, SolvedTask{task, sc, std::move(res.net)});
}

int run(int argc, char** argv) {
    CLI::App app{"raredx: maximum-entropy symptom models and question-asking policies"};
    app.require_subcommand(1);

    // kb
    auto* kb_cmd = app.add_subcommand("kb", "knowledge base utilities");
    kb_cmd->require_subcommand(1);
    std::string validate_path;
    auto* kb_validate = kb_cmd->add_subcommand("validate", "check a KB file");
    kb_validate->add_option("path", validate_path, "KB JSON")->required();
    SynthOptions so;
    std::string synth_out;
    auto* kb_synth = kb_cmd->add_subcommand("synth", "generate a synthetic KB");
    kb_synth->add_option("--seed", so.seed);
    kb_synth->add_option("--diseases", so.n_diseases);
    kb_synth->add_option("--symptoms", so.n_symptoms);
    kb_synth->add_option("--overlap", so.overlap);
    kb_synth->add_option("--min-typical", so.min_typical);
    kb_synth->add_option("--max-typical", so.max_typical);
    kb_synth->add_option("--hub", so.hub, "diseases sharing symptom S0001");
    kb_synth->add_option("--other-prior", so.other_prior);
    kb_synth->add_option("--out", synth_out)->required();

    // model fit
    auto* model_cmd = app.add_subcommand("model", "joint symptom models");
    model_cmd->require_subcommand(1);
    std::string fit_kb, fit_obs, fit_out;
    FitOptions fo;
    auto* model_fit = model_cmd->add_subcommand("fit", "fit one model per disease");
    model_fit->add_option("--kb", fit_kb)->required();
    model_fit->add_option("--obs", fit_obs, "observations CSV (first column: disease)");
    model_fit->add_option("--c", fo.c, "epsilon = c * 2^K");
    model_fit->add_flag("--independent", fo.independent, "product of marginals");
    model_fit->add_option("--out", fit_out)->required();

    // train
    TrainArgs ta;
    auto* train = app.add_subcommand("train", "learn question-asking policies");
    train->add_option("--kb", ta.kb)->required();
    train->add_option("--models", ta.models, "directory of model artifacts (default: independent symptoms)");
    auto* task_opt = train->add_option("--task", ta.task, "initial symptom of the task");
    auto* all_opt = train->add_flag("--all", ta.all, "every task, easiest first");
    task_opt->excludes(all_opt);
    train->add_option("--algo", ta.algo)->check(CLI::IsMember({"vi", "reinforce", "dqn-mc", "dqn-td", "dqn-mc-boot"}));
    train->add_option("--iters", ta.iters, "iterations (episodes for reinforce)");
    train->add_option("--seed", ta.seed);
    train->add_option("--lr0", ta.lr0);
    train->add_option("--games", ta.games, "games per iteration");
    train->add_option("--eval-games", ta.eval_games);
    train->add_option("--vi-max", ta.vi_max, "largest dim solved exactly");
    train->add_option("--out", ta.out);

    // eval
    std::string ev_kb, ev_models, ev_policy;
    int ev_games = 1000;
    std::uint64_t ev_seed = 12345;
    auto* eval = app.add_subcommand("eval", "evaluate a policy by simulation");
    eval->add_option("--kb", ev_kb)->required();
    eval->add_option("--models", ev_models);
    eval->add_option("--policy", ev_policy)->required();
    eval->add_option("--games", ev_games);
    eval->add_option("--seed", ev_seed);

    // serve
    std::string sv_kb, sv_models, sv_policies, sv_host = "127.0.0.1", sv_log;
    int sv_port = 8080;
    auto* serve = app.add_subcommand("serve", "HTTP consultation service");
    serve->add_option("--kb", sv_kb)->required();
    serve->add_option("--models", sv_models);
    serve->add_option("--policies", sv_policies, "directory of policy artifacts");
    serve->add_option("--host", sv_host);
    serve->add_option("--port", sv_port);
    serve->add_option("--event-log", sv_log, "append-only JSON lines log");

    CLI11_PARSE(app, argc, argv);

    if (kb_validate->parsed()) {
        const auto kb = load_kb(validate_path);
        for (const auto& w : kb.warnings) std::cout << "warning: " << w << "\n";
        std::cout << "ok: " << kb.diseases.size() << " diseases, " << kb.symptom_universe().size() << " symptoms, "
                  << build_tasks(kb).size() << " tasks\n";
    } else if (kb_synth->parsed()) {
        save_kb(synth_kb(so), synth_out);
        std::cout << "wrote " << synth_out << "\n";
    } else if (model_fit->parsed()) {
        const auto kb = load_kb(fit_kb);
        std::map<std::string, ObservedCounts> counts;
        if (!fit_obs.empty()) {
            std::ifstream in(fit_obs);
            if (!in) fail(Errc::io, "cannot open '" + fit_obs + "'");
            std::vector<std::string> warnings;
            counts = counts_from_csv(kb, in, &warnings);
            for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
        }
        fs::create_directories(fit_out);
        for (const auto& d : kb.diseases) {
            auto it = counts.find(d.id);
            JointTable t = fit_disease(d, it == counts.end() ? ObservedCounts{} : it->second, fo);
            save_model(t, (fs::path(fit_out) / (d.id + ".json")).string());
            std::cout << d.id << ": K=" << t.K << ", N=" << (it == counts.end() ? 0 : it->second.total) << "\n";
        }
    } else if (train->parsed()) {
        if (ta.task.empty() && !ta.all) fail(Errc::invalid_argument, "give --task <code> or --all");
        const auto kb = load_kb(ta.kb);
        const EnvModel env = load_env(ta.kb, ta.models, kb);
        fs::create_directories(ta.out);
        std::mt19937_64 rng(ta.seed);
        const auto tasks = build_tasks(kb);
        std::map<SymptomCode, TaskSpec> by_code;
        for (const auto& t : tasks) by_code.emplace(t.initial, t);
        SolvedMap solved = ta.algo == "dqn-mc-boot" ? load_solved(env, by_code, ta.out) : SolvedMap{};
        if (!ta.all) {
            if (!by_code.count(ta.task)) fail(Errc::not_found, "no task starts at '" + ta.task + "'");
            solved.erase(ta.task);
            train_one(ta, env, by_code.at(ta.task), solved, rng);
        } else {
            std::set<SymptomCode> done;
            while (done.size() < tasks.size()) {
                const TaskSpec& t = next_task_to_solve(env, tasks, done);
                if (ta.algo == "vi" && t.dim() > ta.vi_max) {
                    std::cout << "task " << t.initial << " (dim " << t.dim() << "): skipped, above --vi-max\n";
                } else {
                    train_one(ta, env, t, solved, rng);
                }
                done.insert(t.initial);
            }
        }
    } else if (eval->parsed()) {
        const auto kb = load_kb(ev_kb);
        const EnvModel env = load_env(ev_kb, ev_models, kb);
        const PolicyArtifact a = load_policy(ev_policy);
        const TaskSpec t = make_task(kb, a.task);
        const Scope sc = task_scope(env, t);
        if (sc.symptoms != a.symptoms) fail(Errc::dimension, "policy does not match the task in this KB");
        Policy pol;
        if (const auto* q = std::get_if<TabularQ>(&a.policy)) pol = tabular_policy(*q);
        else if (const auto* n = std::get_if<QNetwork>(&a.policy)) pol = qnet_policy(*n);
        else pol = energy_policy(std::get<EnergyPolicy>(a.policy), env, sc);
        const auto r = evaluate_policy(env, sc, pol, ev_games, ev_seed);
        std::cout << std::setprecision(6) << "task " << a.task << " (" << a.kind() << "): mean I = " << r.mean << ", var = " << r.variance
                  << ", stderr = " << r.std_error << " over " << r.games << " games\n";
        for (const auto& [q, n] : r.histogram) std::cout << "  " << q << " questions: " << n << "\n";
        if (sc.dim() <= 14) std::cout << "exact E[I] = " << expected_questions(env, sc, pol, sc.initial_state()) << "\n";
    } else if (serve->parsed()) {
        SessionManager mgr(sv_log);
        auto kb = load_kb(sv_kb);
        std::optional<std::vector<JointModel>> models;
        if (!sv_models.empty()) models = load_models_dir(sv_models);
        const std::string kb_id = fs::path(sv_kb).stem().string();
        mgr.add_kb(make_bundle(kb_id, std::move(kb), models));
        std::string policy_id = "greedy";
        if (!sv_policies.empty()) {
            policy_id = fs::path(sv_policies).filename().string();
            if (policy_id.empty()) policy_id = "default";
            mgr.add_policy(std::make_shared<const PolicySet>(load_policy_dir(policy_id, sv_policies)));
        }
        httplib::Server srv;
        install_routes(srv, mgr);
        std::cout << "serving kb '" << kb_id << "' with policies {greedy" << (policy_id != "greedy" ? ", " + policy_id : "")
                  << "} on http://" << sv_host << ":" << sv_port << std::endl;
        if (!srv.listen(sv_host, sv_port)) fail(Errc::io, "cannot listen on " + sv_host + ":" + std::to_string(sv_port));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error [" << errc_name(e.code()) << "]: " << e.message();
        if (!e.details().empty()) std::cerr << " (" << e.details() << ")";
        std::cerr << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
