#pragma once

// Maximum-entropy estimation of a disease's joint symptom distribution from
// expert marginals, observed combination counts and an entropy regularizer:
//
//   maximize  sum_j N_j ln pi_j + eps * ( H(pi) - sum_k lambda_k KL(Be(e_k) || Be(P_k)) )
//   s.t.      sum_j pi_j = 1,  P_k = sum_{j : bit k} pi_j,  pi_j = 0 if popcount(j) < min_symptoms
//
// solved by Uzawa iteration on the multipliers (mu_0, mu_1..mu_K). For fixed
// multipliers the primal has a closed form on zero-count cells (Gibbs form),
// a one-dimensional root on positive-count cells, and a quadratic root for
// every penalized marginal.

#include "raredx/error.hpp"
#include "raredx/kb.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace raredx {

using CellIndex = std::uint32_t;
using Mask = std::uint64_t;

inline constexpr int kMaxExplicitK = 20;
inline constexpr double kExpertClamp = 1e-6;

/// Bit k of a cell index is symptom k of the table's sorted symptom list.
struct JointTable {
    std::string disease;
    int K = 0;
    std::vector<SymptomCode> symptoms;
    std::vector<double> pi;          // 2^K cells
    std::vector<double> marginals;   // P(1)..P(K), recomputed from pi
    std::vector<CellIndex> impossible;
    int min_symptoms = 0;

    std::size_t cells() const { return pi.size(); }

    bool operator==(const JointTable&) const = default;
};

struct MaxentConfig {
    double epsilon = 1.0;
    std::vector<double> lambdas;   // one per symptom
    double uzawa_step = 0;         // 0: 0.5 / sqrt(2^K), used by the plain (unpreconditioned) iteration
    bool newton = true;            // precondition the multiplier update with the dual Hessian
    int max_iter = 500;
    double tol = 1e-8;
    std::vector<double> initial_multipliers; // optional warm start, size K+1
};

struct ObservedCounts {
    std::map<CellIndex, double> counts;
    double total = 0;

    void add(CellIndex cell, double n = 1) {
        counts[cell] += n;
        total += n;
    }
};

struct MaxentSolution {
    JointTable table;
    std::vector<double> multipliers; // mu_0, mu_1..mu_K
    int iterations = 0;
    double residual = 0;
    double objective = 0;
};

/// KL(Be(p) || Be(q)) in nats, with 0 ln 0 = 0. Returns +inf when q puts
/// zero mass where p does not.
inline double kl_bernoulli(double p, double q) {
    if (!(p >= 0 && p <= 1) || !(q >= 0 && q <= 1)) {
        fail(Errc::invalid_argument, "kl_bernoulli arguments must be probabilities");
    }
    auto term = [](double a, double b) {
        if (a == 0) return 0.0;
        if (b == 0) return std::numeric_limits<double>::infinity();
        return a * std::log(a / b);
    };
    const double v = term(p, q) + term(1 - p, 1 - q);
    return v < 0 ? 0.0 : v;
}

/// eps = c * 2^K.
inline double heuristic_epsilon(int K, double c) {
    if (K < 0 || !(c > 0)) fail(Errc::invalid_argument, "heuristic_epsilon needs K >= 0 and c > 0");
    return c * std::ldexp(1.0, K);
}

inline double clamp_expert(double p) {
    return std::clamp(p, kExpertClamp, 1 - kExpertClamp);
}

namespace detail {

struct MaxentProblem {
    int K = 0;
    double eps = 1;
    std::vector<CellIndex> cells;     // admissible cells
    std::vector<double> counts;       // N_j per admissible cell
    std::vector<double> expert;       // clamped
    std::vector<double> lambda;
    std::vector<int> active;          // symptoms whose marginal is penalized
    int dual_dim() const { return 1 + static_cast<int>(active.size()); }
};

// Root of N/pi - eps (ln pi + 1) - s = 0, solved in u = ln pi by safeguarded
// Newton. The left side is strictly decreasing and convex in u.
inline double positive_cell(double n, double eps, double s) {
    auto g = [&](double u) { return n * std::exp(-u) - eps * (u + 1) - s; };
    double lo = std::log(1e-12), hi = 0.0;
    while (g(lo) < 0) lo -= 10;
    while (g(hi) > 0) hi += 1;
    double u = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double val = g(u);
        const double scale = n * std::exp(-u) + eps * (std::abs(u) + 1) + std::abs(s);
        if (std::abs(val) <= 1e-12 * scale) break;
        if (val > 0) lo = u; else hi = u;
        const double deriv = -n * std::exp(-u) - eps;
        double next = u - val / deriv;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - u) < 1e-15 * (1 + std::abs(u))) { u = next; break; }
        u = next;
    }
    return std::exp(u);
}

// Root in (0,1) of e/q - (1-e)/(1-q) = -t.
inline double penalized_marginal(double e, double t) {
    if (t == 0) return e;
    const double b = 1 - t;
    const double disc = b * b + 4 * t * e;
    const double q = b >= 0 ? 2 * e / (b + std::sqrt(disc)) : (-b + std::sqrt(disc)) / (2 * t);
    return std::clamp(q, 1e-300, std::nextafter(1.0, 0.0));
}

struct PrimalPoint {
    std::vector<double> pi;        // per admissible cell
    std::vector<double> weight;    // -d pi / d s
    std::vector<double> P;         // per active symptom
    std::vector<double> dP;        // d P / d mu
    Eigen::VectorXd residual;      // r_0 = sum pi - 1, r_a = sum_{bit} pi - P_a
    double dual = 0;               // Lagrangian at the primal maximizer
};

inline double objective_terms(const MaxentProblem& pb, const std::vector<double>& pi,
                              const std::vector<double>& P) {
    double loglik = 0, entropy = 0;
    for (std::size_t j = 0; j < pi.size(); ++j) {
        if (pb.counts[j] > 0) loglik += pb.counts[j] * std::log(pi[j]);
        if (pi[j] > 0) entropy -= pi[j] * std::log(pi[j]);
    }
    double kl = 0;
    for (std::size_t a = 0; a < pb.active.size(); ++a) {
        const int k = pb.active[a];
        kl += pb.lambda[k] * kl_bernoulli(pb.expert[k], P[a]);
    }
    return loglik + pb.eps * (entropy - kl);
}

inline PrimalPoint primal(const MaxentProblem& pb, const Eigen::VectorXd& mu) {
    PrimalPoint pt;
    const std::size_t n = pb.cells.size();
    const int m = pb.dual_dim();
    pt.pi.resize(n);
    pt.weight.resize(n);
    pt.residual = Eigen::VectorXd::Zero(m);
    for (std::size_t j = 0; j < n; ++j) {
        double s = mu[0];
        for (int a = 1; a < m; ++a) {
            if (pb.cells[j] >> pb.active[a - 1] & 1u) s += mu[a];
        }
        double p;
        if (pb.counts[j] == 0) {
            p = std::exp(-1 - s / pb.eps);
            pt.weight[j] = p / pb.eps;
        } else {
            p = positive_cell(pb.counts[j], pb.eps, s);
            pt.weight[j] = p * p / (pb.counts[j] + pb.eps * p);
        }
        pt.pi[j] = p;
        pt.residual[0] += p;
        for (int a = 1; a < m; ++a) {
            if (pb.cells[j] >> pb.active[a - 1] & 1u) pt.residual[a] += p;
        }
    }
    pt.residual[0] -= 1;
    pt.P.resize(m - 1);
    pt.dP.resize(m - 1);
    for (int a = 1; a < m; ++a) {
        const int k = pb.active[a - 1];
        const double e = pb.expert[k];
        const double el = pb.eps * pb.lambda[k];
        const double q = penalized_marginal(e, mu[a] / el);
        pt.P[a - 1] = q;
        pt.dP[a - 1] = 1.0 / (el * (e / (q * q) + (1 - e) / ((1 - q) * (1 - q))));
        pt.residual[a] -= q;
    }
    pt.dual = objective_terms(pb, pt.pi, pt.P) - mu.dot(pt.residual);
    return pt;
}

inline Eigen::MatrixXd dual_hessian(const MaxentProblem& pb, const PrimalPoint& pt) {
    const int m = pb.dual_dim();
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd b(m);
    for (std::size_t j = 0; j < pb.cells.size(); ++j) {
        b[0] = 1;
        for (int a = 1; a < m; ++a) b[a] = (pb.cells[j] >> pb.active[a - 1] & 1u) ? 1.0 : 0.0;
        H.noalias() += pt.weight[j] * b * b.transpose();
    }
    for (int a = 1; a < m; ++a) H(a, a) += pt.dP[a - 1];
    return H;
}

} // namespace detail

/// Maximizes the penalized maxent objective over the admissible cells.
/// `expert` values are clamped into [1e-6, 1-1e-6]; symptoms with lambda = 0
/// are left unconstrained.
inline MaxentSolution solve_maxent(const std::vector<double>& expert, const ObservedCounts& obs,
                                   const MaxentConfig& cfg, int min_symptoms,
                                   std::vector<SymptomCode> symptoms = {}, std::string disease = {}) {
    const int K = static_cast<int>(expert.size());
    if (K > kMaxExplicitK) {
        fail(Errc::dimension, "K=" + std::to_string(K) + " exceeds the explicit-table limit; use a group model");
    }
    if (!(cfg.epsilon > 0) || !(cfg.tol > 0) || cfg.max_iter < 1) {
        fail(Errc::invalid_argument, "maxent config needs epsilon > 0, tol > 0, max_iter >= 1");
    }
    if (!cfg.lambdas.empty() && static_cast<int>(cfg.lambdas.size()) != K) {
        fail(Errc::invalid_argument, "lambdas must have one entry per symptom");
    }
    if (symptoms.empty()) {
        for (int k = 0; k < K; ++k) symptoms.push_back(std::to_string(k));
    }
    if (static_cast<int>(symptoms.size()) != K) fail(Errc::invalid_argument, "symptom list size mismatch");

    detail::MaxentProblem pb;
    pb.K = K;
    pb.eps = cfg.epsilon;
    pb.lambda = cfg.lambdas.empty() ? std::vector<double>(K, 1.0) : cfg.lambdas;
    for (int k = 0; k < K; ++k) {
        if (!(pb.lambda[k] >= 0) || !std::isfinite(pb.lambda[k])) fail(Errc::invalid_argument, "lambda must be finite and >= 0");
        pb.expert.push_back(clamp_expert(expert[k]));
        if (pb.lambda[k] > 0) pb.active.push_back(k);
    }

    const CellIndex ncells = CellIndex{1} << K;
    JointTable table;
    table.disease = std::move(disease);
    table.K = K;
    table.symptoms = std::move(symptoms);
    table.min_symptoms = min_symptoms;
    table.pi.assign(ncells, 0.0);
    std::vector<int> slot(ncells, -1);
    for (CellIndex j = 0; j < ncells; ++j) {
        if (std::popcount(j) < min_symptoms) {
            table.impossible.push_back(j);
        } else {
            slot[j] = static_cast<int>(pb.cells.size());
            pb.cells.push_back(j);
            pb.counts.push_back(0);
        }
    }
    if (pb.cells.empty()) fail(Errc::infeasible, "min_symptoms exceeds K: no admissible cell");
    for (const auto& [cell, n] : obs.counts) {
        if (cell >= ncells) fail(Errc::invalid_argument, "observed cell index out of range");
        if (n < 0) fail(Errc::invalid_argument, "negative count");
        if (n == 0) continue;
        if (slot[cell] < 0) {
            fail(Errc::infeasible, "observations fall on an impossible cell", "cell " + std::to_string(cell));
        }
        pb.counts[slot[cell]] += n;
    }
    for (int k : pb.active) {
        bool some_on = false, some_off = false;
        for (CellIndex j : pb.cells) ((j >> k) & 1u ? some_on : some_off) = true;
        if (!some_on || !some_off) {
            fail(Errc::infeasible, "marginal of '" + table.symptoms[k] + "' is forced to " + (some_on ? "1" : "0") +
                                       " by the impossible cells; the expert penalty is infinite");
        }
    }

    const int m = pb.dual_dim();
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
    if (!cfg.initial_multipliers.empty()) {
        if (static_cast<int>(cfg.initial_multipliers.size()) != K + 1) {
            fail(Errc::invalid_argument, "warm start must have K+1 multipliers");
        }
        mu[0] = cfg.initial_multipliers[0];
        for (int a = 1; a < m; ++a) mu[a] = cfg.initial_multipliers[pb.active[a - 1] + 1];
    } else {
        mu[0] = pb.eps * (std::log(static_cast<double>(pb.cells.size())) - 1);
    }

    double step = cfg.uzawa_step > 0 ? cfg.uzawa_step : 0.5 / std::sqrt(static_cast<double>(ncells));
    detail::PrimalPoint pt = detail::primal(pb, mu);
    int iter = 0;
    bool converged = false;
    for (; iter < cfg.max_iter; ++iter) {
        Eigen::VectorXd dir;
        double rho;
        if (cfg.newton) {
            Eigen::MatrixXd H = detail::dual_hessian(pb, pt);
            dir = H.ldlt().solve(pt.residual);
            if (!dir.allFinite()) dir = pt.residual * pb.eps;
            rho = 1.0;
        } else {
            // Plain Uzawa: the dual curvature scales like 1/eps, so the step does too.
            dir = pt.residual * pb.eps;
            rho = step;
        }
        detail::PrimalPoint next;
        Eigen::VectorXd trial;
        bool accepted = false;
        // Armijo on the dual; a Newton direction that fails falls back to the gradient.
        for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
            if (attempt == 1) {
                dir = pt.residual * pb.eps;
                rho = cfg.newton ? 1.0 : step;
            }
            const double slope = pt.residual.dot(dir);
            for (int halvings = 0; halvings < 60; ++halvings) {
                trial = mu + rho * dir;
                next = detail::primal(pb, trial);
                if (std::isfinite(next.dual) && next.dual <= pt.dual - 1e-4 * rho * slope + 1e-13 * std::abs(pt.dual)) {
                    accepted = true;
                    break;
                }
                rho *= 0.5;
                if (!cfg.newton) step = rho;
            }
        }
        if (!accepted) break;
        const double update = (rho * dir).lpNorm<Eigen::Infinity>() / pb.eps;
        mu = trial;
        pt = std::move(next);
        if (pt.residual.lpNorm<Eigen::Infinity>() <= cfg.tol && update <= cfg.tol) {
            converged = true;
            ++iter;
            break;
        }
    }
    const double final_residual = pt.residual.lpNorm<Eigen::Infinity>();
    if (!converged && final_residual > cfg.tol) {
        std::ostringstream os;
        os.precision(6);
        os << "max residual " << final_residual << " after " << iter << " iterations; residuals:";
        for (int a = 0; a < m; ++a) os << ' ' << pt.residual[a];
        fail(Errc::not_converged, "maxent did not converge", os.str());
    }

    for (std::size_t j = 0; j < pb.cells.size(); ++j) table.pi[pb.cells[j]] = pt.pi[j];
    table.marginals.assign(K, 0.0);
    for (CellIndex j = 0; j < ncells; ++j) {
        for (int k = 0; k < K; ++k) {
            if ((j >> k) & 1u) table.marginals[k] += table.pi[j];
        }
    }

    MaxentSolution out;
    out.multipliers.assign(K + 1, 0.0);
    out.multipliers[0] = mu[0];
    for (int a = 1; a < m; ++a) out.multipliers[pb.active[a - 1] + 1] = mu[a];
    out.iterations = iter;
    out.residual = final_residual;
    out.objective = detail::objective_terms(pb, pt.pi, pt.P);
    out.table = std::move(table);
    return out;
}

/// J evaluated at an arbitrary table, with marginals taken from the table itself.
inline double maxent_objective(const JointTable& t, const std::vector<double>& expert, const ObservedCounts& obs,
                               const MaxentConfig& cfg) {
    double loglik = 0, entropy = 0, kl = 0;
    for (const auto& [cell, n] : obs.counts) {
        if (n > 0) loglik += n * std::log(t.pi.at(cell));
    }
    for (double p : t.pi) {
        if (p > 0) entropy -= p * std::log(p);
    }
    for (int k = 0; k < t.K; ++k) {
        const double lam = cfg.lambdas.empty() ? 1.0 : cfg.lambdas[k];
        if (lam > 0) kl += lam * kl_bernoulli(clamp_expert(expert[k]), std::clamp(t.marginals[k], 0.0, 1.0));
    }
    return loglik + cfg.epsilon * (entropy - kl);
}

/// Product-of-Bernoulli table (conditional independence), used for the
/// small illustrative example and as a reference model.
inline JointTable independent_table(const DiseaseEntry& d) {
    const int K = static_cast<int>(d.typical.size());
    if (K > kMaxExplicitK) fail(Errc::dimension, "too many typical symptoms for an explicit table");
    JointTable t;
    t.disease = d.id;
    t.K = K;
    t.symptoms = d.codes();
    t.pi.assign(CellIndex{1} << K, 1.0);
    for (CellIndex j = 0; j < t.pi.size(); ++j) {
        for (int k = 0; k < K; ++k) t.pi[j] *= (j >> k & 1u) ? d.typical[k].p : 1 - d.typical[k].p;
    }
    t.marginals.resize(K);
    for (int k = 0; k < K; ++k) t.marginals[k] = d.typical[k].p;
    return t;
}

// --- queries ---------------------------------------------------------------

/// Mass of the cells compatible with (mask, value) and, per symptom, the part
/// of that mass where the symptom is present.
struct Conditional {
    double mass = 0;
    std::vector<double> present;
};

inline double query_bits(const JointTable& t, Mask mask, Mask value) {
    const Mask full = (Mask{1} << t.K) - 1;
    const Mask free = full & ~mask;
    const Mask fixed = value & mask;
    double total = 0;
    Mask sub = free;
    while (true) {
        total += t.pi[fixed | sub];
        if (sub == 0) break;
        sub = (sub - 1) & free;
    }
    return total;
}

inline Conditional conditional_bits(const JointTable& t, Mask mask, Mask value) {
    Conditional c;
    c.present.assign(t.K, 0.0);
    const Mask full = (Mask{1} << t.K) - 1;
    const Mask free = full & ~mask;
    const Mask fixed = value & mask;
    Mask sub = free;
    while (true) {
        const Mask cell = fixed | sub;
        const double p = t.pi[cell];
        if (p != 0) {
            c.mass += p;
            for (Mask rest = cell; rest; rest &= rest - 1) {
                c.present[std::countr_zero(rest)] += p;
            }
        }
        if (sub == 0) break;
        sub = (sub - 1) & free;
    }
    return c;
}

/// Conditionally independent symptoms: the joint is the product of the
/// marginals. Queries cost O(K) instead of O(2^K).
struct IndependentModel {
    std::string disease;
    std::vector<SymptomCode> symptoms;
    std::vector<double> p;

    bool operator==(const IndependentModel&) const = default;
};

inline IndependentModel independent_model(const DiseaseEntry& d) {
    IndependentModel m{d.id, d.codes(), {}};
    for (const auto& t : d.typical) m.p.push_back(t.p);
    return m;
}

inline double query_bits(const IndependentModel& m, Mask mask, Mask value) {
    double total = 1;
    for (Mask rest = mask; rest; rest &= rest - 1) {
        const int k = std::countr_zero(rest);
        total *= (value >> k & 1u) ? m.p[k] : 1 - m.p[k];
    }
    return total;
}

inline Conditional conditional_bits(const IndependentModel& m, Mask mask, Mask value) {
    Conditional c;
    c.mass = query_bits(m, mask, value);
    c.present.resize(m.p.size());
    for (std::size_t k = 0; k < m.p.size(); ++k) {
        const Mask bit = Mask{1} << k;
        c.present[k] = c.mass * ((mask & bit) ? ((value & bit) ? 1.0 : 0.0) : m.p[k]);
    }
    return c;
}

// --- group factorization ---------------------------------------------------

/// Symptoms grouped by a shared ancestor ("organ"). Precise symptoms of
/// distinct groups are conditionally independent given which groups are
/// active; the group indicators carry their own joint table.
struct GroupFactorization {
    std::string disease;
    std::vector<SymptomCode> symptoms;           // sorted; global bit order for queries
    std::vector<std::string> groups;             // sorted group names; bit g of group_table
    std::vector<std::vector<int>> members;       // per group, indices into `symptoms` (ascending)
    std::vector<JointTable> within;              // per group, conditional on the group being active
    JointTable group_table;

    bool operator==(const GroupFactorization&) const = default;
};

namespace detail {

// Projects a global (mask, value) onto the members of one group.
inline std::pair<Mask, Mask> project(const std::vector<int>& members, Mask mask, Mask value) {
    Mask m = 0, v = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        const Mask bit = Mask{1} << members[i];
        if (mask & bit) {
            m |= Mask{1} << i;
            if (value & bit) v |= Mask{1} << i;
        }
    }
    return {m, v};
}

} // namespace detail

inline double query_bits(const GroupFactorization& g, Mask mask, Mask value) {
    const std::size_t ng = g.groups.size();
    std::vector<double> on(ng), off(ng);
    for (std::size_t i = 0; i < ng; ++i) {
        auto [m, v] = detail::project(g.members[i], mask, value);
        on[i] = query_bits(g.within[i], m, v);
        off[i] = (v & m) ? 0.0 : 1.0;
    }
    double total = 0;
    for (CellIndex c = 0; c < g.group_table.pi.size(); ++c) {
        double p = g.group_table.pi[c];
        for (std::size_t i = 0; i < ng && p != 0; ++i) p *= (c >> i & 1u) ? on[i] : off[i];
        total += p;
    }
    return total;
}

inline Conditional conditional_bits(const GroupFactorization& g, Mask mask, Mask value) {
    Conditional c;
    c.mass = query_bits(g, mask, value);
    c.present.assign(g.symptoms.size(), 0.0);
    for (std::size_t k = 0; k < g.symptoms.size(); ++k) {
        const Mask bit = Mask{1} << k;
        if (mask & bit) {
            c.present[k] = (value & bit) ? c.mass : 0.0;
        } else {
            c.present[k] = query_bits(g, mask | bit, value | bit);
        }
    }
    return c;
}

/// Full 2^K joint implied by the factorization.
inline JointTable assemble_joint(const GroupFactorization& g) {
    const int K = static_cast<int>(g.symptoms.size());
    if (K > kMaxExplicitK) fail(Errc::dimension, "too many symptoms to assemble an explicit joint");
    JointTable t;
    t.disease = g.disease;
    t.K = K;
    t.symptoms = g.symptoms;
    t.min_symptoms = g.group_table.min_symptoms;
    t.pi.assign(CellIndex{1} << K, 0.0);
    for (CellIndex x = 0; x < t.pi.size(); ++x) {
        CellIndex active = 0;
        double p = 1;
        for (std::size_t i = 0; i < g.groups.size(); ++i) {
            auto [m, v] = detail::project(g.members[i], Mask{(Mask{1} << K) - 1}, x);
            (void)m;
            if (v != 0) {
                active |= CellIndex{1} << i;
                p *= g.within[i].pi[v];
            }
        }
        t.pi[x] = p * g.group_table.pi[active];
        if (t.pi[x] == 0) t.impossible.push_back(x);
    }
    t.marginals.assign(K, 0.0);
    for (CellIndex x = 0; x < t.pi.size(); ++x) {
        for (int k = 0; k < K; ++k) {
            if (x >> k & 1u) t.marginals[k] += t.pi[x];
        }
    }
    return t;
}

struct GroupFitOptions {
    double c = 1.0;                 // eps = c * 2^(table size) for each sub-problem
    int min_groups = 1;             // group cells with fewer active groups are impossible
    std::map<std::string, std::pair<double, double>> group_marginals; // group -> (p, lambda); absent = missing
    int max_iter = 500;
    double tol = 1e-8;
};

/// Fits the group indicator table first (unknown group marginals carry
/// lambda = 0), then each group's table conditional on the group being active
/// with expert marginals rescaled by the fitted group activity.
inline GroupFactorization fit_group_model(const KnowledgeBase& kb, const std::string& disease_id,
                                          const std::map<SymptomCode, std::string>& grouping,
                                          const GroupFitOptions& opt = {}) {
    const DiseaseEntry* d = kb.find(disease_id);
    if (!d) fail(Errc::not_found, "unknown disease '" + disease_id + "'");
    GroupFactorization g;
    g.disease = d->id;
    g.symptoms = d->codes();
    if (g.symptoms.size() > 64) fail(Errc::dimension, "more than 64 typical symptoms");
    std::map<std::string, std::vector<int>> by_group;
    for (std::size_t k = 0; k < g.symptoms.size(); ++k) {
        auto it = grouping.find(g.symptoms[k]);
        if (it == grouping.end()) fail(Errc::invalid_argument, "symptom '" + g.symptoms[k] + "' has no group");
        by_group[it->second].push_back(static_cast<int>(k));
    }
    for (auto& [name, idx] : by_group) {
        if (static_cast<int>(idx.size()) > kMaxExplicitK) fail(Errc::dimension, "group '" + name + "' is too large");
        g.groups.push_back(name);
        g.members.push_back(idx);
    }
    const int ng = static_cast<int>(g.groups.size());
    if (ng > kMaxExplicitK) fail(Errc::dimension, "too many groups");

    MaxentConfig gcfg;
    gcfg.epsilon = heuristic_epsilon(ng, opt.c);
    gcfg.max_iter = opt.max_iter;
    gcfg.tol = opt.tol;
    std::vector<double> gexpert(ng, 0.5);
    gcfg.lambdas.assign(ng, 0.0);
    for (int i = 0; i < ng; ++i) {
        auto it = opt.group_marginals.find(g.groups[i]);
        if (it != opt.group_marginals.end()) {
            gexpert[i] = it->second.first;
            gcfg.lambdas[i] = it->second.second;
        }
    }
    g.group_table = solve_maxent(gexpert, {}, gcfg, opt.min_groups, g.groups, d->id).table;

    for (int i = 0; i < ng; ++i) {
        const double active = g.group_table.marginals[i];
        std::vector<double> expert;
        std::vector<SymptomCode> names;
        MaxentConfig cfg;
        cfg.max_iter = opt.max_iter;
        cfg.tol = opt.tol;
        for (int k : g.members[i]) {
            const auto& t = d->typical[k];
            expert.push_back(active > 0 ? std::min(t.p / active, 1.0) : t.p);
            cfg.lambdas.push_back(t.lambda);
            names.push_back(t.code);
        }
        const int Kg = static_cast<int>(expert.size());
        cfg.epsilon = heuristic_epsilon(Kg, opt.c);
        if (Kg == 1) cfg.lambdas.assign(1, 0.0); // a lone member is present whenever its group is
        g.within.push_back(solve_maxent(expert, {}, cfg, 1, names, d->id).table);
    }
    return g;
}

using JointModel = std::variant<JointTable, GroupFactorization, IndependentModel>;

inline const std::vector<SymptomCode>& model_symptoms(const JointModel& m) {
    return std::visit([](const auto& t) -> const std::vector<SymptomCode>& { return t.symptoms; }, m);
}

inline const std::string& model_disease(const JointModel& m) {
    return std::visit([](const auto& t) -> const std::string& { return t.disease; }, m);
}

inline double query_bits(const JointModel& m, Mask mask, Mask value) {
    return std::visit([&](const auto& t) { return query_bits(t, mask, value); }, m);
}

inline Conditional conditional_bits(const JointModel& m, Mask mask, Mask value) {
    return std::visit([&](const auto& t) { return conditional_bits(t, mask, value); }, m);
}

/// Probability of a partial assignment over the model's typical symptoms;
/// unassigned symptoms are marginalized out.
inline double query_joint(const JointModel& m, const std::map<SymptomCode, bool>& assignment) {
    const auto& syms = model_symptoms(m);
    Mask mask = 0, value = 0;
    for (const auto& [code, present] : assignment) {
        auto it = std::lower_bound(syms.begin(), syms.end(), code);
        if (it == syms.end() || *it != code) fail(Errc::unknown_code, "'" + code + "' is not a typical symptom of the model");
        const Mask bit = Mask{1} << (it - syms.begin());
        mask |= bit;
        if (present) value |= bit;
    }
    return query_bits(m, mask, value);
}

// --- fitting from a knowledge base ----------------------------------------

struct FitOptions {
    double c = 1.8;              // eps = c * 2^K
    bool independent = false;    // product-of-marginals tables instead of maxent
    int max_iter = 500;
    double tol = 1e-8;
};

inline JointTable fit_disease(const DiseaseEntry& d, const ObservedCounts& obs, const FitOptions& opt) {
    if (opt.independent) return independent_table(d);
    MaxentConfig cfg;
    const int K = static_cast<int>(d.typical.size());
    cfg.epsilon = heuristic_epsilon(K, opt.c);
    cfg.max_iter = opt.max_iter;
    cfg.tol = opt.tol;
    std::vector<double> expert;
    for (const auto& t : d.typical) {
        expert.push_back(t.p);
        cfg.lambdas.push_back(t.lambda);
    }
    return solve_maxent(expert, obs, cfg, d.min_symptoms, d.codes(), d.id).table;
}

/// Per-disease combination counts from an observations CSV. The first column
/// is `disease`; the rest are symptom codes with values 0, 1 or NA. A row
/// contributes to its disease only when every typical symptom is recorded and
/// the combination is admissible.
inline std::map<std::string, ObservedCounts> counts_from_csv(const KnowledgeBase& kb, std::istream& in,
                                                             std::vector<std::string>* warnings = nullptr) {
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
            while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
            out.push_back(cell);
        }
        return out;
    };
    std::string line;
    if (!std::getline(in, line)) fail(Errc::schema, "empty observations file");
    const auto header = split(line);
    if (header.empty() || header[0] != "disease") fail(Errc::schema, "first column must be 'disease'", "header");
    std::map<SymptomCode, std::size_t> column;
    for (std::size_t i = 1; i < header.size(); ++i) column[header[i]] = i;

    std::map<std::string, ObservedCounts> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != header.size()) fail(Errc::schema, "wrong number of columns", "row " + std::to_string(row));
        const DiseaseEntry* d = kb.find(cells[0]);
        if (!d) fail(Errc::unknown_code, "unknown disease '" + cells[0] + "'", "row " + std::to_string(row));
        CellIndex cell = 0;
        bool complete = true;
        for (std::size_t k = 0; k < d->typical.size(); ++k) {
            auto it = column.find(d->typical[k].code);
            if (it == column.end()) { complete = false; break; }
            const std::string& v = cells[it->second];
            if (v == "1") cell |= CellIndex{1} << k;
            else if (v != "0") { complete = false; break; }
        }
        for (std::size_t i = 1; i < cells.size(); ++i) {
            const std::string& v = cells[i];
            if (v != "0" && v != "1" && v != "NA") {
                fail(Errc::schema, "values must be 0, 1 or NA", "row " + std::to_string(row));
            }
        }
        if (!complete) continue;
        if (std::popcount(cell) < d->min_symptoms) {
            if (warnings) warnings->push_back("row " + std::to_string(row) + ": inadmissible combination skipped");
            continue;
        }
        out[d->id].add(cell);
    }
    return out;
}

} // namespace raredx
