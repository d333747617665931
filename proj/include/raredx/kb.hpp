#pragma once

// Expert knowledge base: diseases with priors and typical-symptom marginals,
// plus the symptom ontology (a forest of child -> parent edges).

#include "raredx/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace raredx {

using SymptomCode = std::string;
using json = nlohmann::json;

class Ontology {
public:
    using Edge = std::pair<SymptomCode, SymptomCode>; // (child, parent)

    Ontology() = default;

    Ontology(const std::vector<Edge>& edges, const std::vector<SymptomCode>& base_level) {
        for (const auto& [child, parent] : edges) {
            if (child == parent) {
                fail(Errc::ontology, "self loop on '" + child + "'");
            }
            auto [it, inserted] = parent_.emplace(child, parent);
            if (!inserted && it->second != parent) {
                fail(Errc::ontology, "code '" + child + "' has two parents ('" + it->second +
                                         "', '" + parent + "'); only forests are supported");
            }
            nodes_.insert(child);
            nodes_.insert(parent);
        }
        for (const auto& [child, parent] : parent_) {
            children_[parent].push_back(child);
        }
        for (auto& [_, kids] : children_) {
            std::sort(kids.begin(), kids.end());
        }
        for (const auto& code : base_level) {
            nodes_.insert(code);
            base_.insert(code);
        }
        // Single-parent graph: a cycle shows up as a walk that revisits a node.
        for (const auto& node : nodes_) {
            std::set<SymptomCode> seen{node};
            auto cur = parent_.find(node);
            while (cur != parent_.end()) {
                if (!seen.insert(cur->second).second) {
                    fail(Errc::ontology, "cycle through '" + cur->second + "'");
                }
                cur = parent_.find(cur->second);
            }
        }
    }

    bool contains(const SymptomCode& c) const { return nodes_.count(c) > 0; }
    bool is_base(const SymptomCode& c) const { return base_.count(c) > 0; }

    const std::set<SymptomCode>& nodes() const { return nodes_; }
    const std::set<SymptomCode>& base_level() const { return base_; }

    std::optional<SymptomCode> parent(const SymptomCode& c) const {
        require(c);
        auto it = parent_.find(c);
        if (it == parent_.end()) return std::nullopt;
        return it->second;
    }

    const std::vector<SymptomCode>& children(const SymptomCode& c) const {
        static const std::vector<SymptomCode> none;
        require(c);
        auto it = children_.find(c);
        return it == children_.end() ? none : it->second;
    }

    std::vector<Edge> edges() const {
        return {parent_.begin(), parent_.end()};
    }

    void require(const SymptomCode& c) const {
        if (!contains(c)) fail(Errc::unknown_code, "unknown ontology code '" + c + "'");
    }

    bool operator==(const Ontology&) const = default;

private:
    std::set<SymptomCode> nodes_;
    std::set<SymptomCode> base_;
    std::map<SymptomCode, SymptomCode> parent_;
    std::map<SymptomCode, std::vector<SymptomCode>> children_;
};

/// Transitive closure of parent edges, excluding `c`.
inline std::set<SymptomCode> ancestors(const Ontology& o, const SymptomCode& c) {
    std::set<SymptomCode> out;
    for (auto p = o.parent(c); p; p = o.parent(*p)) {
        out.insert(*p);
    }
    return out;
}

/// Every node below `c` in the forest, excluding `c`.
inline std::set<SymptomCode> descendants(const Ontology& o, const SymptomCode& c) {
    std::set<SymptomCode> out;
    std::vector<SymptomCode> stack = o.children(c);
    while (!stack.empty()) {
        SymptomCode cur = std::move(stack.back());
        stack.pop_back();
        const auto& kids = o.children(cur);
        stack.insert(stack.end(), kids.begin(), kids.end());
        out.insert(std::move(cur));
    }
    return out;
}

struct TypicalSymptom {
    SymptomCode code;
    double p = 0.5;       // expert marginal P[S | D]
    double lambda = 100;  // confidence weight; 0 means the marginal is unknown

    bool operator==(const TypicalSymptom&) const = default;
};

struct DiseaseEntry {
    std::string id;
    double prior = 0;
    int min_symptoms = 1;
    std::vector<TypicalSymptom> typical; // sorted by code

    std::vector<SymptomCode> codes() const {
        std::vector<SymptomCode> out;
        out.reserve(typical.size());
        for (const auto& t : typical) out.push_back(t.code);
        return out;
    }

    std::optional<std::size_t> position(const SymptomCode& c) const {
        auto it = std::lower_bound(typical.begin(), typical.end(), c,
                                   [](const TypicalSymptom& t, const SymptomCode& k) { return t.code < k; });
        if (it == typical.end() || it->code != c) return std::nullopt;
        return static_cast<std::size_t>(it - typical.begin());
    }

    bool has_typical(const SymptomCode& c) const { return position(c).has_value(); }

    bool operator==(const DiseaseEntry&) const = default;
};

struct KnowledgeBase {
    std::vector<DiseaseEntry> diseases; // sorted by id
    Ontology ontology;
    double other_prior = 0;
    std::map<SymptomCode, std::string> labels;  // optional display names
    std::vector<std::string> warnings;

    std::string label(const SymptomCode& c) const {
        auto it = labels.find(c);
        return it == labels.end() ? c : it->second;
    }

    const DiseaseEntry* find(const std::string& id) const {
        for (const auto& d : diseases) {
            if (d.id == id) return &d;
        }
        return nullptr;
    }

    /// Sorted union of base-level codes and every typical code.
    std::vector<SymptomCode> symptom_universe() const {
        std::set<SymptomCode> all = ontology.base_level();
        for (const auto& d : diseases) {
            for (const auto& t : d.typical) all.insert(t.code);
        }
        return {all.begin(), all.end()};
    }

    bool operator==(const KnowledgeBase& o) const {
        return diseases == o.diseases && ontology == o.ontology && other_prior == o.other_prior;
    }
};

namespace detail {

inline const json& field(const json& obj, const char* name, const std::string& where) {
    if (!obj.is_object() || !obj.contains(name)) {
        fail(Errc::schema, "missing field '" + std::string(name) + "'", where);
    }
    return obj.at(name);
}

inline double number(const json& v, const std::string& where) {
    if (!v.is_number()) fail(Errc::schema, "expected a number", where);
    return v.get<double>();
}

inline std::string text(const json& v, const std::string& where) {
    if (!v.is_string()) fail(Errc::schema, "expected a string", where);
    return v.get<std::string>();
}

} // namespace detail

/// Validates every invariant and returns a KB with diseases sorted by id and
/// typical symptoms sorted by code. Throws Error on any violation.
inline KnowledgeBase validate_kb(KnowledgeBase kb) {
    std::sort(kb.diseases.begin(), kb.diseases.end(),
              [](const DiseaseEntry& a, const DiseaseEntry& b) { return a.id < b.id; });
    kb.warnings.clear();

    if (!(kb.other_prior >= 0 && kb.other_prior <= 1)) {
        fail(Errc::prior_sum, "other_prior outside [0,1]");
    }
    double total = kb.other_prior;
    std::set<std::string> ids;
    for (auto& d : kb.diseases) {
        const std::string where = "disease '" + d.id + "'";
        if (d.id.empty()) fail(Errc::schema, "empty disease id");
        if (!ids.insert(d.id).second) fail(Errc::schema, "duplicate disease id", where);
        if (!(d.prior >= 0 && d.prior <= 1)) fail(Errc::schema, "prior outside [0,1]", where);
        total += d.prior;

        std::sort(d.typical.begin(), d.typical.end(),
                  [](const TypicalSymptom& a, const TypicalSymptom& b) { return a.code < b.code; });
        for (std::size_t i = 0; i < d.typical.size(); ++i) {
            const auto& t = d.typical[i];
            const std::string at = where + ", symptom '" + t.code + "'";
            if (i > 0 && d.typical[i - 1].code == t.code) fail(Errc::schema, "duplicate typical code", at);
            if (!(t.p > 0 && t.p <= 1)) fail(Errc::schema, "marginal p outside (0,1]", at);
            if (!(t.lambda >= 0) || !std::isfinite(t.lambda)) fail(Errc::schema, "lambda must be finite and >= 0", at);
            if (!kb.ontology.contains(t.code)) {
                fail(Errc::dangling_reference, "typical code not in ontology", at);
            }
            if (!kb.ontology.is_base(t.code)) {
                kb.warnings.push_back(at + ": typical code is not flagged base_level");
            }
        }
        if (d.min_symptoms < 1 || d.min_symptoms > static_cast<int>(d.typical.size())) {
            fail(Errc::schema, "min_symptoms must lie in [1, |typical|]", where);
        }
        for (const auto& t : d.typical) {
            for (const auto& a : ancestors(kb.ontology, t.code)) {
                if (kb.ontology.is_base(a) && d.has_typical(a)) {
                    kb.warnings.push_back(where + ": base-level '" + a + "' is an ancestor of '" + t.code + "'");
                }
            }
        }
    }
    if (std::abs(total - 1.0) > 1e-9) {
        std::ostringstream os;
        os.precision(12);
        os << "priors plus other_prior sum to " << total;
        fail(Errc::prior_sum, os.str());
    }
    return kb;
}

inline KnowledgeBase kb_from_json(const json& j) {
    using detail::field;
    using detail::number;
    using detail::text;

    KnowledgeBase kb;
    const json& diseases = field(j, "diseases", "$");
    if (!diseases.is_array()) fail(Errc::schema, "expected an array", "$.diseases");
    for (std::size_t i = 0; i < diseases.size(); ++i) {
        const json& dj = diseases[i];
        const std::string where = "$.diseases[" + std::to_string(i) + "]";
        DiseaseEntry d;
        d.id = text(field(dj, "id", where), where + ".id");
        d.prior = number(field(dj, "prior", where), where + ".prior");
        if (dj.contains("min_symptoms")) {
            const json& m = dj.at("min_symptoms");
            if (!m.is_number_integer()) fail(Errc::schema, "expected an integer", where + ".min_symptoms");
            d.min_symptoms = m.get<int>();
        }
        const json& syms = field(dj, "symptoms", where);
        if (!syms.is_array()) fail(Errc::schema, "expected an array", where + ".symptoms");
        for (std::size_t k = 0; k < syms.size(); ++k) {
            const std::string at = where + ".symptoms[" + std::to_string(k) + "]";
            TypicalSymptom t;
            t.code = text(field(syms[k], "code", at), at + ".code");
            t.p = number(field(syms[k], "p", at), at + ".p");
            if (syms[k].contains("lambda")) t.lambda = number(syms[k].at("lambda"), at + ".lambda");
            d.typical.push_back(std::move(t));
        }
        kb.diseases.push_back(std::move(d));
    }

    const json& oj = field(j, "ontology", "$");
    std::vector<Ontology::Edge> edges;
    if (oj.contains("edges")) {
        const json& ej = oj.at("edges");
        if (!ej.is_array()) fail(Errc::schema, "expected an array", "$.ontology.edges");
        for (std::size_t i = 0; i < ej.size(); ++i) {
            const std::string at = "$.ontology.edges[" + std::to_string(i) + "]";
            if (!ej[i].is_array() || ej[i].size() != 2) fail(Errc::schema, "edge must be [child, parent]", at);
            edges.emplace_back(text(ej[i][0], at), text(ej[i][1], at));
        }
    }
    std::vector<SymptomCode> base;
    const json& bj = field(oj, "base_level", "$.ontology");
    if (!bj.is_array()) fail(Errc::schema, "expected an array", "$.ontology.base_level");
    for (std::size_t i = 0; i < bj.size(); ++i) {
        base.push_back(text(bj[i], "$.ontology.base_level[" + std::to_string(i) + "]"));
    }
    kb.ontology = Ontology(edges, base);
    if (oj.contains("labels")) {
        const json& lj = oj.at("labels");
        if (!lj.is_object()) fail(Errc::schema, "expected an object", "$.ontology.labels");
        for (const auto& [code, text_v] : lj.items()) {
            const std::string at = "$.ontology.labels." + code;
            if (!kb.ontology.contains(code)) fail(Errc::dangling_reference, "label for unknown code '" + code + "'", at);
            kb.labels[code] = text(text_v, at);
        }
    }
    kb.other_prior = number(field(j, "other_prior", "$"), "$.other_prior");
    return validate_kb(std::move(kb));
}

inline json kb_to_json(const KnowledgeBase& kb) {
    json diseases = json::array();
    for (const auto& d : kb.diseases) {
        json syms = json::array();
        for (const auto& t : d.typical) {
            syms.push_back({{"code", t.code}, {"p", t.p}, {"lambda", t.lambda}});
        }
        diseases.push_back({{"id", d.id}, {"prior", d.prior}, {"min_symptoms", d.min_symptoms}, {"symptoms", syms}});
    }
    json edges = json::array();
    for (const auto& [child, parent] : kb.ontology.edges()) {
        edges.push_back({child, parent});
    }
    const auto& base = kb.ontology.base_level();
    json onto{{"edges", edges}, {"base_level", std::vector<SymptomCode>(base.begin(), base.end())}};
    if (!kb.labels.empty()) onto["labels"] = kb.labels;
    return {{"diseases", diseases}, {"ontology", onto}, {"other_prior", kb.other_prior}};
}

inline KnowledgeBase load_kb(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::io, "cannot open '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        fail(Errc::schema, std::string("malformed JSON: ") + e.what(), path);
    }
    return kb_from_json(j);
}

inline void save_kb(const KnowledgeBase& kb, const std::string& path) {
    std::ofstream out(path);
    if (!out) fail(Errc::io, "cannot write '" + path + "'");
    out << kb_to_json(kb).dump(2) << '\n';
}

struct TaskSeed {
    SymptomCode initial;
    std::vector<std::string> diseases;  // candidates listing `initial` as typical
    std::vector<SymptomCode> relevant;  // union of their typical codes minus `initial`

    bool empty() const { return diseases.empty(); }
};

inline TaskSeed relevant_set(const KnowledgeBase& kb, const SymptomCode& initial) {
    kb.ontology.require(initial);
    if (!kb.ontology.is_base(initial)) {
        fail(Errc::invalid_argument, "'" + initial + "' is not a base-level code");
    }
    TaskSeed seed{initial, {}, {}};
    std::set<SymptomCode> relevant;
    for (const auto& d : kb.diseases) {
        if (!d.has_typical(initial)) continue;
        seed.diseases.push_back(d.id);
        for (const auto& t : d.typical) {
            if (t.code != initial) relevant.insert(t.code);
        }
    }
    std::sort(seed.diseases.begin(), seed.diseases.end());
    seed.relevant.assign(relevant.begin(), relevant.end());
    return seed;
}

struct SynthOptions {
    std::uint64_t seed = 1;
    int n_diseases = 10;
    int n_symptoms = 40;
    double overlap = 0.3;   // share of each disease's typicals drawn from already-used codes
    int min_typical = 3;
    int max_typical = 19;
    int n_groups = 0;       // 0: one organ group per 5 symptoms
    int hub = 0;            // the first `hub` diseases all list symptom S0001
    double other_prior = 0.5;
    double lambda = 100;
    int min_symptoms = 1;
};

namespace detail {

inline std::string padded(const char* prefix, int value, int width) {
    std::string digits = std::to_string(value);
    return prefix + std::string(digits.size() < static_cast<std::size_t>(width) ? width - digits.size() : 0, '0') + digits;
}

} // namespace detail

/// Deterministic synthetic KB. Symptom codes S0001.., organ groups G01.. under ROOT.
inline KnowledgeBase synth_kb(const SynthOptions& opt) {
    if (opt.n_diseases < 1 || opt.n_symptoms < 1) fail(Errc::invalid_argument, "need at least one disease and one symptom");
    if (!(opt.overlap >= 0 && opt.overlap <= 1)) fail(Errc::invalid_argument, "overlap must lie in [0,1]");
    if (opt.min_typical < 1 || opt.max_typical > 19 || opt.min_typical > opt.max_typical) {
        fail(Errc::invalid_argument, "typical count range must satisfy 1 <= min <= max <= 19");
    }
    if (opt.min_typical > opt.n_symptoms) {
        fail(Errc::infeasible, "min_typical exceeds the number of symptoms");
    }
    if (opt.hub < 0 || opt.hub > opt.n_diseases) fail(Errc::infeasible, "hub exceeds the number of diseases");
    if (opt.other_prior < 0 || opt.other_prior >= 1) fail(Errc::invalid_argument, "other_prior must lie in [0,1)");

    std::mt19937_64 rng(opt.seed);
    auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

    const int n_groups = opt.n_groups > 0 ? opt.n_groups : std::max(1, (opt.n_symptoms + 4) / 5);
    std::vector<SymptomCode> codes;
    std::vector<Ontology::Edge> edges;
    for (int g = 1; g <= n_groups; ++g) edges.emplace_back(detail::padded("G", g, 2), "ROOT");
    for (int i = 1; i <= opt.n_symptoms; ++i) {
        codes.push_back(detail::padded("S", i, 4));
        edges.emplace_back(codes.back(), detail::padded("G", uniform_int(1, n_groups), 2));
    }

    static constexpr double grid[] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    static constexpr int weight[] = {1, 1, 1, 1, 3, 1, 1, 1, 3};
    std::discrete_distribution<int> marginal(std::begin(weight), std::end(weight));

    std::vector<int> used;
    std::vector<int> fresh(opt.n_symptoms);
    for (int i = 0; i < opt.n_symptoms; ++i) fresh[i] = opt.n_symptoms - 1 - i; // pop_back yields S0001 first
    if (opt.hub > 0) {
        fresh.pop_back();
        used.push_back(0);
    }

    KnowledgeBase kb;
    std::vector<double> weights;
    for (int d = 0; d < opt.n_diseases; ++d) {
        const int k = std::min(uniform_int(opt.min_typical, opt.max_typical), opt.n_symptoms);
        std::set<int> chosen;
        if (d < opt.hub) chosen.insert(0);
        int want_shared = static_cast<int>(std::lround(opt.overlap * k));
        std::vector<int> pool = used;
        std::shuffle(pool.begin(), pool.end(), rng);
        for (int s : pool) {
            if (static_cast<int>(chosen.size()) >= std::min(want_shared, k)) break;
            if (s == 0 && opt.hub > 0 && d >= opt.hub) continue;
            chosen.insert(s);
        }
        while (static_cast<int>(chosen.size()) < k && !fresh.empty()) {
            chosen.insert(fresh.back());
            used.push_back(fresh.back());
            fresh.pop_back();
        }
        // Out of fresh codes: top up from anything not yet chosen.
        for (int s : pool) {
            if (static_cast<int>(chosen.size()) >= k) break;
            if (s == 0 && opt.hub > 0 && d >= opt.hub) continue;
            chosen.insert(s);
        }
        DiseaseEntry e;
        e.id = detail::padded("D", d + 1, 3);
        e.min_symptoms = std::min<int>(opt.min_symptoms, static_cast<int>(chosen.size()));
        for (int s : chosen) {
            e.typical.push_back({codes[s], grid[marginal(rng)], opt.lambda});
        }
        weights.push_back(uniform(0.2, 1.0));
        kb.diseases.push_back(std::move(e));
    }
    double wsum = 0;
    for (double w : weights) wsum += w;
    double assigned = 0;
    for (std::size_t d = 0; d < kb.diseases.size(); ++d) {
        kb.diseases[d].prior = (1.0 - opt.other_prior) * weights[d] / wsum;
        assigned += kb.diseases[d].prior;
    }
    kb.other_prior = 1.0 - assigned;
    kb.ontology = Ontology(edges, codes);
    return validate_kb(std::move(kb));
}

} // namespace raredx
