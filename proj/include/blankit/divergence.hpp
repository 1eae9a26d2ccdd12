#pragma once

// Static call-flow divergence. A library function is non-divergent when every
// call site it contains postdominates its entry block and every library
// callee is itself non-divergent; such a function has exactly one dynamic
// call chain and needs no prediction.

#include <algorithm>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "blankit/dominance.hpp"
#include "blankit/io.hpp"
#include "blankit/ir.hpp"

namespace blankit {

enum class Divergence { NonDivergent, Divergent };

enum class DivergenceCause { NotPostdominating, CalleeDivergent, InCycle };

struct DivergenceReason {
    SiteId site = 0;
    DivergenceCause cause = DivergenceCause::NotPostdominating;
    friend bool operator==(const DivergenceReason&, const DivergenceReason&) = default;
};

struct DivergenceReport {
    std::map<FunctionId, Divergence> classification;
    std::size_t n_divergent = 0;
    std::size_t n_non_divergent = 0;
    std::map<FunctionId, std::vector<DivergenceReason>> reasons;

    bool non_divergent(FunctionId f) const {
        auto it = classification.find(f);
        return it != classification.end() && it->second == Divergence::NonDivergent;
    }
};

inline const char* to_string(DivergenceCause c) {
    switch (c) {
        case DivergenceCause::NotPostdominating: return "NotPostdominating";
        case DivergenceCause::CalleeDivergent: return "CalleeDivergent";
        case DivergenceCause::InCycle: return "InCycle";
    }
    return "?";
}

namespace detail {

/// Strongly connected components of the library-only call graph.
inline std::map<FunctionId, int> library_sccs(const Program& p) {
    std::map<FunctionId, int> num, low, comp;
    std::vector<FunctionId> stack;
    std::set<FunctionId> on_stack;
    int counter = 0, ncomp = 0;
    std::function<void(FunctionId)> strong = [&](FunctionId v) {
        num[v] = low[v] = counter++;
        stack.push_back(v);
        on_stack.insert(v);
        for (const auto& e : p.call_graph().at(v)) {
            if (!p.is_library(e.callee))
                continue;
            if (!num.count(e.callee)) {
                strong(e.callee);
                low[v] = std::min(low[v], low[e.callee]);
            } else if (on_stack.count(e.callee)) {
                low[v] = std::min(low[v], num[e.callee]);
            }
        }
        if (low[v] == num[v]) {
            FunctionId w;
            do {
                w = stack.back();
                stack.pop_back();
                on_stack.erase(w);
                comp[w] = ncomp;
            } while (w != v);
            ++ncomp;
        }
    };
    for (FunctionId f : p.library_ids())
        if (!num.count(f))
            strong(f);
    return comp;
}

}  // namespace detail

inline DivergenceReport classify_divergence(const Program& p) {
    struct LibCall {
        SiteId site;
        FunctionId callee;
        bool postdominates_entry;
    };
    std::map<FunctionId, std::vector<LibCall>> calls;
    for (FunctionId f : p.library_ids()) {
        const auto& fn = p.function(f);
        if (fn.blocks.empty())
            fail(ErrorKind::Analysis, "library function " + std::to_string(f) + " (" + fn.name +
                                          ") has no CFG");
        PostDominance pd(fn);
        auto& out = calls[f];
        for (const auto& bb : fn.blocks)
            for (const auto& ins : bb.instructions)
                if (const auto* call = std::get_if<CallInstr>(&ins))
                    if (p.is_library(call->callee))
                        out.push_back({call->site, call->callee,
                                       pd.postdominates(bb.id, fn.entry_block)});
        std::sort(out.begin(), out.end(),
                  [](const LibCall& a, const LibCall& b) { return a.site < b.site; });
    }

    // Greatest fixpoint: start optimistic, lower on violation. The result is
    // unique, so iteration order cannot affect it.
    std::map<FunctionId, bool> nd;
    for (const auto& [f, cs] : calls)
        nd[f] = std::all_of(cs.begin(), cs.end(), [](const LibCall& c) { return c.postdominates_entry; });
    bool changed = true;
    while (changed) {
        changed = false;
        for (auto& [f, ok] : nd) {
            if (!ok)
                continue;
            for (const auto& c : calls[f])
                if (!nd.at(c.callee)) {
                    ok = false;
                    changed = true;
                    break;
                }
        }
    }

    auto scc = detail::library_sccs(p);
    DivergenceReport report;
    for (const auto& [f, ok] : nd) {
        report.classification[f] = ok ? Divergence::NonDivergent : Divergence::Divergent;
        ++(ok ? report.n_non_divergent : report.n_divergent);
        if (ok)
            continue;
        auto& why = report.reasons[f];
        for (const auto& c : calls[f]) {
            if (!c.postdominates_entry)
                why.push_back({c.site, DivergenceCause::NotPostdominating});
            else if (!nd.at(c.callee))
                why.push_back({c.site, scc.at(c.callee) == scc.at(f) ? DivergenceCause::InCycle
                                                                     : DivergenceCause::CalleeDivergent});
        }
    }
    return report;
}

inline json to_json(const DivergenceReport& r) {
    json cls = json::object(), reasons = json::object();
    for (const auto& [f, d] : r.classification)
        cls[std::to_string(f)] = d == Divergence::NonDivergent ? "NonDivergent" : "Divergent";
    for (const auto& [f, rs] : r.reasons) {
        json arr = json::array();
        for (const auto& reason : rs)
            arr.push_back({{"site", reason.site}, {"reason", to_string(reason.cause)}});
        reasons[std::to_string(f)] = arr;
    }
    return {{"classification", cls},
            {"counts", {{"divergent", r.n_divergent}, {"non_divergent", r.n_non_divergent}}},
            {"reasons", reasons}};
}

/// Two-column summary table: library, #Divergent, #Non-divergent.
inline std::string divergence_summary(const DivergenceReport& r, const std::string& library) {
    std::ostringstream os;
    os << "Library\t#Divergent\t#Non-divergent\n";
    os << library << '\t' << r.n_divergent << '\t' << r.n_non_divergent << '\n';
    return os.str();
}

}  // namespace blankit
