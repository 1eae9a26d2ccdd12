#pragma once

// Instrumentation planning for application call sites into the library.
//
// For every argument of a library call the planner walks the SSA operands
// back to the phis that merge different definitions, takes the incoming
// blocks of those phis, and watches the successors of each incoming block's
// reverse dominance frontier. At run time the most recently executed watched
// block becomes the argument's context feature. Every argument value is a
// feature as well.
//
// Feature layout per site: [site_id, arg RDF features (arg order),
// arg values (arg order)].

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "blankit/dominance.hpp"
#include "blankit/io.hpp"
#include "blankit/ir.hpp"

namespace blankit {

/// Where each SSA value of a function is defined.
class DefIndex {
  public:
    struct Location {
        BlockId block;
        int index;
        const Instruction* instruction;
    };

    explicit DefIndex(const FunctionDef& f) : fn_(f.id) {
        for (const auto& bb : f.blocks)
            for (std::size_t i = 0; i < bb.instructions.size(); ++i) {
                const auto& ins = bb.instructions[i];
                const ValueRef* dst = nullptr;
                if (const auto* phi = std::get_if<PhiInstr>(&ins))
                    dst = &phi->dst;
                else if (const auto* def = std::get_if<DefInstr>(&ins))
                    dst = &def->dst;
                if (dst && dst->is_var())
                    defs_[dst->index] = {bb.id, static_cast<int>(i), &ins};
            }
    }

    const Location& at(const ValueRef& v) const {
        auto it = defs_.find(v.index);
        if (it == defs_.end())
            fail(ErrorKind::Analysis, "function " + std::to_string(fn_) + ": v" +
                                          std::to_string(v.index) + " has no definition");
        return it->second;
    }

  private:
    FunctionId fn_;
    std::map<std::int64_t, Location> defs_;
};

/// Phis are identified by the SSA value they define.
using PhiSet = std::set<std::int64_t>;

namespace detail {

inline void operands_of(const Instruction& ins, std::vector<ValueRef>& out) { collect_uses(ins, out); }

inline void trace_operands(const std::vector<ValueRef>& operands, const DefIndex& defs,
                           std::set<std::int64_t>& visited, PhiSet& out) {
    for (const auto& op : operands) {
        if (!op.is_var())
            continue;
        const auto& loc = defs.at(op);
        if (const auto* phi = std::get_if<PhiInstr>(loc.instruction)) {
            out.insert(phi->dst.index);
            continue;
        }
        if (!visited.insert(op.index).second)
            continue;
        std::vector<ValueRef> next;
        operands_of(*loc.instruction, next);
        trace_operands(next, defs, visited, out);
    }
}

}  // namespace detail

/// Phis reached by walking `def`'s operands backwards through non-phi
/// definitions. Constants, params and function addresses contribute nothing.
inline PhiSet trace_parent_phi(const Instruction& def, const FunctionDef& f) {
    DefIndex defs(f);
    std::vector<ValueRef> operands;
    detail::operands_of(def, operands);
    std::set<std::int64_t> visited;
    PhiSet out;
    detail::trace_operands(operands, defs, visited, out);
    return out;
}

struct ArgFeature {
    int arg = 0;
    int feature = 0;
    std::vector<BlockId> watched;  // ascending
    friend bool operator==(const ArgFeature&, const ArgFeature&) = default;
};

struct ValueFeature {
    int arg = 0;
    int feature = 0;
    friend bool operator==(const ValueFeature&, const ValueFeature&) = default;
};

struct SnapshotPoint {
    int arg = 0;
    BlockId block = 0;
    int index = 0;
    friend bool operator==(const SnapshotPoint&, const SnapshotPoint&) = default;
};

struct InstrumentationPlan {
    SiteId site = 0;
    FunctionId function = 0;
    FunctionId callee = 0;
    std::vector<ArgFeature> arg_features;
    std::vector<ValueFeature> value_features;
    std::vector<SnapshotPoint> snapshot_points;

    int width() const {
        return 1 + static_cast<int>(arg_features.size() + value_features.size());
    }

    friend bool operator==(const InstrumentationPlan&, const InstrumentationPlan&) = default;
};

/// Plans for every library call site in `f`, ordered by site id.
inline std::vector<InstrumentationPlan> plan_instrumentation(const Program& p, const FunctionDef& f) {
    struct Site {
        const CallInstr* call;
        BlockId block;
        int index;
    };
    std::vector<Site> sites;
    for (const auto& bb : f.blocks)
        for (std::size_t i = 0; i < bb.instructions.size(); ++i)
            if (const auto* call = std::get_if<CallInstr>(&bb.instructions[i])) {
                if (!p.find(call->callee))
                    fail(ErrorKind::InconsistentIds, "call site " + std::to_string(call->site) +
                                                         " calls unknown function " +
                                                         std::to_string(call->callee));
                if (p.is_library(call->callee))
                    sites.push_back({call, bb.id, static_cast<int>(i)});
            }
    std::sort(sites.begin(), sites.end(),
              [](const Site& a, const Site& b) { return a.call->site < b.call->site; });

    std::vector<InstrumentationPlan> plans;
    if (sites.empty())
        return plans;

    PostDominance pd(f);
    DefIndex defs(f);
    std::map<std::int64_t, const PhiInstr*> phis;
    for (const auto& bb : f.blocks)
        for (const auto& ins : bb.instructions)
            if (const auto* phi = std::get_if<PhiInstr>(&ins))
                phis[phi->dst.index] = phi;

    for (const auto& s : sites) {
        InstrumentationPlan plan;
        plan.site = s.call->site;
        plan.function = f.id;
        plan.callee = s.call->callee;
        int next_feature = 1;
        for (std::size_t a = 0; a < s.call->args.size(); ++a) {
            PhiSet arg_phis;
            std::set<std::int64_t> visited;
            detail::trace_operands({s.call->args[a]}, defs, visited, arg_phis);
            std::set<BlockId> watched;
            for (auto phi_id : arg_phis)
                for (const auto& [incoming, v] : phis.at(phi_id)->incomings)
                    for (BlockId r : pd.rdf(incoming))
                        for (BlockId succ : f.find_block(r)->successors)
                            watched.insert(succ);
            if (!watched.empty())
                plan.arg_features.push_back(
                    {static_cast<int>(a), next_feature++, {watched.begin(), watched.end()}});
        }
        for (std::size_t a = 0; a < s.call->args.size(); ++a) {
            plan.value_features.push_back({static_cast<int>(a), next_feature++});
            const auto& arg = s.call->args[a];
            if (arg.is_var()) {
                const auto& loc = defs.at(arg);
                plan.snapshot_points.push_back({static_cast<int>(a), loc.block, loc.index});
            } else {
                plan.snapshot_points.push_back({static_cast<int>(a), s.block, s.index});
            }
        }
        plans.push_back(std::move(plan));
    }
    return plans;
}

/// Plans for every application function of a program, keyed by site.
class PlanSet {
  public:
    PlanSet() = default;
    explicit PlanSet(std::vector<InstrumentationPlan> plans) {
        for (auto& p : plans) {
            SiteId s = p.site;
            if (!plans_.emplace(s, std::move(p)).second)
                fail(ErrorKind::InconsistentIds, "duplicate plan for site " + std::to_string(s));
        }
    }

    const InstrumentationPlan* find(SiteId s) const {
        auto it = plans_.find(s);
        return it == plans_.end() ? nullptr : &it->second;
    }
    const InstrumentationPlan& at(SiteId s) const {
        if (const auto* p = find(s))
            return *p;
        fail(ErrorKind::InconsistentIds, "no instrumentation plan for site " + std::to_string(s));
    }
    const std::map<SiteId, InstrumentationPlan>& sites() const { return plans_; }

    friend bool operator==(const PlanSet&, const PlanSet&) = default;

  private:
    std::map<SiteId, InstrumentationPlan> plans_;
};

inline PlanSet plan_program(const Program& p) {
    std::vector<InstrumentationPlan> all;
    for (const auto& [id, fn] : p.functions()) {
        if (fn.is_library)
            continue;
        auto plans = plan_instrumentation(p, fn);
        all.insert(all.end(), plans.begin(), plans.end());
    }
    return PlanSet(std::move(all));
}

/// Run-time realisation of the plans: watched blocks overwrite their slot
/// with their own block id; reading a site yields its full feature vector.
class FeatureState {
  public:
    explicit FeatureState(const PlanSet& plans) : plans_(&plans) {
        for (const auto& [site, plan] : plans.sites()) {
            slots_[site].assign(plan.width(), 0.0);
            for (const auto& af : plan.arg_features)
                for (BlockId b : af.watched)
                    watchers_[{plan.function, b}].push_back({site, af.feature});
        }
    }

    void on_block(FunctionId fn, BlockId bb) {
        auto it = watchers_.find({fn, bb});
        if (it == watchers_.end())
            return;
        for (const auto& [site, feature] : it->second)
            slots_[site][feature] = static_cast<double>(bb);
    }

    /// `values` are the argument values visible at the site's snapshot point.
    std::vector<double> features(SiteId site, const std::vector<double>& values) const {
        const auto& plan = plans_->at(site);
        std::vector<double> out = slots_.at(site);
        out[0] = static_cast<double>(site);
        for (const auto& vf : plan.value_features)
            out[vf.feature] = vf.arg < static_cast<int>(values.size()) ? values[vf.arg] : 0.0;
        return out;
    }

  private:
    const PlanSet* plans_;
    std::map<SiteId, std::vector<double>> slots_;
    std::map<std::pair<FunctionId, BlockId>, std::vector<std::pair<SiteId, int>>> watchers_;
};

inline json to_json(const PlanSet& plans) {
    json sites = json::array();
    for (const auto& [site, p] : plans.sites()) {
        json af = json::array(), vf = json::array(), snap = json::array();
        for (const auto& a : p.arg_features)
            af.push_back({{"arg", a.arg}, {"feature", a.feature}, {"watched", a.watched}});
        for (const auto& v : p.value_features)
            vf.push_back({{"arg", v.arg}, {"feature", v.feature}});
        for (const auto& s : p.snapshot_points)
            snap.push_back({{"arg", s.arg}, {"block", s.block}, {"index", s.index}});
        sites.push_back({{"site", p.site},
                         {"function", p.function},
                         {"callee", p.callee},
                         {"width", p.width()},
                         {"arg_features", af},
                         {"value_features", vf},
                         {"snapshot_points", snap}});
    }
    return {{"sites", sites}};
}

inline PlanSet plan_set_from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("sites") || !doc.at("sites").is_array())
        fail(ErrorKind::Schema, "plan: expected {\"sites\": [...]}");
    std::vector<InstrumentationPlan> plans;
    for (const auto& j : doc.at("sites")) {
        InstrumentationPlan p;
        p.site = get_field<int>(j, "site", "plan");
        const std::string ctx = "plan site " + std::to_string(p.site);
        p.function = get_field<int>(j, "function", ctx);
        p.callee = get_field<int>(j, "callee", ctx);
        for (const auto& a : get_field<json>(j, "arg_features", ctx))
            p.arg_features.push_back({get_field<int>(a, "arg", ctx), get_field<int>(a, "feature", ctx),
                                      get_field<std::vector<int>>(a, "watched", ctx)});
        for (const auto& v : get_field<json>(j, "value_features", ctx))
            p.value_features.push_back({get_field<int>(v, "arg", ctx), get_field<int>(v, "feature", ctx)});
        for (const auto& s : get_field<json>(j, "snapshot_points", ctx))
            p.snapshot_points.push_back({get_field<int>(s, "arg", ctx), get_field<int>(s, "block", ctx),
                                         get_field<int>(s, "index", ctx)});
        std::vector<int> ids;
        for (const auto& a : p.arg_features)
            ids.push_back(a.feature);
        for (const auto& v : p.value_features)
            ids.push_back(v.feature);
        std::sort(ids.begin(), ids.end());
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (ids[i] != static_cast<int>(i) + 1)
                fail(ErrorKind::Schema, ctx + ": feature ids must be dense 1..n");
        plans.push_back(std::move(p));
    }
    return PlanSet(std::move(plans));
}

}  // namespace blankit
