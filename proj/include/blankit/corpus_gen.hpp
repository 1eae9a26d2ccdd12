#pragma once

// Synthetic scenarios: a layered library with value-dependent call chains,
// application call sites built from a few templates, a clean replay oracle
// and traces at three input scales.
//
// Library functions take one integer argument x. A divergent function
// branches on x against sorted thresholds (arm = number of thresholds <= x)
// and every arm calls a private helper, so two arms never produce nested
// chains. Calls either pass x through or pass a constant, so the chain of an
// entry function is piecewise constant in x with breakpoints drawn from the
// thresholds it can reach.
//
// Site templates:
//   value    arg is a plain def of a parameter
//   rdf      arg is a phi merging two arms of a diamond
//   fnptr    arg is a phi of function addresses fed to a dispatcher
//   static   constant arg into a non-divergent entry
//   cold     value site that only runs at the large scale

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "blankit/error.hpp"
#include "blankit/io.hpp"
#include "blankit/ir.hpp"
#include "blankit/profiler.hpp"
#include "blankit/program_io.hpp"
#include "blankit/runtime_sim.hpp"
#include "blankit/trace.hpp"

namespace blankit {

inline constexpr std::int64_t kArgMin = -5000;
inline constexpr std::int64_t kArgMax = 4999;
inline constexpr std::int64_t kThresholdGrid = 250;

struct ScenarioSpec {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    int n_lib_functions = 60;   // shared library functions, private helpers come on top
    int n_cold_functions = 0;   // library functions no application site can reach
    double divergence_ratio = 0.4;
    int max_chain_depth = 5;
    int max_fanout = 3;
    double passthrough_rate = 0.7;
    int max_arms = 3;
    int typical_values = 3;         // recurring argument values per trained region
    double novel_value_rate = 0.1;  // chance a call uses a fresh value instead
    int p_functions = 1;
    int s_functions = 1;
    int n_value_sites = 4;
    int n_rdf_sites = 2;
    int n_fnptr_sites = 1;
    int n_static_sites = 1;
    int n_cold_sites = 0;
    int calls_small = 60;
    int calls_medium = 180;
    int calls_large = 600;
    double unseen_region_rate = 0.0;  // large scale only
    double cold_site_rate = 0.02;     // large scale only
    int code2_attacks = 0;
    int cve_attacks = 0;
    double audit_latency_us = 40;
    int cve_list_size = 47;
    int min_gadgets = 2;
    int max_gadgets = 40;

    friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

inline json to_json(const ScenarioSpec& s) {
    return {{"name", s.name},
            {"seed", s.seed},
            {"n_lib_functions", s.n_lib_functions},
            {"n_cold_functions", s.n_cold_functions},
            {"divergence_ratio", s.divergence_ratio},
            {"max_chain_depth", s.max_chain_depth},
            {"max_fanout", s.max_fanout},
            {"passthrough_rate", s.passthrough_rate},
            {"max_arms", s.max_arms},
            {"typical_values", s.typical_values},
            {"novel_value_rate", s.novel_value_rate},
            {"p_functions", s.p_functions},
            {"s_functions", s.s_functions},
            {"n_value_sites", s.n_value_sites},
            {"n_rdf_sites", s.n_rdf_sites},
            {"n_fnptr_sites", s.n_fnptr_sites},
            {"n_static_sites", s.n_static_sites},
            {"n_cold_sites", s.n_cold_sites},
            {"calls_small", s.calls_small},
            {"calls_medium", s.calls_medium},
            {"calls_large", s.calls_large},
            {"unseen_region_rate", s.unseen_region_rate},
            {"cold_site_rate", s.cold_site_rate},
            {"code2_attacks", s.code2_attacks},
            {"cve_attacks", s.cve_attacks},
            {"audit_latency_us", s.audit_latency_us},
            {"cve_list_size", s.cve_list_size},
            {"min_gadgets", s.min_gadgets},
            {"max_gadgets", s.max_gadgets}};
}

/// Missing fields keep their defaults; unknown fields are rejected.
inline ScenarioSpec scenario_spec_from_json(const json& j) {
    const std::string ctx = "scenario spec";
    if (!j.is_object())
        fail(ErrorKind::Schema, ctx + ": expected an object");
    ScenarioSpec s;
    const json known = to_json(s);
    for (const auto& [key, value] : j.items())
        if (!known.contains(key))
            fail(ErrorKind::Schema, ctx + ": unknown field '" + key + "'");
#define BLANKIT_FIELD(f) s.f = get_field_or<decltype(s.f)>(j, #f, s.f, ctx)
    BLANKIT_FIELD(name);
    BLANKIT_FIELD(seed);
    BLANKIT_FIELD(n_lib_functions);
    BLANKIT_FIELD(n_cold_functions);
    BLANKIT_FIELD(divergence_ratio);
    BLANKIT_FIELD(max_chain_depth);
    BLANKIT_FIELD(max_fanout);
    BLANKIT_FIELD(passthrough_rate);
    BLANKIT_FIELD(max_arms);
    BLANKIT_FIELD(typical_values);
    BLANKIT_FIELD(novel_value_rate);
    BLANKIT_FIELD(p_functions);
    BLANKIT_FIELD(s_functions);
    BLANKIT_FIELD(n_value_sites);
    BLANKIT_FIELD(n_rdf_sites);
    BLANKIT_FIELD(n_fnptr_sites);
    BLANKIT_FIELD(n_static_sites);
    BLANKIT_FIELD(n_cold_sites);
    BLANKIT_FIELD(calls_small);
    BLANKIT_FIELD(calls_medium);
    BLANKIT_FIELD(calls_large);
    BLANKIT_FIELD(unseen_region_rate);
    BLANKIT_FIELD(cold_site_rate);
    BLANKIT_FIELD(code2_attacks);
    BLANKIT_FIELD(cve_attacks);
    BLANKIT_FIELD(audit_latency_us);
    BLANKIT_FIELD(cve_list_size);
    BLANKIT_FIELD(min_gadgets);
    BLANKIT_FIELD(max_gadgets);
#undef BLANKIT_FIELD
    return s;
}

inline void check_spec(const ScenarioSpec& s) {
    auto bad = [&](const std::string& why) { fail(ErrorKind::Usage, "scenario '" + s.name + "': " + why); };
    if (s.max_chain_depth < 2)
        bad("max_chain_depth must be at least 2");
    if (s.n_lib_functions < s.max_chain_depth)
        bad("chain depth " + std::to_string(s.max_chain_depth) + " exceeds library size " +
            std::to_string(s.n_lib_functions));
    if (s.max_fanout < 1 || s.max_arms < 2)
        bad("max_fanout must be >= 1 and max_arms >= 2");
    for (double r : {s.divergence_ratio, s.passthrough_rate, s.unseen_region_rate, s.cold_site_rate,
                     s.novel_value_rate})
        if (r < 0 || r > 1)
            bad("rates must lie in [0, 1]");
    for (int n : {s.n_cold_functions, s.p_functions, s.s_functions, s.n_value_sites, s.n_rdf_sites,
                  s.n_fnptr_sites, s.n_static_sites, s.n_cold_sites, s.calls_small, s.calls_medium, s.calls_large,
                  s.code2_attacks, s.cve_attacks, s.cve_list_size, s.min_gadgets, s.typical_values})
        if (n < 0)
            bad("counts must be non-negative");
    if (s.max_gadgets < s.min_gadgets)
        bad("max_gadgets < min_gadgets");
    const int leaves = s.n_lib_functions / s.max_chain_depth;
    if (s.p_functions + s.s_functions > std::max(leaves, 1))
        bad("more permanent functions than leaf functions");
    if (s.divergence_ratio == 0 && (s.n_fnptr_sites > 0 || s.code2_attacks > 0 || s.cve_attacks > 0))
        bad("function-pointer sites and attacks need divergent functions");
    if (s.n_value_sites + s.n_rdf_sites + s.n_fnptr_sites + s.n_static_sites == 0)
        bad("scenario has no call sites");
    if (s.calls_small + s.calls_medium == 0)
        bad("no training calls");
}

/// Deterministic across platforms: only the engine output is used, never the
/// implementation-defined standard distributions.
class ScenarioRng {
  public:
    explicit ScenarioRng(std::uint64_t seed, std::uint64_t stream = 0) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
        engine_.seed(seq);
    }

    std::int64_t uniform(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
        if (range == 0)
            return static_cast<std::int64_t>(engine_());
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % range;
        std::uint64_t v;
        do
            v = engine_();
        while (v >= limit);
        return lo + static_cast<std::int64_t>(v % range);
    }

    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    bool chance(double p) { return unit() < p; }

    template <typename T>
    const T& pick(const std::vector<T>& v) {
        return v[static_cast<std::size_t>(uniform(0, static_cast<std::int64_t>(v.size()) - 1))];
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<std::size_t>(uniform(0, static_cast<std::int64_t>(i) - 1))]);
    }

  private:
    std::mt19937_64 engine_;
};

enum class SiteKind { Value, Rdf, FnPtr, Static, Cold, Code2, Cve };

inline const char* to_string(SiteKind k) {
    switch (k) {
        case SiteKind::Value: return "value";
        case SiteKind::Rdf: return "rdf";
        case SiteKind::FnPtr: return "fnptr";
        case SiteKind::Static: return "static";
        case SiteKind::Cold: return "cold";
        case SiteKind::Code2: return "code2";
        case SiteKind::Cve: return "cve";
    }
    return "value";
}

/// Library behaviour the interpreter executes.
struct LibCall {
    FunctionId callee = 0;
    bool passthrough = true;
    std::int64_t constant = 0;
};

struct LibBehavior {
    std::vector<LibCall> prefix;
    std::vector<std::int64_t> thresholds;  // sorted, one fewer than arms
    std::vector<std::vector<LibCall>> arms;
    std::vector<bool> arm_unsafe;

    std::size_t arm_of(std::int64_t x) const {
        return static_cast<std::size_t>(std::upper_bound(thresholds.begin(), thresholds.end(), x) -
                                        thresholds.begin());
    }
};

/// Argument interval [lo, hi] of an entry function with a constant outcome.
struct Region {
    std::int64_t lo = 0;
    std::int64_t hi = 0;
    Chain chain;  // distinct functions, first-entry order
    bool safe = true;
    std::vector<std::int64_t> typical;  // values callers keep passing
};

struct SiteInfo {
    SiteId site = 0;
    SiteKind kind = SiteKind::Value;
    FunctionId app_function = 0;
    FunctionId callee = 0;
    std::vector<Region> trained;   // sampled at every scale
    std::vector<Region> held_out;  // only sampled at the large scale
    std::vector<FunctionId> targets;  // fnptr: dispatch targets by phi arm
    std::int64_t constant = 0;        // static: constant argument
};

struct Scenario {
    ScenarioSpec spec;
    Program program;
    CleanReplayOracle oracle;
    std::map<std::string, std::vector<TraceEvent>> traces;  // small, medium, large
    std::vector<std::string> cve_list;
    std::vector<SiteInfo> sites;
    std::map<FunctionId, LibBehavior> behavior;
};

namespace detail {

class ScenarioBuilder {
  public:
    explicit ScenarioBuilder(const ScenarioSpec& spec) : spec_(spec), rng_(spec.seed, 0) {}

    Scenario build() {
        check_spec(spec_);
        build_library();
        build_special();
        build_cold();
        build_sites();
        Scenario out;
        out.spec = spec_;
        std::vector<FunctionDef> fns;
        for (auto& [id, fn] : fns_)
            fns.push_back(fn);
        out.program = Program(std::move(fns));
        validate(out.program);
        out.behavior = behavior_;
        out.sites = sites_;
        out.oracle = make_oracle();
        out.cve_list = make_cve_list();
        out.traces["small"] = make_trace(1, spec_.calls_small, false);
        out.traces["medium"] = make_trace(2, spec_.calls_medium, false);
        out.traces["large"] = make_trace(3, spec_.calls_large, true);
        return out;
    }

  private:
    // ---- library construction -------------------------------------------

    FunctionId new_library_function(const std::string& name, int layer) {
        FunctionId id = next_fn_++;
        FunctionDef fn;
        fn.id = id;
        fn.name = name;
        fn.is_library = true;
        fn.size_bytes = static_cast<std::uint64_t>(rng_.uniform(24, 1600));
        fn.gadget_count = static_cast<std::uint64_t>(rng_.uniform(spec_.min_gadgets, spec_.max_gadgets));
        fns_[id] = fn;
        behavior_[id];
        layer_[id] = layer;
        return id;
    }

    LibCall make_call(FunctionId callee) {
        LibCall c;
        c.callee = callee;
        c.passthrough = rng_.chance(spec_.passthrough_rate);
        if (!c.passthrough)
            c.constant = rng_.uniform(kArgMin, kArgMax);
        return c;
    }

    std::vector<std::int64_t> make_thresholds(std::size_t arms) {
        std::set<std::int64_t> ts;
        // Branches compare against round constants, so cut points from
        // different functions often coincide.
        const std::int64_t lo = kArgMin / kThresholdGrid + 1, hi = kArgMax / kThresholdGrid - 1;
        while (ts.size() + 1 < arms)
            ts.insert(rng_.uniform(lo, hi) * kThresholdGrid);
        return {ts.begin(), ts.end()};
    }

    /// Random deeper shared callees for a function at `layer`.
    std::vector<FunctionId> deeper(int layer, int count) {
        std::vector<FunctionId> pool;
        for (int l = layer + 1; l < static_cast<int>(layers_.size()); ++l)
            for (FunctionId f : layers_[l])
                if (l == layer + 1 || rng_.chance(0.3))
                    pool.push_back(f);
        std::vector<FunctionId> out;
        rng_.shuffle(pool);
        for (int i = 0; i < count && i < static_cast<int>(pool.size()); ++i)
            out.push_back(pool[i]);
        std::sort(out.begin(), out.end());
        return out;
    }

    void make_divergent(FunctionId f, std::size_t arms) {
        auto& b = behavior_[f];
        b.thresholds = make_thresholds(arms);
        b.arms.assign(arms, {});
        b.arm_unsafe.assign(arms, false);
        for (std::size_t a = 0; a < arms; ++a) {
            FunctionId helper = new_library_function(fns_[f].name + "_arm" + std::to_string(a), layer_[f] + 1);
            b.arms[a].push_back(make_call(helper));
            helpers_.insert(helper);
        }
    }

    void build_library() {
        const int depth = spec_.max_chain_depth;
        layers_.assign(depth, {});
        for (int i = 0; i < spec_.n_lib_functions; ++i) {
            layers_[i % depth].push_back(-1);
        }
        // Shared functions get ids layer by layer.
        for (int l = 0; l < depth; ++l)
            for (auto& slot : layers_[l])
                slot = new_library_function("lib_" + std::to_string(next_fn_ - first_lib_), l);

        // Permanent functions are shared leaves.
        std::vector<FunctionId> leaves = layers_.back();
        rng_.shuffle(leaves);
        int k = 0;
        for (int i = 0; i < spec_.p_functions; ++i, ++k)
            fns_[leaves[k]].instrumentable = false;
        for (int i = 0; i < spec_.s_functions; ++i, ++k) {
            fns_[leaves[k]].blankable = false;
            fns_[leaves[k]].size_bytes = static_cast<std::uint64_t>(rng_.uniform(4, 13));
        }

        for (int l = 0; l + 1 < depth; ++l) {
            for (FunctionId f : layers_[l]) {
                auto& b = behavior_[f];
                int ncalls = static_cast<int>(rng_.uniform(1, spec_.max_fanout));
                const bool divergent = l + 2 <= depth && rng_.chance(spec_.divergence_ratio);
                if (divergent) {
                    make_divergent(f, static_cast<std::size_t>(rng_.uniform(2, spec_.max_arms)));
                    for (FunctionId c : deeper(l, ncalls - 1))
                        (rng_.chance(0.5) ? b.prefix : b.arms[rng_.uniform(0, b.arms.size() - 1)])
                            .push_back(make_call(c));
                } else {
                    for (FunctionId c : deeper(l, ncalls))
                        b.prefix.push_back(make_call(c));
                }
            }
        }
        // Every shared function below layer 0 gets a caller one layer up.
        for (int l = 1; l < depth; ++l) {
            std::set<FunctionId> called;
            for (FunctionId f : layers_[l - 1]) {
                const auto& b = behavior_[f];
                for (const auto& c : b.prefix)
                    called.insert(c.callee);
                for (const auto& arm : b.arms)
                    for (const auto& c : arm)
                        called.insert(c.callee);
            }
            for (FunctionId f : layers_[l])
                if (!called.count(f))
                    behavior_[rng_.pick(layers_[l - 1])].prefix.push_back(make_call(f));
        }
    }

    // Dispatchers, the user-privilege entry and the vulnerable entry.
    void build_special() {
        for (int i = 0; i < spec_.n_fnptr_sites; ++i) {
            FunctionId d = new_library_function("lib_dispatch_" + std::to_string(i), 0);
            std::vector<FunctionId> targets;
            const int n = static_cast<int>(rng_.uniform(2, std::max(2, spec_.max_arms)));
            for (int t = 0; t < n; ++t) {
                FunctionId target = new_library_function(
                    i == 0 && t < 2 ? (t == 0 ? "foo" : "bar") : "lib_fnptr_" + std::to_string(i) + "_" + std::to_string(t),
                    1);
                for (FunctionId c : deeper(1, static_cast<int>(rng_.uniform(0, 1))))
                    behavior_[target].prefix.push_back(make_call(c));
                helpers_.insert(target);
                targets.push_back(target);
            }
            auto& b = behavior_[d];
            for (std::size_t t = 1; t < targets.size(); ++t)
                b.thresholds.push_back(targets[t]);
            for (FunctionId t : targets) {
                b.arms.push_back({LibCall{t, true, 0}});
                b.arm_unsafe.push_back(false);
            }
            dispatchers_.push_back({d, targets});
        }
        if (spec_.code2_attacks > 0) {
            code2_entry_ = new_library_function("lib_set_user", 0);
            FunctionId normal = new_library_function("call_normal_user", 1);
            FunctionId super = new_library_function("call_super_user", 1);
            auto& b = behavior_[*code2_entry_];
            b.thresholds = {0};
            b.arms = {{LibCall{normal, true, 0}}, {LibCall{super, true, 0}}};
            b.arm_unsafe = {false, false};
            helpers_.insert(normal);
            helpers_.insert(super);
        }
        if (spec_.cve_attacks > 0) {
            cve_entry_ = new_library_function("lib_realpath", 0);
            FunctionId ok = new_library_function("lib_realpath_resolve", 1);
            FunctionId copy = new_library_function("lib_realpath_copy_long", 1);
            auto& b = behavior_[*cve_entry_];
            b.thresholds = {kArgMax - 500};
            b.arms = {{LibCall{ok, true, 0}}, {LibCall{copy, true, 0}}};
            b.arm_unsafe = {false, true};
            helpers_.insert(ok);
            helpers_.insert(copy);
        }
        for (int i = 0; i < spec_.n_static_sites; ++i) {
            FunctionId e = new_library_function("lib_fixed_" + std::to_string(i), 0);
            std::vector<FunctionId> leaves = layers_.back();
            rng_.shuffle(leaves);
            const int n = static_cast<int>(rng_.uniform(1, std::min<std::int64_t>(3, leaves.size())));
            for (int k = 0; k < n; ++k)
                behavior_[e].prefix.push_back(make_call(leaves[k]));
            static_entries_.push_back(e);
        }
    }

    void build_cold() {
        std::vector<FunctionId> cold;
        for (int i = 0; i < spec_.n_cold_functions; ++i)
            cold.push_back(new_library_function("lib_cold_" + std::to_string(i), 0));
        for (std::size_t i = 0; i < cold.size(); ++i) {
            int n = static_cast<int>(rng_.uniform(0, 2));
            for (int k = 0; k < n && i + 1 < cold.size(); ++k) {
                FunctionId c = cold[static_cast<std::size_t>(rng_.uniform(i + 1, cold.size() - 1))];
                behavior_[cold[i]].prefix.push_back(make_call(c));
            }
        }
    }

    // ---- CFG emission ----------------------------------------------------

    std::vector<ValueRef> call_args(const LibCall& c) const {
        return {c.passthrough ? ValueRef::param(0) : ValueRef::int_const(c.constant)};
    }

    void emit_library_cfgs() {
        for (auto& [id, b] : behavior_) {
            auto& fn = fns_[id];
            fn.blocks.clear();
            BasicBlock entry{0, {}, {}};
            for (const auto& c : b.prefix)
                entry.instructions.push_back(CallInstr{next_site_++, c.callee, call_args(c)});
            if (b.arms.empty()) {
                fn.blocks.push_back(std::move(entry));
                continue;
            }
            entry.instructions.push_back(DefInstr{ValueRef::var(0), {ValueRef::param(0)}});
            entry.instructions.push_back(BranchInstr{ValueRef::var(0)});
            const BlockId join = static_cast<BlockId>(b.arms.size()) + 1;
            for (std::size_t a = 0; a < b.arms.size(); ++a)
                entry.successors.push_back(static_cast<BlockId>(a) + 1);
            fn.blocks.push_back(std::move(entry));
            for (std::size_t a = 0; a < b.arms.size(); ++a) {
                BasicBlock arm{static_cast<BlockId>(a) + 1, {}, {join}};
                for (const auto& c : b.arms[a])
                    arm.instructions.push_back(CallInstr{next_site_++, c.callee, call_args(c)});
                fn.blocks.push_back(std::move(arm));
            }
            fn.blocks.push_back(BasicBlock{join, {}, {}});
        }
    }

    // ---- interpreter -----------------------------------------------------

    void run(FunctionId f, std::int64_t x, std::vector<TraceEvent>* out, Chain& seq, bool& unsafe) const {
        seq.push_back(f);
        if (out)
            out->push_back(LibEnter{f});
        const auto& b = behavior_.at(f);
        auto call = [&](const LibCall& c) { run(c.callee, c.passthrough ? x : c.constant, out, seq, unsafe); };
        for (const auto& c : b.prefix)
            call(c);
        if (!b.arms.empty()) {
            const std::size_t a = b.arm_of(x);
            if (b.arm_unsafe[a])
                unsafe = true;
            for (const auto& c : b.arms[a])
                call(c);
        }
        if (out)
            out->push_back(LibExit{f});
    }

    void collect_thresholds(FunctionId f, std::set<std::int64_t>& out, std::set<FunctionId>& seen) const {
        if (!seen.insert(f).second)
            return;
        const auto& b = behavior_.at(f);
        out.insert(b.thresholds.begin(), b.thresholds.end());
        for (const auto& c : b.prefix)
            if (c.passthrough)
                collect_thresholds(c.callee, out, seen);
        for (const auto& arm : b.arms)
            for (const auto& c : arm)
                if (c.passthrough)
                    collect_thresholds(c.callee, out, seen);
    }

    std::vector<Region> regions_of(FunctionId entry) const {
        std::set<std::int64_t> cuts;
        std::set<FunctionId> seen;
        collect_thresholds(entry, cuts, seen);
        std::vector<std::int64_t> starts{kArgMin};
        for (auto t : cuts)
            if (t > kArgMin && t <= kArgMax)
                starts.push_back(t);
        std::vector<Region> out;
        for (std::size_t i = 0; i < starts.size(); ++i) {
            Region r;
            r.lo = starts[i];
            r.hi = i + 1 < starts.size() ? starts[i + 1] - 1 : kArgMax;
            Chain seq;
            bool unsafe = false;
            run(entry, r.lo, nullptr, seq, unsafe);
            r.chain = distinct_in_order(seq);
            r.safe = !unsafe;
            if (!out.empty() && out.back().chain == r.chain && out.back().safe == r.safe)
                out.back().hi = r.hi;
            else
                out.push_back(std::move(r));
        }
        return out;
    }

    // ---- application -----------------------------------------------------

    FunctionId new_app_function(const std::string& name) {
        FunctionDef fn;
        fn.id = next_app_++;
        fn.name = name;
        fn.size_bytes = static_cast<std::uint64_t>(rng_.uniform(40, 400));
        fn.gadget_count = static_cast<std::uint64_t>(rng_.uniform(1, 10));
        fns_[fn.id] = fn;
        return fn.id;
    }

    /// Entry for a value-like site: layer-0 shared functions, divergent
    /// ones first.
    FunctionId value_entry(std::size_t i) {
        if (value_entries_.empty()) {
            std::vector<FunctionId> div, nondiv;
            for (FunctionId f : layers_[0])
                (behavior_[f].arms.empty() ? nondiv : div).push_back(f);
            rng_.shuffle(div);
            rng_.shuffle(nondiv);
            value_entries_ = div;
            value_entries_.insert(value_entries_.end(), nondiv.begin(), nondiv.end());
        }
        return value_entries_[i % value_entries_.size()];
    }

    void split_regions(SiteInfo& s, bool allow_holdout) {
        auto regions = regions_of(s.callee);
        const auto& b = behavior_.at(s.callee);
        if (allow_holdout && spec_.unseen_region_rate > 0 && b.arms.size() >= 2) {
            // Hold out one whole top-level arm: its private helper never
            // shows up in training.
            const std::size_t arm = static_cast<std::size_t>(rng_.uniform(0, b.arms.size() - 1));
            for (auto& r : regions)
                (b.arm_of(r.lo) == arm ? s.held_out : s.trained).push_back(r);
        } else {
            s.trained = regions;
        }
        pick_typical(s.trained);
    }

    void build_sites() {
        // Library call sites take the low site ids.
        emit_library_cfgs();
        next_app_ = 0;

        std::size_t value_idx = 0;
        auto add_value_site = [&](SiteKind kind, const std::string& name) {
            SiteInfo s;
            s.kind = kind;
            s.callee = value_entry(value_idx++);
            s.app_function = new_app_function(name);
            s.site = next_site_++;
            split_regions(s, kind == SiteKind::Value || kind == SiteKind::Rdf);
            auto& fn = fns_[s.app_function];
            if (kind == SiteKind::Rdf) {
                fn.blocks = {
                    BasicBlock{0, {DefInstr{ValueRef::var(0), {ValueRef::param(1)}}, BranchInstr{ValueRef::var(0)}}, {1, 2}},
                    BasicBlock{1, {DefInstr{ValueRef::var(1), {ValueRef::param(0)}}}, {3}},
                    BasicBlock{2, {DefInstr{ValueRef::var(2), {ValueRef::param(0)}}}, {3}},
                    BasicBlock{3,
                               {PhiInstr{ValueRef::var(3), {{1, ValueRef::var(1)}, {2, ValueRef::var(2)}}},
                                CallInstr{s.site, s.callee, {ValueRef::var(3)}}},
                               {}}};
            } else {
                std::vector<ValueRef> args{ValueRef::var(0)};
                if (rng_.chance(0.5))
                    args.push_back(ValueRef::int_const(rng_.uniform(1, 64)));
                fn.blocks = {BasicBlock{
                    0, {DefInstr{ValueRef::var(0), {ValueRef::param(0)}}, CallInstr{s.site, s.callee, args}}, {}}};
            }
            sites_.push_back(std::move(s));
        };

        for (int i = 0; i < spec_.n_value_sites; ++i)
            add_value_site(SiteKind::Value, "app_value_" + std::to_string(i));
        for (int i = 0; i < spec_.n_rdf_sites; ++i)
            add_value_site(SiteKind::Rdf, "app_branch_" + std::to_string(i));
        for (int i = 0; i < spec_.n_cold_sites; ++i)
            add_value_site(SiteKind::Cold, "app_rare_" + std::to_string(i));

        for (const auto& [d, targets] : dispatchers_) {
            SiteInfo s;
            s.kind = SiteKind::FnPtr;
            s.callee = d;
            s.targets = targets;
            s.app_function = new_app_function("app_fnptr_" + std::to_string(d));
            s.site = next_site_++;
            for (const auto& r : regions_of(d))
                s.trained.push_back(r);
            auto& fn = fns_[s.app_function];
            const BlockId join = static_cast<BlockId>(targets.size()) + 1;
            BasicBlock entry{0, {DefInstr{ValueRef::var(0), {ValueRef::param(0)}}, BranchInstr{ValueRef::var(0)}}, {}};
            PhiInstr phi{ValueRef::var(100), {}};
            std::vector<BasicBlock> arms;
            for (std::size_t t = 0; t < targets.size(); ++t) {
                const BlockId b = static_cast<BlockId>(t) + 1;
                entry.successors.push_back(b);
                arms.push_back(BasicBlock{b, {DefInstr{ValueRef::var(b), {ValueRef::fnaddr(targets[t])}}}, {join}});
                phi.incomings.push_back({b, ValueRef::var(b)});
            }
            fn.blocks.push_back(std::move(entry));
            for (auto& a : arms)
                fn.blocks.push_back(std::move(a));
            fn.blocks.push_back(BasicBlock{join, {phi, CallInstr{s.site, d, {ValueRef::var(100)}}}, {}});
            sites_.push_back(std::move(s));
        }

        for (std::size_t i = 0; i < static_entries_.size(); ++i) {
            SiteInfo s;
            s.kind = SiteKind::Static;
            s.callee = static_entries_[i];
            s.app_function = new_app_function("app_fixed_" + std::to_string(i));
            s.site = next_site_++;
            s.constant = rng_.uniform(kArgMin, kArgMax);
            s.trained = regions_of(s.callee);
            fns_[s.app_function].blocks = {
                BasicBlock{0, {CallInstr{s.site, s.callee, {ValueRef::int_const(s.constant)}}}, {}}};
            sites_.push_back(std::move(s));
        }

        auto add_attack_site = [&](SiteKind kind, FunctionId entry, const std::string& name) {
            SiteInfo s;
            s.kind = kind;
            s.callee = entry;
            s.app_function = new_app_function(name);
            s.site = next_site_++;
            auto regions = regions_of(entry);
            // Training only ever sees the first arm.
            for (auto& r : regions)
                (behavior_.at(entry).arm_of(r.lo) == 0 ? s.trained : s.held_out).push_back(r);
            pick_typical(s.trained);
            fns_[s.app_function].blocks = {BasicBlock{
                0,
                {DefInstr{ValueRef::var(0), {ValueRef::param(0)}}, CallInstr{s.site, entry, {ValueRef::var(0)}}},
                {}}};
            sites_.push_back(std::move(s));
        };
        if (code2_entry_)
            add_attack_site(SiteKind::Code2, *code2_entry_, "app_login");
        if (cve_entry_)
            add_attack_site(SiteKind::Cve, *cve_entry_, "app_resolve_path");

        if (next_app_ > first_lib_)
            fail(ErrorKind::Internal, "application id range overflow");
    }

    // ---- outputs ---------------------------------------------------------

    CleanReplayOracle make_oracle() const {
        std::map<FunctionId, std::vector<OracleRegion>> entries;
        for (const auto& s : sites_) {
            if (entries.count(s.callee))
                continue;
            auto& out = entries[s.callee];
            for (const auto& r : regions_of(s.callee))
                out.push_back({0, static_cast<double>(r.lo), static_cast<double>(r.hi), r.chain, r.safe});
        }
        return CleanReplayOracle(std::move(entries), spec_.audit_latency_us);
    }

    std::vector<std::string> make_cve_list() {
        std::vector<std::string> names;
        for (const auto& [id, fn] : fns_)
            if (fn.is_library && !helpers_.count(id))
                names.push_back(fn.name);
        ScenarioRng rng(spec_.seed, 99);
        rng.shuffle(names);
        std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(spec_.cve_list_size), names.size());
        names.resize(n);
        if (cve_entry_ && std::find(names.begin(), names.end(), "lib_realpath") == names.end()) {
            if (!names.empty())
                names.back() = "lib_realpath";
            else
                names.push_back("lib_realpath");
        }
        std::sort(names.begin(), names.end());
        return names;
    }

    std::int64_t sample_in(ScenarioRng& rng, const std::vector<Region>& regions) const {
        const auto& r = rng.pick(regions);
        if (!r.typical.empty() && !rng.chance(spec_.novel_value_rate))
            return rng.pick(r.typical);
        return rng.uniform(r.lo, r.hi);
    }

    void pick_typical(std::vector<Region>& regions) {
        for (auto& r : regions)
            for (int i = 0; i < spec_.typical_values; ++i)
                r.typical.push_back(rng_.uniform(r.lo, r.hi));
    }

    void emit_call(std::vector<TraceEvent>& out, ScenarioRng& rng, const SiteInfo& s, bool large,
                   std::optional<std::int64_t> tampered = std::nullopt, bool attack_region = false) const {
        const FunctionId app = s.app_function;
        std::int64_t x = 0;
        std::vector<double> args;
        switch (s.kind) {
            case SiteKind::Static:
                out.push_back(BlockExec{app, 0});
                x = s.constant;
                args = {static_cast<double>(x)};
                break;
            case SiteKind::FnPtr: {
                const std::size_t t = static_cast<std::size_t>(rng.uniform(0, s.targets.size() - 1));
                out.push_back(BlockExec{app, 0});
                out.push_back(BlockExec{app, static_cast<BlockId>(t) + 1});
                out.push_back(BlockExec{app, static_cast<BlockId>(s.targets.size()) + 1});
                x = s.targets[t];
                args = {static_cast<double>(x)};
                break;
            }
            case SiteKind::Rdf: {
                const bool unseen = large && !s.held_out.empty() && rng.chance(spec_.unseen_region_rate);
                const std::int64_t arm = rng.uniform(0, 1);
                if (unseen) {
                    x = sample_in(rng, s.held_out);
                } else {
                    // Each arm of the diamond draws from its own half of the
                    // trained regions, so the branch taken is informative.
                    std::vector<Region> half;
                    for (std::size_t i = 0; i < s.trained.size(); ++i)
                        if (static_cast<std::int64_t>(i % 2) == arm || s.trained.size() == 1)
                            half.push_back(s.trained[i]);
                    x = sample_in(rng, half);
                }
                out.push_back(BlockExec{app, 0});
                out.push_back(BlockExec{app, static_cast<BlockId>(arm) + 1});
                out.push_back(BlockExec{app, 3});
                args = {static_cast<double>(x)};
                break;
            }
            default: {
                const bool unseen = large && !s.held_out.empty() &&
                                    (attack_region || (s.kind != SiteKind::Code2 && s.kind != SiteKind::Cve &&
                                                       rng.chance(spec_.unseen_region_rate)));
                x = unseen ? sample_in(rng, s.held_out) : sample_in(rng, s.trained);
                out.push_back(BlockExec{app, 0});
                args = {static_cast<double>(x)};
                const auto& call = std::get<CallInstr>(fns_.at(app).blocks[0].instructions[1]);
                for (std::size_t i = 1; i < call.args.size(); ++i)
                    args.push_back(*call.args[i].static_value());
                break;
            }
        }
        SiteReached site{s.site, args, std::nullopt};
        std::int64_t executed = x;
        if (tampered) {
            site.snapshot = args;
            site.args[0] = static_cast<double>(*tampered);
            executed = *tampered;
        }
        out.push_back(site);
        Chain seq;
        bool unsafe = false;
        run(s.callee, executed, &out, seq, unsafe);
    }

    std::vector<TraceEvent> make_trace(std::uint64_t stream, int calls, bool large) const {
        ScenarioRng rng(spec_.seed, stream);
        std::vector<const SiteInfo*> regular, cold;
        const SiteInfo *code2 = nullptr, *cve = nullptr;
        for (const auto& s : sites_) {
            if (s.kind == SiteKind::Cold)
                cold.push_back(&s);
            else
                regular.push_back(&s);
            if (s.kind == SiteKind::Code2)
                code2 = &s;
            if (s.kind == SiteKind::Cve)
                cve = &s;
        }
        std::vector<TraceEvent> out;
        // Attack calls land at random positions of the large trace.
        std::vector<std::pair<int, SiteKind>> attacks;
        if (large) {
            for (int i = 0; i < spec_.code2_attacks; ++i)
                attacks.push_back({static_cast<int>(rng.uniform(0, std::max(0, calls - 1))), SiteKind::Code2});
            for (int i = 0; i < spec_.cve_attacks; ++i)
                attacks.push_back({static_cast<int>(rng.uniform(0, std::max(0, calls - 1))), SiteKind::Cve});
            std::stable_sort(attacks.begin(), attacks.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
        }
        auto attack_at = attacks.begin();
        for (int i = 0; i < calls; ++i) {
            while (attack_at != attacks.end() && attack_at->first <= i) {
                if (attack_at->second == SiteKind::Code2 && code2) {
                    // The snapshot keeps the benign value; the library runs
                    // on the tampered one.
                    emit_call(out, rng, *code2, true, sample_in(rng, code2->held_out));
                } else if (attack_at->second == SiteKind::Cve && cve) {
                    emit_call(out, rng, *cve, true, std::nullopt, true);
                }
                ++attack_at;
            }
            if (large && !cold.empty() && rng.chance(spec_.cold_site_rate))
                emit_call(out, rng, *rng.pick(cold), large);
            else
                emit_call(out, rng, *rng.pick(regular), large);
        }
        return out;
    }

  public:
    // Reserve application ids below library ids.
    void reserve(int app_functions) {
        first_lib_ = app_functions;
        next_fn_ = first_lib_;
    }

  private:
    ScenarioSpec spec_;
    ScenarioRng rng_;
    std::map<FunctionId, FunctionDef> fns_;
    std::map<FunctionId, LibBehavior> behavior_;
    std::map<FunctionId, int> layer_;
    std::vector<std::vector<FunctionId>> layers_;
    std::set<FunctionId> helpers_;
    std::vector<std::pair<FunctionId, std::vector<FunctionId>>> dispatchers_;
    std::vector<FunctionId> static_entries_;
    std::vector<FunctionId> value_entries_;
    std::optional<FunctionId> code2_entry_, cve_entry_;
    std::vector<SiteInfo> sites_;
    FunctionId first_lib_ = 0;
    FunctionId next_fn_ = 0;
    FunctionId next_app_ = 0;
    SiteId next_site_ = 1;
};

}  // namespace detail

/// Same spec, same scenario, bit for bit.
inline Scenario generate(const ScenarioSpec& spec) {
    detail::ScenarioBuilder b(spec);
    b.reserve(spec.n_value_sites + spec.n_rdf_sites + spec.n_fnptr_sites + spec.n_static_sites + spec.n_cold_sites +
              (spec.code2_attacks > 0) + (spec.cve_attacks > 0));
    return b.build();
}

inline void write_scenario(const Scenario& s, const std::filesystem::path& dir) {
    save_program(dir / "program.json", s.program);
    write_json_file(dir / "oracle.json", to_json(s.oracle));
    write_json_file(dir / "cve.json", json(s.cve_list));
    write_json_file(dir / "spec.json", to_json(s.spec));
    for (const auto& [scale, trace] : s.traces)
        save_trace(dir / ("trace." + scale + ".jsonl"), trace);
}

/// The seventeen-scenario accuracy suite. Scenarios differ in library shape,
/// site mix, amount of training data and how often the large input strays
/// into argument regions training never saw.
inline std::vector<ScenarioSpec> standard_suite() {
    std::vector<ScenarioSpec> out;
    for (int i = 1; i <= 17; ++i) {
        ScenarioSpec s;
        s.name = (i < 10 ? "suite-0" : "suite-") + std::to_string(i);
        s.seed = 1000 + static_cast<std::uint64_t>(i);
        s.n_lib_functions = 30 + 7 * (i % 6);
        s.max_chain_depth = 3 + i % 5;
        s.divergence_ratio = 0.25 + 0.05 * (i % 5);
        s.n_value_sites = 2 + i % 4;
        s.n_rdf_sites = 1 + i % 3;
        s.n_fnptr_sites = i % 3 == 0 ? 2 : 1;
        s.n_static_sites = 1 + i % 2;
        s.n_cold_sites = i % 4 == 0 ? 1 : 0;
        s.calls_small = 40 + 10 * (i % 4);
        s.calls_medium = 120 + 30 * (i % 5);
        s.calls_large = 600;
        s.passthrough_rate = 0.4;
        s.unseen_region_rate = (i % 5 == 2) ? 0.08 : (i % 3 == 1 ? 0.03 : 0.0);
        s.cold_site_rate = 0.02;
        s.audit_latency_us = 5 + 17 * (i % 7);
        out.push_back(s);
    }
    return out;
}

/// Large inputs often fall in argument regions training never exercised.
inline ScenarioSpec unseen_region_scenario() {
    ScenarioSpec s;
    s.name = "unseen-region";
    s.seed = 4620;
    s.n_lib_functions = 40;
    s.max_chain_depth = 4;
    s.divergence_ratio = 0.5;
    s.n_value_sites = 3;
    s.n_rdf_sites = 0;
    s.n_fnptr_sites = 0;
    s.n_static_sites = 0;
    s.calls_small = 80;
    s.calls_medium = 200;
    s.calls_large = 600;
    s.unseen_region_rate = 0.4;
    return s;
}

/// Library shaped like the measured one: about 170 functions reachable from
/// the application inside a library of roughly 2,400, call chains at most seven
/// deep and five permanently loaded functions.
inline ScenarioSpec large_library_scenario() {
    ScenarioSpec s;
    s.name = "large-library";
    s.seed = 2019;
    s.n_lib_functions = 120;
    s.n_cold_functions = 2200;
    s.max_chain_depth = 7;
    s.divergence_ratio = 0.3;
    s.max_fanout = 3;
    s.passthrough_rate = 0.5;
    s.p_functions = 2;
    s.s_functions = 3;
    s.n_value_sites = 8;
    s.n_rdf_sites = 3;
    s.n_fnptr_sites = 2;
    s.n_static_sites = 2;
    s.calls_small = 150;
    s.calls_medium = 400;
    s.calls_large = 1000;
    return s;
}

/// Tampered arguments, an overflowing argument and benign unseen inputs.
inline ScenarioSpec attack_scenario() {
    ScenarioSpec s;
    s.name = "attacks";
    s.seed = 11236;
    s.n_lib_functions = 30;
    s.max_chain_depth = 4;
    s.n_value_sites = 2;
    s.n_rdf_sites = 1;
    s.n_fnptr_sites = 1;
    s.n_static_sites = 1;
    s.unseen_region_rate = 0.1;
    s.code2_attacks = 3;
    s.cve_attacks = 3;
    return s;
}

}  // namespace blankit
