#pragma once

// Deterministic replay of the blanking runtime over a trace.
//
// Library functions are either loaded or blanked. p- and s-functions are
// permanent and never appear in the loaded set; they are added back when
// exposure is reported. At every application call site the predictor picks
// a chain, the previous chain is blanked and the new one copied in. Entering
// a blanked function is an underprediction: it is audited against the clean
// replay oracle on the snapshot arguments, then copied in so execution can
// continue.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "blankit/decision_tree.hpp"
#include "blankit/divergence.hpp"
#include "blankit/dominance.hpp"
#include "blankit/instrumentation.hpp"
#include "blankit/io.hpp"
#include "blankit/profiler.hpp"
#include "blankit/trace.hpp"

namespace blankit {

enum class SimMode { Set, FullChain };

struct SimPolicy {
    SimMode mode = SimMode::Set;
    bool lazy_blanking = true;
    // Unseen sites: load the entry's reachable functions that training saw,
    // or load nothing at all.
    bool conservative_unknown_sites = true;
};

inline const char* to_string(SimMode m) { return m == SimMode::Set ? "set" : "fullchain"; }

inline SimMode sim_mode_from_string(const std::string& s) {
    if (s == "set")
        return SimMode::Set;
    if (s == "fullchain")
        return SimMode::FullChain;
    fail(ErrorKind::Usage, "unknown mode '" + s + "' (expected set or fullchain)");
}

// ---------------------------------------------------------------------------
// Clean replay oracle

enum class Verdict { Legal, Attack, Unknown };

inline const char* to_string(Verdict v) {
    switch (v) {
        case Verdict::Legal: return "Legal";
        case Verdict::Attack: return "Attack";
        case Verdict::Unknown: return "Unknown";
    }
    return "Unknown";
}

inline Verdict verdict_from_string(const std::string& s, const std::string& ctx) {
    if (s == "Legal")
        return Verdict::Legal;
    if (s == "Attack")
        return Verdict::Attack;
    if (s == "Unknown")
        return Verdict::Unknown;
    fail(ErrorKind::Schema, ctx + ": unknown verdict '" + s + "'");
}

/// Ground truth for one argument interval of an entry function: the chain a
/// clean execution produces and whether it is memory safe.
struct OracleRegion {
    int arg = 0;
    double lo = 0;
    double hi = 0;
    Chain chain;
    bool safe = true;
    friend bool operator==(const OracleRegion&, const OracleRegion&) = default;
};

class CleanReplayOracle {
  public:
    CleanReplayOracle() = default;
    CleanReplayOracle(std::map<FunctionId, std::vector<OracleRegion>> entries, double latency_us)
        : entries_(std::move(entries)), latency_us_(latency_us) {}

    /// First region of `fn` whose interval contains the argument, if any.
    const OracleRegion* lookup(FunctionId fn, const std::vector<double>& args) const {
        auto it = entries_.find(fn);
        if (it == entries_.end())
            return nullptr;
        for (const auto& r : it->second) {
            double v = r.arg < static_cast<int>(args.size()) ? args[r.arg] : 0.0;
            if (r.lo <= v && v <= r.hi)
                return &r;
        }
        return nullptr;
    }

    double latency_us() const { return latency_us_; }
    const std::map<FunctionId, std::vector<OracleRegion>>& entries() const { return entries_; }

  private:
    std::map<FunctionId, std::vector<OracleRegion>> entries_;
    double latency_us_ = 0;
};

inline json to_json(const CleanReplayOracle& o) {
    json entries = json::array();
    for (const auto& [fn, regions] : o.entries()) {
        json rs = json::array();
        for (const auto& r : regions)
            rs.push_back({{"arg", r.arg}, {"lo", detail::number_json(r.lo)}, {"hi", detail::number_json(r.hi)},
                          {"chain", r.chain}, {"safe", r.safe}});
        entries.push_back({{"fn", fn}, {"regions", rs}});
    }
    return {{"audit_latency_us", detail::number_json(o.latency_us())}, {"entries", entries}};
}

inline CleanReplayOracle oracle_from_json(const json& j) {
    const std::string ctx = "oracle";
    std::map<FunctionId, std::vector<OracleRegion>> entries;
    for (const auto& e : get_field<json>(j, "entries", ctx)) {
        FunctionId fn = get_field<int>(e, "fn", ctx);
        const std::string ectx = ctx + " fn " + std::to_string(fn);
        auto& regions = entries[fn];
        for (const auto& r : get_field<json>(e, "regions", ectx)) {
            OracleRegion reg{get_field_or<int>(r, "arg", 0, ectx), get_field<double>(r, "lo", ectx),
                             get_field<double>(r, "hi", ectx), get_field<Chain>(r, "chain", ectx),
                             get_field_or<bool>(r, "safe", true, ectx)};
            if (reg.lo > reg.hi)
                fail(ErrorKind::Schema, ectx + ": region with lo > hi");
            regions.push_back(std::move(reg));
        }
    }
    return CleanReplayOracle(std::move(entries), get_field_or<double>(j, "audit_latency_us", 0.0, ctx));
}

struct AuditResult {
    Verdict verdict = Verdict::Unknown;
    double latency_us = 0;
};

/// Replays the call to `entry_fn` on the snapshot arguments. The observed
/// chain is legal when the clean run is memory safe and produces every
/// function observed so far. A clean chain that disagrees with the observed
/// one means the arguments the library acted on differ from the snapshot,
/// which covers the case where the clean chain equals the prediction.
inline AuditResult audit(const CleanReplayOracle& oracle, FunctionId entry_fn,
                         const std::vector<double>& snapshot_args, const std::set<FunctionId>& observed) {
    AuditResult r;
    r.latency_us = oracle.latency_us();
    const auto* region = oracle.lookup(entry_fn, snapshot_args);
    if (!region) {
        r.verdict = Verdict::Unknown;
        return r;
    }
    if (!region->safe) {
        r.verdict = Verdict::Attack;
        return r;
    }
    std::set<FunctionId> clean(region->chain.begin(), region->chain.end());
    r.verdict = std::includes(clean.begin(), clean.end(), observed.begin(), observed.end()) ? Verdict::Legal
                                                                                          : Verdict::Attack;
    return r;
}

// ---------------------------------------------------------------------------
// Events

enum class PredictionSource { Tree, Static, Conservative };

inline const char* to_string(PredictionSource s) {
    switch (s) {
        case PredictionSource::Tree: return "tree";
        case PredictionSource::Static: return "static";
        case PredictionSource::Conservative: return "conservative";
    }
    return "tree";
}

enum class MispredictKind { Under, Over };

namespace sim {

struct Probe {
    SiteId site = 0;
    ChainLabel label = 0;
    PredictionSource source = PredictionSource::Tree;
    Chain chain;  // predicted chain (a sequence in full-chain mode)
    friend bool operator==(const Probe&, const Probe&) = default;
};
struct Copy {
    FunctionId fn = 0;
    friend bool operator==(const Copy&, const Copy&) = default;
};
struct Blank {
    std::set<FunctionId> fns;
    friend bool operator==(const Blank&, const Blank&) = default;
};
struct Hit {
    FunctionId fn = 0;
    friend bool operator==(const Hit&, const Hit&) = default;
};
struct Mispredict {
    FunctionId fn = 0;
    SiteId site = 0;
    MispredictKind kind = MispredictKind::Under;
    friend bool operator==(const Mispredict&, const Mispredict&) = default;
};
struct Audit {
    FunctionId fn = 0;
    SiteId site = 0;
    Verdict verdict = Verdict::Unknown;
    double latency_us = 0;
    friend bool operator==(const Audit&, const Audit&) = default;
};
struct Fault {
    FunctionId fn = 0;
    friend bool operator==(const Fault&, const Fault&) = default;
};

}  // namespace sim

using SimEvent = std::variant<sim::Probe, sim::Copy, sim::Blank, sim::Hit, sim::Mispredict, sim::Audit, sim::Fault>;

inline json to_json(const SimEvent& ev) {
    return std::visit(
        [](const auto& e) -> json {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, sim::Probe>)
                return {{"ev", "probe"}, {"site", e.site}, {"label", e.label},
                        {"source", to_string(e.source)}, {"chain", e.chain}};
            else if constexpr (std::is_same_v<T, sim::Copy>)
                return {{"ev", "copy"}, {"fn", e.fn}};
            else if constexpr (std::is_same_v<T, sim::Blank>)
                return {{"ev", "blank"}, {"fns", e.fns}};
            else if constexpr (std::is_same_v<T, sim::Hit>)
                return {{"ev", "hit"}, {"fn", e.fn}};
            else if constexpr (std::is_same_v<T, sim::Mispredict>)
                return {{"ev", "mispredict"}, {"fn", e.fn}, {"site", e.site},
                        {"kind", e.kind == MispredictKind::Under ? "under" : "over"}};
            else if constexpr (std::is_same_v<T, sim::Audit>)
                return {{"ev", "audit"}, {"fn", e.fn}, {"site", e.site}, {"verdict", to_string(e.verdict)},
                        {"latency_us", detail::number_json(e.latency_us)}};
            else
                return {{"ev", "fault"}, {"fn", e.fn}};
        },
        ev);
}

inline SimEvent sim_event_from_json(const json& j, const std::string& ctx) {
    auto ev = get_field<std::string>(j, "ev", ctx);
    if (ev == "probe") {
        auto src = get_field<std::string>(j, "source", ctx);
        PredictionSource s = src == "tree"           ? PredictionSource::Tree
                             : src == "static"       ? PredictionSource::Static
                             : src == "conservative" ? PredictionSource::Conservative
                                                     : (fail(ErrorKind::Schema, ctx + ": unknown source"),
                                                        PredictionSource::Tree);
        return sim::Probe{get_field<int>(j, "site", ctx), get_field<int>(j, "label", ctx), s,
                          get_field<Chain>(j, "chain", ctx)};
    }
    if (ev == "copy")
        return sim::Copy{get_field<int>(j, "fn", ctx)};
    if (ev == "blank")
        return sim::Blank{get_field<std::set<FunctionId>>(j, "fns", ctx)};
    if (ev == "hit")
        return sim::Hit{get_field<int>(j, "fn", ctx)};
    if (ev == "mispredict") {
        auto kind = get_field<std::string>(j, "kind", ctx);
        if (kind != "under" && kind != "over")
            fail(ErrorKind::Schema, ctx + ": unknown mispredict kind '" + kind + "'");
        return sim::Mispredict{get_field<int>(j, "fn", ctx), get_field<int>(j, "site", ctx),
                               kind == "under" ? MispredictKind::Under : MispredictKind::Over};
    }
    if (ev == "audit")
        return sim::Audit{get_field<int>(j, "fn", ctx), get_field<int>(j, "site", ctx),
                          verdict_from_string(get_field<std::string>(j, "verdict", ctx), ctx),
                          get_field<double>(j, "latency_us", ctx)};
    if (ev == "fault")
        return sim::Fault{get_field<int>(j, "fn", ctx)};
    fail(ErrorKind::Schema, ctx + ": unknown event kind '" + ev + "'");
}

inline std::string events_to_jsonl(const std::vector<SimEvent>& events) {
    std::string out;
    for (const auto& e : events)
        out += to_json(e).dump() + "\n";
    return out;
}

inline std::vector<SimEvent> events_from_jsonl(const std::string& text, const std::string& origin = "events") {
    std::vector<SimEvent> out;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos)
            continue;
        const std::string ctx = origin + ":" + std::to_string(line_no);
        out.push_back(sim_event_from_json(parse_json(line, ctx), ctx));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loader state and report

struct LoaderState {
    std::set<FunctionId> loaded;     // blankable library functions currently present
    std::set<FunctionId> permanent;  // p and s functions
    std::optional<ChainLabel> last_predicted_label;
    std::optional<std::set<FunctionId>> last_predicted_set;
    std::optional<SiteId> current_site;
    SimMode mode = SimMode::Set;
    bool lazy_blanking = true;

    bool present(FunctionId f) const { return loaded.count(f) || permanent.count(f); }
};

enum class JumpOutcome { Fault, Hit };

/// Control transferred to `target` by an attacker: blanked code faults.
inline JumpOutcome inject_attack_jump(const LoaderState& state, FunctionId target) {
    return state.present(target) ? JumpOutcome::Hit : JumpOutcome::Fault;
}

struct SiteStats {
    std::size_t calls = 0;
    std::size_t hits = 0;
    std::size_t underpredictions = 0;  // calls with at least one underpredicted function
    std::size_t overpredictions = 0;   // calls with only overpredicted functions

    std::size_t mispredicted() const { return underpredictions + overpredictions; }
    double accuracy() const {
        return calls == 0 ? 100.0 : 100.0 * static_cast<double>(calls - mispredicted()) / static_cast<double>(calls);
    }
    void add(const SiteStats& o) {
        calls += o.calls;
        hits += o.hits;
        underpredictions += o.underpredictions;
        overpredictions += o.overpredictions;
    }
    friend bool operator==(const SiteStats&, const SiteStats&) = default;
};

struct SimulationReport {
    SimPolicy policy;
    std::map<SiteId, SiteStats> per_site;
    SiteStats total;
    std::size_t p_count = 0;
    std::size_t s_count = 0;
    std::size_t c_max = 0;
    std::size_t max_exposed_functions = 0;
    std::uint64_t max_exposed_gadgets = 0;
    std::set<FunctionId> worst_gadget_set;
    std::set<FunctionId> entered;
    std::size_t faults = 0;
    std::size_t jump_hits = 0;
    std::size_t attacks_detected = 0;
    std::size_t legal_audits = 0;
    std::size_t unknown_audits = 0;
    std::vector<double> audit_latencies;
    std::size_t static_predictions = 0;
    std::size_t conservative_predictions = 0;
};

inline json to_json(const SiteStats& s) {
    return {{"calls", s.calls},
            {"hits", s.hits},
            {"underpredictions", s.underpredictions},
            {"overpredictions", s.overpredictions},
            {"mispredicted", s.mispredicted()},
            {"accuracy", s.accuracy()}};
}

inline SiteStats site_stats_from_json(const json& j, const std::string& ctx) {
    return {get_field<std::size_t>(j, "calls", ctx), get_field<std::size_t>(j, "hits", ctx),
            get_field<std::size_t>(j, "underpredictions", ctx), get_field<std::size_t>(j, "overpredictions", ctx)};
}

inline json to_json(const SimulationReport& r) {
    json sites = json::array();
    for (const auto& [site, s] : r.per_site) {
        json j = to_json(s);
        j["site"] = site;
        sites.push_back(j);
    }
    json lat = json::array();
    for (double v : r.audit_latencies)
        lat.push_back(detail::number_json(v));
    return {{"mode", to_string(r.policy.mode)},
            {"lazy_blanking", r.policy.lazy_blanking},
            {"unknown_sites", r.policy.conservative_unknown_sites ? "conservative" : "empty"},
            {"total", to_json(r.total)},
            {"per_site", sites},
            {"p_count", r.p_count},
            {"s_count", r.s_count},
            {"c_max", r.c_max},
            {"max_exposed_functions", r.max_exposed_functions},
            {"max_exposed_gadgets", r.max_exposed_gadgets},
            {"worst_gadget_set", r.worst_gadget_set},
            {"entered_functions", r.entered},
            {"faults", r.faults},
            {"jump_hits", r.jump_hits},
            {"attacks_detected", r.attacks_detected},
            {"legal_audits", r.legal_audits},
            {"unknown_audits", r.unknown_audits},
            {"audit_latencies_us", lat},
            {"static_predictions", r.static_predictions},
            {"conservative_predictions", r.conservative_predictions}};
}

inline SimulationReport simulation_report_from_json(const json& j) {
    const std::string ctx = "simulation report";
    SimulationReport r;
    r.policy.mode = sim_mode_from_string(get_field<std::string>(j, "mode", ctx));
    r.policy.lazy_blanking = get_field<bool>(j, "lazy_blanking", ctx);
    r.policy.conservative_unknown_sites = get_field<std::string>(j, "unknown_sites", ctx) != "empty";
    r.total = site_stats_from_json(get_field<json>(j, "total", ctx), ctx);
    for (const auto& s : get_field<json>(j, "per_site", ctx))
        r.per_site[get_field<int>(s, "site", ctx)] = site_stats_from_json(s, ctx);
    r.p_count = get_field<std::size_t>(j, "p_count", ctx);
    r.s_count = get_field<std::size_t>(j, "s_count", ctx);
    r.c_max = get_field<std::size_t>(j, "c_max", ctx);
    r.max_exposed_functions = get_field<std::size_t>(j, "max_exposed_functions", ctx);
    r.max_exposed_gadgets = get_field<std::uint64_t>(j, "max_exposed_gadgets", ctx);
    r.worst_gadget_set = get_field<std::set<FunctionId>>(j, "worst_gadget_set", ctx);
    r.entered = get_field<std::set<FunctionId>>(j, "entered_functions", ctx);
    r.faults = get_field<std::size_t>(j, "faults", ctx);
    r.jump_hits = get_field<std::size_t>(j, "jump_hits", ctx);
    r.attacks_detected = get_field<std::size_t>(j, "attacks_detected", ctx);
    r.legal_audits = get_field<std::size_t>(j, "legal_audits", ctx);
    r.unknown_audits = get_field<std::size_t>(j, "unknown_audits", ctx);
    r.audit_latencies = get_field<std::vector<double>>(j, "audit_latencies_us", ctx);
    r.static_predictions = get_field<std::size_t>(j, "static_predictions", ctx);
    r.conservative_predictions = get_field<std::size_t>(j, "conservative_predictions", ctx);
    return r;
}

/// p: library functions the instrumenter cannot handle; s: instrumentable
/// but too small to blank.
inline std::pair<std::size_t, std::size_t> permanent_counts(const Program& p) {
    std::size_t pc = 0, sc = 0;
    for (FunctionId f : p.library_ids()) {
        const auto& fn = p.function(f);
        if (!fn.instrumentable)
            ++pc;
        else if (!fn.blankable)
            ++sc;
    }
    return {pc, sc};
}

// ---------------------------------------------------------------------------
// Simulator

class Simulator {
  public:
    /// `model` must be trained in the label space matching `policy.mode`
    /// (sets for SetMode, sequences for FullChainMode). `oracle` may be null,
    /// in which case every audit is Unknown.
    Simulator(const Program& program, const PlanSet& plans, const DecisionTreeModel& model,
              const ChainTables& chains, const CleanReplayOracle* oracle, SimPolicy policy,
              std::vector<SimEvent>* log = nullptr)
        : program_(&program),
          plans_(&plans),
          predictor_(model, chains.trained_sites),
          chains_(&chains),
          seen_(chains.seen_functions()),
          oracle_(oracle),
          log_(log),
          features_(plans),
          divergence_(classify_divergence(program)) {
        policy_ = policy;
        state_.permanent = program.permanent_library_functions();
        state_.mode = policy.mode;
        state_.lazy_blanking = policy.lazy_blanking;
        report_.policy = policy;
        std::tie(report_.p_count, report_.s_count) = permanent_counts(program);
        for (const auto& leaf : model.nodes)
            if (leaf.leaf && !label_space().contains(leaf.label))
                fail(ErrorKind::InconsistentIds, "model leaf label " + std::to_string(leaf.label) +
                                                     " is not in the chain table");
        track_exposure();
    }

    void feed(const TraceEvent& ev) {
        std::visit([this](const auto& e) { on(e); }, ev);
        ++index_;
    }

    void finish() {
        if (!stack_.empty())
            fail(ErrorKind::Analysis, "trace ended inside library call to " + std::to_string(stack_.front()));
    }

    const LoaderState& state() const { return state_; }
    const SimulationReport& report() const { return report_; }

    /// Attacker jump at the current point of the replay. Faults are logged;
    /// landing in loaded code is only counted.
    JumpOutcome jump(FunctionId target) {
        auto out = inject_attack_jump(state_, target);
        if (out == JumpOutcome::Fault) {
            emit(sim::Fault{target});
            ++report_.faults;
        } else {
            ++report_.jump_hits;
        }
        return out;
    }

  private:
    const ChainTable& label_space() const {
        return state_.mode == SimMode::Set ? chains_->sets : chains_->sequences;
    }

    void emit(SimEvent e) {
        if (log_)
            log_->push_back(std::move(e));
    }

    void copy(FunctionId f) {
        if (state_.permanent.count(f) || state_.loaded.count(f))
            return;
        state_.loaded.insert(f);
        emit(sim::Copy{f});
        track_exposure();
    }

    void blank(std::set<FunctionId> fns) {
        std::set<FunctionId> actual;
        for (FunctionId f : fns)
            if (state_.loaded.erase(f))
                actual.insert(f);
        if (!actual.empty())
            emit(sim::Blank{std::move(actual)});
    }

    void track_exposure() {
        const std::size_t exposed = state_.loaded.size() + state_.permanent.size();
        report_.c_max = std::max(report_.c_max, state_.loaded.size());
        report_.max_exposed_functions = std::max(report_.max_exposed_functions, exposed);
        std::uint64_t gadgets = 0;
        for (FunctionId f : state_.loaded)
            gadgets += program_->function(f).gadget_count;
        for (FunctionId f : state_.permanent)
            gadgets += program_->function(f).gadget_count;
        if (!exposure_tracked_ || gadgets > report_.max_exposed_gadgets) {
            exposure_tracked_ = true;
            report_.max_exposed_gadgets = gadgets;
            report_.worst_gadget_set = state_.loaded;
            report_.worst_gadget_set.insert(state_.permanent.begin(), state_.permanent.end());
        }
    }

    const std::set<FunctionId>& closure(FunctionId f) {
        auto it = closures_.find(f);
        if (it == closures_.end())
            it = closures_.emplace(f, reachable_library_functions(*program_, {f}).functions).first;
        return it->second;
    }

    std::string where() const { return "trace event " + std::to_string(index_); }

    void on(const BlockExec& e) { features_.on_block(e.fn, e.bb); }

    void on(const SiteReached& e) {
        if (!stack_.empty())
            fail(ErrorKind::Analysis, where() + ": site " + std::to_string(e.site) + " reached inside a library call");
        const auto* plan = plans_->find(e.site);
        if (!plan)
            fail(ErrorKind::InconsistentIds, where() + ": unknown site " + std::to_string(e.site));

        call_ = Call{};
        call_->site = e.site;
        call_->callee = plan->callee;
        call_->snapshot = e.snapshot_values();

        sim::Probe probe{e.site, 0, PredictionSource::Tree, {}};
        if (state_.mode == SimMode::Set && divergence_.non_divergent(plan->callee)) {
            const auto& c = closure(plan->callee);
            probe.source = PredictionSource::Static;
            probe.label = -1;
            probe.chain.assign(c.begin(), c.end());
            ++report_.static_predictions;
        } else {
            ChainLabel label = predictor_.predict(e.site, features_.features(e.site, call_->snapshot));
            if (label == kUnknownSite) {
                probe.source = PredictionSource::Conservative;
                probe.label = kUnknownSite;
                if (policy_.conservative_unknown_sites && seen_.count(plan->callee))
                    for (FunctionId f : closure(plan->callee))
                        if (seen_.count(f))
                            probe.chain.push_back(f);
                ++report_.conservative_predictions;
            } else {
                probe.label = label;
                probe.chain = label_space().chain(label);
            }
        }
        call_->predicted = probe.chain;
        std::set<FunctionId> predicted_set;
        for (FunctionId f : probe.chain)
            if (!state_.permanent.count(f))
                predicted_set.insert(f);
        call_->predicted_set = predicted_set;

        // Blank, then announce the prediction, then copy the new chain in.
        if (state_.mode == SimMode::Set) {
            if (state_.lazy_blanking && state_.last_predicted_set == predicted_set) {
                // Same chain as last time: only functions copied in by an
                // audit since then have to go.
                std::set<FunctionId> extra;
                std::set_difference(state_.loaded.begin(), state_.loaded.end(), predicted_set.begin(),
                                    predicted_set.end(), std::inserter(extra, extra.end()));
                blank(extra);
            } else {
                blank(state_.loaded);
            }
            emit(probe);
            for (FunctionId f : probe.chain)
                copy(f);
        } else {
            blank(state_.loaded);
            emit(probe);
        }
        state_.last_predicted_label = probe.label;
        state_.last_predicted_set = predicted_set;
        state_.current_site = e.site;
    }

    void on(const LibEnter& e) {
        if (stack_.empty() && !call_)
            fail(ErrorKind::Analysis, where() + ": library entry without a preceding site");
        if (!program_->is_library(e.fn))
            fail(ErrorKind::InconsistentIds, where() + ": enter of non-library function " + std::to_string(e.fn));
        stack_.push_back(e.fn);
        call_->entered.insert(e.fn);
        report_.entered.insert(e.fn);

        if (state_.permanent.count(e.fn)) {
            if (state_.mode == SimMode::FullChain && call_->cursor < call_->predicted.size() &&
                call_->predicted[call_->cursor] == e.fn)
                ++call_->cursor;
            emit(sim::Hit{e.fn});
            return;
        }

        if (state_.mode == SimMode::Set) {
            if (state_.loaded.count(e.fn)) {
                emit(sim::Hit{e.fn});
                return;
            }
            underpredicted(e.fn);
            copy(e.fn);
            return;
        }

        // Full-chain: the next sequence element is the only one unblanked.
        const auto& seq = call_->predicted;
        if (call_->cursor < seq.size() && seq[call_->cursor] == e.fn) {
            ++call_->cursor;
            emit(sim::Hit{e.fn});
        } else {
            underpredicted(e.fn);
            auto it = std::find(seq.begin() + static_cast<std::ptrdiff_t>(call_->cursor), seq.end(), e.fn);
            if (it != seq.end())
                call_->cursor = static_cast<std::size_t>(it - seq.begin()) + 1;
        }
        if (!state_.loaded.count(e.fn)) {
            blank(state_.loaded);
            copy(e.fn);
        }
    }

    void underpredicted(FunctionId f) {
        call_->under = true;
        emit(sim::Mispredict{f, call_->site, MispredictKind::Under});
        AuditResult result;
        if (oracle_)
            result = audit(*oracle_, call_->callee, call_->snapshot, call_->entered);
        emit(sim::Audit{f, call_->site, result.verdict, result.latency_us});
        report_.audit_latencies.push_back(result.latency_us);
        switch (result.verdict) {
            case Verdict::Attack: ++report_.attacks_detected; break;
            case Verdict::Legal: ++report_.legal_audits; break;
            case Verdict::Unknown: ++report_.unknown_audits; break;
        }
    }

    void on(const LibExit& e) {
        if (stack_.empty() || stack_.back() != e.fn)
            fail(ErrorKind::Analysis, where() + ": unmatched exit from " + std::to_string(e.fn));
        stack_.pop_back();
        if (!stack_.empty())
            return;

        bool over = false;
        for (FunctionId f : call_->predicted_set)
            if (!call_->entered.count(f)) {
                over = true;
                emit(sim::Mispredict{f, call_->site, MispredictKind::Over});
            }
        SiteStats s;
        s.calls = 1;
        if (call_->under)
            s.underpredictions = 1;
        else if (over)
            s.overpredictions = 1;
        else
            s.hits = 1;
        report_.per_site[call_->site].add(s);
        report_.total.add(s);

        if (state_.mode == SimMode::FullChain || !state_.lazy_blanking)
            blank(state_.loaded);
        call_.reset();
    }

    struct Call {
        SiteId site = 0;
        FunctionId callee = 0;
        std::vector<double> snapshot;
        Chain predicted;
        std::set<FunctionId> predicted_set;
        std::set<FunctionId> entered;
        std::size_t cursor = 0;
        bool under = false;
    };

    const Program* program_;
    const PlanSet* plans_;
    CallSitePredictor predictor_;
    const ChainTables* chains_;
    std::set<FunctionId> seen_;
    const CleanReplayOracle* oracle_;
    std::vector<SimEvent>* log_;
    FeatureState features_;
    DivergenceReport divergence_;
    std::map<FunctionId, std::set<FunctionId>> closures_;
    SimPolicy policy_;
    LoaderState state_;
    SimulationReport report_;
    std::optional<Call> call_;
    std::vector<FunctionId> stack_;
    std::size_t index_ = 0;
    bool exposure_tracked_ = false;
};

struct SimulationResult {
    SimulationReport report;
    std::vector<SimEvent> events;
};

inline SimulationResult simulate(const Program& program, const PlanSet& plans, const DecisionTreeModel& model,
                                 const ChainTables& chains, const std::vector<TraceEvent>& trace,
                                 const CleanReplayOracle* oracle, SimPolicy policy) {
    SimulationResult out;
    Simulator sim(program, plans, model, chains, oracle, policy, &out.events);
    for (const auto& ev : trace)
        sim.feed(ev);
    sim.finish();
    out.report = sim.report();
    return out;
}

/// Replays an event log and reports every violation of the loader
/// invariants: between probes only the last predicted chain plus audited
/// functions are present (set mode), at most one function is present (full
/// chain mode), permanent functions are never copied or blanked, and every
/// underprediction is immediately followed by its audit.
inline std::vector<std::string> check_invariants(const std::vector<SimEvent>& events,
                                                 const std::set<FunctionId>& permanent, SimMode mode) {
    std::vector<std::string> out;
    std::set<FunctionId> loaded, window, audited;
    const sim::Mispredict* pending = nullptr;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& ev = events[i];
        const std::string at = "event " + std::to_string(i) + ": ";
        if (pending) {
            const auto* a = std::get_if<sim::Audit>(&ev);
            if (!a || a->fn != pending->fn || a->site != pending->site)
                out.push_back(at + "underprediction of " + std::to_string(pending->fn) + " not followed by its audit");
            pending = nullptr;
        }
        if (const auto* p = std::get_if<sim::Probe>(&ev)) {
            window.clear();
            audited.clear();
            for (FunctionId f : p->chain)
                if (!permanent.count(f))
                    window.insert(f);
        } else if (const auto* c = std::get_if<sim::Copy>(&ev)) {
            if (permanent.count(c->fn))
                out.push_back(at + "copy of permanent function " + std::to_string(c->fn));
            loaded.insert(c->fn);
        } else if (const auto* b = std::get_if<sim::Blank>(&ev)) {
            for (FunctionId f : b->fns) {
                if (permanent.count(f))
                    out.push_back(at + "blank of permanent function " + std::to_string(f));
                loaded.erase(f);
            }
        } else if (const auto* m = std::get_if<sim::Mispredict>(&ev)) {
            if (m->kind == MispredictKind::Under) {
                pending = m;
                audited.insert(m->fn);
            }
        }
        if (mode == SimMode::Set) {
            for (FunctionId f : loaded)
                if (!window.count(f) && !audited.count(f)) {
                    out.push_back(at + "function " + std::to_string(f) + " loaded outside the predicted chain");
                    break;
                }
        } else if (loaded.size() > 1) {
            out.push_back(at + std::to_string(loaded.size()) + " functions loaded in full-chain mode");
        }
    }
    if (pending)
        out.push_back("end of log: underprediction of " + std::to_string(pending->fn) + " not audited");
    return out;
}

}  // namespace blankit
