// Acceptance run: one PASS/FAIL line per criterion. Exit status is the
// number of failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <string>

#include "blankit/blankit.hpp"
#include "cfg_gen.hpp"
#include "oracles.hpp"

using namespace blankit;
using namespace blankit::testing;
namespace fs = std::filesystem;

namespace {

// Pinned thresholds.
constexpr int kExhaustiveBlocks = 6;
constexpr int kRandomCfgs = 1000;
constexpr int kRandomCfgBlocks = 12;
constexpr double kDominanceSeconds = 60.0;
constexpr int kRandomPrograms = 500;
constexpr int kProgramFunctions = 12;
constexpr int kProgramBlocks = 8;
constexpr int kMaxDepth = 10;
constexpr int kSeparableTables = 40;
constexpr int kRoundTripVectors = 10000;
constexpr double kMeanAccuracy = 94.0;
constexpr double kHighAccuracy = 97.0;
constexpr int kHighScenarios = 9;
constexpr double kUnseenAccuracyMax = 80.0;
constexpr double kReductionMin = 94.0;
constexpr double kGadgetReductionMin = 95.0;
constexpr std::size_t kReachableMin = 140, kReachableMax = 200;
constexpr int kLargeChainDepthMax = 7;
constexpr std::size_t kLargePermanent = 5;

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;

void criterion(int n, const std::string& title, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass)
        ++failures;
    std::printf("%s %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", n, title.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
}

std::string fmt(double v) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(2);
    os << v;
    return os.str();
}

// ---- shared scenario runs ---------------------------------------------------

struct Run {
    Scenario scenario;
    Evaluation set;       // lazy blanking
    Evaluation eager;     // set mode without lazy blanking
    Evaluation fullchain;
};

std::map<std::string, Run>& runs() {
    static std::map<std::string, Run> cache;
    return cache;
}

const Run& run(const ScenarioSpec& spec) {
    auto& cache = runs();
    auto it = cache.find(spec.name);
    if (it != cache.end())
        return it->second;
    Run r;
    r.scenario = generate(spec);
    EvaluationOptions opt;
    r.set = evaluate(r.scenario, opt);
    opt.policy.lazy_blanking = false;
    r.eager = evaluate(r.scenario, opt);
    opt.policy.lazy_blanking = true;
    opt.policy.mode = SimMode::FullChain;
    r.fullchain = evaluate(r.scenario, opt);
    return cache.emplace(spec.name, std::move(r)).first->second;
}

std::vector<ScenarioSpec> all_specs() {
    auto specs = standard_suite();
    specs.push_back(unseen_region_scenario());
    specs.push_back(large_library_scenario());
    specs.push_back(attack_scenario());
    return specs;
}

// ---- criteria ----------------------------------------------------------------

Outcome dominance() {
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t graphs = 0, mismatches = 0;
    std::string first;
    auto check = [&](const Succs& succ) {
        ++graphs;
        const auto f = make_function(succ);
        const auto pdom = compute_postdominators(f);
        PostDominance pd(f);
        PathOracle oracle(succ);
        for (int b = 0; b < static_cast<int>(succ.size()); ++b) {
            if (pdom.at(b) != oracle.postdominators(b) || pd.rdf(b) != oracle.rdf(b)) {
                if (mismatches++ == 0)
                    first = "graph " + std::to_string(graphs) + " block " + std::to_string(b);
                return;
            }
        }
    };
    for (int n = 1; n <= kExhaustiveBlocks; ++n)
        for_each_cfg(n, check);
    const std::size_t exhaustive = graphs;
    std::mt19937_64 rng(101);
    for (int i = 0; i < kRandomCfgs; ++i)
        check(random_cfg(rng, std::uniform_int_distribution<int>(1, kRandomCfgBlocks)(rng)));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Outcome o;
    o.pass = mismatches == 0 && secs < kDominanceSeconds;
    o.detail = std::to_string(exhaustive) + " exhaustive + " + std::to_string(kRandomCfgs) + " random CFGs, " +
               std::to_string(mismatches) + " mismatches" + (first.empty() ? "" : " (first: " + first + ")") +
               ", " + fmt(secs) + " s of " + fmt(kDominanceSeconds);
    return o;
}

Outcome divergence() {
    std::mt19937_64 rng(202);
    std::size_t functions = 0, mismatches = 0;
    for (int i = 0; i < kRandomPrograms; ++i) {
        const Program p = random_library(rng, kProgramFunctions, kProgramBlocks);
        const auto r = classify_divergence(p);
        for (const auto& [f, nd] : divergence_oracle(p)) {
            ++functions;
            if (r.non_divergent(f) != nd)
                ++mismatches;
        }
    }
    // The summary table is a header plus one row with two counts.
    const auto s = run(standard_suite()[0]).scenario;
    const auto text = divergence_summary(classify_divergence(s.program), "libsynth");
    const std::regex shape("Library\t#Divergent\t#Non-divergent\nlibsynth\t[0-9]+\t[0-9]+\n");
    const bool shaped = std::regex_match(text, shape);
    return {mismatches == 0 && shaped, std::to_string(kRandomPrograms) + " programs, " + std::to_string(functions) +
                                           " functions, " + std::to_string(mismatches) +
                                           " mismatches; summary shape " + (shaped ? "ok" : "wrong")};
}

// Labels from a random axis-aligned tree over an integer grid. Every split
// sits at a half-integer, so a tree that fits the whole grid also labels
// every real point between grid points correctly.
struct TruthNode {
    int feature = -1;
    double threshold = 0;
    int left = -1, right = -1;
    ChainLabel label = 0;
};

ChainLabel truth(const std::vector<TruthNode>& t, const std::vector<double>& x) {
    int n = 0;
    while (t[n].feature >= 0)
        n = x[t[n].feature] <= t[n].threshold ? t[n].left : t[n].right;
    return t[n].label;
}

Outcome decision_tree() {
    std::mt19937_64 rng(303);
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    int max_seen = 0;
    std::size_t wrong = 0, tested = 0, roundtrip_bad = 0, models = 0;
    auto roundtrip = [&](const DecisionTreeModel& m, int width) {
        ++models;
        const auto back = deserialize(serialize(m));
        for (int k = 0; k < kRoundTripVectors; ++k) {
            std::vector<double> x;
            for (int f = 0; f < width; ++f)
                x.push_back(std::uniform_real_distribution<double>(-6000, 6000)(rng));
            if (back.predict(x) != m.predict(x)) {
                ++roundtrip_bad;
                return;
            }
        }
    };
    for (int t = 0; t < kSeparableTables; ++t) {
        const int width = uni(1, 4), side = uni(4, 10), labels = uni(2, 6);
        std::vector<TruthNode> tree(1);
        std::function<void(int, int)> grow = [&](int n, int depth) {
            if (depth == 3 || uni(0, 3) == 0) {
                tree[n].label = uni(0, labels - 1);
                return;
            }
            tree[n].feature = uni(0, width - 1);
            tree[n].threshold = uni(0, side - 2) + 0.5;
            tree[n].left = static_cast<int>(tree.size());
            tree.emplace_back();
            tree[n].right = static_cast<int>(tree.size());
            tree.emplace_back();
            grow(tree[n].left, depth + 1);
            grow(tree[n].right, depth + 1);
        };
        grow(0, 0);
        std::vector<ProfileRecord> rows;
        std::vector<int> idx(width, 0);
        for (;;) {
            ProfileRecord r;
            for (int v : idx)
                r.features.push_back(v);
            r.label = truth(tree, r.features);
            rows.push_back(r);
            int f = 0;
            while (f < width && ++idx[f] == side)
                idx[f++] = 0;
            if (f == width)
                break;
        }
        const auto m = train_tree(rows, kMaxDepth);
        max_seen = std::max(max_seen, m.depth());
        for (int k = 0; k < 1000; ++k) {
            std::vector<double> x;
            for (int f = 0; f < width; ++f)
                x.push_back(std::uniform_real_distribution<double>(-0.49, side - 0.51)(rng));
            ++tested;
            wrong += m.predict(x) != truth(tree, x);
        }
        roundtrip(m, width);
    }
    for (const auto& spec : standard_suite()) {
        const auto& r = run(spec);
        for (const auto* e : {&r.set, &r.fullchain}) {
            max_seen = std::max(max_seen, e->model.depth());
            std::size_t width = 1;
            for (const auto& rec : e->profile.records)
                width = std::max(width, rec.features.size());
            roundtrip(e->model, static_cast<int>(width));
        }
    }
    const bool pass = max_seen <= kMaxDepth && wrong == 0 && roundtrip_bad == 0;
    return {pass, "max depth " + std::to_string(max_seen) + ", held-out " + std::to_string(tested - wrong) + "/" +
                      std::to_string(tested) + " correct on " + std::to_string(kSeparableTables) +
                      " separable tables, " + std::to_string(models - roundtrip_bad) + "/" + std::to_string(models) +
                      " models round-trip on " + std::to_string(kRoundTripVectors) + " vectors"};
}

Outcome accuracy() {
    double sum = 0;
    int high = 0;
    std::ostringstream per;
    for (const auto& spec : standard_suite()) {
        const double a = run(spec).set.metrics.calls.accuracy();
        sum += a;
        high += a >= kHighAccuracy;
        per << ' ' << fmt(a);
    }
    const double mean = sum / 17.0;
    const auto& u = run(unseen_region_scenario()).set.metrics.calls;
    const double unseen = u.accuracy();
    const double under_share = u.mispredicted() ? 100.0 * u.underpredictions / u.mispredicted() : 0.0;
    const bool pass = mean >= kMeanAccuracy && high >= kHighScenarios && unseen <= kUnseenAccuracyMax &&
                      u.mispredicted() > 0 && u.underpredictions == u.mispredicted();
    return {pass, "mean " + fmt(mean) + "%, " + std::to_string(high) + "/17 at >= 97%; unseen-region " + fmt(unseen) +
                      "% with " + fmt(under_share) + "% underpredictions; per scenario:" + per.str()};
}

Outcome invariants() {
    std::size_t sims = 0, events = 0, violations = 0;
    std::string first;
    for (const auto& spec : all_specs()) {
        const auto& r = run(spec);
        const auto permanent = r.scenario.program.permanent_library_functions();
        for (const auto* e : {&r.set, &r.eager, &r.fullchain}) {
            ++sims;
            events += e->simulation.events.size();
            const auto v = check_invariants(e->simulation.events, permanent, e->simulation.report.policy.mode);
            if (!v.empty() && first.empty())
                first = spec.name + ": " + v.front();
            violations += v.size();
        }
    }
    return {violations == 0, std::to_string(sims) + " simulations, " + std::to_string(events) + " events, " +
                                 std::to_string(violations) + " violations" + (first.empty() ? "" : " (" + first + ")")};
}

Outcome attacks() {
    const auto& r = run(attack_scenario());
    const auto& s = r.scenario;
    std::map<SiteId, const SiteInfo*> info;
    for (const auto& i : s.sites)
        info[i.site] = &i;

    // Which test-trace calls are attacks.
    std::vector<bool> attack_call;
    std::size_t code2 = 0, cve = 0;
    for (const auto& ev : s.traces.at("large"))
        if (const auto* sr = std::get_if<SiteReached>(&ev)) {
            const auto kind = info.at(sr->site)->kind;
            bool a = false;
            if (kind == SiteKind::Code2 && sr->snapshot && *sr->snapshot != sr->args) {
                a = true;
                ++code2;
            } else if (kind == SiteKind::Cve) {
                const auto* region = s.oracle.lookup(info.at(sr->site)->callee, sr->args);
                if (region && !region->safe) {
                    a = true;
                    ++cve;
                }
            }
            attack_call.push_back(a);
        }

    std::size_t detected = 0, missed = 0, legal = 0, false_alarms = 0;
    std::vector<std::vector<Verdict>> verdicts(attack_call.size());
    long call = -1;
    for (const auto& ev : r.set.simulation.events) {
        if (std::holds_alternative<sim::Probe>(ev))
            ++call;
        else if (const auto* a = std::get_if<sim::Audit>(&ev))
            verdicts.at(static_cast<std::size_t>(call)).push_back(a->verdict);
    }
    for (std::size_t i = 0; i < attack_call.size(); ++i) {
        const auto& v = verdicts[i];
        if (attack_call[i]) {
            const bool ok = !v.empty() && std::all_of(v.begin(), v.end(), [](Verdict x) { return x == Verdict::Attack; });
            ok ? ++detected : ++missed;
        } else {
            for (Verdict x : v)
                x == Verdict::Legal ? ++legal : ++false_alarms;
        }
    }

    // Jump sweep at every probe of a fresh replay.
    std::vector<SimEvent> log;
    Simulator logged(s.program, r.set.plans, r.set.model, r.set.profile.chains, &s.oracle, SimPolicy{}, &log);
    const auto lib = s.program.library_ids();
    const auto permanent = s.program.permanent_library_functions();
    std::set<FunctionId> loaded;
    std::size_t replayed = 0, sweeps = 0, sweep_bad = 0;
    for (const auto& ev : s.traces.at("large")) {
        logged.feed(ev);
        for (; replayed < log.size(); ++replayed) {
            if (const auto* c = std::get_if<sim::Copy>(&log[replayed]))
                loaded.insert(c->fn);
            else if (const auto* b = std::get_if<sim::Blank>(&log[replayed]))
                for (FunctionId f : b->fns)
                    loaded.erase(f);
        }
        if (!std::holds_alternative<SiteReached>(ev) && !std::holds_alternative<LibEnter>(ev))
            continue;
        ++sweeps;
        std::set<FunctionId> present = loaded;
        present.insert(permanent.begin(), permanent.end());
        std::size_t faults = 0;
        for (FunctionId f : lib)
            faults += logged.jump(f) == JumpOutcome::Fault;
        replayed = log.size();  // skip the Fault events just emitted
        if (faults != lib.size() - present.size())
            ++sweep_bad;
    }

    const bool pass = code2 > 0 && cve > 0 && missed == 0 && legal > 0 && false_alarms == 0 && sweep_bad == 0;
    return {pass, std::to_string(detected) + "/" + std::to_string(code2 + cve) + " attack calls flagged (" +
                      std::to_string(code2) + " tampered, " + std::to_string(cve) + " overflow), " +
                      std::to_string(legal) + " legal audits, " + std::to_string(false_alarms) +
                      " false alarms; jump sweeps " + std::to_string(sweeps - sweep_bad) + "/" +
                      std::to_string(sweeps) + " fault on exactly total - |loaded|"};
}

Outcome metrics() {
    // Hand-computed values.
    bool exact = compute_exposed(2, 3, 7) == 12 && compute_reduction(2400, 12) == Percent{199, 2} &&
                 compute_reduction(170, 10) == Percent{1600, 17} &&
                 compute_cve_exposure(2, 3, 4, 47).reduction == Percent{3800, 47} &&
                 compute_cve_exposure(30, 20, 10, 47).exposed == 47 && Percent::of(0, 47) == Percent{0, 1};

    const auto& r = run(large_library_scenario());
    const auto& p = r.scenario.program;
    const auto& m = r.set.metrics;
    std::set<FunctionId> roots;
    for (const auto& [site, plan] : r.set.plans.sites())
        roots.insert(plan.callee);
    const auto reach = reachable_library_functions(p, roots).functions.size();
    const int depth = max_static_callchain_depth(p, roots);

    // Recount from the log independently of summarize_log.
    std::set<FunctionId> loaded;
    std::size_t c_max = 0;
    std::uint64_t worst = 0;
    const auto permanent = p.permanent_library_functions();
    for (const auto& ev : r.set.simulation.events) {
        if (const auto* c = std::get_if<sim::Copy>(&ev))
            loaded.insert(c->fn);
        else if (const auto* b = std::get_if<sim::Blank>(&ev))
            for (FunctionId f : b->fns)
                loaded.erase(f);
        c_max = std::max(c_max, loaded.size());
        std::uint64_t g = 0;
        for (FunctionId f : loaded)
            g += p.function(f).gadget_count;
        for (FunctionId f : permanent)
            g += p.function(f).gadget_count;
        worst = std::max(worst, g);
    }
    const std::size_t total = p.library_ids().size();
    const std::size_t exposed = m.p_count + m.s_count + c_max;
    std::uint64_t total_g = 0;
    for (FunctionId f : p.library_ids())
        total_g += p.function(f).gadget_count;
    // a/b == c/d by cross multiplication.
    auto same = [](const Percent& x, std::int64_t num, std::int64_t den) { return x.num * den == num * x.den; };
    exact = exact && m.exposed == exposed && m.total_functions == total &&
            same(m.reduction, 100 * static_cast<std::int64_t>(total - exposed), static_cast<std::int64_t>(total)) &&
            m.exposed_gadgets == worst &&
            same(m.gadget_reduction, 100 * static_cast<std::int64_t>(total_g - worst),
                 static_cast<std::int64_t>(total_g));

    const double red = m.reduction.value(), gred = m.gadget_reduction.value();
    const bool shape = reach >= kReachableMin && reach <= kReachableMax && depth <= kLargeChainDepthMax &&
                       m.p_count + m.s_count == kLargePermanent;
    const bool pass = exact && shape && red >= kReductionMin && gred >= kGadgetReductionMin;
    return {pass, std::to_string(reach) + " reachable of " + std::to_string(total) + " library functions, chain depth " +
                      std::to_string(depth) + ", p+s " + std::to_string(m.p_count + m.s_count) + ", c_max " +
                      std::to_string(c_max) + "; reduction " + fmt(red) + "%, gadget reduction " + fmt(gred) +
                      "%; exact metric checks " + (exact ? "ok" : "wrong")};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file())
            out[fs::relative(e.path(), dir).string()] = read_text_file(e.path());
    return out;
}

Outcome determinism() {
    const auto dir = fs::temp_directory_path() / "blankit_acceptance_determinism";
    fs::remove_all(dir);
    json scenarios = json::array();
    for (const auto& spec : {standard_suite()[5], unseen_region_scenario(), attack_scenario()})
        scenarios.push_back({{"name", spec.name}, {"spec", to_json(spec)}});
    std::size_t files = 0, differing = 0;
    for (const char* mode : {"set", "fullchain"}) {
        json cfg{{"verbosity", "quiet"}, {"mode", mode}, {"scenarios", scenarios}};
        cfg["output_dir"] = std::string(mode) + "_a";
        run_pipeline(pipeline_config_from_json(cfg, dir), 1);
        cfg["output_dir"] = std::string(mode) + "_b";
        run_pipeline(pipeline_config_from_json(cfg, dir), 4);
        const auto a = snapshot(dir / (std::string(mode) + "_a"));
        const auto b = snapshot(dir / (std::string(mode) + "_b"));
        files += a.size();
        if (a.size() != b.size())
            ++differing;
        for (const auto& [name, text] : a) {
            auto it = b.find(name);
            if (it == b.end() || it->second != text)
                ++differing;
        }
    }
    fs::remove_all(dir);
    return {files > 0 && differing == 0,
            std::to_string(files) + " output files over two runs per mode, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main() {
    criterion(1, "dominance and RDF match path oracles", dominance);
    criterion(2, "divergence matches path oracle", divergence);
    criterion(3, "decision tree depth, fidelity, round trip", decision_tree);
    criterion(4, "prediction accuracy shape", accuracy);
    criterion(5, "runtime state invariants", invariants);
    criterion(6, "attack verdicts and jump sweep", attacks);
    criterion(7, "attack surface metrics on the large library", metrics);
    criterion(8, "pipeline determinism", determinism);
    std::printf("%d of 8 criteria failed\n", failures);
    return failures;
}
