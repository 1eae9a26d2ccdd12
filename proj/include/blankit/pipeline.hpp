#pragma once

// End-to-end runs: divergence, planning, profiling on the training traces,
// training, simulation of the test trace and metrics. `evaluate` works in
// memory; `run_pipeline` drives it from a config file and writes every
// intermediate artifact.
//
// Config:
//   {"output_dir": "out", "depth": 10, "mode": "set", "lazy_blanking": true,
//    "unknown_sites": "conservative", "alarm": "continue", "verbosity": "info",
//    "suite": "standard",
//    "scenarios": [{"name": "a", "spec": {...}},
//                  {"name": "b", "program": "p.json", "oracle": "o.json", "cve": "cve.json",
//                   "train_traces": ["t1.jsonl"], "test_trace": "t2.jsonl"}]}
// Relative paths resolve against the config file's directory.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "blankit/corpus_gen.hpp"
#include "blankit/decision_tree.hpp"
#include "blankit/divergence.hpp"
#include "blankit/instrumentation.hpp"
#include "blankit/io.hpp"
#include "blankit/metrics.hpp"
#include "blankit/profiler.hpp"
#include "blankit/program_io.hpp"
#include "blankit/runtime_sim.hpp"
#include "blankit/trace.hpp"

namespace blankit {

struct EvaluationOptions {
    int depth = kDefaultMaxDepth;
    SimPolicy policy;
};

struct Evaluation {
    DivergenceReport divergence;
    PlanSet plans;
    Profile profile;
    DecisionTreeModel model;
    SimulationResult simulation;
    SurfaceMetrics metrics;
};

/// Trains on `train` and replays `test`. In full-chain mode the tree is
/// trained on sequence labels.
inline Evaluation evaluate(const Program& program, const std::vector<std::vector<TraceEvent>>& train,
                           const std::vector<TraceEvent>& test, const CleanReplayOracle* oracle,
                           const std::vector<std::string>& cve, const EvaluationOptions& opt) {
    Evaluation e;
    e.divergence = classify_divergence(program);
    e.plans = plan_program(program);
    e.profile = build_profile(train, e.plans);
    const bool seq = opt.policy.mode == SimMode::FullChain;
    e.model = train_tree(seq ? with_sequence_labels(e.profile.records) : e.profile.records, opt.depth);
    e.simulation = simulate(program, e.plans, e.model, e.profile.chains, test, oracle, opt.policy);
    e.metrics = compute_metrics(program, e.simulation.events, cve);
    return e;
}

/// Trains on the small and medium traces, tests on the large one.
inline Evaluation evaluate(const Scenario& s, const EvaluationOptions& opt = {}) {
    return evaluate(s.program, {s.traces.at("small"), s.traces.at("medium")}, s.traces.at("large"), &s.oracle,
                    s.cve_list, opt);
}

struct ScenarioEntry {
    std::string name;
    std::optional<ScenarioSpec> spec;
    std::filesystem::path program, oracle, cve, test_trace;
    std::vector<std::filesystem::path> train_traces;
};

enum class Verbosity { Quiet, Info, Debug };

struct PipelineConfig {
    std::filesystem::path output_dir = "out";
    EvaluationOptions options;
    Verbosity verbosity = Verbosity::Info;
    std::vector<ScenarioEntry> scenarios;
};

inline PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base) {
    const std::string ctx = "pipeline config";
    if (!j.is_object())
        fail(ErrorKind::Schema, ctx + ": expected an object");
    static const std::set<std::string> known{"output_dir", "depth", "mode", "lazy_blanking", "unknown_sites",
                                             "alarm", "verbosity", "suite", "scenarios"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key))
            fail(ErrorKind::Schema, ctx + ": unknown field '" + key + "'");
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base / path;
    };

    PipelineConfig c;
    c.output_dir = resolve(get_field_or<std::string>(j, "output_dir", "out", ctx));
    c.options.depth = get_field_or<int>(j, "depth", kDefaultMaxDepth, ctx);
    if (c.options.depth < 0)
        fail(ErrorKind::Schema, ctx + ": depth must be non-negative");
    try {
        c.options.policy.mode = sim_mode_from_string(get_field_or<std::string>(j, "mode", "set", ctx));
    } catch (const Error& e) {
        fail(ErrorKind::Schema, ctx + ": " + e.what());
    }
    c.options.policy.lazy_blanking = get_field_or<bool>(j, "lazy_blanking", true, ctx);
    const auto unknown = get_field_or<std::string>(j, "unknown_sites", "conservative", ctx);
    if (unknown != "conservative" && unknown != "empty")
        fail(ErrorKind::Schema, ctx + ": unknown_sites must be conservative or empty");
    c.options.policy.conservative_unknown_sites = unknown == "conservative";
    const auto alarm = get_field_or<std::string>(j, "alarm", "continue", ctx);
    if (alarm != "continue")
        fail(ErrorKind::Schema, ctx + ": alarm policy '" + alarm + "' is not supported (only continue)");
    const auto verbosity = get_field_or<std::string>(j, "verbosity", "info", ctx);
    if (verbosity == "quiet")
        c.verbosity = Verbosity::Quiet;
    else if (verbosity == "info")
        c.verbosity = Verbosity::Info;
    else if (verbosity == "debug")
        c.verbosity = Verbosity::Debug;
    else
        fail(ErrorKind::Schema, ctx + ": verbosity must be quiet, info or debug");

    if (j.contains("suite")) {
        const auto suite = get_field<std::string>(j, "suite", ctx);
        std::vector<ScenarioSpec> specs;
        if (suite == "standard")
            specs = standard_suite();
        else if (suite == "shape") {
            specs = standard_suite();
            specs.push_back(unseen_region_scenario());
            specs.push_back(large_library_scenario());
            specs.push_back(attack_scenario());
        } else
            fail(ErrorKind::Schema, ctx + ": unknown suite '" + suite + "'");
        for (auto& s : specs)
            c.scenarios.push_back({s.name, s, {}, {}, {}, {}, {}});
    }
    for (const auto& e : get_field_or<json>(j, "scenarios", json::array(), ctx)) {
        ScenarioEntry s;
        s.name = get_field<std::string>(e, "name", ctx);
        const std::string sctx = ctx + " scenario '" + s.name + "'";
        if (e.contains("spec")) {
            s.spec = scenario_spec_from_json(e.at("spec"));
            s.spec->name = s.name;
        } else {
            s.program = resolve(get_field<std::string>(e, "program", sctx));
            if (e.contains("oracle"))
                s.oracle = resolve(get_field<std::string>(e, "oracle", sctx));
            s.cve = resolve(get_field<std::string>(e, "cve", sctx));
            for (const auto& t : get_field<std::vector<std::string>>(e, "train_traces", sctx))
                s.train_traces.push_back(resolve(t));
            s.test_trace = resolve(get_field<std::string>(e, "test_trace", sctx));
            if (s.train_traces.empty())
                fail(ErrorKind::Schema, sctx + ": train_traces is empty");
        }
        c.scenarios.push_back(std::move(s));
    }
    if (c.scenarios.empty())
        fail(ErrorKind::Schema, ctx + ": no scenarios");
    std::set<std::string> names;
    for (const auto& s : c.scenarios) {
        if (s.name.empty() || s.name.find_first_of("/\\") != std::string::npos || s.name == "." || s.name == "..")
            fail(ErrorKind::Schema, ctx + ": bad scenario name '" + s.name + "'");
        if (!names.insert(s.name).second)
            fail(ErrorKind::Schema, ctx + ": duplicate scenario name '" + s.name + "'");
    }
    return c;
}

/// Every input file must exist before any stage runs.
inline void check_inputs(const PipelineConfig& c) {
    for (const auto& s : c.scenarios) {
        if (s.spec) {
            check_spec(*s.spec);
            continue;
        }
        std::vector<std::filesystem::path> paths{s.program, s.cve, s.test_trace};
        if (!s.oracle.empty())
            paths.push_back(s.oracle);
        paths.insert(paths.end(), s.train_traces.begin(), s.train_traces.end());
        for (const auto& p : paths)
            if (!std::filesystem::is_regular_file(p))
                fail(ErrorKind::Io, "scenario '" + s.name + "': missing input " + p.string());
    }
}

struct ScenarioResult {
    std::string name;
    SurfaceMetrics metrics;
    SimulationReport report;
};

/// Runs one scenario and writes its artifacts under `dir`.
inline ScenarioResult run_scenario(const ScenarioEntry& entry, const EvaluationOptions& opt,
                                   const std::filesystem::path& dir) {
    Program program;
    CleanReplayOracle oracle;
    bool have_oracle = false;
    std::vector<std::string> cve;
    std::vector<std::vector<TraceEvent>> train;
    std::vector<TraceEvent> test;
    if (entry.spec) {
        Scenario s = generate(*entry.spec);
        write_scenario(s, dir / "scenario");
        program = s.program;
        oracle = s.oracle;
        have_oracle = true;
        cve = s.cve_list;
        train = {s.traces.at("small"), s.traces.at("medium")};
        test = s.traces.at("large");
    } else {
        program = load_program(entry.program);
        if (!entry.oracle.empty()) {
            oracle = oracle_from_json(read_json_file(entry.oracle));
            have_oracle = true;
        }
        cve = load_cve_list(entry.cve);
        for (const auto& t : entry.train_traces)
            train.push_back(load_trace(t));
        test = load_trace(entry.test_trace);
    }

    auto e = evaluate(program, train, test, have_oracle ? &oracle : nullptr, cve, opt);
    const bool seq = opt.policy.mode == SimMode::FullChain;
    write_json_file(dir / "divergence.json", to_json(e.divergence));
    write_text_file(dir / "divergence.txt", divergence_summary(e.divergence, entry.name));
    write_json_file(dir / "plan.json", to_json(e.plans));
    write_text_file(dir / "train.csv", to_csv(e.profile.records, seq));
    write_json_file(dir / "chains.json", to_json(e.profile.chains));
    write_text_file(dir / "tree.txt", serialize(e.model));
    write_json_file(dir / "simulation.json", to_json(e.simulation.report));
    write_text_file(dir / "events.jsonl", events_to_jsonl(e.simulation.events));
    write_json_file(dir / "report.json", benchmark_report(entry.name, e.metrics, e.simulation.report));
    return {entry.name, e.metrics, e.simulation.report};
}

/// Runs every scenario, `jobs` at a time. Results and summary files come out
/// in config order regardless of scheduling.
inline std::vector<ScenarioResult> run_pipeline(const PipelineConfig& c, int jobs = 1, std::ostream* log = nullptr) {
    check_inputs(c);
    const std::size_t n = c.scenarios.size();
    std::vector<std::optional<ScenarioResult>> results(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            const auto& s = c.scenarios[i];
            try {
                results[i] = run_scenario(s, c.options, c.output_dir / s.name);
                if (log && c.verbosity != Verbosity::Quiet) {
                    std::lock_guard lock(log_mutex);
                    *log << "[pipeline] " << s.name << ": accuracy " << results[i]->metrics.calls.accuracy()
                         << "%, reduction " << format_percent(results[i]->metrics.reduction) << "%\n";
                }
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto& t : pool)
        t.join();
    for (std::size_t i = 0; i < n; ++i)
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const Error& e) {
                throw Error(e.kind(), "scenario '" + c.scenarios[i].name + "': " + e.what());
            }
        }

    std::vector<ScenarioResult> out;
    std::string csv = metrics_csv_header();
    json summary = json::array();
    for (auto& r : results) {
        csv += metrics_csv_row(r->name, r->metrics);
        summary.push_back({{"benchmark", r->name}, {"metrics", to_json(r->metrics)}});
        out.push_back(std::move(*r));
    }
    write_text_file(c.output_dir / "summary.csv", csv);
    write_json_file(c.output_dir / "summary.json", summary);
    return out;
}

}  // namespace blankit
