// blankit: command-line front end for the analysis and simulation stages.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "blankit/blankit.hpp"

namespace fs = std::filesystem;
using namespace blankit;

namespace {

constexpr const char* kExitCodes =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error (including simulator invariant violations)\n"
    "  2  usage error (bad flags or arguments)\n"
    "  3  missing or unreadable file\n"
    "  4  schema violation in an input file\n"
    "  5  inconsistent ids across inputs\n"
    "  6  analysis precondition failed\n";

ScenarioSpec preset(const std::string& name) {
    for (auto& s : standard_suite())
        if (s.name == name)
            return s;
    if (name == "unseen-region")
        return unseen_region_scenario();
    if (name == "large-library")
        return large_library_scenario();
    if (name == "attacks")
        return attack_scenario();
    fail(ErrorKind::Usage, "unknown preset '" + name + "' (suite-01..suite-17, unseen-region, large-library, attacks)");
}

bool on_off(const std::string& v, const char* flag) {
    if (v == "on")
        return true;
    if (v == "off")
        return false;
    fail(ErrorKind::Usage, std::string(flag) + " takes on or off");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BlankIt library debloating toolkit: divergence analysis, instrumentation planning, "
                 "chain prediction and loader simulation."};
    app.footer(kExitCodes);
    app.set_version_flag("--version", std::string("blankit ") + kVersion);
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "Generate a synthetic scenario (program, oracle, CVE list, traces)");
    std::string gen_spec, gen_preset, gen_out;
    auto* spec_opt = gen->add_option("--spec", gen_spec, "Scenario spec JSON");
    gen->add_option("--preset", gen_preset, "Built-in scenario name")->excludes(spec_opt);
    gen->add_option("--out", gen_out, "Output directory")->required();

    // divergence
    auto* div = app.add_subcommand("divergence", "Classify library functions as divergent or non-divergent");
    std::string div_program, div_out, div_name = "library";
    div->add_option("--program", div_program, "Program JSON")->required();
    div->add_option("--out", div_out, "Write the report JSON here (default stdout)");
    div->add_option("--name", div_name, "Library name for the summary table");

    // plan
    auto* plan = app.add_subcommand("plan", "Compute instrumentation plans for every library call site");
    std::string plan_program_path, plan_out;
    plan->add_option("--program", plan_program_path, "Program JSON")->required();
    plan->add_option("--out", plan_out, "Plan JSON output")->required();

    // profile
    auto* prof = app.add_subcommand("profile", "Turn execution traces into labelled training rows");
    std::string prof_plan, prof_out, prof_chains;
    std::vector<std::string> prof_traces;
    bool prof_seq = false;
    prof->add_option("--plan", prof_plan, "Plan JSON")->required();
    prof->add_option("--trace", prof_traces, "Trace JSONL (repeatable)")->required();
    prof->add_option("--out", prof_out, "Training CSV output")->required();
    prof->add_option("--chains", prof_chains, "Chain table JSON output")->required();
    prof->add_flag("--sequences", prof_seq, "Label rows with ordered call sequences (full-chain mode)");

    // train
    auto* train = app.add_subcommand("train", "Train a decision tree on a profile CSV");
    std::string train_csv, train_out;
    int train_depth = kDefaultMaxDepth;
    train->add_option("--csv", train_csv, "Training CSV")->required();
    train->add_option("--depth", train_depth, "Maximum tree depth")->check(CLI::NonNegativeNumber);
    train->add_option("--out", train_out, "Tree text output")->required();

    // simulate
    auto* sim = app.add_subcommand("simulate", "Replay a trace through the demand-driven loader");
    std::string sim_program, sim_plan, sim_model, sim_chains, sim_trace, sim_oracle, sim_report, sim_events;
    std::string sim_mode = "set", sim_lazy = "on", sim_unknown = "conservative";
    sim->add_option("--program", sim_program, "Program JSON")->required();
    sim->add_option("--plan", sim_plan, "Plan JSON")->required();
    sim->add_option("--model", sim_model, "Tree text")->required();
    sim->add_option("--chains", sim_chains, "Chain table JSON from profile")->required();
    sim->add_option("--trace", sim_trace, "Trace JSONL to replay")->required();
    sim->add_option("--mode", sim_mode, "set or fullchain")->check(CLI::IsMember({"set", "fullchain"}));
    sim->add_option("--lazy-blanking", sim_lazy, "on or off")->check(CLI::IsMember({"on", "off"}));
    sim->add_option("--unknown-sites", sim_unknown, "conservative or empty")
        ->check(CLI::IsMember({"conservative", "empty"}));
    sim->add_option("--oracle", sim_oracle, "Clean-replay oracle JSON (audits report unknown without it)");
    sim->add_option("--report", sim_report, "Simulation report JSON output")->required();
    sim->add_option("--events", sim_events, "Event log JSONL output");

    // report
    auto* rep = app.add_subcommand("report", "Compute attack-surface metrics from an event log");
    std::string rep_program, rep_events, rep_cve, rep_sim, rep_out, rep_csv, rep_name = "benchmark";
    rep->add_option("--program", rep_program, "Program JSON")->required();
    rep->add_option("--events", rep_events, "Event log JSONL")->required();
    rep->add_option("--cve", rep_cve, "CVE function name list JSON")->required();
    rep->add_option("--simulation", rep_sim, "Simulation report JSON to cross-check");
    rep->add_option("--name", rep_name, "Benchmark name");
    rep->add_option("--out", rep_out, "Report JSON output")->required();
    rep->add_option("--csv", rep_csv, "Also write a one-row metrics CSV");

    // pipeline
    auto* pipe = app.add_subcommand("pipeline", "Run every stage for each scenario in a config file");
    std::string pipe_config;
    int pipe_jobs = 1;
    pipe->add_option("--config", pipe_config, "Pipeline config JSON")->required();
    pipe->add_option("--jobs", pipe_jobs, "Scenarios to run in parallel")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
    }

    try {
        if (*gen) {
            if (gen_spec.empty() && gen_preset.empty())
                fail(ErrorKind::Usage, "gen needs --spec or --preset");
            const ScenarioSpec spec =
                gen_spec.empty() ? preset(gen_preset) : scenario_spec_from_json(read_json_file(gen_spec));
            write_scenario(generate(spec), gen_out);
        } else if (*div) {
            const auto report = classify_divergence(load_program(div_program));
            if (div_out.empty())
                std::cout << to_json(report).dump(2) << '\n';
            else
                write_json_file(div_out, to_json(report));
            std::cout << divergence_summary(report, div_name);
        } else if (*plan) {
            write_json_file(plan_out, to_json(plan_program(load_program(plan_program_path))));
        } else if (*prof) {
            const auto plans = plan_set_from_json(read_json_file(prof_plan));
            std::vector<std::vector<TraceEvent>> traces;
            for (const auto& t : prof_traces)
                traces.push_back(load_trace(t));
            const auto profile = build_profile(traces, plans);
            write_text_file(prof_out, to_csv(profile.records, prof_seq));
            write_json_file(prof_chains, to_json(profile.chains));
        } else if (*train) {
            const auto records = records_from_csv(read_text_file(train_csv), train_csv);
            write_text_file(train_out, serialize(train_tree(records, train_depth)));
        } else if (*sim) {
            const auto program = load_program(sim_program);
            const auto plans = plan_set_from_json(read_json_file(sim_plan));
            const auto model = load_model(sim_model);
            const auto chains = chain_tables_from_json(read_json_file(sim_chains));
            const auto trace = load_trace(sim_trace);
            std::optional<CleanReplayOracle> oracle;
            if (!sim_oracle.empty())
                oracle = oracle_from_json(read_json_file(sim_oracle));
            SimPolicy policy;
            policy.mode = sim_mode_from_string(sim_mode);
            policy.lazy_blanking = on_off(sim_lazy, "--lazy-blanking");
            policy.conservative_unknown_sites = sim_unknown == "conservative";
            const auto result = simulate(program, plans, model, chains, trace, oracle ? &*oracle : nullptr, policy);
            write_json_file(sim_report, to_json(result.report));
            if (!sim_events.empty())
                write_text_file(sim_events, events_to_jsonl(result.events));
            const auto violations =
                check_invariants(result.events, program.permanent_library_functions(), policy.mode);
            if (!violations.empty()) {
                for (const auto& v : violations)
                    std::cerr << "invariant: " << v << '\n';
                fail(ErrorKind::Internal, std::to_string(violations.size()) + " loader invariant violations");
            }
        } else if (*rep) {
            const auto program = load_program(rep_program);
            const auto events = events_from_jsonl(read_text_file(rep_events), rep_events);
            const auto metrics = compute_metrics(program, events, load_cve_list(rep_cve));
            json out;
            if (!rep_sim.empty())
                out = benchmark_report(rep_name, metrics, simulation_report_from_json(read_json_file(rep_sim)));
            else
                out = {{"benchmark", rep_name}, {"metrics", to_json(metrics)}};
            write_json_file(rep_out, out);
            if (!rep_csv.empty())
                write_text_file(rep_csv, metrics_csv_header() + metrics_csv_row(rep_name, metrics));
        } else if (*pipe) {
            const fs::path config_path(pipe_config);
            const auto config =
                pipeline_config_from_json(read_json_file(config_path), config_path.parent_path());
            run_pipeline(config, pipe_jobs, &std::cerr);
        }
    } catch (const Error& e) {
        std::cerr << json{{"error", to_string(e.kind())}, {"message", e.what()}}.dump() << '\n';
        return e.exit_code();
    } catch (const fs::filesystem_error& e) {
        std::cerr << json{{"error", "io"}, {"message", e.what()}}.dump() << '\n';
        return static_cast<int>(ErrorKind::Io);
    } catch (const std::exception& e) {
        std::cerr << json{{"error", "internal"}, {"message", e.what()}}.dump() << '\n';
        return static_cast<int>(ErrorKind::Internal);
    }
    return 0;
}
