#pragma once

// Attack-surface metrics recomputed from program metadata and a simulator
// event log. Counts are integers and percentages are kept as exact fractions
// until they are printed.

#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blankit/error.hpp"
#include "blankit/io.hpp"
#include "blankit/ir.hpp"
#include "blankit/runtime_sim.hpp"

namespace blankit {

/// 100 * num / den, reduced.
struct Percent {
    std::int64_t num = 0;
    std::int64_t den = 1;

    static Percent of(std::int64_t part, std::int64_t whole) {
        std::int64_t n = 100 * part, d = whole;
        std::int64_t g = std::gcd(n, d);
        if (g == 0)
            g = 1;
        return {n / g, d / g};
    }

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    friend bool operator==(const Percent&, const Percent&) = default;
};

inline std::string format_percent(const Percent& p, int decimals = 1) {
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(decimals);
    os << p.value();
    return os.str();
}

inline std::size_t compute_exposed(std::size_t p_count, std::size_t s_count, std::size_t c_max) {
    return p_count + s_count + c_max;
}

inline Percent compute_reduction(std::size_t total, std::size_t exposed) {
    if (total == 0)
        fail(ErrorKind::Analysis, "reduction needs a non-empty library");
    if (exposed > total)
        fail(ErrorKind::Analysis, "exposed count " + std::to_string(exposed) + " exceeds total " +
                                      std::to_string(total));
    return Percent::of(static_cast<std::int64_t>(total - exposed), static_cast<std::int64_t>(total));
}

struct CveExposure {
    std::size_t exposed = 0;
    Percent reduction;
};

/// exposedcve = p + s + a, capped at the list size so the reduction stays
/// within [0, 100].
inline CveExposure compute_cve_exposure(std::size_t p_count, std::size_t s_count, std::size_t called_cve,
                                        std::size_t list_size) {
    if (list_size == 0)
        fail(ErrorKind::Analysis, "CVE function list is empty");
    CveExposure out;
    out.exposed = std::min(p_count + s_count + called_cve, list_size);
    out.reduction = Percent::of(static_cast<std::int64_t>(list_size - out.exposed),
                                static_cast<std::int64_t>(list_size));
    return out;
}

inline std::uint64_t total_library_gadgets(const Program& p) {
    std::uint64_t sum = 0;
    for (FunctionId f : p.library_ids())
        sum += p.function(f).gadget_count;
    return sum;
}

inline std::uint64_t gadget_sum(const Program& p, const std::set<FunctionId>& fns) {
    std::uint64_t sum = 0;
    for (FunctionId f : fns)
        sum += p.function(f).gadget_count;
    return sum;
}

inline Percent compute_gadget_reduction(const Program& p, const std::set<FunctionId>& worst_loaded) {
    const std::uint64_t total = total_library_gadgets(p);
    if (total == 0)
        fail(ErrorKind::Analysis, "library has no gadgets");
    const std::uint64_t exposed = gadget_sum(p, worst_loaded);
    if (exposed > total)
        fail(ErrorKind::Analysis, "exposed gadgets exceed the library total");
    return Percent::of(static_cast<std::int64_t>(total - exposed), static_cast<std::int64_t>(total));
}

/// Everything the metrics need, recounted from an event log.
struct LogSummary {
    std::size_t c_max = 0;
    std::set<FunctionId> worst_gadget_set;  // includes permanent functions
    std::uint64_t worst_gadgets = 0;
    std::set<FunctionId> entered;
    std::map<SiteId, SiteStats> per_site;
    SiteStats total;
    std::size_t attacks = 0;
    std::size_t legal = 0;
    std::size_t unknown = 0;
    std::size_t faults = 0;
};

inline LogSummary summarize_log(const Program& p, const std::vector<SimEvent>& events) {
    LogSummary out;
    const auto permanent = p.permanent_library_functions();
    std::set<FunctionId> loaded;
    bool first = true;
    auto track = [&] {
        out.c_max = std::max(out.c_max, loaded.size());
        std::set<FunctionId> present = loaded;
        present.insert(permanent.begin(), permanent.end());
        const auto g = gadget_sum(p, present);
        if (first || g > out.worst_gadgets) {
            first = false;
            out.worst_gadgets = g;
            out.worst_gadget_set = std::move(present);
        }
    };
    track();

    struct Open {
        SiteId site;
        bool under = false;
        bool over = false;
    };
    std::optional<Open> call;
    auto close = [&] {
        if (!call)
            return;
        SiteStats s;
        s.calls = 1;
        if (call->under)
            s.underpredictions = 1;
        else if (call->over)
            s.overpredictions = 1;
        else
            s.hits = 1;
        out.per_site[call->site].add(s);
        out.total.add(s);
        call.reset();
    };

    for (const auto& ev : events) {
        if (const auto* pr = std::get_if<sim::Probe>(&ev)) {
            close();
            call = Open{pr->site};
        } else if (const auto* c = std::get_if<sim::Copy>(&ev)) {
            loaded.insert(c->fn);
            track();
        } else if (const auto* b = std::get_if<sim::Blank>(&ev)) {
            for (FunctionId f : b->fns)
                loaded.erase(f);
        } else if (const auto* h = std::get_if<sim::Hit>(&ev)) {
            out.entered.insert(h->fn);
        } else if (const auto* m = std::get_if<sim::Mispredict>(&ev)) {
            if (m->kind == MispredictKind::Under) {
                out.entered.insert(m->fn);
                if (call)
                    call->under = true;
            } else if (call) {
                call->over = true;
            }
        } else if (const auto* a = std::get_if<sim::Audit>(&ev)) {
            if (a->verdict == Verdict::Attack)
                ++out.attacks;
            else if (a->verdict == Verdict::Legal)
                ++out.legal;
            else
                ++out.unknown;
        } else if (std::holds_alternative<sim::Fault>(ev)) {
            ++out.faults;
        }
    }
    close();
    return out;
}

struct SurfaceMetrics {
    std::size_t p_count = 0;
    std::size_t s_count = 0;
    std::size_t c_max = 0;
    std::size_t exposed = 0;
    std::size_t total_functions = 0;
    Percent reduction;
    std::uint64_t exposed_gadgets = 0;
    std::uint64_t total_gadgets = 0;
    Percent gadget_reduction;
    std::size_t cve_exposed = 0;
    std::size_t cve_total = 0;
    Percent cve_reduction;
    std::set<FunctionId> cve_called;
    SiteStats calls;
};

/// CVE names that do not name a library function still count toward the
/// list size; they simply can never be called.
inline SurfaceMetrics compute_metrics(const Program& p, const std::vector<SimEvent>& events,
                                      const std::vector<std::string>& cve_names) {
    SurfaceMetrics m;
    std::tie(m.p_count, m.s_count) = permanent_counts(p);
    const auto log = summarize_log(p, events);
    m.c_max = log.c_max;
    m.exposed = compute_exposed(m.p_count, m.s_count, m.c_max);
    m.total_functions = p.library_ids().size();
    m.reduction = compute_reduction(m.total_functions, m.exposed);
    m.total_gadgets = total_library_gadgets(p);
    m.exposed_gadgets = log.worst_gadgets;
    m.gadget_reduction = compute_gadget_reduction(p, log.worst_gadget_set);

    const auto permanent = p.permanent_library_functions();
    std::set<std::string> names(cve_names.begin(), cve_names.end());
    for (FunctionId f : log.entered)
        if (!permanent.count(f) && names.count(p.function(f).name))
            m.cve_called.insert(f);
    m.cve_total = names.size();
    auto cve = compute_cve_exposure(m.p_count, m.s_count, m.cve_called.size(), m.cve_total);
    m.cve_exposed = cve.exposed;
    m.cve_reduction = cve.reduction;
    m.calls = log.total;
    return m;
}

inline json percent_json(const Percent& p) {
    return {{"value", p.value()}, {"exact", std::to_string(p.num) + "/" + std::to_string(p.den)}};
}

inline json to_json(const SurfaceMetrics& m) {
    return {{"p_count", m.p_count},
            {"s_count", m.s_count},
            {"c_max", m.c_max},
            {"exposed", m.exposed},
            {"total_functions", m.total_functions},
            {"reduction_percent", percent_json(m.reduction)},
            {"exposed_gadgets", m.exposed_gadgets},
            {"total_gadgets", m.total_gadgets},
            {"gadget_reduction_percent", percent_json(m.gadget_reduction)},
            {"cve_exposed", m.cve_exposed},
            {"cve_total", m.cve_total},
            {"cve_reduction_percent", percent_json(m.cve_reduction)},
            {"cve_called", m.cve_called},
            {"calls", to_json(m.calls)}};
}

/// Full report for one benchmark: metrics plus the simulation summary, with
/// a consistency check between the two.
inline json benchmark_report(const std::string& name, const SurfaceMetrics& m, const SimulationReport& sim) {
    return {{"benchmark", name},
            {"metrics", to_json(m)},
            {"simulation", to_json(sim)},
            {"consistent", sim.max_exposed_functions == m.exposed && sim.c_max == m.c_max &&
                               sim.total == m.calls}};
}

inline std::string metrics_csv_header() { return "benchmark,reduction,gadget_reduction,cve_reduction,accuracy\n"; }

inline std::string metrics_csv_row(const std::string& name, const SurfaceMetrics& m) {
    std::ostringstream acc;
    acc.setf(std::ios::fixed);
    acc.precision(1);
    acc << m.calls.accuracy();
    return name + "," + format_percent(m.reduction) + "," + format_percent(m.gadget_reduction) + "," +
           format_percent(m.cve_reduction) + "," + acc.str() + "\n";
}

inline std::vector<std::string> load_cve_list(const std::filesystem::path& path) {
    auto j = read_json_file(path);
    if (!j.is_array())
        fail(ErrorKind::Schema, path.string() + ": CVE list must be a JSON array of names");
    std::vector<std::string> out;
    for (const auto& v : j) {
        if (!v.is_string())
            fail(ErrorKind::Schema, path.string() + ": CVE list entries must be strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

}  // namespace blankit
