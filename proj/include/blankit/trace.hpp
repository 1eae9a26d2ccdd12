#pragma once

// Replayable execution traces, one JSON event per line:
//   {"ev":"bb","fn":F,"bb":B}
//   {"ev":"site","site":S,"args":[...]}       optional "snap":[...]
//   {"ev":"enter","fn":F}
//   {"ev":"exit","fn":F}
// "snap" holds the argument values copied at the plan's snapshot points. It
// differs from "args" only when the arguments were tampered with after the
// snapshot; when absent it equals "args".

#include <cmath>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "blankit/io.hpp"
#include "blankit/ir.hpp"

namespace blankit {

struct BlockExec {
    FunctionId fn = 0;
    BlockId bb = 0;
    friend bool operator==(const BlockExec&, const BlockExec&) = default;
};

struct SiteReached {
    SiteId site = 0;
    std::vector<double> args;
    std::optional<std::vector<double>> snapshot;

    /// Values the predictor and auditor see.
    const std::vector<double>& snapshot_values() const { return snapshot ? *snapshot : args; }

    friend bool operator==(const SiteReached&, const SiteReached&) = default;
};

struct LibEnter {
    FunctionId fn = 0;
    friend bool operator==(const LibEnter&, const LibEnter&) = default;
};

struct LibExit {
    FunctionId fn = 0;
    friend bool operator==(const LibExit&, const LibExit&) = default;
};

using TraceEvent = std::variant<BlockExec, SiteReached, LibEnter, LibExit>;

namespace detail {

inline json number_json(double v) {
    if (std::isfinite(v) && v == std::nearbyint(v) && std::fabs(v) < 9.0e15)
        return json(static_cast<std::int64_t>(v));
    return json(v);
}

inline json numbers_json(const std::vector<double>& vs) {
    json arr = json::array();
    for (double v : vs)
        arr.push_back(number_json(v));
    return arr;
}

}  // namespace detail

inline json to_json(const TraceEvent& ev) {
    return std::visit(
        [](const auto& e) -> json {
            using T = std::decay_t<decltype(e)>;
            if constexpr (std::is_same_v<T, BlockExec>)
                return {{"ev", "bb"}, {"fn", e.fn}, {"bb", e.bb}};
            else if constexpr (std::is_same_v<T, SiteReached>) {
                json j = {{"ev", "site"}, {"site", e.site}, {"args", detail::numbers_json(e.args)}};
                if (e.snapshot)
                    j["snap"] = detail::numbers_json(*e.snapshot);
                return j;
            } else if constexpr (std::is_same_v<T, LibEnter>)
                return {{"ev", "enter"}, {"fn", e.fn}};
            else
                return {{"ev", "exit"}, {"fn", e.fn}};
        },
        ev);
}

inline TraceEvent trace_event_from_json(const json& j, const std::string& ctx) {
    auto ev = get_field<std::string>(j, "ev", ctx);
    if (ev == "bb")
        return BlockExec{get_field<int>(j, "fn", ctx), get_field<int>(j, "bb", ctx)};
    if (ev == "site") {
        SiteReached s{get_field<int>(j, "site", ctx), get_field<std::vector<double>>(j, "args", ctx), {}};
        if (j.contains("snap"))
            s.snapshot = get_field<std::vector<double>>(j, "snap", ctx);
        return s;
    }
    if (ev == "enter")
        return LibEnter{get_field<int>(j, "fn", ctx)};
    if (ev == "exit")
        return LibExit{get_field<int>(j, "fn", ctx)};
    fail(ErrorKind::Schema, ctx + ": unknown event kind '" + ev + "'");
}

/// Streaming JSONL reader; blank lines are skipped.
class TraceReader {
  public:
    explicit TraceReader(std::istream& in, std::string origin = "trace")
        : in_(&in), origin_(std::move(origin)) {}

    std::optional<TraceEvent> next() {
        std::string line;
        while (std::getline(*in_, line)) {
            ++line_no_;
            if (line.find_first_not_of(" \t\r") == std::string::npos)
                continue;
            const std::string ctx = origin_ + ":" + std::to_string(line_no_);
            return trace_event_from_json(parse_json(line, ctx), ctx);
        }
        return std::nullopt;
    }

    std::size_t line() const { return line_no_; }

  private:
    std::istream* in_;
    std::string origin_;
    std::size_t line_no_ = 0;
};

inline void write_event(std::ostream& out, const TraceEvent& ev) { out << to_json(ev).dump() << '\n'; }

inline std::vector<TraceEvent> read_trace(std::istream& in, const std::string& origin = "trace") {
    TraceReader reader(in, origin);
    std::vector<TraceEvent> out;
    while (auto ev = reader.next())
        out.push_back(std::move(*ev));
    return out;
}

inline std::vector<TraceEvent> load_trace(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        fail(ErrorKind::Io, "cannot open " + path.string());
    return read_trace(in, path.string());
}

inline void save_trace(const std::filesystem::path& path, const std::vector<TraceEvent>& events) {
    std::ostringstream os;
    for (const auto& ev : events)
        write_event(os, ev);
    write_text_file(path, os.str());
}

}  // namespace blankit
