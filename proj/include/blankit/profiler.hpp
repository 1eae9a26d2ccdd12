#pragma once

// Turns execution traces into labelled training rows: one row per dynamic
// application call site, carrying the site's feature vector and the call
// chain the library actually executed.
//
// Chains come in two label spaces. The default one is the set of distinct
// library functions entered during the call, in first-entry order; the
// sequence space keeps every entry in order and backs full-chain mode.

#include <algorithm>
#include <charconv>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blankit/instrumentation.hpp"
#include "blankit/io.hpp"
#include "blankit/trace.hpp"

namespace blankit {

using Chain = std::vector<FunctionId>;
using ChainLabel = int;

/// Bijection between labels and chains. Label 0 is always the empty chain.
class ChainTable {
  public:
    ChainTable() : chains_{Chain{}} { index_[Chain{}] = 0; }

    ChainLabel intern(const Chain& c) {
        auto [it, inserted] = index_.emplace(c, static_cast<ChainLabel>(chains_.size()));
        if (inserted)
            chains_.push_back(c);
        return it->second;
    }

    std::optional<ChainLabel> find(const Chain& c) const {
        auto it = index_.find(c);
        if (it == index_.end())
            return std::nullopt;
        return it->second;
    }

    const Chain& chain(ChainLabel label) const {
        if (label < 0 || label >= size())
            fail(ErrorKind::InconsistentIds, "unknown chain label " + std::to_string(label));
        return chains_[label];
    }

    bool contains(ChainLabel label) const { return label >= 0 && label < size(); }
    int size() const { return static_cast<int>(chains_.size()); }
    const std::vector<Chain>& chains() const { return chains_; }

    /// Relabels so that labels follow lexicographic chain order. Labels then
    /// depend only on the set of chains, not on the order traces were read.
    std::vector<ChainLabel> canonicalize() {
        std::vector<Chain> sorted(chains_.begin(), chains_.end());
        std::sort(sorted.begin(), sorted.end());
        std::vector<ChainLabel> remap(chains_.size());
        ChainTable fresh;
        for (const auto& c : sorted)
            fresh.intern(c);
        for (std::size_t i = 0; i < chains_.size(); ++i)
            remap[i] = *fresh.find(chains_[i]);
        *this = std::move(fresh);
        return remap;
    }

    friend bool operator==(const ChainTable& a, const ChainTable& b) { return a.chains_ == b.chains_; }

  private:
    std::vector<Chain> chains_;
    std::map<Chain, ChainLabel> index_;
};

/// Both label spaces plus the sites that occurred during profiling.
struct ChainTables {
    ChainTable sets;
    ChainTable sequences;
    std::set<SiteId> trained_sites;

    /// Every library function that appears in some observed chain.
    std::set<FunctionId> seen_functions() const {
        std::set<FunctionId> out;
        for (const auto& c : sets.chains())
            out.insert(c.begin(), c.end());
        return out;
    }

    friend bool operator==(const ChainTables&, const ChainTables&) = default;
};

struct ProfileRecord {
    SiteId site = 0;
    std::vector<double> features;
    ChainLabel label = 0;      // set space
    ChainLabel seq_label = 0;  // sequence space
    friend bool operator==(const ProfileRecord&, const ProfileRecord&) = default;
};

struct Profile {
    std::vector<ProfileRecord> records;
    ChainTables chains;
};

/// First-entry-ordered distinct functions of a sequence.
inline Chain distinct_in_order(const Chain& seq) {
    Chain out;
    std::set<FunctionId> seen;
    for (FunctionId f : seq)
        if (seen.insert(f).second)
            out.push_back(f);
    return out;
}

/// Single pass over one trace. Feature state lives for the whole trace.
class Profiler {
  public:
    Profiler(const PlanSet& plans, ChainTables& tables, std::vector<ProfileRecord>& out)
        : plans_(&plans), features_(plans), tables_(&tables), out_(&out) {}

    void feed(const TraceEvent& ev) {
        std::visit([this](const auto& e) { on(e); }, ev);
        ++index_;
    }

    void finish() {
        if (!stack_.empty())
            fail(ErrorKind::Analysis, "trace ended inside library call to " +
                                          std::to_string(stack_.front()));
        flush();
    }

  private:
    void on(const BlockExec& e) { features_.on_block(e.fn, e.bb); }

    void on(const SiteReached& e) {
        if (!stack_.empty())
            fail(ErrorKind::Analysis, "event " + std::to_string(index_) + ": site " +
                                          std::to_string(e.site) + " reached inside a library call");
        if (!plans_->find(e.site))
            fail(ErrorKind::InconsistentIds, "event " + std::to_string(index_) + ": unknown site " +
                                                 std::to_string(e.site));
        flush();
        pending_ = ProfileRecord{e.site, features_.features(e.site, e.snapshot_values()), 0, 0};
        sequence_.clear();
    }

    void on(const LibEnter& e) {
        if (stack_.empty() && !pending_)
            fail(ErrorKind::Analysis, "event " + std::to_string(index_) +
                                          ": library entry without a preceding site");
        stack_.push_back(e.fn);
        sequence_.push_back(e.fn);
    }

    void on(const LibExit& e) {
        if (stack_.empty() || stack_.back() != e.fn)
            fail(ErrorKind::Analysis, "event " + std::to_string(index_) + ": unmatched exit from " +
                                          std::to_string(e.fn));
        stack_.pop_back();
        if (stack_.empty())
            flush();
    }

    void flush() {
        if (!pending_)
            return;
        pending_->label = tables_->sets.intern(distinct_in_order(sequence_));
        pending_->seq_label = tables_->sequences.intern(sequence_);
        tables_->trained_sites.insert(pending_->site);
        out_->push_back(std::move(*pending_));
        pending_.reset();
        sequence_.clear();
    }

    const PlanSet* plans_;
    FeatureState features_;
    ChainTables* tables_;
    std::vector<ProfileRecord>* out_;
    std::optional<ProfileRecord> pending_;
    std::vector<FunctionId> stack_;
    Chain sequence_;
    std::size_t index_ = 0;
};

/// Profiles several traces (each with fresh feature state) and canonicalizes
/// the chain labels.
inline Profile build_profile(const std::vector<std::vector<TraceEvent>>& traces, const PlanSet& plans) {
    Profile prof;
    for (const auto& trace : traces) {
        Profiler profiler(plans, prof.chains, prof.records);
        for (const auto& ev : trace)
            profiler.feed(ev);
        profiler.finish();
    }
    auto set_map = prof.chains.sets.canonicalize();
    auto seq_map = prof.chains.sequences.canonicalize();
    for (auto& r : prof.records) {
        r.label = set_map[r.label];
        r.seq_label = seq_map[r.seq_label];
    }
    return prof;
}

inline Profile build_profile(const std::vector<TraceEvent>& trace, const PlanSet& plans) {
    return build_profile(std::vector<std::vector<TraceEvent>>{trace}, plans);
}

inline json to_json(const ChainTable& t) {
    json arr = json::array();
    for (const auto& c : t.chains())
        arr.push_back(c);
    return arr;
}

inline ChainTable chain_table_from_json(const json& arr, const std::string& ctx) {
    if (!arr.is_array() || arr.empty() || !arr[0].is_array() || !arr[0].empty())
        fail(ErrorKind::Schema, ctx + ": chain table must be an array starting with []");
    ChainTable t;
    for (std::size_t i = 1; i < arr.size(); ++i) {
        Chain c;
        try {
            c = arr[i].get<Chain>();
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, ctx + ": bad chain " + std::to_string(i) + ": " + e.what());
        }
        if (t.intern(c) != static_cast<ChainLabel>(i))
            fail(ErrorKind::Schema, ctx + ": chain " + std::to_string(i) + " is a duplicate");
    }
    return t;
}

inline json to_json(const ChainTables& t) {
    return {{"sets", to_json(t.sets)},
            {"sequences", to_json(t.sequences)},
            {"trained_sites", t.trained_sites}};
}

inline ChainTables chain_tables_from_json(const json& j) {
    ChainTables t;
    t.sets = chain_table_from_json(get_field<json>(j, "sets", "chains"), "chains.sets");
    t.sequences = chain_table_from_json(get_field<json>(j, "sequences", "chains"), "chains.sequences");
    t.trained_sites = get_field<std::set<SiteId>>(j, "trained_sites", "chains");
    return t;
}

namespace detail {

inline std::string format_number(double v) {
    if (std::isfinite(v) && v == std::nearbyint(v) && std::fabs(v) < 9.0e15)
        return std::to_string(static_cast<std::int64_t>(v));
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s, const std::string& ctx) {
    double v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        fail(ErrorKind::Schema, ctx + ": not a number: '" + std::string(s) + "'");
    return v;
}

}  // namespace detail

/// Training table: header `site,f0,...,label`. Column `site` is feature 0 and
/// f<i> is feature i+1; rows shorter than the widest site are zero-padded.
inline std::string to_csv(const std::vector<ProfileRecord>& records, bool sequence_labels = false) {
    std::size_t width = 1;
    for (const auto& r : records)
        width = std::max(width, r.features.size());
    std::ostringstream os;
    os << "site";
    for (std::size_t i = 1; i < width; ++i)
        os << ",f" << (i - 1);
    os << ",label\n";
    for (const auto& r : records) {
        for (std::size_t i = 0; i < width; ++i) {
            if (i)
                os << ',';
            os << detail::format_number(i < r.features.size() ? r.features[i] : 0.0);
        }
        os << ',' << (sequence_labels ? r.seq_label : r.label) << '\n';
    }
    return os.str();
}

/// Reads a training table back; every row becomes a record whose features
/// are all columns except the label.
inline std::vector<ProfileRecord> records_from_csv(const std::string& text, const std::string& origin = "csv") {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::size_t columns = 0;
    std::vector<ProfileRecord> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        std::vector<std::string_view> cells;
        std::string_view rest(line);
        while (true) {
            auto comma = rest.find(',');
            cells.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos)
                break;
            rest.remove_prefix(comma + 1);
        }
        const std::string ctx = origin + ":" + std::to_string(line_no);
        if (columns == 0) {
            if (cells.size() < 2 || cells.front() != "site" || cells.back() != "label")
                fail(ErrorKind::Schema, ctx + ": header must be site,f0,...,label");
            columns = cells.size();
            continue;
        }
        if (cells.size() != columns)
            fail(ErrorKind::Schema, ctx + ": expected " + std::to_string(columns) + " columns");
        ProfileRecord r;
        for (std::size_t i = 0; i + 1 < cells.size(); ++i)
            r.features.push_back(detail::parse_number(cells[i], ctx));
        r.site = static_cast<SiteId>(r.features[0]);
        r.label = static_cast<ChainLabel>(detail::parse_number(cells.back(), ctx));
        r.seq_label = r.label;
        out.push_back(std::move(r));
    }
    if (columns == 0)
        fail(ErrorKind::Schema, origin + ": empty training table");
    return out;
}

}  // namespace blankit
