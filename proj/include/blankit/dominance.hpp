#pragma once

// Postdominance and reverse dominance frontiers over one function's CFG, plus
// the whole-program call-graph queries used by the metrics.
//
// Postdominance needs a unique exit. A virtual exit node is synthesized with
// edges from every block that has no successors and from the lowest-id block
// of every exit-free sink SCC (infinite loops). After those edges are added
// every block reaches the virtual exit.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "blankit/error.hpp"
#include "blankit/ir.hpp"

namespace blankit {

/// Dense, index-based view of a function's CFG. Blocks are indexed in
/// ascending id order; index size() is the virtual exit.
class Cfg {
  public:
    explicit Cfg(const FunctionDef& f) {
        for (const auto& bb : f.blocks)
            ids_.push_back(bb.id);
        std::sort(ids_.begin(), ids_.end());
        if (std::adjacent_find(ids_.begin(), ids_.end()) != ids_.end())
            fail(ErrorKind::Analysis, "function " + std::to_string(f.id) + " has duplicate block ids");
        for (int i = 0; i < size(); ++i)
            index_[ids_[i]] = i;
        if (!index_.count(f.entry_block))
            fail(ErrorKind::Analysis, "function " + std::to_string(f.id) + ": entry block " +
                                          std::to_string(f.entry_block) + " does not exist");
        entry_ = index_.at(f.entry_block);

        real_succs_.assign(size(), {});
        for (const auto& bb : f.blocks) {
            auto& out = real_succs_[index_.at(bb.id)];
            for (BlockId s : bb.successors) {
                auto it = index_.find(s);
                if (it == index_.end())
                    fail(ErrorKind::Analysis, "function " + std::to_string(f.id) + ": block " +
                                                  std::to_string(bb.id) +
                                                  " has a successor edge to missing block " +
                                                  std::to_string(s));
                if (std::find(out.begin(), out.end(), it->second) == out.end())
                    out.push_back(it->second);
            }
        }
        succs_ = real_succs_;
        succs_.emplace_back();
        for (int i = 0; i < size(); ++i)
            if (real_succs_[i].empty())
                exit_sources_.push_back(i);
        for (int i : exit_free_sink_representatives())
            exit_sources_.push_back(i);
        std::sort(exit_sources_.begin(), exit_sources_.end());
        for (int i : exit_sources_)
            succs_[i].push_back(exit_node());

        preds_.assign(size() + 1, {});
        for (int i = 0; i <= size(); ++i)
            for (int s : succs_[i])
                preds_[s].push_back(i);
    }

    int size() const { return static_cast<int>(ids_.size()); }
    int exit_node() const { return size(); }
    int entry() const { return entry_; }
    BlockId block_id(int i) const { return ids_.at(i); }

    int index_of(BlockId b) const {
        auto it = index_.find(b);
        if (it == index_.end())
            fail(ErrorKind::Analysis, "unknown block id " + std::to_string(b));
        return it->second;
    }
    bool contains(BlockId b) const { return index_.count(b) != 0; }

    /// Successors including the virtual exit edges.
    const std::vector<int>& succs(int i) const { return succs_[i]; }
    const std::vector<int>& preds(int i) const { return preds_[i]; }
    const std::vector<int>& real_succs(int i) const { return real_succs_[i]; }
    /// Blocks wired to the virtual exit, ascending.
    const std::vector<int>& exit_sources() const { return exit_sources_; }

  private:
    std::vector<int> exit_free_sink_representatives() const {
        const int n = size();
        std::vector<char> reaches(n, 0);
        std::vector<std::vector<int>> rpreds(n);
        for (int i = 0; i < n; ++i)
            for (int s : real_succs_[i])
                rpreds[s].push_back(i);
        std::vector<int> work;
        for (int i = 0; i < n; ++i)
            if (real_succs_[i].empty()) {
                reaches[i] = 1;
                work.push_back(i);
            }
        while (!work.empty()) {
            int b = work.back();
            work.pop_back();
            for (int p : rpreds[b])
                if (!reaches[p]) {
                    reaches[p] = 1;
                    work.push_back(p);
                }
        }
        // Tarjan over the blocks that cannot reach an exit.
        std::vector<int> comp(n, -1), low(n, 0), num(n, -1), stack;
        std::vector<char> on_stack(n, 0);
        int counter = 0, ncomp = 0;
        std::function<void(int)> strong = [&](int v) {
            num[v] = low[v] = counter++;
            stack.push_back(v);
            on_stack[v] = 1;
            for (int w : real_succs_[v]) {
                if (reaches[w])
                    continue;
                if (num[w] < 0) {
                    strong(w);
                    low[v] = std::min(low[v], low[w]);
                } else if (on_stack[w]) {
                    low[v] = std::min(low[v], num[w]);
                }
            }
            if (low[v] == num[v]) {
                int w;
                do {
                    w = stack.back();
                    stack.pop_back();
                    on_stack[w] = 0;
                    comp[w] = ncomp;
                } while (w != v);
                ++ncomp;
            }
        };
        for (int i = 0; i < n; ++i)
            if (!reaches[i] && num[i] < 0)
                strong(i);
        std::vector<char> is_sink(ncomp, 1);
        std::vector<int> rep(ncomp, n);
        for (int i = 0; i < n; ++i) {
            if (reaches[i])
                continue;
            rep[comp[i]] = std::min(rep[comp[i]], i);
            for (int s : real_succs_[i])
                if (comp[s] != comp[i])
                    is_sink[comp[i]] = 0;
        }
        std::vector<int> out;
        for (int c = 0; c < ncomp; ++c)
            if (is_sink[c])
                out.push_back(rep[c]);
        return out;
    }

    std::vector<BlockId> ids_;
    std::map<BlockId, int> index_;
    int entry_ = 0;
    std::vector<std::vector<int>> real_succs_, succs_, preds_;
    std::vector<int> exit_sources_;
};

/// Postdominator sets, the postdominator tree and reverse dominance frontiers
/// of one function. Immutable once built.
class PostDominance {
  public:
    explicit PostDominance(const FunctionDef& f) : cfg_(f) {
        const int n = cfg_.size() + 1;
        const int exit = cfg_.exit_node();
        pdom_.assign(n, std::vector<char>(n, 1));
        pdom_[exit].assign(n, 0);
        pdom_[exit][exit] = 1;
        bool changed = true;
        while (changed) {
            changed = false;
            for (int b = n - 2; b >= 0; --b) {
                std::vector<char> next(n, 1);
                for (int s : cfg_.succs(b))
                    for (int k = 0; k < n; ++k)
                        next[k] = next[k] && pdom_[s][k];
                next[b] = 1;
                if (next != pdom_[b]) {
                    pdom_[b] = std::move(next);
                    changed = true;
                }
            }
        }

        // The immediate postdominator is the strict postdominator whose own
        // set is exactly one smaller.
        ipdom_.assign(n, -1);
        for (int b = 0; b < n - 1; ++b) {
            int count = set_size(b);
            for (int d = 0; d < n; ++d)
                if (d != b && pdom_[b][d] && set_size(d) == count - 1) {
                    ipdom_[b] = d;
                    break;
                }
        }

        rdf_.assign(n - 1, {});
        for (int a = 0; a < n - 1; ++a)
            for (int s : cfg_.succs(a))
                for (int runner = s; runner != ipdom_[a] && runner != exit; runner = ipdom_[runner])
                    rdf_[runner].insert(cfg_.block_id(a));
    }

    const Cfg& cfg() const { return cfg_; }

    /// True when every path from `b` to exit passes through `a`.
    bool postdominates(BlockId a, BlockId b) const {
        return pdom_[cfg_.index_of(b)][cfg_.index_of(a)] != 0;
    }

    std::set<BlockId> postdominators(BlockId b) const {
        std::set<BlockId> out;
        const auto& row = pdom_[cfg_.index_of(b)];
        for (int k = 0; k < cfg_.size(); ++k)
            if (row[k])
                out.insert(cfg_.block_id(k));
        return out;
    }

    /// Immediate postdominator, or nullopt when it is the virtual exit.
    std::optional<BlockId> immediate_postdominator(BlockId b) const {
        int d = ipdom_[cfg_.index_of(b)];
        if (d < 0 || d == cfg_.exit_node())
            return std::nullopt;
        return cfg_.block_id(d);
    }

    /// Blocks on which `b` is control dependent.
    const std::set<BlockId>& rdf(BlockId b) const { return rdf_[cfg_.index_of(b)]; }

  private:
    int set_size(int b) const {
        int c = 0;
        for (char v : pdom_[b])
            c += v;
        return c;
    }

    Cfg cfg_;
    std::vector<std::vector<char>> pdom_;
    std::vector<int> ipdom_;
    std::vector<std::set<BlockId>> rdf_;
};

inline std::map<BlockId, std::set<BlockId>> compute_postdominators(const FunctionDef& f) {
    PostDominance pd(f);
    std::map<BlockId, std::set<BlockId>> out;
    for (int i = 0; i < pd.cfg().size(); ++i)
        out[pd.cfg().block_id(i)] = pd.postdominators(pd.cfg().block_id(i));
    return out;
}

inline std::set<BlockId> compute_rdf(const FunctionDef& f, BlockId b) {
    return PostDominance(f).rdf(b);
}

struct ReachableLibraryFunctions {
    std::set<FunctionId> functions;
    std::size_t unknown_roots = 0;
};

/// Transitive closure over library-to-library call edges starting from the
/// library members of `roots`. Non-library roots are skipped silently; roots
/// that do not name any function are counted.
inline ReachableLibraryFunctions reachable_library_functions(const Program& p,
                                                             const std::set<FunctionId>& roots) {
    ReachableLibraryFunctions out;
    std::vector<FunctionId> work;
    for (FunctionId r : roots) {
        if (!p.find(r)) {
            ++out.unknown_roots;
            continue;
        }
        if (p.is_library(r) && out.functions.insert(r).second)
            work.push_back(r);
    }
    while (!work.empty()) {
        FunctionId f = work.back();
        work.pop_back();
        auto it = p.call_graph().find(f);
        if (it == p.call_graph().end())
            continue;
        for (const auto& edge : it->second)
            if (p.is_library(edge.callee) && out.functions.insert(edge.callee).second)
                work.push_back(edge.callee);
    }
    return out;
}

/// Node count of the longest simple call path, restricted to library
/// functions, that starts at a library root.
inline int max_static_callchain_depth(const Program& p, const std::set<FunctionId>& roots) {
    auto reach = reachable_library_functions(p, roots).functions;
    if (reach.empty())
        return 0;
    std::map<FunctionId, std::vector<FunctionId>> adj;
    for (FunctionId f : reach) {
        auto& out = adj[f];
        for (const auto& edge : p.call_graph().at(f))
            if (reach.count(edge.callee) && edge.callee != f &&
                (out.empty() || out.back() != edge.callee))
                out.push_back(edge.callee);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
    }

    // Acyclic (self loops aside): memoized longest path. Otherwise fall back
    // to exhaustive simple-path search.
    std::map<FunctionId, int> state, memo;
    bool cyclic = false;
    std::function<int(FunctionId)> longest = [&](FunctionId f) -> int {
        if (state[f] == 2)
            return memo[f];
        if (state[f] == 1) {
            cyclic = true;
            return 0;
        }
        state[f] = 1;
        int best = 0;
        for (FunctionId c : adj[f])
            best = std::max(best, longest(c));
        state[f] = 2;
        return memo[f] = best + 1;
    };
    int best = 0;
    for (FunctionId r : roots)
        if (reach.count(r))
            best = std::max(best, longest(r));
    if (!cyclic)
        return best;

    std::set<FunctionId> on_path;
    std::function<int(FunctionId)> dfs = [&](FunctionId f) -> int {
        on_path.insert(f);
        int deepest = 0;
        for (FunctionId c : adj[f])
            if (!on_path.count(c))
                deepest = std::max(deepest, dfs(c));
        on_path.erase(f);
        return deepest + 1;
    };
    best = 0;
    for (FunctionId r : roots)
        if (reach.count(r))
            best = std::max(best, dfs(r));
    return best;
}

}  // namespace blankit
