#pragma once

// CFG and program generators for the property tests.

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "blankit/ir.hpp"

namespace blankit::testing {

using Succs = std::vector<std::vector<int>>;

inline FunctionDef make_function(const Succs& succ, FunctionId id = 0) {
    FunctionDef f;
    f.id = id;
    f.name = "f" + std::to_string(id);
    f.size_bytes = 64;
    for (int b = 0; b < static_cast<int>(succ.size()); ++b)
        f.blocks.push_back(BasicBlock{b, {}, succ[b]});
    return f;
}

/// Every CFG with `n` blocks, at most two successors per block (self edges
/// allowed) and all blocks reachable from block 0. Blocks are numbered in
/// breadth-first discovery order, which keeps the count down while still
/// producing every shape at least once.
inline void for_each_cfg(int n, const std::function<void(const Succs&)>& visit) {
    Succs succ(n);
    // Block u chooses its successors among already discovered blocks
    // [0, next) plus a prefix of the undiscovered ones.
    std::function<void(int, int)> rec = [&](int u, int next) {
        if (u == n) {
            if (next == n)
                visit(succ);
            return;
        }
        if (u >= next)
            return;  // u would be unreachable
        auto emit = [&](std::vector<int> s, int discovered) {
            succ[u] = std::move(s);
            rec(u + 1, next + discovered);
        };
        emit({}, 0);
        for (int a = 0; a < next; ++a)
            emit({a}, 0);
        if (next < n)
            emit({next}, 1);
        for (int a = 0; a < next; ++a)
            for (int b = a + 1; b < next; ++b)
                emit({a, b}, 0);
        if (next < n)
            for (int a = 0; a < next; ++a)
                emit({a, next}, 1);
        if (next + 1 < n)
            emit({next, next + 1}, 2);
    };
    rec(0, 1);
}

/// Random CFG with every block reachable from block 0: a random spanning
/// tree plus extra edges, up to three successors per block.
inline Succs random_cfg(std::mt19937_64& rng, int n) {
    Succs succ(n);
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    for (int b = 1; b < n; ++b)
        succ[uni(0, b - 1)].push_back(b);
    const int extra = uni(0, n + 2);
    for (int i = 0; i < extra; ++i) {
        int a = uni(0, n - 1), b = uni(0, n - 1);
        auto& s = succ[a];
        if (s.size() < 3 && std::find(s.begin(), s.end(), b) == s.end())
            s.push_back(b);
    }
    return succ;
}

/// Random library-only program: up to `max_fns` functions with up to
/// `max_blocks` blocks each, calls placed in random blocks.
inline Program random_library(std::mt19937_64& rng, int max_fns, int max_blocks) {
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    const int nf = uni(1, max_fns);
    std::vector<FunctionDef> fns;
    SiteId site = 0;
    for (int f = 0; f < nf; ++f) {
        auto fn = make_function(random_cfg(rng, uni(1, max_blocks)), f);
        fn.is_library = true;
        const int calls = uni(0, 3);
        for (int c = 0; c < calls; ++c) {
            auto& bb = fn.blocks[uni(0, static_cast<int>(fn.blocks.size()) - 1)];
            bb.instructions.push_back(CallInstr{site++, uni(0, nf - 1), {}});
        }
        fns.push_back(std::move(fn));
    }
    return Program(std::move(fns));
}

}  // namespace blankit::testing
