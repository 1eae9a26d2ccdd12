#include <random>

#include <gtest/gtest.h>

#include "blankit/dominance.hpp"
#include "cfg_gen.hpp"
#include "oracles.hpp"

using namespace blankit;
using namespace blankit::testing;

namespace {

// Compares library results to the path oracle; returns a description of the
// first mismatch or an empty string.
std::string compare(const Succs& succ) {
    const auto f = make_function(succ);
    const auto pdom = compute_postdominators(f);
    PostDominance pd(f);
    PathOracle oracle(succ);
    for (int b = 0; b < static_cast<int>(succ.size()); ++b) {
        if (pdom.at(b) != oracle.postdominators(b))
            return "pdom(" + std::to_string(b) + ")";
        if (pd.rdf(b) != oracle.rdf(b))
            return "rdf(" + std::to_string(b) + ")";
    }
    return {};
}

}  // namespace

TEST(Dominance, Diamond) {
    // 0 -> {1,2} -> 3
    Succs g{{1, 2}, {3}, {3}, {}};
    PostDominance pd(make_function(g));
    EXPECT_TRUE(pd.postdominates(3, 0));
    EXPECT_FALSE(pd.postdominates(1, 0));
    EXPECT_EQ(pd.immediate_postdominator(0), 3);
    EXPECT_EQ(pd.immediate_postdominator(3), std::nullopt);
    EXPECT_EQ(pd.rdf(1), (std::set<BlockId>{0}));
    EXPECT_EQ(pd.rdf(2), (std::set<BlockId>{0}));
    EXPECT_TRUE(pd.rdf(3).empty());
    EXPECT_TRUE(pd.rdf(0).empty());
}

TEST(Dominance, LoopHeaderControlsItself) {
    // 0 -> 1; 1 -> {1, 2}
    Succs g{{1}, {1, 2}, {}};
    PostDominance pd(make_function(g));
    EXPECT_EQ(pd.rdf(1), (std::set<BlockId>{1}));
    EXPECT_TRUE(pd.postdominates(2, 0));
}

TEST(Dominance, InfiniteLoopGetsVirtualExitEdge) {
    // 0 -> {1, 3}; 1 <-> 2 forever; 3 returns.
    Succs g{{1, 3}, {2}, {1}, {}};
    PostDominance pd(make_function(g));
    EXPECT_EQ(pd.cfg().exit_sources(), (std::vector<int>{1, 3}));
    EXPECT_TRUE(pd.postdominates(1, 2));
    EXPECT_FALSE(pd.postdominates(3, 0));
    EXPECT_EQ(pd.rdf(3), (std::set<BlockId>{0}));
}

TEST(Dominance, NonContiguousBlockIds) {
    FunctionDef f;
    f.entry_block = 10;
    f.blocks = {BasicBlock{10, {}, {30, 20}}, BasicBlock{20, {}, {40}}, BasicBlock{30, {}, {40}},
                BasicBlock{40, {}, {}}};
    PostDominance pd(f);
    EXPECT_TRUE(pd.postdominates(40, 10));
    EXPECT_EQ(pd.rdf(20), (std::set<BlockId>{10}));
}

TEST(Dominance, MissingSuccessorIsAnAnalysisError) {
    FunctionDef f;
    f.blocks = {BasicBlock{0, {}, {7}}};
    try {
        PostDominance pd(f);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Analysis);
    }
}

TEST(Dominance, EnumeratorCountsSmallGraphs) {
    // Hand-counted. One block: return or self loop. Two blocks: block 0 goes
    // to {1} or {0,1}, and block 1 picks any subset of {0,1}.
    int one = 0, two = 0;
    for_each_cfg(1, [&](const Succs&) { ++one; });
    for_each_cfg(2, [&](const Succs&) { ++two; });
    EXPECT_EQ(one, 2);
    EXPECT_EQ(two, 2 * 4);
}

TEST(Dominance, ExhaustiveUpToFiveBlocksMatchesPathOracle) {
    for (int n = 1; n <= 5; ++n)
        for_each_cfg(n, [&](const Succs& g) { ASSERT_EQ(compare(g), "") << "n=" << n; });
}

TEST(Dominance, RandomGraphsMatchPathOracle) {
    std::mt19937_64 rng(7);
    for (int i = 0; i < 300; ++i) {
        auto g = random_cfg(rng, 1 + static_cast<int>(rng() % 12));
        ASSERT_EQ(compare(g), "") << "graph " << i;
    }
}

TEST(Dominance, IpdomIsTheClosestStrictPostdominator) {
    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
        auto g = random_cfg(rng, 2 + static_cast<int>(rng() % 10));
        PostDominance pd(make_function(g));
        PathOracle oracle(g);
        for (int b = 0; b < static_cast<int>(g.size()); ++b) {
            auto d = pd.immediate_postdominator(b);
            if (!d)
                continue;
            ASSERT_NE(*d, b);
            ASSERT_TRUE(oracle.postdominates(*d, b));
            // Every other strict postdominator of b also postdominates d.
            for (BlockId o : oracle.postdominators(b))
                if (o != b) {
                    ASSERT_TRUE(oracle.postdominates(o, *d));
                }
        }
    }
}

TEST(Reachability, ClosureAndChainDepth) {
    // app 0 calls lib 1; 1 -> 2 -> 3; 4 is unreachable. Roots are library
    // functions; app roots contribute nothing.
    std::vector<FunctionDef> fns;
    auto fn = [&](FunctionId id, bool lib, std::vector<FunctionId> callees) {
        FunctionDef f = make_function(Succs(1), id);
        f.is_library = lib;
        SiteId s = id * 10;
        for (FunctionId c : callees)
            f.blocks[0].instructions.push_back(CallInstr{s++, c, {}});
        fns.push_back(f);
    };
    fn(0, false, {1});
    fn(1, true, {2});
    fn(2, true, {3});
    fn(3, true, {});
    fn(4, true, {3});
    Program p(fns);
    auto r = reachable_library_functions(p, {0, 1, 99});
    EXPECT_EQ(r.functions, (std::set<FunctionId>{1, 2, 3}));
    EXPECT_EQ(r.unknown_roots, 1u);
    EXPECT_EQ(max_static_callchain_depth(p, {1}), 3);
    EXPECT_EQ(max_static_callchain_depth(p, {0}), 0);
}
