#include <random>

#include <gtest/gtest.h>

#include "blankit/instrumentation.hpp"
#include "cfg_gen.hpp"
#include "oracles.hpp"

using namespace blankit;
using namespace blankit::testing;

namespace {

// app 0: 0 -> {1,2} -> 3, v0 = phi(1: 10, 2: 20), v1 = v0 + p0, call lib(v1, 7).
Program diamond_program() {
    auto app = make_function({{1, 2}, {3}, {3}, {}}, 0);
    app.blocks[0].instructions = {BranchInstr{ValueRef::param(0)}};
    app.blocks[3].instructions = {
        PhiInstr{ValueRef::var(0), {{1, ValueRef::int_const(10)}, {2, ValueRef::int_const(20)}}},
        DefInstr{ValueRef::var(1), {ValueRef::var(0), ValueRef::param(0)}},
        CallInstr{5, 1, {ValueRef::var(1), ValueRef::int_const(7)}}};
    auto lib = make_function(Succs(1), 1);
    lib.is_library = true;
    return Program({app, lib});
}

}  // namespace

TEST(Instrumentation, DiamondPhiWatchesBothArms) {
    const auto plans = plan_program(diamond_program());
    const auto& plan = plans.at(5);
    EXPECT_EQ(plan.function, 0);
    EXPECT_EQ(plan.callee, 1);
    ASSERT_EQ(plan.arg_features.size(), 1u);
    EXPECT_EQ(plan.arg_features[0].arg, 0);
    EXPECT_EQ(plan.arg_features[0].feature, 1);
    EXPECT_EQ(plan.arg_features[0].watched, (std::vector<BlockId>{1, 2}));
    ASSERT_EQ(plan.value_features.size(), 2u);
    EXPECT_EQ(plan.value_features[0].feature, 2);
    EXPECT_EQ(plan.value_features[1].feature, 3);
    EXPECT_EQ(plan.width(), 4);
    // v1 is defined at block 3 index 1; the constant is snapshotted at the call.
    EXPECT_EQ(plan.snapshot_points[0], (SnapshotPoint{0, 3, 1}));
    EXPECT_EQ(plan.snapshot_points[1], (SnapshotPoint{1, 3, 2}));
}

TEST(Instrumentation, FeatureStateTracksLastWatchedBlock) {
    const auto plans = plan_program(diamond_program());
    FeatureState fs(plans);
    EXPECT_EQ(fs.features(5, {30, 7}), (std::vector<double>{5, 0, 30, 7}));
    fs.on_block(0, 0);
    fs.on_block(0, 2);
    fs.on_block(0, 3);
    EXPECT_EQ(fs.features(5, {30, 7}), (std::vector<double>{5, 2, 30, 7}));
    fs.on_block(0, 1);
    fs.on_block(9, 2);  // other function, same block id
    EXPECT_EQ(fs.features(5, {11}), (std::vector<double>{5, 1, 11, 0}));
}

TEST(Instrumentation, NoLibraryCallsNoPlans) {
    auto app = make_function(Succs(1), 0);
    auto other = make_function(Succs(1), 1);
    app.blocks[0].instructions = {CallInstr{1, 1, {}}};
    EXPECT_TRUE(plan_program(Program({app, other})).sites().empty());
}

TEST(Instrumentation, PlanJsonRoundTrip) {
    const auto plans = plan_program(diamond_program());
    EXPECT_EQ(plan_set_from_json(to_json(plans)), plans);
    auto bad = to_json(plans);
    bad["sites"][0]["value_features"][0]["feature"] = 9;
    try {
        plan_set_from_json(bad);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::Schema);
    }
}

TEST(Instrumentation, ParentPhiStopsAtFirstPhi) {
    // v0 = phi(..), v1 = phi(v0, ..), v2 = def(v1): only v1 is a parent.
    FunctionDef f = make_function({{1, 2}, {3}, {3}, {}}, 0);
    f.blocks[3].instructions = {
        PhiInstr{ValueRef::var(0), {{1, ValueRef::int_const(1)}, {2, ValueRef::int_const(2)}}},
        PhiInstr{ValueRef::var(1), {{1, ValueRef::var(0)}, {2, ValueRef::int_const(2)}}},
        DefInstr{ValueRef::var(2), {ValueRef::var(1), ValueRef::param(1)}},
        CallInstr{1, 1, {ValueRef::var(2)}}};
    EXPECT_EQ(trace_parent_phi(f.blocks[3].instructions[3], f), (PhiSet{1}));
    EXPECT_EQ(trace_parent_phi(f.blocks[3].instructions[1], f), (PhiSet{0}));
}

TEST(Instrumentation, ParentPhiMatchesBackwardWalkOracle) {
    std::mt19937_64 rng(5);
    auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    for (int round = 0; round < 500; ++round) {
        FunctionDef f = make_function(Succs(1), 0);
        const int n = uni(1, 12);
        auto operand = [&](int limit) {
            switch (uni(0, 3)) {
                case 0: return ValueRef::int_const(uni(0, 9));
                case 1: return ValueRef::param(uni(0, 2));
                default: return limit > 0 ? ValueRef::var(uni(0, limit - 1)) : ValueRef::param(0);
            }
        };
        // Phis may refer to any value (loop-carried); defs only to earlier ones.
        std::vector<Instruction> phis, defs;
        for (int v = 0; v < n; ++v) {
            if (uni(0, 2) == 0) {
                PhiInstr phi{ValueRef::var(v), {}};
                for (int k = uni(1, 3); k > 0; --k)
                    phi.incomings.push_back({0, operand(n)});
                phis.push_back(phi);
            } else {
                DefInstr def{ValueRef::var(v), {}};
                for (int k = uni(0, 3); k > 0; --k)
                    def.operands.push_back(operand(v));
                defs.push_back(def);
            }
        }
        std::vector<ValueRef> args;
        for (int k = uni(1, 3); k > 0; --k)
            args.push_back(operand(n));
        auto& ins = f.blocks[0].instructions;
        ins.insert(ins.end(), phis.begin(), phis.end());
        ins.insert(ins.end(), defs.begin(), defs.end());
        ins.push_back(CallInstr{1, 1, args});
        ASSERT_EQ(trace_parent_phi(ins.back(), f), phi_walk_oracle(f, args)) << "round " << round;
    }
}

TEST(Instrumentation, LayoutIsSiteThenRdfThenValues) {
    // Two phi-fed args and one constant: features 1,2 are RDF slots, 3..5 values.
    auto app = make_function({{1, 2}, {3}, {3}, {}}, 0);
    app.blocks[3].instructions = {
        PhiInstr{ValueRef::var(0), {{1, ValueRef::int_const(1)}, {2, ValueRef::int_const(2)}}},
        PhiInstr{ValueRef::var(1), {{1, ValueRef::int_const(3)}, {2, ValueRef::int_const(4)}}},
        CallInstr{9, 1, {ValueRef::var(0), ValueRef::int_const(5), ValueRef::var(1)}}};
    auto lib = make_function(Succs(1), 1);
    lib.is_library = true;
    const auto plan = plan_program(Program({app, lib})).at(9);
    ASSERT_EQ(plan.arg_features.size(), 2u);
    EXPECT_EQ(plan.arg_features[0].arg, 0);
    EXPECT_EQ(plan.arg_features[0].feature, 1);
    EXPECT_EQ(plan.arg_features[1].arg, 2);
    EXPECT_EQ(plan.arg_features[1].feature, 2);
    for (int a = 0; a < 3; ++a)
        EXPECT_EQ(plan.value_features[a].feature, 3 + a);
}
