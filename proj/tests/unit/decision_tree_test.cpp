#include <random>

#include <gtest/gtest.h>

#include "blankit/decision_tree.hpp"
#include "oracles.hpp"

using namespace blankit;
using namespace blankit::testing;

namespace {

std::vector<OracleNode> flatten(const DecisionTreeModel& m) {
    std::vector<OracleNode> out;
    std::function<void(int)> walk = [&](int n) {
        const auto& node = m.nodes[n];
        if (node.leaf) {
            out.push_back({true, 0, 0, node.label});
            return;
        }
        out.push_back({false, node.feature, node.threshold, 0});
        walk(node.left);
        walk(node.right);
    };
    walk(m.root);
    return out;
}

std::vector<ProfileRecord> random_table(std::mt19937_64& rng, int rows, int width, int values, int labels) {
    std::vector<ProfileRecord> out;
    for (int i = 0; i < rows; ++i) {
        ProfileRecord r;
        for (int f = 0; f < width; ++f)
            r.features.push_back(static_cast<double>(rng() % values) - values / 2);
        r.label = static_cast<ChainLabel>(rng() % labels);
        r.site = static_cast<SiteId>(r.features[0]);
        out.push_back(r);
    }
    return out;
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorKind::Internal;
}

}  // namespace

TEST(DecisionTree, SingleSplitAtMidpoint) {
    std::vector<ProfileRecord> rows{{0, {1}, 0, 0}, {0, {2}, 0, 0}, {0, {4}, 1, 0}, {0, {9}, 1, 0}};
    auto m = train_tree(rows);
    ASSERT_FALSE(m.nodes[0].leaf);
    EXPECT_EQ(m.nodes[0].feature, 0);
    EXPECT_EQ(m.nodes[0].threshold, 3.0);
    EXPECT_EQ(m.predict({2.9}), 0);
    EXPECT_EQ(m.predict({3.1}), 1);
    EXPECT_EQ(m.depth(), 1);
}

TEST(DecisionTree, TiesPreferLowestFeatureThenThreshold) {
    // Features 0 and 1 separate equally well; feature 0 wins.
    std::vector<ProfileRecord> rows{{0, {0, 0}, 0, 0}, {0, {1, 1}, 1, 0}};
    auto m = train_tree(rows);
    EXPECT_EQ(m.nodes[0].feature, 0);
    EXPECT_EQ(m.nodes[0].threshold, 0.5);
    // Labels 0,1,0: the splits at 0.5 and 1.5 score the same; 0.5 wins.
    std::vector<ProfileRecord> three{{0, {0}, 0, 0}, {0, {1}, 1, 0}, {0, {2}, 0, 0}};
    EXPECT_EQ(train_tree(three, 1).nodes[0].threshold, 0.5);
}

TEST(DecisionTree, MajorityTiesGoToSmallestLabel) {
    std::vector<ProfileRecord> rows{{0, {1}, 7, 0}, {0, {1}, 3, 0}};
    auto m = train_tree(rows);
    ASSERT_TRUE(m.nodes[0].leaf);
    EXPECT_EQ(m.nodes[0].label, 3);
    EXPECT_EQ(m.nodes[0].support, 2u);
}

TEST(DecisionTree, NoSplitWithoutStrictImprovement) {
    // XOR: no single split lowers impurity, so the root is a leaf.
    std::vector<ProfileRecord> rows{{0, {0, 0}, 0, 0}, {0, {0, 1}, 1, 0}, {0, {1, 0}, 1, 0}, {0, {1, 1}, 0, 0}};
    EXPECT_TRUE(train_tree(rows).nodes[0].leaf);
}

TEST(DecisionTree, DepthZeroIsOneLeaf) {
    std::vector<ProfileRecord> rows{{0, {0}, 0, 0}, {0, {1}, 1, 0}, {0, {2}, 1, 0}};
    auto m = train_tree(rows, 0);
    ASSERT_EQ(m.nodes.size(), 1u);
    EXPECT_EQ(m.nodes[0].label, 1);
}

TEST(DecisionTree, ShortRowsReadAsZero) {
    std::vector<ProfileRecord> rows{{0, {5}, 0, 0}, {0, {5, 3}, 1, 0}};
    auto m = train_tree(rows);
    EXPECT_EQ(m.predict({5}), 0);
    EXPECT_EQ(m.predict({5, 3}), 1);
}

TEST(DecisionTree, BadInputs) {
    EXPECT_EQ(kind_of([] { train_tree({}); }), ErrorKind::Analysis);
    EXPECT_EQ(kind_of([] { train_tree({{0, {1}, 0, 0}}, -1); }), ErrorKind::Usage);
}

TEST(DecisionTree, MatchesExhaustiveGreedyOracle) {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 300; ++i) {
        const int depth = static_cast<int>(rng() % 6);
        auto rows = random_table(rng, 1 + static_cast<int>(rng() % 40), 1 + static_cast<int>(rng() % 4),
                                 2 + static_cast<int>(rng() % 8), 1 + static_cast<int>(rng() % 4));
        std::vector<OracleNode> want;
        oracle_tree(rows, 0, depth, want);
        auto m = train_tree(rows, depth);
        ASSERT_EQ(flatten(m), want) << "table " << i;
        ASSERT_LE(m.depth(), depth);
    }
}

TEST(DecisionTree, FitsSeparableDataExactly) {
    std::mt19937_64 rng(23);
    std::vector<ProfileRecord> rows;
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y)
            rows.push_back({0, {double(x), double(y)}, (x > 3) * 2 + (y > 5), 0});
    auto m = train_tree(rows);
    for (int i = 0; i < 1000; ++i) {
        double x = std::uniform_real_distribution<double>(0, 7)(rng);
        double y = std::uniform_real_distribution<double>(0, 7)(rng);
        ASSERT_EQ(m.predict({x, y}), (x > 3.5) * 2 + (y > 5.5));
    }
}

TEST(DecisionTree, SerializationRoundTrip) {
    std::mt19937_64 rng(29);
    for (int i = 0; i < 20; ++i) {
        auto rows = random_table(rng, 200, 4, 50, 6);
        for (auto& r : rows)
            r.features[1] += 0.1 * static_cast<double>(rng() % 10);
        auto m = train_tree(rows);
        auto text = serialize(m);
        auto back = deserialize(text);
        // Internal nodes do not carry their support in the text form.
        ASSERT_EQ(back.nodes.size(), m.nodes.size());
        for (std::size_t k = 0; k < m.nodes.size(); ++k)
            if (m.nodes[k].leaf) {
                EXPECT_EQ(back.nodes[k], m.nodes[k]);
            }
        EXPECT_EQ(serialize(back), text);
        for (int k = 0; k < 10000; ++k) {
            std::vector<double> x;
            for (int f = 0; f < 4; ++f)
                x.push_back(std::uniform_real_distribution<double>(-30, 30)(rng));
            ASSERT_EQ(back.predict(x), m.predict(x));
        }
    }
}

TEST(DecisionTree, MalformedTextIsRejected) {
    const std::string ok = "dtree v1 depth=2 nodes=3\nN 0 f=0 t=1.5 L=1 R=2\nL 1 label=0 n=1\nL 2 label=1 n=1\n";
    EXPECT_NO_THROW(deserialize(ok));
    for (const std::string bad :
         {"", "tree v1 depth=2 nodes=1\nL 0 label=0 n=1\n", "dtree v1 depth=2 nodes=2\nL 0 label=0 n=1\n",
          "dtree v1 depth=2 nodes=3\nN 0 f=0 t=1.5 L=1 R=1\nL 1 label=0 n=1\nL 2 label=1 n=1\n",
          "dtree v1 depth=2 nodes=3\nN 0 f=0 t=x L=1 R=2\nL 1 label=0 n=1\nL 2 label=1 n=1\n",
          "dtree v1 depth=0 nodes=3\nN 0 f=0 t=1.5 L=1 R=2\nL 1 label=0 n=1\nL 2 label=1 n=1\n",
          "dtree v1 depth=2 nodes=3\nN 0 f=0 t=1.5 L=1 R=9\nL 1 label=0 n=1\nL 2 label=1 n=1\n",
          "dtree v1 depth=2 nodes=2\nN 0 f=0 t=1 L=1 R=0\nL 1 label=0 n=1\n"})
        EXPECT_EQ(kind_of([&] { deserialize(bad); }), ErrorKind::Schema) << bad;
}

TEST(CallSitePredictor, AgreesWithGlobalModelOnTrainedSites) {
    std::mt19937_64 rng(31);
    auto rows = random_table(rng, 300, 4, 6, 5);
    auto m = train_tree(rows);
    std::set<SiteId> trained;
    for (const auto& r : rows)
        trained.insert(r.site);
    CallSitePredictor p(m, trained);
    for (int i = 0; i < 2000; ++i) {
        std::vector<double> x;
        for (int f = 0; f < 4; ++f)
            x.push_back(static_cast<double>(rng() % 8) - 4);
        SiteId site = static_cast<SiteId>(x[0]);
        const ChainLabel want = trained.count(site) ? m.predict(x) : kUnknownSite;
        ASSERT_EQ(p.predict(site, x), want);
        if (const auto* t = p.specialized(site)) {
            for (const auto& n : t->nodes)
                ASSERT_TRUE(n.leaf || n.feature != 0);
        }
    }
}
