#pragma once

// CART-style decision tree over call-site feature vectors.
//
// Training is greedy and top-down with Gini impurity. Split candidates are
// `x[f] <= t` with t the midpoint of adjacent distinct values. Impurity
// comparisons are exact (integer arithmetic), ties go to the lowest feature
// index and then the lowest threshold, and leaf ties go to the smallest
// label, so a given multiset of records always yields the same tree.
//
// Text format:
//   dtree v1 depth=<max_depth> nodes=<n>
//   N <id> f=<feature> t=<threshold> L=<id> R=<id>
//   L <id> label=<label> n=<support>
// Node 0 is the root.

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "blankit/error.hpp"
#include "blankit/profiler.hpp"

namespace blankit {

inline constexpr int kDefaultMaxDepth = 10;

/// Returned by CallSitePredictor for sites that never occurred in training.
inline constexpr ChainLabel kUnknownSite = -1;

struct TreeNode {
    bool leaf = true;
    int feature = 0;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    ChainLabel label = 0;
    std::size_t support = 0;
    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct DecisionTreeModel {
    std::vector<TreeNode> nodes;
    int max_depth = kDefaultMaxDepth;
    int root = 0;

    ChainLabel predict(const std::vector<double>& features) const {
        int n = root;
        while (!nodes[n].leaf) {
            const auto& node = nodes[n];
            double x = node.feature < static_cast<int>(features.size()) ? features[node.feature] : 0.0;
            n = x <= node.threshold ? node.left : node.right;
        }
        return nodes[n].label;
    }

    /// Longest root-to-leaf path in edges.
    int depth() const { return depth_from(root); }

    std::set<ChainLabel> leaf_labels() const {
        std::set<ChainLabel> out;
        for (const auto& n : nodes)
            if (n.leaf)
                out.insert(n.label);
        return out;
    }

    friend bool operator==(const DecisionTreeModel&, const DecisionTreeModel&) = default;

  private:
    int depth_from(int n) const {
        if (nodes[n].leaf)
            return 0;
        return 1 + std::max(depth_from(nodes[n].left), depth_from(nodes[n].right));
    }
};

inline ChainLabel predict(const DecisionTreeModel& model, const std::vector<double>& features) {
    return model.predict(features);
}

namespace detail {

class TreeBuilder {
  public:
    TreeBuilder(const std::vector<ProfileRecord>& records, int max_depth)
        : records_(records), max_depth_(max_depth) {
        for (const auto& r : records)
            width_ = std::max(width_, r.features.size());
        std::set<ChainLabel> labels;
        for (const auto& r : records)
            labels.insert(r.label);
        labels_.assign(labels.begin(), labels.end());
        for (const auto& r : records)
            compact_.push_back(static_cast<int>(
                std::lower_bound(labels_.begin(), labels_.end(), r.label) - labels_.begin()));
    }

    DecisionTreeModel build() {
        std::vector<int> all(records_.size());
        for (std::size_t i = 0; i < all.size(); ++i)
            all[i] = static_cast<int>(i);
        model_.max_depth = max_depth_;
        grow(all, 0);
        return std::move(model_);
    }

  private:
    using Wide = __int128;

    double value(int i, std::size_t f) const {
        const auto& x = records_[i].features;
        return f < x.size() ? x[f] : 0.0;
    }

    int grow(const std::vector<int>& idx, int depth) {
        const int id = static_cast<int>(model_.nodes.size());
        model_.nodes.emplace_back();

        std::vector<std::int64_t> counts(labels_.size(), 0);
        for (int i : idx)
            ++counts[compact_[i]];
        int majority = 0;
        for (std::size_t k = 1; k < counts.size(); ++k)
            if (counts[k] > counts[majority])
                majority = static_cast<int>(k);
        const bool pure = counts[majority] == static_cast<std::int64_t>(idx.size());

        auto make_leaf = [&] {
            TreeNode leaf;
            leaf.label = labels_[majority];
            leaf.support = idx.size();
            model_.nodes[id] = leaf;
            return id;
        };
        if (pure || depth >= max_depth_)
            return make_leaf();

        const std::int64_t n = static_cast<std::int64_t>(idx.size());
        std::int64_t parent_sq = 0;
        for (auto c : counts)
            parent_sq += c * c;

        // Maximize S_L/n_L + S_R/n_R, S = sum of squared class counts. This is
        // the same as minimizing weighted Gini impurity.
        bool found = false;
        int best_f = 0;
        double best_t = 0;
        Wide best_num = 0, best_den = 1;
        std::vector<int> order = idx;
        for (std::size_t f = 0; f < width_; ++f) {
            std::sort(order.begin(), order.end(), [&](int a, int b) { return value(a, f) < value(b, f); });
            std::vector<std::int64_t> left(labels_.size(), 0), right = counts;
            std::int64_t left_sq = 0, right_sq = parent_sq;
            for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
                const int k = compact_[order[pos]];
                left_sq += 2 * left[k] + 1;
                right_sq -= 2 * right[k] - 1;
                ++left[k];
                --right[k];
                const double a = value(order[pos], f), b = value(order[pos + 1], f);
                if (!(a < b))
                    continue;
                const std::int64_t nl = static_cast<std::int64_t>(pos + 1), nr = n - nl;
                const Wide num = Wide(left_sq) * nr + Wide(right_sq) * nl;
                const Wide den = Wide(nl) * nr;
                if (!found || num * best_den > best_num * den) {
                    found = true;
                    best_f = static_cast<int>(f);
                    best_t = midpoint(a, b);
                    best_num = num;
                    best_den = den;
                }
            }
        }
        // Split only when it strictly lowers impurity.
        if (!found || !(best_num * n > Wide(parent_sq) * best_den))
            return make_leaf();

        std::vector<int> lo, hi;
        for (int i : idx)
            (value(i, best_f) <= best_t ? lo : hi).push_back(i);
        int l = grow(lo, depth + 1);
        int r = grow(hi, depth + 1);
        TreeNode& node = model_.nodes[id];
        node.leaf = false;
        node.feature = best_f;
        node.threshold = best_t;
        node.left = l;
        node.right = r;
        node.support = idx.size();
        return id;
    }

    static double midpoint(double a, double b) {
        double t = a + (b - a) / 2;
        return t < b ? t : a;
    }

    const std::vector<ProfileRecord>& records_;
    int max_depth_;
    std::size_t width_ = 0;
    std::vector<ChainLabel> labels_;
    std::vector<int> compact_;
    DecisionTreeModel model_;
};

}  // namespace detail

/// Trains on each record's `label`.
inline DecisionTreeModel train_tree(const std::vector<ProfileRecord>& records, int max_depth = kDefaultMaxDepth) {
    if (records.empty())
        fail(ErrorKind::Analysis, "cannot train a decision tree on zero records");
    if (max_depth < 0)
        fail(ErrorKind::Usage, "max depth must be non-negative");
    return detail::TreeBuilder(records, max_depth).build();
}

/// Copy of `records` labelled in the sequence space, for full-chain models.
inline std::vector<ProfileRecord> with_sequence_labels(std::vector<ProfileRecord> records) {
    for (auto& r : records)
        r.label = r.seq_label;
    return records;
}

/// Folds away every test on a feature whose value is known, keeping the
/// taken branch. The result agrees with `model` on all inputs consistent
/// with `known`.
inline DecisionTreeModel prune_constant_paths(const DecisionTreeModel& model,
                                              const std::map<int, double>& known) {
    DecisionTreeModel out;
    out.max_depth = model.max_depth;
    std::function<int(int)> copy = [&](int n) -> int {
        const auto& node = model.nodes[n];
        if (!node.leaf) {
            auto it = known.find(node.feature);
            if (it != known.end())
                return copy(it->second <= node.threshold ? node.left : node.right);
        }
        const int id = static_cast<int>(out.nodes.size());
        out.nodes.push_back(node);
        if (!node.leaf) {
            int l = copy(node.left);
            int r = copy(node.right);
            out.nodes[id].left = l;
            out.nodes[id].right = r;
        }
        return id;
    };
    copy(model.root);
    out.root = 0;
    return out;
}

namespace detail {

inline std::string format_threshold(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Checks ids, reachability, acyclicity and the depth bound.
inline void check_tree(const DecisionTreeModel& m) {
    const int n = static_cast<int>(m.nodes.size());
    if (n == 0)
        fail(ErrorKind::Schema, "tree has no nodes");
    std::vector<int> parents(n, 0);
    for (const auto& node : m.nodes) {
        if (node.leaf)
            continue;
        for (int c : {node.left, node.right}) {
            if (c < 0 || c >= n)
                fail(ErrorKind::Schema, "tree child id " + std::to_string(c) + " out of range");
            ++parents[c];
        }
    }
    if (parents[m.root] != 0)
        fail(ErrorKind::Schema, "tree root has a parent");
    for (int i = 0; i < n; ++i)
        if (i != m.root && parents[i] != 1)
            fail(ErrorKind::Schema, "tree node " + std::to_string(i) + " has " +
                                        std::to_string(parents[i]) + " parents");
    // Single parent everywhere plus a parentless root: every node is
    // reachable iff the walk from the root visits all n nodes.
    std::vector<char> seen(n, 0);
    std::vector<std::pair<int, int>> work{{m.root, 0}};
    int visited = 0, deepest = 0;
    while (!work.empty()) {
        auto [v, d] = work.back();
        work.pop_back();
        if (seen[v])
            fail(ErrorKind::Schema, "tree contains a cycle at node " + std::to_string(v));
        seen[v] = 1;
        ++visited;
        deepest = std::max(deepest, d);
        if (!m.nodes[v].leaf) {
            work.push_back({m.nodes[v].left, d + 1});
            work.push_back({m.nodes[v].right, d + 1});
        }
    }
    if (visited != n)
        fail(ErrorKind::Schema, "tree has unreachable nodes");
    if (deepest > m.max_depth)
        fail(ErrorKind::Schema, "tree depth " + std::to_string(deepest) + " exceeds max depth " +
                                    std::to_string(m.max_depth));
}

}  // namespace detail

inline std::string serialize(const DecisionTreeModel& m) {
    std::ostringstream os;
    os << "dtree v1 depth=" << m.max_depth << " nodes=" << m.nodes.size() << '\n';
    for (std::size_t i = 0; i < m.nodes.size(); ++i) {
        const auto& n = m.nodes[i];
        if (n.leaf)
            os << "L " << i << " label=" << n.label << " n=" << n.support << '\n';
        else
            os << "N " << i << " f=" << n.feature << " t=" << detail::format_threshold(n.threshold)
               << " L=" << n.left << " R=" << n.right << '\n';
    }
    return os.str();
}

inline DecisionTreeModel deserialize(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    auto bad = [&](const std::string& why) -> void {
        fail(ErrorKind::Schema, "tree line " + std::to_string(line_no) + ": " + why);
    };
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::istringstream ss(s);
        std::string tok;
        while (ss >> tok)
            out.push_back(tok);
        return out;
    };
    auto keyed = [&](const std::string& tok, const std::string& key) -> std::string {
        if (tok.rfind(key + "=", 0) != 0)
            bad("expected " + key + "=...");
        return tok.substr(key.size() + 1);
    };
    auto integer = [&](const std::string& s) -> long long {
        long long v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            bad("not an integer: '" + s + "'");
        return v;
    };
    auto real = [&](const std::string& s) -> double {
        double v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            bad("not a number: '" + s + "'");
        return v;
    };

    DecisionTreeModel m;
    std::vector<char> defined;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        auto tok = split(line);
        if (tok.empty())
            continue;
        if (!have_header) {
            if (tok.size() != 4 || tok[0] != "dtree" || tok[1] != "v1")
                bad("expected header 'dtree v1 depth=<d> nodes=<n>'");
            m.max_depth = static_cast<int>(integer(keyed(tok[2], "depth")));
            long long count = integer(keyed(tok[3], "nodes"));
            if (count <= 0 || count > 10'000'000)
                bad("bad node count");
            m.nodes.assign(static_cast<std::size_t>(count), TreeNode{});
            defined.assign(m.nodes.size(), 0);
            have_header = true;
            continue;
        }
        if ((tok[0] != "N" && tok[0] != "L") || tok.size() < 2)
            bad("expected a node line starting with N or L");
        long long id = integer(tok[1]);
        if (id < 0 || id >= static_cast<long long>(m.nodes.size()))
            bad("node id out of range");
        if (defined[id])
            bad("node " + std::to_string(id) + " defined twice");
        defined[id] = 1;
        TreeNode node;
        if (tok[0] == "N") {
            if (tok.size() != 6)
                bad("internal node needs f=, t=, L=, R=");
            node.leaf = false;
            node.feature = static_cast<int>(integer(keyed(tok[2], "f")));
            node.threshold = real(keyed(tok[3], "t"));
            node.left = static_cast<int>(integer(keyed(tok[4], "L")));
            node.right = static_cast<int>(integer(keyed(tok[5], "R")));
            if (node.feature < 0)
                bad("negative feature index");
        } else {
            if (tok.size() != 4)
                bad("leaf needs label= and n=");
            node.label = static_cast<ChainLabel>(integer(keyed(tok[2], "label")));
            long long support = integer(keyed(tok[3], "n"));
            if (support < 0)
                bad("negative support");
            node.support = static_cast<std::size_t>(support);
        }
        m.nodes[id] = node;
    }
    if (!have_header)
        fail(ErrorKind::Schema, "tree: missing header");
    for (std::size_t i = 0; i < defined.size(); ++i)
        if (!defined[i])
            fail(ErrorKind::Schema, "tree: node " + std::to_string(i) + " never defined");
    detail::check_tree(m);
    return m;
}

inline DecisionTreeModel load_model(const std::filesystem::path& path) {
    return deserialize(read_text_file(path));
}

/// Per-site view of a global model: feature 0 (the site id) is folded into a
/// specialized tree for every site seen in training. Sites never seen yield
/// kUnknownSite. Immutable after construction.
class CallSitePredictor {
  public:
    CallSitePredictor(const DecisionTreeModel& model, const std::set<SiteId>& trained_sites) {
        for (SiteId s : trained_sites)
            per_site_.emplace(s, prune_constant_paths(model, {{0, static_cast<double>(s)}}));
    }

    ChainLabel predict(SiteId site, const std::vector<double>& features) const {
        auto it = per_site_.find(site);
        if (it == per_site_.end())
            return kUnknownSite;
        return it->second.predict(features);
    }

    const DecisionTreeModel* specialized(SiteId site) const {
        auto it = per_site_.find(site);
        return it == per_site_.end() ? nullptr : &it->second;
    }

  private:
    std::map<SiteId, DecisionTreeModel> per_site_;
};

}  // namespace blankit
