#include "capsrec/graph.hpp"

#include <algorithm>
#include <cmath>

namespace capsrec {

namespace {

void sort_dedup(std::vector<int>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
}

bool contains(const std::vector<int>& v, int x) {
    return std::binary_search(v.begin(), v.end(), x);
}

}  // namespace

bool SequentialGraph::has_item_edge(int item, int pred) const {
    if (item < 0 || item >= m || pred < 0 || pred >= m) {
        throw IndexError("item id out of range [0," + std::to_string(m) + ")");
    }
    return contains(item_preds[item], pred);
}

bool SequentialGraph::has_interaction(int item, int account) const {
    if (item < 0 || item >= m) {
        throw IndexError("item id out of range [0," + std::to_string(m) + ")");
    }
    if (account < 0 || account >= n) {
        throw IndexError("account id out of range [0," + std::to_string(n) + ")");
    }
    return contains(item_accounts[item], account);
}

int64_t SequentialGraph::edge_count() const {
    int64_t c = 0;
    for (const auto& v : item_preds) c += static_cast<int64_t>(v.size());
    for (const auto& v : item_accounts) c += static_cast<int64_t>(v.size());
    return c;
}

SequentialGraph build_graph(const Dataset& d, bool normalize_adjacency) {
    SequentialGraph g;
    g.m = d.m;
    g.n = d.n;
    g.item_preds.resize(d.m);
    g.item_succs.resize(d.m);
    g.account_items.resize(d.n);
    g.item_accounts.resize(d.m);

    bool any_train = false;
    for (int si : d.train_indices()) {
        const HybridSequence& s = d.sequences[si];
        any_train = true;
        if (s.account < 0 || s.account >= d.n) {
            throw IndexError("account id out of range [0," + std::to_string(d.n) + ")");
        }
        for (size_t t = 0; t < s.items.size(); ++t) {
            const int item = s.items[t];
            if (item < 0 || item >= d.m) {
                throw IndexError("item id out of range [0," + std::to_string(d.m) + ")");
            }
            g.account_items[s.account].push_back(item);
            g.item_accounts[item].push_back(s.account);
            if (t > 0) {
                const int prev = s.items[t - 1];
                g.item_preds[item].push_back(prev);
                g.item_succs[prev].push_back(item);
            }
        }
    }
    if (!any_train) throw GraphError("graph requires a non-empty training split");

    for (auto& v : g.item_preds) sort_dedup(v);
    for (auto& v : g.item_succs) sort_dedup(v);
    for (auto& v : g.account_items) sort_dedup(v);
    for (auto& v : g.item_accounts) sort_dedup(v);

    if (normalize_adjacency) {
        g.normalized = true;
        g.item_preds_w.resize(d.m);
        g.account_items_w.resize(d.n);
        g.item_accounts_w.resize(d.m);
        for (int i = 0; i < d.m; ++i) {
            for (int j : g.item_preds[i]) {
                g.item_preds_w[i].push_back(
                    1.0 / std::sqrt(static_cast<double>(g.item_succs[j].size()) *
                                    static_cast<double>(g.item_preds[i].size())));
            }
            for (int k : g.item_accounts[i]) {
                g.item_accounts_w[i].push_back(
                    1.0 / std::sqrt(static_cast<double>(g.account_items[k].size()) *
                                    static_cast<double>(g.item_accounts[i].size())));
            }
        }
        for (int k = 0; k < d.n; ++k) {
            for (int i : g.account_items[k]) {
                g.account_items_w[k].push_back(
                    1.0 / std::sqrt(static_cast<double>(g.item_accounts[i].size()) *
                                    static_cast<double>(g.account_items[k].size())));
            }
        }
    }
    return g;
}

const std::vector<int>& neighbors(const SequentialGraph& g, int node, Relation rel) {
    switch (rel) {
        case Relation::items_of_account:
            if (node < 0 || node >= g.n) {
                throw IndexError("account id out of range [0," + std::to_string(g.n) + ")");
            }
            return g.account_items[node];
        case Relation::predecessors:
            if (node < 0 || node >= g.m) {
                throw IndexError("item id out of range [0," + std::to_string(g.m) + ")");
            }
            return g.item_preds[node];
        case Relation::accounts_of_item:
            if (node < 0 || node >= g.m) {
                throw IndexError("item id out of range [0," + std::to_string(g.m) + ")");
            }
            return g.item_accounts[node];
    }
    throw ContractError("unknown relation");
}

}  // namespace capsrec
