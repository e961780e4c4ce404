#pragma once

#include <vector>

#include "capsrec/data.hpp"
#include "capsrec/errors.hpp"

namespace capsrec {

enum class Relation { items_of_account, predecessors, accounts_of_item };

// Sequential interaction graph over one training split. Two sparse blocks:
// an item->item matrix holding immediate-predecessor edges (entry (i, j) set
// when j directly precedes i in some training sequence) and an item<->account
// interaction matrix. Both are binary — repeats collapse — and directional
// on the item side. Stored as sorted, duplicate-free adjacency lists.
struct SequentialGraph {
    int m = 0;  // items
    int n = 0;  // accounts
    std::vector<std::vector<int>> item_preds;     // per item: items preceding it
    std::vector<std::vector<int>> item_succs;     // transpose of item_preds
    std::vector<std::vector<int>> account_items;  // per account: interacted items
    std::vector<std::vector<int>> item_accounts;  // per item: interacting accounts

    // Populated when built with degree normalization: 1/sqrt(deg_src*deg_dst)
    // per edge, aligned with the lists above. Empty otherwise.
    bool normalized = false;
    std::vector<std::vector<double>> item_preds_w;
    std::vector<std::vector<double>> account_items_w;
    std::vector<std::vector<double>> item_accounts_w;

    bool has_item_edge(int item, int pred) const;       // item->item block
    bool has_interaction(int item, int account) const;  // interaction block
    int64_t edge_count() const;
};

// Builds the graph from the dataset's training split only (GraphError when
// that split is empty). normalize_adjacency folds symmetric degree weights
// into the adjacency lists; default is the raw binary adjacency, leaving any
// scaling to the learnable message weights.
SequentialGraph build_graph(const Dataset& d, bool normalize_adjacency = false);

// Sorted, duplicate-free neighbor list; node is an account id for
// items_of_account and an item id otherwise. IndexError when out of range.
const std::vector<int>& neighbors(const SequentialGraph& g, int node, Relation rel);

}  // namespace capsrec
