#pragma once

#include <cstdint>
#include <vector>

#include "capsrec/data.hpp"

namespace capsrec {

struct MetricReport {
    double recall5 = 0.0;
    double recall20 = 0.0;
    double mrr5 = 0.0;
    double mrr20 = 0.0;
    int n_evaluated = 0;
};

// 1-based rank of the target under descending score with ties broken by
// ascending item id: equal-scored items with a smaller id outrank the target.
int rank_of_target(const std::vector<double>& scores, int target);

// Aggregates ranks into recall@{5,20} and mrr@{5,20}. DataError when empty.
MetricReport metrics_from_ranks(const std::vector<int>& ranks);

// Training-split interaction count per item.
std::vector<int64_t> interaction_counts(const Dataset& d);

// All item ids ordered by descending training interaction count, ties by
// ascending id; unseen items therefore rank last.
std::vector<int> popularity_ranking(const Dataset& d);

}  // namespace capsrec
