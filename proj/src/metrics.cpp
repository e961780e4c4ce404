#include "capsrec/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace capsrec {

int rank_of_target(const std::vector<double>& scores, int target) {
    if (target < 0 || target >= static_cast<int>(scores.size())) {
        throw IndexError("target " + std::to_string(target) + " out of " +
                         std::to_string(scores.size()) + " scores");
    }
    const double st = scores[target];
    int rank = 1;
    for (int j = 0; j < static_cast<int>(scores.size()); ++j) {
        if (scores[j] > st || (scores[j] == st && j < target)) ++rank;
    }
    return rank;
}

MetricReport metrics_from_ranks(const std::vector<int>& ranks) {
    if (ranks.empty()) throw DataError("no sequences to evaluate");
    MetricReport r;
    r.n_evaluated = static_cast<int>(ranks.size());
    for (int rank : ranks) {
        if (rank <= 5) {
            r.recall5 += 1.0;
            r.mrr5 += 1.0 / rank;
        }
        if (rank <= 20) {
            r.recall20 += 1.0;
            r.mrr20 += 1.0 / rank;
        }
    }
    r.recall5 /= r.n_evaluated;
    r.recall20 /= r.n_evaluated;
    r.mrr5 /= r.n_evaluated;
    r.mrr20 /= r.n_evaluated;
    return r;
}

std::vector<int64_t> interaction_counts(const Dataset& d) {
    std::vector<int64_t> counts(d.m, 0);
    for (int si : d.train_indices()) {
        for (int item : d.sequences[si].items) ++counts[item];
    }
    return counts;
}

std::vector<int> popularity_ranking(const Dataset& d) {
    if (d.train_indices().empty()) throw DataError("no training sequences to count");
    const std::vector<int64_t> counts = interaction_counts(d);
    std::vector<int> order(d.m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return counts[a] > counts[b]; });
    return order;
}

}  // namespace capsrec
