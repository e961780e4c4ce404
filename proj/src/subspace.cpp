#include "capsrec/subspace.hpp"

#include <cmath>
#include <iostream>
#include <limits>

namespace capsrec {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& rows, int k, uint64_t seed,
                    int max_iters, double tol) {
    if (k < 1) throw ConfigError("kmeans: k must be >= 1");
    if (rows.empty()) throw ContractError("kmeans: no rows");
    const size_t n = rows.size();
    const size_t dim = rows[0].size();
    for (const auto& r : rows) {
        if (r.size() != dim) throw ShapeError("kmeans: ragged rows");
    }
    KMeansResult res;
    Rng rng(seed);

    if (n < static_cast<size_t>(k)) {
        // Not enough distinct points to seed k clusters: duplicate rows with
        // a deterministic nudge so downstream normalization stays sane.
        std::cerr << "kmeans: only " << n << " rows for " << k
                  << " clusters; duplicating centroids\n";
        res.fallback = true;
        res.centroids.resize(k);
        for (int j = 0; j < k; ++j) {
            res.centroids[j] = rows[j % n];
            res.centroids[j][0] += 1e-3 * static_cast<double>(j / n);
        }
        res.assignment.assign(n, 0);
        for (size_t i = 0; i < n; ++i) res.assignment[i] = static_cast<int>(i % k);
        return res;
    }

    // k-means++ seeding: next centroid drawn proportionally to squared
    // distance from the nearest already-chosen one.
    res.centroids.push_back(rows[rng.below(n)]);
    std::vector<double> d2(n, 0.0);
    while (static_cast<int>(res.centroids.size()) < k) {
        double total = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::max();
            for (const auto& c : res.centroids) best = std::min(best, sq_dist(rows[i], c));
            d2[i] = best;
            total += best;
        }
        size_t pick;
        if (total <= 0.0) {
            pick = rng.below(n);
        } else {
            const double r = rng.uniform01() * total;
            double acc = 0.0;
            pick = n - 1;
            for (size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (r < acc) {
                    pick = i;
                    break;
                }
            }
        }
        res.centroids.push_back(rows[pick]);
    }

    res.assignment.assign(n, 0);
    for (int iter = 0; iter < max_iters; ++iter) {
        res.iterations = iter + 1;
        for (size_t i = 0; i < n; ++i) {
            int best = 0;
            double best_d = sq_dist(rows[i], res.centroids[0]);
            for (int j = 1; j < k; ++j) {
                const double d = sq_dist(rows[i], res.centroids[j]);
                if (d < best_d) {
                    best_d = d;
                    best = j;
                }
            }
            res.assignment[i] = best;
        }
        std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
        std::vector<int> counts(k, 0);
        for (size_t i = 0; i < n; ++i) {
            ++counts[res.assignment[i]];
            for (size_t q = 0; q < dim; ++q) sums[res.assignment[i]][q] += rows[i][q];
        }
        for (int j = 0; j < k; ++j) {
            if (counts[j] > 0) {
                for (size_t q = 0; q < dim; ++q) sums[j][q] /= counts[j];
                continue;
            }
            // Reseed an empty cluster with the point farthest from its own
            // centroid (deterministic: lowest index wins ties).
            size_t far = 0;
            double far_d = -1.0;
            for (size_t i = 0; i < n; ++i) {
                const double d = sq_dist(rows[i], res.centroids[res.assignment[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            sums[j] = rows[far];
            res.assignment[far] = j;
        }
        double max_move = 0.0;
        for (int j = 0; j < k; ++j) {
            max_move = std::max(max_move, std::sqrt(sq_dist(sums[j], res.centroids[j])));
        }
        res.centroids = std::move(sums);
        if (max_move < tol) break;
    }
    return res;
}

Tensor init_bases(const std::vector<std::vector<double>>& rows, int alpha, uint64_t seed) {
    const KMeansResult km = kmeans(rows, alpha, seed);
    const int d2 = static_cast<int>(km.centroids[0].size());
    Tensor bases = Tensor::zeros(alpha, d2);
    for (int j = 0; j < alpha; ++j) {
        double norm = 0.0;
        for (double v : km.centroids[j]) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < kNormEps) {
            // Degenerate centroid; use a fixed axis so the basis stays valid.
            bases.at(j, 0) = 1.0;
            continue;
        }
        for (int q = 0; q < d2; ++q) bases.at(j, q) = km.centroids[j][q] / norm;
    }
    return bases;
}

Tensor affinity_matrix(const Tensor& stack, const Tensor& bases, double lambda) {
    if (lambda <= 0.0) throw ConfigError("affinity smoothing must be positive");
    if (stack.cols() != bases.cols()) {
        throw ShapeError("affinity_matrix: " + stack.shape_str() + " vs " + bases.shape_str());
    }
    Tensor proj = matmul(stack, transpose(bases));  // [t x alpha]
    Tensor num = add_const(square(proj), lambda * static_cast<double>(stack.cols()));
    return div_colvec(num, rowwise_sum(num));
}

Tensor refine(const Tensor& stack, const Tensor& affinity, const Tensor& bases, bool soft) {
    if (stack.rows() != affinity.rows()) {
        throw ShapeError("refine: " + stack.shape_str() + " vs " + affinity.shape_str());
    }
    if (soft) {
        Tensor proj = matmul(stack, transpose(bases));  // [t x alpha]
        return matmul(mul(affinity, proj), bases);
    }
    const std::vector<int> dominant = argmax_rows(affinity);
    return mul_colvec(stack, pick_per_row(affinity, dominant));
}

Tensor contrastive_term(const Tensor& normalized, const Tensor& refined, double beta) {
    if (beta <= 0.0) throw ConfigError("temperature must be positive");
    if (normalized.rows() != refined.rows() || normalized.cols() != refined.cols()) {
        throw ShapeError("contrastive_term: " + normalized.shape_str() + " vs " +
                         refined.shape_str());
    }
    if (normalized.rows() <= 1) return Tensor::scalar(0.0);  // no negatives
    Tensor sims = scale(matmul(normalized, transpose(refined)), 1.0 / beta);  // [t x t]
    return neg(reduce_sum(diag(log_softmax_rows(sims))));
}

Tensor fuse_rows(const Tensor& normalized, const Tensor& refined, const Tensor& Ws) {
    return colwise_sum(l2_normalize(add(normalized, matmul(refined, Ws))));
}

}  // namespace capsrec
