#pragma once

#include <cstdint>
#include <vector>

#include "capsrec/rng.hpp"
#include "capsrec/tensor.hpp"

namespace capsrec {

// Plain k-means over dense rows with k-means++ seeding. Deterministic under
// seed: ties in assignment go to the lowest centroid index, empty clusters
// are reseeded with the point farthest from its current centroid. Stops when
// no centroid moves more than tol (max 50 iterations by default).
struct KMeansResult {
    std::vector<std::vector<double>> centroids;
    std::vector<int> assignment;
    int iterations = 0;
    bool fallback = false;  // fewer rows than clusters: duplicated centroids
};
KMeansResult kmeans(const std::vector<std::vector<double>>& rows, int k, uint64_t seed,
                    int max_iters = 50, double tol = 1e-6);

// One basis row per latent-user subspace: L2-normalized k-means centroids of
// the given item-embedding rows. Result never requires gradients — bases are
// constants between refreshes. Fewer rows than alpha falls back to
// duplicated, slightly perturbed rows and warns on stderr.
Tensor init_bases(const std::vector<std::vector<double>>& rows, int alpha, uint64_t seed);

// Per-item affinity to each subspace: squared inner product with the basis
// plus the smoothing term lambda*d2, normalized across subspaces so every
// row sums to 1 and every entry stays in (0,1). Cost is linear in rows.
Tensor affinity_matrix(const Tensor& stack, const Tensor& bases, double lambda);

// Refined rows. Hard mode scales each row by its dominant-subspace affinity;
// soft mode blends the bases, weighting each by affinity times alignment.
Tensor refine(const Tensor& stack, const Tensor& affinity, const Tensor& bases, bool soft);

// InfoNCE between the normalized rows (anchors) and the refined rows of one
// sequence: positives pair row i with refined row i, negatives are the other
// refined rows of the same sequence. Returns the summed per-anchor loss;
// a single-row sequence has no negatives and contributes exactly 0.
Tensor contrastive_term(const Tensor& normalized, const Tensor& refined, double beta);

// One fused vector per sequence: row-wise L2 normalization of
// (normalized + refined*Ws), rows then summed.
Tensor fuse_rows(const Tensor& normalized, const Tensor& refined, const Tensor& Ws);

}  // namespace capsrec
