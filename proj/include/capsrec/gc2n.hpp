#pragma once

#include <utility>
#include <vector>

#include "capsrec/graph.hpp"
#include "capsrec/rng.hpp"
#include "capsrec/tensor.hpp"

namespace capsrec {

struct GC2NConfig {
    int d1 = 16;     // base embedding width
    int d2 = 16;     // capsule width
    int alpha = 2;   // latent users per account
    int L = 2;       // message-passing layers
    int theta = 3;   // routing iterations
    bool use_linear_attention = true;  // off: plain point-wise item projection
    bool use_dynamic_routing = true;   // off: account capsule = mean of users
    // Keep the redundant outer per-user sum when forming the account capsule
    // (multiplies the squashed vector by alpha). Off by default; kept for
    // comparison because the printed formula can be read either way.
    bool literal_double_sum = false;
};

// Per-layer message weights: W1 scales the plain neighbor-item sum into a
// user, W2 the correlation-weighted item sum, W3 the user's own previous
// value, W4 the account sum into an item, W5 the predecessor-item sum.
struct LayerWeights {
    Tensor W1, W2, W3, W4, W5;  // all [d2 x d2], row convention x*W
};

// Item rows -> capsule rows. With attention on, a [d1 x d1] feature-space
// attention map (row-softmax of E'E/sqrt(d1)) mixes global item structure
// into every row before the linear map; cost stays linear in the row count
// because the map never materializes a rows x rows matrix. With attention
// off this is the point-wise convolution variant: one shared linear map.
Tensor project_items(const Tensor& E, const Tensor& Wl, const Tensor& bl,
                     bool use_linear_attention);

// Account rows -> alpha stacked user capsules per account. A point-wise
// (kernel size 1) convolution is exactly a shared linear map to alpha*d2
// features, reshaped so rows k*alpha..k*alpha+alpha-1 are account k's user
// capsules.
Tensor project_accounts(const Tensor& E, const Tensor& Wc, const Tensor& bc, int alpha);

// Per-item correlation of one user capsule against its neighbor items:
// exp(dot) over the sum of square roots of exps. Positive, deliberately not
// normalized to sum 1. item_rows must be nonempty (ContractError).
Tensor correlation_weights(const Tensor& user_row, const Tensor& item_rows);

// One message-passing layer over the graph. Users receive their account's
// item sum (W1), a correlation-weighted item sum recomputed from the
// previous layer (W2), and their own value (W3); items receive interacting
// accounts' summed user capsules (W4) and predecessor items (W5) with no
// self term. Returns {users, items} for the next layer.
std::pair<Tensor, Tensor> propagate(const SequentialGraph& g, const Tensor& users,
                                    const Tensor& items, const LayerWeights& w, int alpha);

// Final embedding = elementwise sum of the per-layer capsules (layers 0..L).
Tensor aggregate_layers(const std::vector<Tensor>& layers);

struct RoutingResult {
    Tensor account_caps;           // [n x d2]
    std::vector<Tensor> per_iter;  // account capsule after each iteration
    Tensor b_final;                // [n x alpha] coupling coefficients
};

// Iterative coupling between each account's alpha user capsules and its
// account capsule: capsule = squash(b-weighted user sum), then b shifts by
// the agreement between the summed user capsules and the new account
// capsule, mapped through Wd [alpha x d2]. theta >= 1 (ConfigError).
RoutingResult dynamic_routing(const Tensor& users_agg, const Tensor& b_init,
                              const Tensor& Wd, int alpha, int theta,
                              bool literal_double_sum);

// Everything the network computes in one forward pass, kept for inspection
// and for the downstream sequence/account heads.
struct CapsuleBank {
    Tensor item_caps0, user_caps0;
    std::vector<Tensor> user_layers, item_layers;  // index 0..L
    Tensor users_agg, items_agg;
    Tensor account_caps;  // [n x d2]
    std::vector<Tensor> routing_iters;
    Tensor b_final;
};

struct GC2NWeights {
    Tensor E_I0, E_A0;  // [m x d1], [n x d1]
    Tensor W_l, b_l;    // item projection
    Tensor W_c, b_c;    // account projection
    Tensor W_d;         // routing coupling update
    std::vector<LayerWeights> layers;  // size L
};

// Full network pass: project, L propagation layers, layer aggregation,
// account merge (routing or mean). Dropout (training only) applies to the
// two projected capsule sets; pass rng=nullptr to disable.
CapsuleBank gc2n_forward(const SequentialGraph& g, const GC2NWeights& w,
                         const GC2NConfig& cfg, const Tensor& b_init,
                         double dropout_rate = 0.0, Rng* dropout_rng = nullptr);

}  // namespace capsrec
