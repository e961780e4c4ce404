#include "capsrec/gc2n.hpp"

#include <cmath>

namespace capsrec {

Tensor project_items(const Tensor& E, const Tensor& Wl, const Tensor& bl,
                     bool use_linear_attention) {
    if (E.cols() != Wl.rows()) {
        throw ShapeError("project_items: " + E.shape_str() + " x " + Wl.shape_str());
    }
    Tensor mixed = E;
    if (use_linear_attention) {
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(E.cols()));
        Tensor att = softmax(scale(matmul(transpose(E), E), inv_sqrt_d));
        mixed = matmul(E, att);
    }
    return add_rowvec(matmul(mixed, Wl), bl);
}

Tensor project_accounts(const Tensor& E, const Tensor& Wc, const Tensor& bc, int alpha) {
    if (alpha < 1) throw ConfigError("alpha must be >= 1");
    if (E.cols() != Wc.rows()) {
        throw ShapeError("project_accounts: " + E.shape_str() + " x " + Wc.shape_str());
    }
    if (Wc.cols() % alpha != 0) {
        throw ShapeError("project_accounts: kernel " + Wc.shape_str() +
                         " not divisible into " + std::to_string(alpha) + " capsules");
    }
    Tensor flat = add_rowvec(matmul(E, Wc), bc);
    return reshape(flat, E.rows() * alpha, Wc.cols() / alpha);
}

Tensor correlation_weights(const Tensor& user_row, const Tensor& item_rows) {
    if (!item_rows.defined() || item_rows.rows() == 0) {
        throw ContractError("correlation_weights: empty neighbor set");
    }
    if (user_row.rows() != 1 || user_row.cols() != item_rows.cols()) {
        throw ShapeError("correlation_weights: " + user_row.shape_str() + " vs " +
                         item_rows.shape_str());
    }
    Tensor en = exp_t(matmul(item_rows, transpose(user_row)));  // [t x 1]
    Tensor denom = reduce_sum(sqrt_t(en));
    return mul_scalar_t(en, recip(denom));
}

std::pair<Tensor, Tensor> propagate(const SequentialGraph& g, const Tensor& users,
                                    const Tensor& items, const LayerWeights& w, int alpha) {
    if (alpha < 1) throw ConfigError("alpha must be >= 1");
    if (users.rows() != g.n * alpha) {
        throw ShapeError("propagate: users " + users.shape_str() + " vs " +
                         std::to_string(g.n) + " accounts x alpha=" + std::to_string(alpha));
    }
    if (items.rows() != g.m) {
        throw ShapeError("propagate: items " + items.shape_str() + " vs m=" +
                         std::to_string(g.m));
    }
    const int d2 = items.cols();
    const auto* aw = g.normalized ? &g.account_items_w : nullptr;
    const auto* iw = g.normalized ? &g.item_accounts_w : nullptr;
    const auto* pw = g.normalized ? &g.item_preds_w : nullptr;

    // User side: every latent user of an account shares the account's item
    // neighborhood; the correlation weights are what tell them apart.
    Tensor acc_item_sum = neighbor_sum(g.account_items, items, aw);  // [n x d2]
    Tensor part_plain = matmul(repeat_rows(acc_item_sum, alpha), w.W1);

    std::vector<Tensor> weighted_blocks;
    weighted_blocks.reserve(g.n);
    for (int k = 0; k < g.n; ++k) {
        const auto& nbrs = g.account_items[k];
        if (nbrs.empty()) {
            weighted_blocks.push_back(Tensor::zeros(alpha, d2));
            continue;
        }
        Tensor U_k = slice_rows(users, k * alpha, (k + 1) * alpha);  // [alpha x d2]
        Tensor R_k = gather_rows(items, nbrs);                       // [t x d2]
        // Batched form of correlation_weights for all alpha users at once.
        Tensor en = exp_t(matmul(U_k, transpose(R_k)));        // [alpha x t]
        Tensor denom = rowwise_sum(sqrt_t(en));                // [alpha x 1]
        Tensor wts = div_colvec(en, denom);
        weighted_blocks.push_back(matmul(wts, R_k));           // [alpha x d2]
    }
    Tensor part_weighted = matmul(vstack(weighted_blocks), w.W2);
    Tensor part_self = matmul(users, w.W3);
    Tensor users_next = add(add(part_plain, part_weighted), part_self);

    // Item side: interacting accounts contribute the sum of their user
    // capsules, predecessors contribute their own capsules; no self term.
    Tensor account_sums = sum_consecutive_rows(users, alpha);  // [n x d2]
    Tensor from_accounts = matmul(neighbor_sum(g.item_accounts, account_sums, iw), w.W4);
    Tensor from_preds = matmul(neighbor_sum(g.item_preds, items, pw), w.W5);
    Tensor items_next = add(from_accounts, from_preds);

    return {users_next, items_next};
}

Tensor aggregate_layers(const std::vector<Tensor>& layers) {
    if (layers.empty()) throw ContractError("aggregate_layers: no layers");
    return layers.size() == 1 ? layers[0] : add_n(layers);
}

RoutingResult dynamic_routing(const Tensor& users_agg, const Tensor& b_init,
                              const Tensor& Wd, int alpha, int theta,
                              bool literal_double_sum) {
    if (theta < 1) throw ConfigError("theta must be >= 1");
    if (alpha < 1) throw ConfigError("alpha must be >= 1");
    if (users_agg.rows() % alpha != 0) {
        throw ShapeError("dynamic_routing: users " + users_agg.shape_str() +
                         " not divisible by alpha=" + std::to_string(alpha));
    }
    const int n = users_agg.rows() / alpha;
    if (b_init.rows() != n || b_init.cols() != alpha) {
        throw ShapeError("dynamic_routing: couplings " + b_init.shape_str() + " vs [" +
                         std::to_string(n) + "x" + std::to_string(alpha) + "]");
    }
    if (Wd.rows() != alpha || Wd.cols() != users_agg.cols()) {
        throw ShapeError("dynamic_routing: Wd " + Wd.shape_str() + " vs [" +
                         std::to_string(alpha) + "x" + std::to_string(users_agg.cols()) + "]");
    }
    RoutingResult out;
    Tensor user_sums = sum_consecutive_rows(users_agg, alpha);  // [n x d2]
    Tensor b = b_init;
    Tensor caps;
    for (int j = 0; j < theta; ++j) {
        caps = squash(block_weighted_sum(b, users_agg));  // [n x d2]
        if (literal_double_sum) caps = scale(caps, static_cast<double>(alpha));
        out.per_iter.push_back(caps);
        b = add(b, matmul(mul(user_sums, caps), transpose(Wd)));
    }
    out.account_caps = caps;
    out.b_final = b;
    return out;
}

CapsuleBank gc2n_forward(const SequentialGraph& g, const GC2NWeights& w,
                         const GC2NConfig& cfg, const Tensor& b_init,
                         double dropout_rate, Rng* dropout_rng) {
    CapsuleBank bank;
    bank.item_caps0 = project_items(w.E_I0, w.W_l, w.b_l, cfg.use_linear_attention);
    bank.user_caps0 = project_accounts(w.E_A0, w.W_c, w.b_c, cfg.alpha);
    if (dropout_rng && dropout_rate > 0.0) {
        bank.item_caps0 = dropout(bank.item_caps0, dropout_rate, *dropout_rng);
        bank.user_caps0 = dropout(bank.user_caps0, dropout_rate, *dropout_rng);
    }
    if (static_cast<int>(w.layers.size()) != cfg.L) {
        throw ShapeError("gc2n_forward: " + std::to_string(w.layers.size()) +
                         " layer weight sets for L=" + std::to_string(cfg.L));
    }
    bank.item_layers = {bank.item_caps0};
    bank.user_layers = {bank.user_caps0};
    for (int l = 0; l < cfg.L; ++l) {
        auto [u, i] =
            propagate(g, bank.user_layers.back(), bank.item_layers.back(), w.layers[l],
                      cfg.alpha);
        bank.user_layers.push_back(u);
        bank.item_layers.push_back(i);
    }
    bank.users_agg = aggregate_layers(bank.user_layers);
    bank.items_agg = aggregate_layers(bank.item_layers);
    if (cfg.use_dynamic_routing) {
        RoutingResult r = dynamic_routing(bank.users_agg, b_init, w.W_d, cfg.alpha,
                                          cfg.theta, cfg.literal_double_sum);
        bank.account_caps = r.account_caps;
        bank.routing_iters = std::move(r.per_iter);
        bank.b_final = r.b_final;
    } else {
        bank.account_caps =
            scale(sum_consecutive_rows(bank.users_agg, cfg.alpha), 1.0 / cfg.alpha);
        bank.b_final = b_init;
    }
    return bank;
}

}  // namespace capsrec
