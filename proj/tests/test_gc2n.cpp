#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"

#include "capsrec/data.hpp"
#include "capsrec/errors.hpp"
#include "capsrec/gc2n.hpp"
#include "capsrec/graph.hpp"
#include "capsrec/rng.hpp"
#include "capsrec/tensor.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace capsrec;
using testutil::fd_check;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::to_mat;

namespace {

// Fixed positive-weight readout so every output entry influences the loss.
Tensor readout(const Tensor& out, uint64_t salt) {
    Rng rng(salt);
    Tensor w = Tensor::zeros(out.rows(), out.cols());
    for (int i = 0; i < w.rows(); ++i)
        for (int j = 0; j < w.cols(); ++j) w.at(i, j) = 0.2 + rng.uniform01();
    return reduce_sum(mul(out, w));
}

oracle::GraphLists lists_of(const SequentialGraph& g) {
    return {g.item_preds, g.account_items, g.item_accounts};
}

Dataset tiny_dataset(int n, int m, const std::vector<std::vector<int>>& rows) {
    Dataset d;
    d.n = n;
    d.m = m;
    for (const auto& row : rows) {
        HybridSequence s;
        s.account = row[0];
        s.items.assign(row.begin() + 1, row.end());
        s.timestamps.resize(s.items.size());
        for (size_t t = 0; t < s.items.size(); ++t) s.timestamps[t] = static_cast<int64_t>(t);
        d.sequences.push_back(std::move(s));
        d.split.push_back(Split::train);
    }
    for (int k = 0; k < n; ++k) d.account_tokens.push_back("a" + std::to_string(k));
    for (int i = 0; i < m; ++i) d.item_tokens.push_back("i" + std::to_string(i));
    return d;
}

}  // namespace

TEST_SUITE("gc2n") {

TEST_CASE("single-item projection collapses to a plain linear map") {
    // With one row the feature attention map is the 1x1 softmax, i.e. 1.
    Tensor E = Tensor::zeros(1, 1);
    E.at(0, 0) = 2.0;
    Tensor Wl = testutil::from_mat({{0.5, -1.0, 2.0}});
    Tensor bl = testutil::from_mat({{0.1, 0.2, 0.3}});
    Tensor out = project_items(E, Wl, bl, true);
    CHECK(out.at(0, 0) == doctest::Approx(2.0 * 0.5 + 0.1));
    CHECK(out.at(0, 1) == doctest::Approx(-2.0 + 0.2));
    CHECK(out.at(0, 2) == doctest::Approx(4.0 + 0.3));
}

TEST_CASE("zero projection weights leave only the bias") {
    Rng rng(3);
    Tensor E = random_tensor(4, 3, rng);
    Tensor Wl = Tensor::zeros(3, 2);
    Tensor bl = testutil::from_mat({{1.0, -2.0}});
    Tensor out = project_items(E, Wl, bl, true);
    for (int i = 0; i < 4; ++i) {
        CHECK(out.at(i, 0) == doctest::Approx(1.0));
        CHECK(out.at(i, 1) == doctest::Approx(-2.0));
    }
}

TEST_CASE("item projection matches the dense reference") {
    Rng rng(11);
    Tensor E = random_tensor(6, 4, rng);
    Tensor Wl = random_tensor(4, 5, rng);
    Tensor bl = random_tensor(1, 5, rng);
    Tensor out = project_items(E, Wl, bl, true);
    oracle::Mat want =
        oracle::attention_projection(to_mat(E), to_mat(Wl), testutil::to_row(bl));
    CHECK(max_abs_diff(out, want) < 1e-12);
}

TEST_CASE("item projection never allocates an item-by-item buffer") {
    Rng rng(5);
    Tensor E = random_tensor(300, 4, rng);
    Tensor Wl = random_tensor(4, 8, rng);
    Tensor bl = random_tensor(1, 8, rng);
    AllocationAudit audit;
    Tensor out = project_items(E, Wl, bl, true);
    CHECK(out.rows() == 300);
    // Largest temporary is rows x width, far below the 90000-entry dense map.
    CHECK(audit.max_numel() <= 300 * 16);
}

TEST_CASE("attention off gives the point-wise projection") {
    Rng rng(7);
    Tensor E = random_tensor(5, 3, rng);
    Tensor Wl = random_tensor(3, 4, rng);
    Tensor bl = random_tensor(1, 4, rng);
    Tensor out = project_items(E, Wl, bl, false);
    oracle::Mat want = oracle::matmul(to_mat(E), to_mat(Wl));
    for (auto& r : want)
        for (size_t j = 0; j < r.size(); ++j) r[j] += bl.at(0, j);
    CHECK(max_abs_diff(out, want) < 1e-12);
}

TEST_CASE("item projection gradients pass finite differences") {
    Rng rng(13);
    Tensor E = random_tensor(4, 3, rng, -1, 1, true);
    Tensor Wl = random_tensor(3, 3, rng, -1, 1, true);
    Tensor bl = random_tensor(1, 3, rng, -1, 1, true);
    auto loss = [&] { return readout(project_items(E, Wl, bl, true), 42); };
    CHECK(fd_check(E, loss) < 1e-6);
    CHECK(fd_check(Wl, loss) < 1e-6);
    CHECK(fd_check(bl, loss) < 1e-6);
}

TEST_CASE("account projection with one user per account is a linear map") {
    Rng rng(17);
    Tensor E = random_tensor(3, 2, rng);
    Tensor Wc = random_tensor(2, 4, rng);
    Tensor bc = random_tensor(1, 4, rng);
    Tensor out = project_accounts(E, Wc, bc, 1);
    CHECK(out.rows() == 3);
    oracle::Mat want = oracle::matmul(to_mat(E), to_mat(Wc));
    for (auto& r : want)
        for (size_t j = 0; j < r.size(); ++j) r[j] += bc.at(0, j);
    CHECK(max_abs_diff(out, want) < 1e-12);
}

TEST_CASE("zero account embeddings produce bias slices per user") {
    Tensor E = Tensor::zeros(2, 3);  // all zeros
    Tensor Wc = Tensor::zeros(3, 4);
    Tensor bc = testutil::from_mat({{1.0, 2.0, 3.0, 4.0}});
    Tensor out = project_accounts(E, Wc, bc, 2);
    REQUIRE(out.rows() == 4);  // 2 accounts x 2 users
    REQUIRE(out.cols() == 2);
    for (int k = 0; k < 2; ++k) {
        CHECK(out.at(2 * k + 0, 0) == doctest::Approx(1.0));
        CHECK(out.at(2 * k + 0, 1) == doctest::Approx(2.0));
        CHECK(out.at(2 * k + 1, 0) == doctest::Approx(3.0));
        CHECK(out.at(2 * k + 1, 1) == doctest::Approx(4.0));
    }
}

TEST_CASE("account projection matches the reference reshape") {
    Rng rng(19);
    Tensor E = random_tensor(5, 3, rng);
    Tensor Wc = random_tensor(3, 6, rng);  // alpha=3, d2=2
    Tensor bc = random_tensor(1, 6, rng);
    Tensor out = project_accounts(E, Wc, bc, 3);
    oracle::Mat want =
        oracle::account_projection(to_mat(E), to_mat(Wc), testutil::to_row(bc), 3);
    CHECK(out.rows() == 15);
    CHECK(max_abs_diff(out, want) < 1e-12);
}

TEST_CASE("account projection rejects kernels not divisible by alpha") {
    Rng rng(23);
    Tensor E = random_tensor(2, 3, rng);
    Tensor Wc = random_tensor(3, 5, rng);
    Tensor bc = random_tensor(1, 5, rng);
    CHECK_THROWS_AS(project_accounts(E, Wc, bc, 2), ShapeError);
    CHECK_THROWS_AS(project_accounts(E, Wc, bc, 0), ConfigError);
}

TEST_CASE("account projection gradients pass finite differences") {
    Rng rng(29);
    Tensor E = random_tensor(3, 2, rng, -1, 1, true);
    Tensor Wc = random_tensor(2, 6, rng, -1, 1, true);
    Tensor bc = random_tensor(1, 6, rng, -1, 1, true);
    auto loss = [&] { return readout(project_accounts(E, Wc, bc, 2), 77); };
    CHECK(fd_check(E, loss) < 1e-6);
    CHECK(fd_check(Wc, loss) < 1e-6);
    CHECK(fd_check(bc, loss) < 1e-6);
}

TEST_CASE("correlation of a single neighbor is exp of half the dot") {
    Tensor u = testutil::from_mat({{1.0, 0.0}});
    Tensor c = testutil::from_mat({{0.5, 2.0}});
    Tensor a = correlation_weights(u, c);
    // exp(dot) / sqrt(exp(dot)) = exp(dot / 2)
    CHECK(a.at(0, 0) == doctest::Approx(std::exp(0.25)));
}

TEST_CASE("equal neighbors share equal correlation above half weight") {
    Tensor u = testutil::from_mat({{0.3, -0.7}});
    Tensor c = testutil::from_mat({{1.0, 1.0}, {1.0, 1.0}});
    double d = 0.3 - 0.7;
    Tensor a = correlation_weights(u, c);
    double want = std::exp(d) / (2.0 * std::sqrt(std::exp(d)));
    CHECK(a.at(0, 0) == doctest::Approx(want));
    CHECK(a.at(1, 0) == doctest::Approx(want));
    // The weights are positive but deliberately not a distribution.
    CHECK(a.at(0, 0) + a.at(1, 0) != doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("correlation matches the reference on five neighbors") {
    Rng rng(31);
    Tensor u = random_tensor(1, 4, rng);
    Tensor items = random_tensor(5, 4, rng);
    Tensor a = correlation_weights(u, items);
    oracle::Row want = oracle::correlation(testutil::to_row(u), to_mat(items));
    REQUIRE(a.rows() == 5);
    REQUIRE(a.cols() == 1);
    for (int j = 0; j < 5; ++j) CHECK(std::fabs(a.at(j, 0) - want[j]) < 1e-12);
}

TEST_CASE("correlation requires at least one neighbor") {
    Tensor u = testutil::from_mat({{1.0, 2.0}});
    Tensor empty = Tensor::zeros(0, 2);
    CHECK_THROWS_AS(correlation_weights(u, empty), ContractError);
}

TEST_CASE("one propagation layer matches the scripted reference") {
    // account 0 played items 0,1,2 in order; item block has 0->1->2 edges.
    Dataset d = tiny_dataset(1, 3, {{0, 0, 1, 2}});
    SequentialGraph g = build_graph(d);
    Rng rng(37);
    int d2 = 4, alpha = 2;
    Tensor users = random_tensor(alpha, d2, rng);
    Tensor items = random_tensor(3, d2, rng);
    LayerWeights w{random_tensor(d2, d2, rng), random_tensor(d2, d2, rng),
                   random_tensor(d2, d2, rng), random_tensor(d2, d2, rng),
                   random_tensor(d2, d2, rng)};
    auto [un, in] = propagate(g, users, items, w, alpha);
    auto [uo, io] = oracle::propagate(lists_of(g), to_mat(users), to_mat(items), to_mat(w.W1),
                                      to_mat(w.W2), to_mat(w.W3), to_mat(w.W4), to_mat(w.W5),
                                      alpha);
    CHECK(max_abs_diff(un, uo) < 1e-12);
    CHECK(max_abs_diff(in, io) < 1e-12);
}

TEST_CASE("propagation on a multi-account graph matches the reference") {
    Dataset d =
        tiny_dataset(3, 6, {{0, 0, 1, 2}, {1, 2, 3}, {1, 4, 0}, {2, 5, 4, 3}});
    SequentialGraph g = build_graph(d);
    Rng rng(41);
    int d2 = 3, alpha = 2;
    Tensor users = random_tensor(3 * alpha, d2, rng);
    Tensor items = random_tensor(6, d2, rng);
    LayerWeights w{random_tensor(d2, d2, rng), random_tensor(d2, d2, rng),
                   random_tensor(d2, d2, rng), random_tensor(d2, d2, rng),
                   random_tensor(d2, d2, rng)};
    auto [un, in] = propagate(g, users, items, w, alpha);
    auto [uo, io] = oracle::propagate(lists_of(g), to_mat(users), to_mat(items), to_mat(w.W1),
                                      to_mat(w.W2), to_mat(w.W3), to_mat(w.W4), to_mat(w.W5),
                                      alpha);
    CHECK(max_abs_diff(un, uo) < 1e-12);
    CHECK(max_abs_diff(in, io) < 1e-12);
}

TEST_CASE("accounts absent from training keep only their self message") {
    Dataset d = tiny_dataset(2, 3, {{0, 0, 1}, {1, 1, 2}});
    d.split[1] = Split::test;  // account 1 contributes nothing to the graph
    SequentialGraph g = build_graph(d);
    REQUIRE(g.account_items[1].empty());
    Rng rng(43);
    int d2 = 3, alpha = 2;
    Tensor users = random_tensor(2 * alpha, d2, rng);
    Tensor items = random_tensor(3, d2, rng);
    LayerWeights w{random_tensor(d2, d2, rng), random_tensor(d2, d2, rng),
                   random_tensor(d2, d2, rng), random_tensor(d2, d2, rng),
                   random_tensor(d2, d2, rng)};
    auto [un, in] = propagate(g, users, items, w, alpha);
    oracle::Mat self = oracle::matmul(to_mat(users), to_mat(w.W3));
    for (int h = 0; h < alpha; ++h) {
        int r = 1 * alpha + h;
        for (int j = 0; j < d2; ++j) CHECK(un.at(r, j) == doctest::Approx(self[r][j]));
    }
    (void)in;
}

TEST_CASE("propagation gradients pass finite differences") {
    Dataset d = tiny_dataset(2, 4, {{0, 0, 1}, {1, 2, 3, 0}});
    SequentialGraph g = build_graph(d);
    Rng rng(47);
    int d2 = 3, alpha = 2;
    Tensor users = random_tensor(2 * alpha, d2, rng, -1, 1, true);
    Tensor items = random_tensor(4, d2, rng, -1, 1, true);
    LayerWeights w{random_tensor(d2, d2, rng, -1, 1, true),
                   random_tensor(d2, d2, rng, -1, 1, true),
                   random_tensor(d2, d2, rng, -1, 1, true),
                   random_tensor(d2, d2, rng, -1, 1, true),
                   random_tensor(d2, d2, rng, -1, 1, true)};
    auto loss = [&] {
        auto [un, in] = propagate(g, users, items, w, alpha);
        return add(readout(un, 7), readout(in, 9));
    };
    CHECK(fd_check(users, loss) < 1e-6);
    CHECK(fd_check(items, loss) < 1e-6);
    CHECK(fd_check(w.W2, loss) < 1e-6);  // correlation path
    CHECK(fd_check(w.W5, loss) < 1e-6);  // predecessor path
}

TEST_CASE("layer aggregation is the elementwise sum") {
    Rng rng(53);
    Tensor a = random_tensor(4, 3, rng);
    Tensor b = random_tensor(4, 3, rng);
    Tensor c = random_tensor(4, 3, rng);
    Tensor agg = aggregate_layers({a, b, c});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(agg.at(i, j) ==
                  doctest::Approx(a.at(i, j) + b.at(i, j) + c.at(i, j)));
    Tensor single = aggregate_layers({a});
    CHECK(max_abs_diff(single, to_mat(a)) == 0.0);
    CHECK_THROWS_AS(aggregate_layers({}), ContractError);
}

TEST_CASE("routing rejects zero iterations") {
    Rng rng(59);
    Tensor users = random_tensor(2, 3, rng);
    Tensor b = random_tensor(1, 2, rng, 0, 1);
    Tensor Wd = random_tensor(2, 3, rng);
    CHECK_THROWS_AS(dynamic_routing(users, b, Wd, 2, 0, false), ConfigError);
}

TEST_CASE("unit coupling with one user squashes that user") {
    Rng rng(61);
    Tensor users = random_tensor(1, 4, rng);
    Tensor b = testutil::from_mat({{1.0}});
    Tensor Wd = random_tensor(1, 4, rng);
    RoutingResult r = dynamic_routing(users, b, Wd, 1, 1, false);
    oracle::Row want = oracle::squash(testutil::to_row(users));
    for (int j = 0; j < 4; ++j) CHECK(r.account_caps.at(0, j) == doctest::Approx(want[j]));
}

TEST_CASE("zero user capsules stay zero and leave couplings unchanged") {
    Tensor users = Tensor::zeros(4, 3);  // zeros, two accounts x two users
    Tensor b = testutil::from_mat({{0.2, 0.8}, {0.5, 0.5}});
    Rng rng(67);
    Tensor Wd = random_tensor(2, 3, rng);
    RoutingResult r = dynamic_routing(users, b, Wd, 2, 3, false);
    for (int k = 0; k < 2; ++k)
        for (int j = 0; j < 3; ++j) CHECK(r.account_caps.at(k, j) == 0.0);
    CHECK(max_abs_diff(r.b_final, to_mat(b)) == 0.0);
}

TEST_CASE("routing matches the scripted reference") {
    Rng rng(71);
    int n = 3, alpha = 2, d2 = 4;
    Tensor users = random_tensor(n * alpha, d2, rng);
    Tensor b = random_tensor(n, alpha, rng, 0, 1);
    Tensor Wd = random_tensor(alpha, d2, rng);
    for (bool literal : {false, true}) {
        CAPTURE(literal);
        RoutingResult r = dynamic_routing(users, b, Wd, alpha, 3, literal);
        auto [caps, bf] =
            oracle::routing(to_mat(users), to_mat(b), to_mat(Wd), alpha, 3, literal);
        CHECK(max_abs_diff(r.account_caps, caps) < 1e-12);
        CHECK(max_abs_diff(r.b_final, bf) < 1e-12);
        CHECK(r.per_iter.size() == 3);
    }
}

TEST_CASE("every routing iteration emits capsules below unit norm") {
    Rng rng(73);
    for (int rep = 0; rep < 100; ++rep) {
        double s = std::pow(10.0, rng.uniform(-2.0, 3.0));
        int n = 1 + static_cast<int>(rng.uniform01() * 3);
        Tensor users = random_tensor(n * 2, 3, rng, -s, s);
        Tensor b = random_tensor(n, 2, rng, 0, 1);
        Tensor Wd = random_tensor(2, 3, rng);
        RoutingResult r = dynamic_routing(users, b, Wd, 2, 3, false);
        for (const Tensor& caps : r.per_iter)
            for (int k = 0; k < n; ++k) {
                double nn = 0;
                for (int j = 0; j < 3; ++j) nn += caps.at(k, j) * caps.at(k, j);
                CHECK(std::sqrt(nn) < 1.0);
            }
    }
}

TEST_CASE("routing treats accounts independently") {
    Rng rng(79);
    int alpha = 2, d2 = 3;
    Tensor users = random_tensor(3 * alpha, d2, rng);
    Tensor b = random_tensor(3, alpha, rng, 0, 1);
    Tensor Wd = random_tensor(alpha, d2, rng);
    RoutingResult r = dynamic_routing(users, b, Wd, alpha, 3, false);

    // Swap accounts 0 and 2 wholesale; outputs must swap rows the same way.
    Tensor users_p = Tensor::zeros(3 * alpha, d2);
    Tensor b_p = Tensor::zeros(3, alpha);
    std::vector<int> perm = {2, 1, 0};
    for (int k = 0; k < 3; ++k) {
        for (int h = 0; h < alpha; ++h)
            for (int j = 0; j < d2; ++j)
                users_p.at(k * alpha + h, j) = users.at(perm[k] * alpha + h, j);
        for (int h = 0; h < alpha; ++h) b_p.at(k, h) = b.at(perm[k], h);
    }
    RoutingResult rp = dynamic_routing(users_p, b_p, Wd, alpha, 3, false);
    for (int k = 0; k < 3; ++k)
        for (int j = 0; j < d2; ++j)
            CHECK(rp.account_caps.at(k, j) ==
                  doctest::Approx(r.account_caps.at(perm[k], j)));
}

TEST_CASE("routing gradients pass finite differences") {
    Rng rng(83);
    int n = 2, alpha = 2, d2 = 3;
    Tensor users = random_tensor(n * alpha, d2, rng, -1, 1, true);
    Tensor b = random_tensor(n, alpha, rng, 0, 1);
    Tensor Wd = random_tensor(alpha, d2, rng, -1, 1, true);
    auto loss = [&] {
        return readout(dynamic_routing(users, b, Wd, alpha, 3, false).account_caps, 17);
    };
    CHECK(fd_check(users, loss) < 1e-6);
    CHECK(fd_check(Wd, loss) < 1e-6);
}

TEST_CASE("full forward honours the routing and attention switches") {
    Dataset d = tiny_dataset(2, 5, {{0, 0, 1, 2}, {1, 3, 4, 0}});
    SequentialGraph g = build_graph(d);
    Rng rng(89);
    GC2NConfig cfg;
    cfg.d1 = 3;
    cfg.d2 = 4;
    cfg.alpha = 2;
    cfg.L = 2;
    cfg.theta = 3;
    GC2NWeights w;
    w.E_I0 = random_tensor(5, cfg.d1, rng);
    w.E_A0 = random_tensor(2, cfg.d1, rng);
    w.W_l = random_tensor(cfg.d1, cfg.d2, rng);
    w.b_l = random_tensor(1, cfg.d2, rng);
    w.W_c = random_tensor(cfg.d1, cfg.alpha * cfg.d2, rng);
    w.b_c = random_tensor(1, cfg.alpha * cfg.d2, rng);
    w.W_d = random_tensor(cfg.alpha, cfg.d2, rng);
    for (int l = 0; l < cfg.L; ++l)
        w.layers.push_back({random_tensor(cfg.d2, cfg.d2, rng), random_tensor(cfg.d2, cfg.d2, rng),
                            random_tensor(cfg.d2, cfg.d2, rng), random_tensor(cfg.d2, cfg.d2, rng),
                            random_tensor(cfg.d2, cfg.d2, rng)});
    Tensor b_init = random_tensor(2, cfg.alpha, rng, 0, 1);

    CapsuleBank bank = gc2n_forward(g, w, cfg, b_init);
    CHECK(bank.user_layers.size() == static_cast<size_t>(cfg.L) + 1);
    CHECK(bank.item_layers.size() == static_cast<size_t>(cfg.L) + 1);
    CHECK(bank.account_caps.rows() == 2);
    CHECK(bank.b_final.rows() == 2);

    SUBCASE("mean fallback replaces routing") {
        GC2NConfig cm = cfg;
        cm.use_dynamic_routing = false;
        CapsuleBank bm = gc2n_forward(g, w, cm, b_init);
        for (int k = 0; k < 2; ++k)
            for (int j = 0; j < cfg.d2; ++j) {
                double mean = 0.5 * (bm.users_agg.at(k * 2, j) +
                                     bm.users_agg.at(k * 2 + 1, j));
                CHECK(bm.account_caps.at(k, j) == doctest::Approx(mean));
            }
        CHECK(max_abs_diff(bm.b_final, to_mat(b_init)) == 0.0);
    }

    SUBCASE("plain projection replaces attention") {
        GC2NConfig ca = cfg;
        ca.use_linear_attention = false;
        CapsuleBank ba = gc2n_forward(g, w, ca, b_init);
        Tensor want = add_rowvec(matmul(w.E_I0, w.W_l), w.b_l);
        CHECK(max_abs_diff(ba.item_caps0, to_mat(want)) < 1e-14);
    }

    SUBCASE("dropout zeroes or rescales projected capsules, training only") {
        Rng drop1(101), drop2(101), drop3(555);
        CapsuleBank bd = gc2n_forward(g, w, cfg, b_init, 0.4, &drop1);
        CapsuleBank bd_same = gc2n_forward(g, w, cfg, b_init, 0.4, &drop2);
        CHECK(max_abs_diff(bd.account_caps, to_mat(bd_same.account_caps)) == 0.0);
        int zeros = 0;
        for (int i = 0; i < bd.item_caps0.rows(); ++i)
            for (int j = 0; j < bd.item_caps0.cols(); ++j) {
                double got = bd.item_caps0.at(i, j);
                double ref = bank.item_caps0.at(i, j);
                if (got == 0.0) {
                    ++zeros;
                } else {
                    CHECK(got == doctest::Approx(ref / 0.6));
                }
            }
        CHECK(zeros > 0);
        CapsuleBank bd3 = gc2n_forward(g, w, cfg, b_init, 0.4, &drop3);
        CHECK(max_abs_diff(bd3.item_caps0, to_mat(bd.item_caps0)) > 0.0);
    }
}

TEST_CASE("single-user accounts without routing pass users through") {
    Dataset d = tiny_dataset(2, 4, {{0, 0, 1}, {1, 2, 3}});
    SequentialGraph g = build_graph(d);
    Rng rng(97);
    GC2NConfig cfg;
    cfg.d1 = 3;
    cfg.d2 = 3;
    cfg.alpha = 1;
    cfg.L = 1;
    cfg.use_dynamic_routing = false;
    GC2NWeights w;
    w.E_I0 = random_tensor(4, cfg.d1, rng);
    w.E_A0 = random_tensor(2, cfg.d1, rng);
    w.W_l = random_tensor(cfg.d1, cfg.d2, rng);
    w.b_l = random_tensor(1, cfg.d2, rng);
    w.W_c = random_tensor(cfg.d1, cfg.d2, rng);
    w.b_c = random_tensor(1, cfg.d2, rng);
    w.W_d = random_tensor(1, cfg.d2, rng);
    w.layers.push_back({random_tensor(cfg.d2, cfg.d2, rng), random_tensor(cfg.d2, cfg.d2, rng),
                        random_tensor(cfg.d2, cfg.d2, rng), random_tensor(cfg.d2, cfg.d2, rng),
                        random_tensor(cfg.d2, cfg.d2, rng)});
    Tensor b_init = random_tensor(2, 1, rng, 0, 1);
    CapsuleBank bank = gc2n_forward(g, w, cfg, b_init);
    CHECK(max_abs_diff(bank.account_caps, to_mat(bank.users_agg)) < 1e-15);
}

}  // TEST_SUITE
