#include "capsrec/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <thread>

namespace capsrec {

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double need_double(const std::map<std::string, std::string>& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw DataError("checkpoint config missing key " + key);
    return std::strtod(it->second.c_str(), nullptr);
}

int64_t need_int(const std::map<std::string, std::string>& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end()) throw DataError("checkpoint config missing key " + key);
    return std::strtoll(it->second.c_str(), nullptr, 10);
}

}  // namespace

const char* const kMetricsCsvHeader = "epoch,loss_S,loss_C,recall@5,recall@20,mrr@5,mrr@20";

std::map<std::string, std::string> config_to_map(const ModelConfig& cfg, int m, int n) {
    std::map<std::string, std::string> out;
    out["m"] = std::to_string(m);
    out["n"] = std::to_string(n);
    out["d1"] = std::to_string(cfg.caps.d1);
    out["d2"] = std::to_string(cfg.caps.d2);
    out["alpha"] = std::to_string(cfg.caps.alpha);
    out["layers"] = std::to_string(cfg.caps.L);
    out["theta"] = std::to_string(cfg.caps.theta);
    out["linear_attention"] = cfg.caps.use_linear_attention ? "1" : "0";
    out["dynamic_routing"] = cfg.caps.use_dynamic_routing ? "1" : "0";
    out["literal_double_sum"] = cfg.caps.literal_double_sum ? "1" : "0";
    out["subspace"] = cfg.use_subspace ? "1" : "0";
    out["contrastive"] = cfg.use_contrastive ? "1" : "0";
    out["soft_refine"] = cfg.soft_refine ? "1" : "0";
    out["lambda"] = fmt_double(cfg.lambda);
    out["beta"] = fmt_double(cfg.beta);
    out["gamma"] = fmt_double(cfg.gamma);
    out["lr"] = fmt_double(cfg.lr);
    out["batch_size"] = std::to_string(cfg.batch_size);
    out["epochs"] = std::to_string(cfg.epochs);
    out["dropout"] = fmt_double(cfg.dropout);
    out["seed"] = std::to_string(cfg.seed);
    out["bases_refresh_every"] = std::to_string(cfg.bases_refresh_every);
    out["eval_every"] = std::to_string(cfg.eval_every);
    out["threads"] = std::to_string(cfg.threads);
    out["normalize_adjacency"] = cfg.normalize_adjacency ? "1" : "0";
    return out;
}

ModelConfig config_from_map(const std::map<std::string, std::string>& map, int* m, int* n) {
    ModelConfig cfg;
    if (m) *m = static_cast<int>(need_int(map, "m"));
    if (n) *n = static_cast<int>(need_int(map, "n"));
    cfg.caps.d1 = static_cast<int>(need_int(map, "d1"));
    cfg.caps.d2 = static_cast<int>(need_int(map, "d2"));
    cfg.caps.alpha = static_cast<int>(need_int(map, "alpha"));
    cfg.caps.L = static_cast<int>(need_int(map, "layers"));
    cfg.caps.theta = static_cast<int>(need_int(map, "theta"));
    cfg.caps.use_linear_attention = need_int(map, "linear_attention") != 0;
    cfg.caps.use_dynamic_routing = need_int(map, "dynamic_routing") != 0;
    cfg.caps.literal_double_sum = need_int(map, "literal_double_sum") != 0;
    cfg.use_subspace = need_int(map, "subspace") != 0;
    cfg.use_contrastive = need_int(map, "contrastive") != 0;
    cfg.soft_refine = need_int(map, "soft_refine") != 0;
    cfg.lambda = need_double(map, "lambda");
    cfg.beta = need_double(map, "beta");
    cfg.gamma = need_double(map, "gamma");
    cfg.lr = need_double(map, "lr");
    cfg.batch_size = static_cast<int>(need_int(map, "batch_size"));
    cfg.epochs = static_cast<int>(need_int(map, "epochs"));
    cfg.dropout = need_double(map, "dropout");
    cfg.seed = static_cast<uint64_t>(need_int(map, "seed"));
    cfg.bases_refresh_every = static_cast<int>(need_int(map, "bases_refresh_every"));
    cfg.eval_every = static_cast<int>(need_int(map, "eval_every"));
    cfg.threads = static_cast<int>(need_int(map, "threads"));
    cfg.normalize_adjacency = need_int(map, "normalize_adjacency") != 0;
    return cfg;
}

std::vector<int> Model::history_of(const HybridSequence& s) {
    if (s.items.size() < 2) {
        throw ContractError("sequence too short for history + target");
    }
    // Distinct items only: one row per item in the sequence stack. A repeat
    // would duplicate a row, and its alignment term could never separate the
    // copy from itself.
    std::vector<int> h(s.items.begin(), s.items.end() - 1);
    std::sort(h.begin(), h.end());
    h.erase(std::unique(h.begin(), h.end()), h.end());
    return h;
}

int Model::target_of(const HybridSequence& s) {
    if (s.items.empty()) throw ContractError("empty sequence has no target");
    return s.items.back();
}

Model::Model(const Dataset& data, const ModelConfig& cfg) : Model(data, cfg, true) {}

Model::Model(const Dataset& data, const ModelConfig& cfg, bool initialize)
    : data_(data), cfg_(cfg), graph_(build_graph(data, cfg.normalize_adjacency)) {
    const int m = data_.m, n = data_.n;
    const int d1 = cfg_.caps.d1, d2 = cfg_.caps.d2, alpha = cfg_.caps.alpha;
    if (d1 < 1 || d2 < 1) throw ConfigError("embedding sizes must be >= 1");
    if (alpha < 1) throw ConfigError("alpha must be >= 1");
    if (cfg_.caps.L < 0) throw ConfigError("layers must be >= 0");
    if (cfg_.caps.theta < 1) throw ConfigError("theta must be >= 1");
    if (cfg_.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (cfg_.epochs < 0) throw ConfigError("epochs must be >= 0");
    if (cfg_.dropout < 0.0 || cfg_.dropout >= 1.0) {
        throw ConfigError("dropout must be in [0, 1)");
    }
    if (cfg_.threads < 1) throw ConfigError("threads must be >= 1");

    // Registration order is canonical; serialization and initialization
    // both follow it.
    w_.E_I0 = ps_.add("E_I0", "embedding", m, d1);
    w_.E_A0 = ps_.add("E_A0", "embedding", n, d1);
    w_.W_l = ps_.add("W_l", "projection", d1, d2);
    w_.b_l = ps_.add("b_l", "projection", 1, d2, /*is_bias=*/true);
    w_.W_c = ps_.add("W_c", "projection", d1, alpha * d2);
    w_.b_c = ps_.add("b_c", "projection", 1, alpha * d2, /*is_bias=*/true);
    for (int l = 1; l <= cfg_.caps.L; ++l) {
        LayerWeights lw;
        const std::string suffix = "." + std::to_string(l);
        lw.W1 = ps_.add("W1" + suffix, "propagation", d2, d2);
        lw.W2 = ps_.add("W2" + suffix, "propagation", d2, d2);
        lw.W3 = ps_.add("W3" + suffix, "propagation", d2, d2);
        lw.W4 = ps_.add("W4" + suffix, "propagation", d2, d2);
        lw.W5 = ps_.add("W5" + suffix, "propagation", d2, d2);
        w_.layers.push_back(lw);
    }
    w_.W_d = ps_.add("W_d", "routing", alpha, d2);
    W_s_ = ps_.add("W_s", "subspace", d2, d2);
    W_f_ = ps_.add("W_f", "head", 2 * d2, m);
    b_f_ = ps_.add("b_f", "head", 1, m, /*is_bias=*/true);

    if (initialize) {
        Rng init_rng(mix_seed(cfg_.seed, seed_salt::xavier));
        ps_.init_xavier(init_rng);
        Rng coupling_rng(mix_seed(cfg_.seed, seed_salt::routing_init));
        b_init_ = Tensor::zeros(n, alpha);
        for (auto& v : b_init_.value()) v = coupling_rng.uniform01();
        ps_.set_state("b_init", b_init_);
        if (cfg_.use_subspace) refresh_bases();
    }
}

Model Model::from_checkpoint(const CheckpointData& ck, const Dataset& data) {
    int m = 0, n = 0;
    ModelConfig cfg = config_from_map(ck.config, &m, &n);
    if (m != data.m || n != data.n) {
        throw DataError("checkpoint was trained on " + std::to_string(m) + " items / " +
                        std::to_string(n) + " accounts but the dataset has " +
                        std::to_string(data.m) + " / " + std::to_string(data.n));
    }
    Model model(data, cfg, /*initialize=*/false);
    restore_parameters(model.ps_, ck);
    if (!model.ps_.has_state("b_init")) {
        throw DataError("checkpoint is missing the routing coupling state");
    }
    model.b_init_ = model.ps_.state("b_init");
    if (cfg.use_subspace) {
        if (!model.ps_.has_state("bases")) {
            throw DataError("checkpoint is missing the subspace bases state");
        }
        model.bases_ = model.ps_.state("bases");
    }
    return model;
}

CapsuleBank Model::forward_graph(bool training, Rng* dropout_rng) const {
    return gc2n_forward(graph_, w_, cfg_.caps, b_init_,
                        training ? cfg_.dropout : 0.0, dropout_rng);
}

Tensor Model::fused_row(const Tensor& items_agg, const std::vector<int>& history,
                        std::vector<Tensor>* contrast_terms) const {
    Tensor stack = gather_rows(items_agg, history);
    Tensor normalized = l2_normalize(stack);
    if (!cfg_.use_subspace) {
        return colwise_sum(normalized);
    }
    Tensor aff = affinity_matrix(stack, bases_, cfg_.lambda);
    Tensor refined = refine(stack, aff, bases_, cfg_.soft_refine);
    if (contrast_terms) {
        contrast_terms->push_back(contrastive_term(normalized, refined, cfg_.beta));
    }
    return fuse_rows(normalized, refined, W_s_);
}

Model::BatchLoss Model::forward_batch(const std::vector<int>& seq_indices, bool training,
                                      Rng* dropout_rng) {
    if (seq_indices.empty()) throw ContractError("empty batch");
    std::vector<int> order = seq_indices;
    std::sort(order.begin(), order.end());
    CapsuleBank bank = forward_graph(training, dropout_rng);

    std::vector<Tensor> fused;
    std::vector<Tensor> contrast_terms;
    std::vector<int> accounts, targets;
    fused.reserve(order.size());
    for (int si : order) {
        const HybridSequence& s = data_.sequences[si];
        fused.push_back(
            fused_row(bank.items_agg, history_of(s),
                      cfg_.use_subspace ? &contrast_terms : nullptr));
        accounts.push_back(s.account);
        targets.push_back(target_of(s));
    }
    Tensor X = concat_cols(vstack(fused), gather_rows(bank.account_caps, accounts));
    Tensor logits = add_rowvec(matmul(X, W_f_), b_f_);
    Tensor log_probs = log_softmax_rows(logits);

    BatchLoss out;
    out.n_sequences = static_cast<int>(order.size());
    out.loss_S = scale(reduce_sum(pick_per_row(log_probs, targets)),
                       -1.0 / static_cast<double>(order.size()));
    out.loss_C = contrast_terms.empty() ? Tensor::scalar(0.0) : add_n(contrast_terms);
    const double gamma_eff = cfg_.use_contrastive ? cfg_.gamma : 0.0;
    out.total = add(out.loss_S, scale(out.loss_C, gamma_eff));
    return out;
}

std::vector<TrainLogRow> Model::train(std::ostream* metrics_csv, std::ostream* progress) {
    const std::vector<int> train_idx = data_.train_indices();
    if (train_idx.empty()) throw DataError("no training sequences");
    const bool can_eval = !data_.test_indices().empty();
    if (metrics_csv) *metrics_csv << kMetricsCsvHeader << '\n';

    Rng dropout_rng(mix_seed(cfg_.seed, seed_salt::dropout));
    std::vector<TrainLogRow> log;
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
        if (cfg_.use_subspace && cfg_.bases_refresh_every > 0 &&
            (epoch - 1) % cfg_.bases_refresh_every == 0) {
            refresh_bases();
        }
        std::vector<int> order = train_idx;
        Rng shuffle_rng(mix_seed(mix_seed(cfg_.seed, seed_salt::shuffle),
                                 static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double sum_S = 0.0, sum_C = 0.0;
        int batch_no = 0;
        for (size_t start = 0; start < order.size(); start += cfg_.batch_size) {
            ++batch_no;
            const size_t stop = std::min(order.size(), start + cfg_.batch_size);
            std::vector<int> batch(order.begin() + start, order.begin() + stop);
            ps_.zero_grad();
            try {
                BatchLoss bl = forward_batch(batch, /*training=*/true, &dropout_rng);
                backward(bl.total);
                sum_S += bl.loss_S.item() * bl.n_sequences;
                sum_C += bl.loss_C.item();
            } catch (const NumericError& e) {
                Tape::get().clear();
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) +
                                      ", batch " + std::to_string(batch_no) + ": " + e.what());
            }
            ps_.adam_step(cfg_.lr);
        }

        TrainLogRow row;
        row.epoch = epoch;
        row.loss_S = sum_S / static_cast<double>(train_idx.size());
        row.loss_C = sum_C;
        if (can_eval && cfg_.eval_every > 0 &&
            (epoch % cfg_.eval_every == 0 || epoch == cfg_.epochs)) {
            row.metrics = evaluate();
            row.has_metrics = true;
        }
        log.push_back(row);
        if (metrics_csv) {
            *metrics_csv << row.epoch << ',' << fmt_double(row.loss_S) << ','
                         << fmt_double(row.loss_C);
            if (row.has_metrics) {
                *metrics_csv << ',' << fmt_double(row.metrics.recall5) << ','
                             << fmt_double(row.metrics.recall20) << ','
                             << fmt_double(row.metrics.mrr5) << ','
                             << fmt_double(row.metrics.mrr20);
            } else {
                *metrics_csv << ",nan,nan,nan,nan";
            }
            *metrics_csv << '\n';
        }
        if (progress) {
            *progress << "epoch " << row.epoch << " loss_S=" << row.loss_S
                      << " loss_C=" << row.loss_C;
            if (row.has_metrics) *progress << " recall@5=" << row.metrics.recall5;
            *progress << '\n';
        }
    }
    return log;
}

std::vector<double> Model::predict_scores(const CapsuleBank& bank,
                                          const HybridSequence& s) const {
    NoGradGuard ng;
    Tensor fused = fused_row(bank.items_agg, history_of(s), nullptr);
    Tensor account = gather_rows(bank.account_caps, {s.account});
    Tensor logits = add_rowvec(matmul(concat_cols(fused, account), W_f_), b_f_);
    return softmax(logits).value();
}

MetricReport Model::evaluate() const {
    const std::vector<int> test_idx = data_.test_indices();
    if (test_idx.empty()) throw DataError("empty test split");
    NoGradGuard ng;
    const CapsuleBank bank = forward_graph(/*training=*/false, nullptr);

    std::vector<int> ranks(test_idx.size());
    auto worker = [&](size_t begin, size_t end) {
        NoGradGuard thread_ng;
        for (size_t i = begin; i < end; ++i) {
            const HybridSequence& s = data_.sequences[test_idx[i]];
            Tensor fused = fused_row(bank.items_agg, history_of(s), nullptr);
            Tensor account = gather_rows(bank.account_caps, {s.account});
            Tensor logits = add_rowvec(matmul(concat_cols(fused, account), W_f_), b_f_);
            ranks[i] = rank_of_target(logits.value(), target_of(s));
        }
    };
    const int threads = std::min<int>(cfg_.threads, static_cast<int>(test_idx.size()));
    if (threads <= 1) {
        worker(0, test_idx.size());
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (test_idx.size() + threads - 1) / threads;
        for (int t = 0; t < threads; ++t) {
            const size_t begin = t * chunk;
            const size_t end = std::min(test_idx.size(), begin + chunk);
            if (begin >= end) break;
            pool.emplace_back(worker, begin, end);
        }
        for (auto& th : pool) th.join();
    }
    return metrics_from_ranks(ranks);
}

MetricReport Model::evaluate_popularity() const {
    const std::vector<int> test_idx = data_.test_indices();
    if (test_idx.empty()) throw DataError("empty test split");
    const std::vector<int> ranking = popularity_ranking(data_);
    std::vector<int> position(data_.m, 0);
    for (int r = 0; r < data_.m; ++r) position[ranking[r]] = r + 1;
    std::vector<int> ranks;
    ranks.reserve(test_idx.size());
    for (int si : test_idx) {
        ranks.push_back(position[target_of(data_.sequences[si])]);
    }
    return metrics_from_ranks(ranks);
}

double Model::attribution_accuracy() const {
    if (!data_.has_labels()) {
        throw DataError("attribution requires generator labels in the dataset");
    }
    NoGradGuard ng;
    const CapsuleBank bank = forward_graph(/*training=*/false, nullptr);
    return attribution_match(graph_, data_, bank.users_agg, bank.items_agg,
                             cfg_.caps.alpha);
}

double attribution_match(const SequentialGraph& graph, const Dataset& data,
                         const Tensor& users_agg, const Tensor& items_agg, int alpha) {
    NoGradGuard ng;
    int64_t total = 0, correct = 0;
    for (int k = 0; k < data.n; ++k) {
        const auto& items_k = graph.account_items[k];
        if (items_k.empty()) continue;
        // Correlation of every user capsule against the account's item set;
        // the per-user normalizer matters because it differs across users.
        // Aggregated capsules sum all layers, so dot products can exceed the
        // range of exp; rank in log space instead, which leaves the argmax
        // unchanged: log corr(h,c) = dot(h,c) - logsumexp_j(dot(h,j) / 2).
        Tensor U_k = slice_rows(users_agg, k * alpha, (k + 1) * alpha);
        Tensor R_k = gather_rows(items_agg, items_k);
        Tensor dots = matmul(U_k, transpose(R_k));  // [alpha x t]
        const int t = static_cast<int>(items_k.size());
        std::vector<double> log_denom(alpha);
        for (int h = 0; h < alpha; ++h) {
            double hi = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < t; ++c) hi = std::max(hi, dots.at(h, c) / 2.0);
            double acc = 0.0;
            for (int c = 0; c < t; ++c) acc += std::exp(dots.at(h, c) / 2.0 - hi);
            log_denom[h] = hi + std::log(acc);
        }

        std::vector<int> predicted(items_k.size());
        for (int c = 0; c < t; ++c) {
            int best = 0;
            for (int h = 1; h < alpha; ++h) {
                if (dots.at(h, c) - log_denom[h] > dots.at(best, c) - log_denom[best]) {
                    best = h;
                }
            }
            predicted[c] = best;
        }

        // Confusion counts between generating user and predicted capsule.
        std::vector<int64_t> confusion(static_cast<size_t>(alpha) * alpha, 0);
        int64_t account_total = 0;
        for (size_t si = 0; si < data.sequences.size(); ++si) {
            if (!data.split.empty() && data.split[si] != Split::train) continue;
            const HybridSequence& s = data.sequences[si];
            if (s.account != k || s.labels.empty()) continue;
            for (size_t t = 0; t < s.items.size(); ++t) {
                const auto it =
                    std::lower_bound(items_k.begin(), items_k.end(), s.items[t]);
                const size_t col = static_cast<size_t>(it - items_k.begin());
                const int truth = s.labels[t];
                if (truth >= alpha) continue;  // more generators than capsules
                ++confusion[static_cast<size_t>(truth) * alpha + predicted[col]];
                ++account_total;
            }
        }
        if (account_total == 0) continue;

        // Best relabeling of capsule indices for this account.
        std::vector<int> perm(alpha);
        for (int h = 0; h < alpha; ++h) perm[h] = h;
        int64_t best = 0;
        do {
            int64_t hits = 0;
            for (int h = 0; h < alpha; ++h) {
                hits += confusion[static_cast<size_t>(h) * alpha + perm[h]];
            }
            best = std::max(best, hits);
        } while (std::next_permutation(perm.begin(), perm.end()));
        correct += best;
        total += account_total;
    }
    if (total == 0) throw DataError("no labeled training interactions to attribute");
    return static_cast<double>(correct) / static_cast<double>(total);
}

void Model::refresh_bases() {
    NoGradGuard ng;
    const CapsuleBank bank = forward_graph(/*training=*/false, nullptr);
    std::vector<std::vector<double>> rows;
    const int d2 = cfg_.caps.d2;
    for (int si : data_.train_indices()) {
        for (int item : history_of(data_.sequences[si])) {
            std::vector<double> row(d2);
            for (int q = 0; q < d2; ++q) row[q] = bank.items_agg.at(item, q);
            rows.push_back(std::move(row));
        }
    }
    bases_ = init_bases(rows, cfg_.caps.alpha, mix_seed(cfg_.seed, seed_salt::kmeans));
    ps_.set_state("bases", bases_);
}

void Model::save(std::ostream& os) const {
    write_checkpoint(os, config_to_map(cfg_, data_.m, data_.n), ps_);
}

}  // namespace capsrec
