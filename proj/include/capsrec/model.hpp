#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "capsrec/data.hpp"
#include "capsrec/gc2n.hpp"
#include "capsrec/graph.hpp"
#include "capsrec/metrics.hpp"
#include "capsrec/params.hpp"
#include "capsrec/subspace.hpp"
#include "capsrec/tensor.hpp"

namespace capsrec {

struct ModelConfig {
    GC2NConfig caps;
    double lambda = 1e-4;        // affinity smoothing
    double beta = 0.9;           // contrastive temperature
    double gamma = 0.9;          // contrastive loss weight
    bool use_subspace = true;    // off: fused row = summed normalized stack
    bool use_contrastive = true; // off: alignment loss computed but unweighted
    bool soft_refine = false;
    double lr = 0.005;
    int batch_size = 256;
    int epochs = 200;
    double dropout = 0.1;
    uint64_t seed = 1;
    int bases_refresh_every = 5;  // epochs between k-means refreshes
    int eval_every = 0;           // 0: no per-epoch test metrics
    int threads = 1;              // evaluation-only parallelism
    bool normalize_adjacency = false;
};

// Serialized alongside checkpoints so evaluation can rebuild the exact model.
std::map<std::string, std::string> config_to_map(const ModelConfig& cfg, int m, int n);
ModelConfig config_from_map(const std::map<std::string, std::string>& map, int* m, int* n);

struct TrainLogRow {
    int epoch = 0;
    double loss_S = 0.0;  // mean next-item loss over the epoch's sequences
    double loss_C = 0.0;  // summed alignment loss over the epoch's sequences
    MetricReport metrics;
    bool has_metrics = false;
};

// Metrics CSV column layout used by train(); absent metrics print as nan.
extern const char* const kMetricsCsvHeader;

// Fraction of labeled training interactions whose highest-correlation user
// capsule matches the generating user, per-account best index permutation.
// Exposed for tests that plant capsules directly; DataError when nothing is
// labeled.
double attribution_match(const SequentialGraph& graph, const Dataset& data,
                         const Tensor& users_agg, const Tensor& items_agg, int alpha);

class Model {
  public:
    Model(const Dataset& data, const ModelConfig& cfg);

    // Rebuild from a parsed checkpoint; the dataset must carry the same
    // vocabulary sizes as the checkpoint config (DataError otherwise).
    static Model from_checkpoint(const CheckpointData& ck, const Dataset& data);

    const ModelConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return data_; }
    const SequentialGraph& graph() const { return graph_; }
    ParameterSet& params() { return ps_; }
    const ParameterSet& params() const { return ps_; }
    const GC2NWeights& weights() const { return w_; }
    Tensor bases() const { return bases_; }
    Tensor coupling_init() const { return b_init_; }
    // Evaluation parallelism can differ from what a checkpoint recorded.
    void set_threads(int threads) { cfg_.threads = threads < 1 ? 1 : threads; }

    static std::vector<int> history_of(const HybridSequence& s);
    static int target_of(const HybridSequence& s);

    // Full-graph capsule pass (the unit shared by every batch in a step).
    CapsuleBank forward_graph(bool training, Rng* dropout_rng) const;

    struct BatchLoss {
        Tensor total, loss_S, loss_C;
        int n_sequences = 0;
    };
    // Differentiable loss over the given sequences. Indices are processed in
    // ascending order regardless of input order, so batch composition — not
    // listing order — determines the result bit-for-bit.
    BatchLoss forward_batch(const std::vector<int>& seq_indices, bool training,
                            Rng* dropout_rng);

    // Full training loop: seeded shuffling, mini-batches, Adam, periodic
    // basis refresh, per-epoch CSV rows. Non-finite values abort with
    // DivergenceError naming the epoch and batch.
    std::vector<TrainLogRow> train(std::ostream* metrics_csv = nullptr,
                                   std::ostream* progress = nullptr);

    // Full-vocabulary ranking over the test split (DataError when empty).
    MetricReport evaluate() const;
    MetricReport evaluate_popularity() const;

    // Per-interaction probability vector for one test sequence (softmax over
    // all items), used by tests and the popularity-free chance checks.
    std::vector<double> predict_scores(const CapsuleBank& bank,
                                       const HybridSequence& s) const;

    // Fraction of labeled training interactions whose highest-correlation
    // user capsule matches the generating user, under each account's best
    // user-index permutation. Requires labels (DataError otherwise).
    double attribution_accuracy() const;

    // Re-cluster item embeddings into subspace bases (gradient-free).
    void refresh_bases();

    void save(std::ostream& os) const;

  private:
    Model(const Dataset& data, const ModelConfig& cfg, bool initialize);

    Tensor fused_row(const Tensor& items_agg, const std::vector<int>& history,
                     std::vector<Tensor>* contrast_terms) const;

    Dataset data_;
    ModelConfig cfg_;
    SequentialGraph graph_;
    ParameterSet ps_;
    GC2NWeights w_;
    Tensor W_s_, W_f_, b_f_;
    Tensor b_init_;  // routing coupling initialization, drawn once
    Tensor bases_;   // subspace bases, refreshed by k-means
};

}  // namespace capsrec
