#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "capsrec/errors.hpp"

namespace capsrec {

enum class Split : uint8_t { train = 0, test = 1 };

// One chronological interaction run of a shared account. Synthetic data also
// carries the index of the latent user that generated each interaction.
struct HybridSequence {
    int account = -1;
    std::vector<int> items;
    std::vector<int64_t> timestamps;
    std::vector<int> labels;  // empty for real data

    bool operator==(const HybridSequence&) const = default;
};

struct Dataset {
    int n = 0;  // account vocabulary size
    int m = 0;  // item vocabulary size
    std::vector<HybridSequence> sequences;
    std::vector<Split> split;  // parallel to sequences; all-train until split
    std::vector<std::string> account_tokens;
    std::vector<std::string> item_tokens;

    bool has_labels() const;
    std::vector<int> train_indices() const;
    std::vector<int> test_indices() const;
    int64_t interaction_count() const;

    bool operator==(const Dataset&) const = default;
};

struct LoadOptions {
    // When > 0, an account's timeline is cut into separate sequences wherever
    // consecutive timestamps differ by more than this. 0 keeps one sequence
    // per account.
    int64_t session_gap = 0;
    // Sequences shorter than this are dropped; must be >= 2 so every kept
    // sequence has at least one history item plus a target.
    int min_seq_len = 2;
};

// Tab-separated log: account<TAB>item<TAB>timestamp[<TAB>latent-user]. The
// label column must be used on every line or none. Per-account records are
// sorted by timestamp (ties keep file order); vocabularies are dense ids in
// first-appearance order after filtering.
Dataset load_dataset(const std::string& path, const LoadOptions& opts = {});
Dataset parse_dataset(std::istream& is, const LoadOptions& opts, const std::string& name);

// Canonical dump of the same log format (sequences in order, original
// tokens) plus a "<path>.meta" sidecar of key=value pairs describing the
// dataset; extra_meta entries are appended to the sidecar.
void write_dataset(const std::string& path, const Dataset& d,
                   const std::map<std::string, std::string>& extra_meta = {});
std::string format_dataset(const Dataset& d);

// Re-indexes vocabularies densely by first appearance across the sequence
// list, dropping vocabulary entries that no sequence references. Tokens
// travel with their ids.
Dataset canonicalize(const Dataset& d);

// Seeded sequence-level split: round(train_fraction * N) sequences (clamped
// to keep both sides non-empty) are tagged train, the rest test. Test
// sequences withhold their final item as the prediction target.
Dataset split_train_test(const Dataset& d, double train_fraction, uint64_t seed);

// Generator for shared-account data with known latent users. Items are
// partitioned into users_per_account segments; each (account, user) pair
// owns a pool inside its user's segment plus an overlap quota from other
// segments, and a private successor loop over that pool. Walks follow the
// loop with probability follow_prob, otherwise jump uniformly inside the
// pool, so sequences carry a per-user sequential signal a model can learn.
struct SyntheticSpec {
    int n_accounts = 200;
    int n_items = 500;
    int users_per_account = 2;  // true latent-user count per account
    double pool_overlap = 0.0;  // fraction of pool drawn from other segments
    int seq_len_min = 8;
    int seq_len_max = 16;
    int sequences_per_account = 3;
    int pool_size = 32;
    double follow_prob = 0.8;
    // Per-step probability of re-drawing the active user. 1.0 redraws every
    // step; smaller values produce runs (mean length 1/switch_prob) the way a
    // shared device changes hands in sessions. Long-run label frequencies
    // still match mix_weights either way.
    double switch_prob = 1.0;
    std::vector<double> mix_weights;  // per-user draw weights; empty = uniform
    uint64_t seed = 1;
};

struct SyntheticPlan {
    // pools[k][h]: ascending item ids available to latent user h of account k
    std::vector<std::vector<std::vector<int>>> pools;
    // chain_next[k][h][i]: item following pools[k][h][i] in that user's loop
    std::vector<std::vector<std::vector<int>>> chain_next;
    std::vector<std::pair<int, int>> segments;  // [begin, end) per user index
};

// Pools and loops only, deterministic under spec.seed; the generator builds
// its walks on top of exactly this plan.
SyntheticPlan plan_synthetic(const SyntheticSpec& spec);

// Full dataset: labels record the generating user, timestamps place each
// sequence in its own session window, and the result is canonicalized (item
// tokens keep the pre-canonical id, so plans remain comparable).
Dataset synthesize_dataset(const SyntheticSpec& spec);

}  // namespace capsrec
