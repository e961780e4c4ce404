#include "capsrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "capsrec/rng.hpp"

namespace capsrec {

bool Dataset::has_labels() const {
    for (const auto& s : sequences)
        if (!s.labels.empty()) return true;
    return false;
}

std::vector<int> Dataset::train_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < sequences.size(); ++i)
        if (split.empty() || split[i] == Split::train) out.push_back(static_cast<int>(i));
    return out;
}

std::vector<int> Dataset::test_indices() const {
    std::vector<int> out;
    for (size_t i = 0; i < sequences.size(); ++i)
        if (!split.empty() && split[i] == Split::test) out.push_back(static_cast<int>(i));
    return out;
}

int64_t Dataset::interaction_count() const {
    int64_t n = 0;
    for (const auto& s : sequences) n += static_cast<int64_t>(s.items.size());
    return n;
}

namespace {

struct RawRecord {
    std::string account, item;
    int64_t timestamp = 0;
    int label = -1;
    size_t file_order = 0;
};

int64_t parse_int(const std::string& field, const std::string& name, size_t line_no,
                  const std::string& source) {
    if (field.empty()) {
        throw DataError(source + ":" + std::to_string(line_no) + ": empty " + name);
    }
    char* end = nullptr;
    errno = 0;
    const long long v = std::strtoll(field.c_str(), &end, 10);
    if (errno != 0 || end != field.c_str() + field.size()) {
        throw DataError(source + ":" + std::to_string(line_no) + ": bad " + name + " '" +
                        field + "'");
    }
    return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        if (tab == std::string::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
}

}  // namespace

Dataset parse_dataset(std::istream& is, const LoadOptions& opts, const std::string& name) {
    if (opts.min_seq_len < 2) throw ConfigError("min_seq_len must be >= 2");
    if (opts.session_gap < 0) throw ConfigError("session_gap must be >= 0");

    std::vector<RawRecord> records;
    std::string line;
    size_t line_no = 0;
    int has_label_col = -1;  // -1 unknown, else 0/1
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 3 && fields.size() != 4) {
            throw DataError(name + ":" + std::to_string(line_no) + ": expected 3 or 4 " +
                            "tab-separated fields, got " + std::to_string(fields.size()));
        }
        const int labeled = fields.size() == 4 ? 1 : 0;
        if (has_label_col == -1) has_label_col = labeled;
        if (has_label_col != labeled) {
            throw DataError(name + ":" + std::to_string(line_no) +
                            ": inconsistent column count");
        }
        RawRecord r;
        r.account = fields[0];
        r.item = fields[1];
        if (r.account.empty() || r.item.empty()) {
            throw DataError(name + ":" + std::to_string(line_no) + ": empty token");
        }
        r.timestamp = parse_int(fields[2], "timestamp", line_no, name);
        if (labeled) {
            r.label = static_cast<int>(parse_int(fields[3], "latent-user label", line_no, name));
            if (r.label < 0) {
                throw DataError(name + ":" + std::to_string(line_no) + ": negative label");
            }
        }
        r.file_order = records.size();
        records.push_back(std::move(r));
    }
    if (records.empty()) throw DataError(name + ": empty dataset");

    // Group per account in first-appearance order, then time-sort each group
    // keeping file order for equal timestamps.
    std::vector<std::string> account_order;
    std::map<std::string, std::vector<size_t>> by_account;
    for (size_t i = 0; i < records.size(); ++i) {
        auto [it, inserted] = by_account.try_emplace(records[i].account);
        if (inserted) account_order.push_back(records[i].account);
        it->second.push_back(i);
    }

    Dataset out;
    std::map<std::string, int> item_ids;
    std::map<std::string, int> account_ids;
    for (const auto& token : account_order) {
        auto& idxs = by_account[token];
        std::stable_sort(idxs.begin(), idxs.end(), [&](size_t a, size_t b) {
            return records[a].timestamp < records[b].timestamp;
        });
        // Cut into sessions, then drop fragments that cannot supply a
        // history item plus a target.
        std::vector<std::vector<size_t>> fragments;
        for (size_t pos = 0; pos < idxs.size(); ++pos) {
            const bool cut = pos == 0 ||
                             (opts.session_gap > 0 &&
                              records[idxs[pos]].timestamp - records[idxs[pos - 1]].timestamp >
                                  opts.session_gap);
            if (cut) fragments.emplace_back();
            fragments.back().push_back(idxs[pos]);
        }
        int account_id = -1;
        for (const auto& frag : fragments) {
            if (static_cast<int>(frag.size()) < opts.min_seq_len) continue;
            if (account_id == -1) {
                account_id = static_cast<int>(out.account_tokens.size());
                account_ids[token] = account_id;
                out.account_tokens.push_back(token);
            }
            HybridSequence seq;
            seq.account = account_id;
            for (size_t ri : frag) {
                const RawRecord& r = records[ri];
                auto [it, inserted] =
                    item_ids.try_emplace(r.item, static_cast<int>(out.item_tokens.size()));
                if (inserted) out.item_tokens.push_back(r.item);
                seq.items.push_back(it->second);
                seq.timestamps.push_back(r.timestamp);
                if (has_label_col == 1) seq.labels.push_back(r.label);
            }
            out.sequences.push_back(std::move(seq));
        }
    }
    if (out.sequences.empty()) {
        throw DataError(name + ": empty dataset after filtering sequences shorter than " +
                        std::to_string(opts.min_seq_len));
    }
    out.n = static_cast<int>(out.account_tokens.size());
    out.m = static_cast<int>(out.item_tokens.size());
    out.split.assign(out.sequences.size(), Split::train);
    return out;
}

Dataset load_dataset(const std::string& path, const LoadOptions& opts) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open dataset file " + path);
    return parse_dataset(is, opts, path);
}

std::string format_dataset(const Dataset& d) {
    std::ostringstream os;
    const bool labeled = d.has_labels();
    for (const auto& s : d.sequences) {
        for (size_t t = 0; t < s.items.size(); ++t) {
            os << d.account_tokens[s.account] << '\t' << d.item_tokens[s.items[t]] << '\t'
               << s.timestamps[t];
            if (labeled) os << '\t' << (s.labels.empty() ? 0 : s.labels[t]);
            os << '\n';
        }
    }
    return os.str();
}

void write_dataset(const std::string& path, const Dataset& d,
                   const std::map<std::string, std::string>& extra_meta) {
    {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw DataError("cannot write dataset file " + path);
        os << format_dataset(d);
    }
    std::ofstream meta(path + ".meta", std::ios::binary);
    if (!meta) throw DataError("cannot write sidecar " + path + ".meta");
    meta << "items=" << d.m << '\n';
    meta << "accounts=" << d.n << '\n';
    meta << "sequences=" << d.sequences.size() << '\n';
    meta << "interactions=" << d.interaction_count() << '\n';
    meta << "labeled=" << (d.has_labels() ? 1 : 0) << '\n';
    for (const auto& [k, v] : extra_meta) meta << k << '=' << v << '\n';
}

Dataset canonicalize(const Dataset& d) {
    Dataset out;
    std::vector<int> account_map(d.n, -1), item_map(d.m, -1);
    out.sequences.reserve(d.sequences.size());
    for (const auto& s : d.sequences) {
        HybridSequence seq = s;
        if (account_map[s.account] == -1) {
            account_map[s.account] = static_cast<int>(out.account_tokens.size());
            out.account_tokens.push_back(d.account_tokens[s.account]);
        }
        seq.account = account_map[s.account];
        for (auto& item : seq.items) {
            if (item_map[item] == -1) {
                item_map[item] = static_cast<int>(out.item_tokens.size());
                out.item_tokens.push_back(d.item_tokens[item]);
            }
            item = item_map[item];
        }
        out.sequences.push_back(std::move(seq));
    }
    out.n = static_cast<int>(out.account_tokens.size());
    out.m = static_cast<int>(out.item_tokens.size());
    out.split = d.split;
    if (out.split.empty()) out.split.assign(out.sequences.size(), Split::train);
    return out;
}

Dataset split_train_test(const Dataset& d, double train_fraction, uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction must be in (0, 1)");
    }
    const size_t total = d.sequences.size();
    if (total < 2) throw DataError("cannot split fewer than 2 sequences");
    std::vector<size_t> order(total);
    for (size_t i = 0; i < total; ++i) order[i] = i;
    Rng rng(mix_seed(seed, seed_salt::split));
    rng.shuffle(order);
    size_t n_train = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(total)));
    n_train = std::max<size_t>(1, std::min(n_train, total - 1));
    Dataset out = d;
    out.split.assign(total, Split::test);
    for (size_t i = 0; i < n_train; ++i) out.split[order[i]] = Split::train;
    return out;
}

// ------------------------------------------------------------------ synthetic

namespace {

void validate(const SyntheticSpec& spec) {
    if (spec.n_accounts < 1) throw ConfigError("n_accounts must be >= 1");
    if (spec.users_per_account < 1) throw ConfigError("users_per_account must be >= 1");
    if (spec.n_items < spec.users_per_account) {
        throw ConfigError("n_items must be >= users_per_account");
    }
    if (spec.seq_len_min < 2 || spec.seq_len_max < spec.seq_len_min) {
        throw ConfigError("need 2 <= seq_len_min <= seq_len_max");
    }
    if (spec.seq_len_max >= 10000) throw ConfigError("seq_len_max must be < 10000");
    if (spec.sequences_per_account < 1) {
        throw ConfigError("sequences_per_account must be >= 1");
    }
    if (spec.pool_size < 1) throw ConfigError("pool_size must be >= 1");
    if (spec.pool_overlap < 0.0 || spec.pool_overlap > 1.0) {
        throw ConfigError("pool_overlap must be in [0, 1]");
    }
    if (spec.follow_prob < 0.0 || spec.follow_prob > 1.0) {
        throw ConfigError("follow_prob must be in [0, 1]");
    }
    if (spec.switch_prob <= 0.0 || spec.switch_prob > 1.0) {
        throw ConfigError("switch_prob must be in (0, 1]");
    }
    if (!spec.mix_weights.empty()) {
        if (static_cast<int>(spec.mix_weights.size()) != spec.users_per_account) {
            throw ConfigError("mix_weights must have users_per_account entries");
        }
        double total = 0.0;
        for (double w : spec.mix_weights) {
            if (w < 0.0) throw ConfigError("mix_weights must be non-negative");
            total += w;
        }
        if (total <= 0.0) throw ConfigError("mix_weights must not all be zero");
    }
}

int draw_user(const SyntheticSpec& spec, Rng& rng) {
    if (spec.mix_weights.empty()) {
        return static_cast<int>(rng.below(static_cast<uint64_t>(spec.users_per_account)));
    }
    double total = 0.0;
    for (double w : spec.mix_weights) total += w;
    const double r = rng.uniform01() * total;
    double acc = 0.0;
    for (size_t h = 0; h + 1 < spec.mix_weights.size(); ++h) {
        acc += spec.mix_weights[h];
        if (r < acc) return static_cast<int>(h);
    }
    return spec.users_per_account - 1;
}

}  // namespace

SyntheticPlan plan_synthetic(const SyntheticSpec& spec) {
    validate(spec);
    const int n = spec.n_accounts, g = spec.users_per_account;
    SyntheticPlan plan;
    plan.segments.resize(g);
    for (int h = 0; h < g; ++h) {
        plan.segments[h] = {static_cast<int>(static_cast<int64_t>(h) * spec.n_items / g),
                            static_cast<int>(static_cast<int64_t>(h + 1) * spec.n_items / g)};
    }
    Rng rng(mix_seed(spec.seed, seed_salt::generator));
    plan.pools.assign(n, std::vector<std::vector<int>>(g));
    plan.chain_next.assign(n, std::vector<std::vector<int>>(g));
    for (int k = 0; k < n; ++k) {
        for (int h = 0; h < g; ++h) {
            const auto [beg, end] = plan.segments[h];
            const int seg_size = end - beg;
            std::vector<char> taken(spec.n_items, 0);
            std::vector<int>& pool = plan.pools[k][h];
            // Striped core: every account owns a slice of every segment so
            // the union of pools always covers the vocabulary.
            for (int v = beg + (k % seg_size); v < end; v += n) {
                pool.push_back(v);
                taken[v] = 1;
            }
            // Fill with segment-local extras.
            int guard = 0;
            while (static_cast<int>(pool.size()) < std::min(spec.pool_size, seg_size) &&
                   guard++ < seg_size * 64) {
                const int v = beg + static_cast<int>(rng.below(static_cast<uint64_t>(seg_size)));
                if (taken[v]) continue;
                taken[v] = 1;
                pool.push_back(v);
            }
            // Cross-segment overlap quota.
            const int quota = static_cast<int>(
                std::lround(spec.pool_overlap * static_cast<double>(spec.pool_size)));
            guard = 0;
            int added = 0;
            while (added < quota && g > 1 && guard++ < spec.n_items * 64) {
                const int v = static_cast<int>(rng.below(static_cast<uint64_t>(spec.n_items)));
                if (taken[v] || (v >= beg && v < end)) continue;
                taken[v] = 1;
                pool.push_back(v);
                ++added;
            }
            std::sort(pool.begin(), pool.end());
            // Successor loop: a random cyclic order over the pool.
            std::vector<int> walk = pool;
            rng.shuffle(walk);
            std::map<int, int> succ;
            for (size_t i = 0; i < walk.size(); ++i) succ[walk[i]] = walk[(i + 1) % walk.size()];
            auto& next = plan.chain_next[k][h];
            next.resize(pool.size());
            for (size_t i = 0; i < pool.size(); ++i) next[i] = succ[pool[i]];
        }
    }
    return plan;
}

Dataset synthesize_dataset(const SyntheticSpec& spec) {
    const SyntheticPlan plan = plan_synthetic(spec);
    Rng rng(mix_seed(mix_seed(spec.seed, seed_salt::generator), seed_salt::generator));
    Dataset raw;
    raw.n = spec.n_accounts;
    raw.m = spec.n_items;
    for (int k = 0; k < spec.n_accounts; ++k) raw.account_tokens.push_back("a" + std::to_string(k));
    for (int v = 0; v < spec.n_items; ++v) raw.item_tokens.push_back("i" + std::to_string(v));
    for (int k = 0; k < spec.n_accounts; ++k) {
        for (int f = 0; f < spec.sequences_per_account; ++f) {
            const int len = spec.seq_len_min +
                            static_cast<int>(rng.below(static_cast<uint64_t>(
                                spec.seq_len_max - spec.seq_len_min + 1)));
            HybridSequence seq;
            seq.account = k;
            std::vector<int> last(spec.users_per_account, -1);
            int active = -1;
            for (int t = 0; t < len; ++t) {
                // Guard order matters: at switch_prob == 1 no bernoulli is
                // consumed, so default streams stay identical under a seed.
                const int h = (active >= 0 && spec.switch_prob < 1.0 &&
                               rng.uniform01() >= spec.switch_prob)
                                  ? active
                                  : draw_user(spec, rng);
                active = h;
                const auto& pool = plan.pools[k][h];
                int item;
                if (last[h] != -1 && rng.uniform01() < spec.follow_prob) {
                    const auto it = std::lower_bound(pool.begin(), pool.end(), last[h]);
                    item = plan.chain_next[k][h][static_cast<size_t>(it - pool.begin())];
                } else {
                    item = pool[rng.below(pool.size())];
                }
                last[h] = item;
                seq.items.push_back(item);
                seq.timestamps.push_back(static_cast<int64_t>(f) * 10000 + t);
                seq.labels.push_back(h);
            }
            raw.sequences.push_back(std::move(seq));
        }
    }
    raw.split.assign(raw.sequences.size(), Split::train);
    return canonicalize(raw);
}

}  // namespace capsrec
