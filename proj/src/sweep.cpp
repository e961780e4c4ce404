#include "capsrec/sweep.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "capsrec/errors.hpp"
#include "capsrec/gc2n.hpp"
#include "capsrec/rng.hpp"

namespace capsrec {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, x);
    return buf;
}

// Least-squares y = a + b*x; returns {a, b, r2}. r2 is 1 when the ys are
// constant (fit is exact).
struct LineFit {
    double a = 0.0, b = 0.0, r2 = 1.0;
};

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    size_t n = x.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0, sxy = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    LineFit f;
    f.b = sxx > 0 ? sxy / sxx : 0.0;
    f.a = my - f.b * mx;
    if (syy > 0) {
        double ss_res = 0;
        for (size_t i = 0; i < n; ++i) {
            double e = y[i] - (f.a + f.b * x[i]);
            ss_res += e * e;
        }
        f.r2 = 1.0 - ss_res / syy;
    }
    return f;
}

// Keeps the first ceil(f * n_train) training sequences; vocabulary (and so
// every parameter shape) stays fixed so only graph size and per-sequence work
// vary with f.
Dataset train_fraction_of(const Dataset& d, double f) {
    std::vector<int> tr = d.train_indices();
    size_t keep = static_cast<size_t>(std::llround(std::ceil(f * static_cast<double>(tr.size()))));
    keep = std::min(std::max<size_t>(keep, 1), tr.size());
    Dataset out = d;
    out.sequences.clear();
    out.split.clear();
    for (size_t i = 0; i < keep; ++i) {
        out.sequences.push_back(d.sequences[tr[i]]);
        out.split.push_back(Split::train);
    }
    return out;
}

}  // namespace

std::vector<std::map<std::string, std::string>> grid_assignments(
    const std::vector<SweepAxis>& axes) {
    std::vector<std::map<std::string, std::string>> out(1);
    for (const auto& axis : axes) {
        if (axis.values.empty())
            throw ConfigError("sweep axis '" + axis.key + "' has no values");
        std::vector<std::map<std::string, std::string>> next;
        next.reserve(out.size() * axis.values.size());
        for (const auto& partial : out)
            for (const auto& v : axis.values) {
                next.push_back(partial);
                next.back()[axis.key] = v;
            }
        out = std::move(next);
    }
    return out;
}

std::vector<SweepCell> run_sweep(const RunConfig& base, const Dataset& data,
                                 const std::vector<SweepAxis>& axes,
                                 std::ostream* progress) {
    for (const auto& axis : axes)
        if (!RunConfig::is_model_key(axis.key))
            throw ConfigError("sweep axis '" + axis.key +
                              "' is not a model key; sweeps run on one fixed dataset");
    std::vector<SweepCell> cells;
    for (const auto& assignment : grid_assignments(axes)) {
        RunConfig rc = base;
        for (const auto& [k, v] : assignment) rc.apply(k, v);
        SweepCell cell;
        cell.assignment = assignment;
        auto t0 = std::chrono::steady_clock::now();
        Model model(data, rc.model);
        auto log = model.train();
        cell.train_seconds = seconds_since(t0);
        if (!log.empty()) {
            cell.loss_S = log.back().loss_S;
            cell.loss_C = log.back().loss_C;
        }
        cell.metrics = model.evaluate();
        cell.param_count = model.params().total_count();
        if (progress) {
            *progress << "sweep";
            for (const auto& axis : axes)
                *progress << " " << axis.key << "=" << assignment.at(axis.key);
            *progress << ": recall@20=" << fmt(cell.metrics.recall20, "%.4f")
                      << " mrr@20=" << fmt(cell.metrics.mrr20, "%.4f") << " ("
                      << fmt(cell.train_seconds, "%.1f") << "s)\n";
        }
        cells.push_back(std::move(cell));
    }
    return cells;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepAxis>& axes,
                     const std::vector<SweepCell>& cells) {
    for (const auto& axis : axes) os << axis.key << ",";
    os << "recall@5,recall@20,mrr@5,mrr@20,loss_S,loss_C,params,seconds\n";
    for (const auto& cell : cells) {
        for (const auto& axis : axes) os << cell.assignment.at(axis.key) << ",";
        os << fmt(cell.metrics.recall5, "%.6f") << "," << fmt(cell.metrics.recall20, "%.6f")
           << "," << fmt(cell.metrics.mrr5, "%.6f") << "," << fmt(cell.metrics.mrr20, "%.6f")
           << "," << fmt(cell.loss_S) << "," << fmt(cell.loss_C) << "," << cell.param_count
           << "," << fmt(cell.train_seconds, "%.3f") << "\n";
    }
}

SweepAxis parse_axis(const std::string& spec) {
    size_t eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("expected key=v1,v2,... for a sweep axis, got '" + spec + "'");
    SweepAxis axis;
    axis.key = spec.substr(0, eq);
    const auto& known = RunConfig::known_keys();
    if (std::find(known.begin(), known.end(), axis.key) == known.end())
        throw ConfigError("unknown configuration key '" + axis.key + "'");
    std::stringstream ss(spec.substr(eq + 1));
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) axis.values.push_back(part);
    if (axis.values.empty())
        throw ConfigError("sweep axis '" + axis.key + "' has no values");
    return axis;
}

int64_t expected_param_count(const ModelConfig& cfg, int m, int n) {
    const auto& c = cfg.caps;
    int64_t d1 = c.d1, d2 = c.d2, a = c.alpha, L = c.L;
    int64_t embeddings = static_cast<int64_t>(m) * d1 + static_cast<int64_t>(n) * d1;
    int64_t projection = d1 * d2 + d2 + d1 * (a * d2) + a * d2;
    int64_t propagation = L * 5 * d2 * d2;
    int64_t routing = a * d2;
    int64_t subspace = d2 * d2;
    int64_t head = (2 * d2) * static_cast<int64_t>(m) + m;
    return embeddings + projection + propagation + routing + subspace + head;
}

BenchReport run_bench(const RunConfig& cfg, std::ostream* progress) {
    BenchReport r;
    Dataset data = synthesize_dataset(cfg.synth);
    Dataset split = split_train_test(data, cfg.train_fraction, cfg.model.seed);

    {
        ModelConfig probe_cfg = cfg.model;
        probe_cfg.epochs = 0;  // registry only; no training
        Model probe(split, probe_cfg);
        for (const auto& [group, count] : probe.params().count_by_group())
            r.params_by_group.emplace_back(group, count);
        r.param_total = probe.params().total_count();
        r.param_total_expected = expected_param_count(cfg.model, split.m, split.n);
    }

    // One timed epoch per data fraction, single batch so cost is affine in
    // the fraction (graph edges + per-sequence head work), best of 3 runs.
    const double fractions[] = {0.2, 0.4, 0.6, 0.8, 1.0};
    std::vector<double> fx, fy;
    for (double f : fractions) {
        Dataset frac = train_fraction_of(split, f);
        ModelConfig mc = cfg.model;
        mc.epochs = 1;
        mc.eval_every = 0;
        mc.threads = 1;
        mc.batch_size = std::max<int>(static_cast<int>(frac.sequences.size()), 1);
        double best = 0.0;
        for (int trial = 0; trial < 3; ++trial) {
            Model model(frac, mc);
            auto t0 = std::chrono::steady_clock::now();
            model.train();
            double s = seconds_since(t0);
            if (trial == 0 || s < best) best = s;
        }
        r.epoch_seconds.emplace_back(f, best);
        fx.push_back(f);
        fy.push_back(best);
        if (progress)
            *progress << "bench epoch fraction=" << fmt(f, "%.1f") << " seconds="
                      << fmt(best, "%.4f") << "\n";
    }
    r.epoch_fit_r2 = fit_line(fx, fy).r2;

    // Item projection timing over growing vocabularies, fixed dims. 20 calls
    // per measurement, best of 3, no gradients.
    const int sizes[] = {1000, 2000, 4000};
    const int d1 = cfg.model.caps.d1, d2 = cfg.model.caps.d2;
    Rng rng(mix_seed(cfg.model.seed, seed_salt::xavier));
    Tensor Wl = Tensor::zeros(d1, d2);
    Tensor bl = Tensor::zeros(1, d2);
    for (int i = 0; i < d1; ++i)
        for (int j = 0; j < d2; ++j) Wl.at(i, j) = rng.uniform(-0.5, 0.5);
    std::vector<double> px, py;
    for (int m_items : sizes) {
        Tensor E = Tensor::zeros(m_items, d1);
        for (int i = 0; i < m_items; ++i)
            for (int j = 0; j < d1; ++j) E.at(i, j) = rng.uniform(-0.5, 0.5);
        NoGradGuard guard;
        project_items(E, Wl, bl, true);  // warm-up
        double best = 0.0;
        for (int trial = 0; trial < 3; ++trial) {
            auto t0 = std::chrono::steady_clock::now();
            for (int rep = 0; rep < 20; ++rep) project_items(E, Wl, bl, true);
            double s = seconds_since(t0) / 20.0;
            if (trial == 0 || s < best) best = s;
        }
        r.projection_seconds.emplace_back(m_items, best);
        px.push_back(static_cast<double>(m_items));
        py.push_back(best);
        if (progress)
            *progress << "bench projection items=" << m_items << " seconds="
                      << fmt(best, "%.6f") << "\n";
    }
    LineFit pf = fit_line(px, py);
    r.projection_fit_r2 = pf.r2;
    for (size_t i = 0; i < px.size(); ++i) {
        double fitted = pf.a + pf.b * px[i];
        if (fitted > 0)
            r.projection_max_rel_dev =
                std::max(r.projection_max_rel_dev, std::fabs(py[i] - fitted) / fitted);
    }
    return r;
}

void write_bench_report(std::ostream& os, const BenchReport& r) {
    os << "parameters by group:\n";
    for (const auto& [group, count] : r.params_by_group)
        os << "  " << group << " " << count << "\n";
    os << "  total " << r.param_total << " (closed-form " << r.param_total_expected
       << (r.param_total == r.param_total_expected ? ", match" : ", MISMATCH") << ")\n";
    os << "epoch seconds by train fraction:\n";
    for (const auto& [f, s] : r.epoch_seconds)
        os << "  " << fmt(f, "%.1f") << " " << fmt(s, "%.4f") << "\n";
    os << "  linear fit r2 " << fmt(r.epoch_fit_r2, "%.4f") << "\n";
    os << "item projection seconds by vocabulary:\n";
    for (const auto& [m_items, s] : r.projection_seconds)
        os << "  " << m_items << " " << fmt(s, "%.6f") << "\n";
    os << "  linear fit r2 " << fmt(r.projection_fit_r2, "%.4f") << ", max deviation "
       << fmt(100.0 * r.projection_max_rel_dev, "%.1f") << "%\n";
}

}  // namespace capsrec
