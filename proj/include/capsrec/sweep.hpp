#pragma once

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "capsrec/config.hpp"
#include "capsrec/data.hpp"
#include "capsrec/metrics.hpp"

namespace capsrec {

// One axis of a hyperparameter grid: a model config key and the values to try.
struct SweepAxis {
    std::string key;
    std::vector<std::string> values;
};

struct SweepCell {
    std::map<std::string, std::string> assignment;  // key -> value for this cell
    MetricReport metrics;
    double loss_S = 0.0;
    double loss_C = 0.0;
    int64_t param_count = 0;
    double train_seconds = 0.0;
};

// Cross-product of the axes in declaration order (last axis varies fastest).
std::vector<std::map<std::string, std::string>> grid_assignments(
    const std::vector<SweepAxis>& axes);

// Trains and evaluates one model per grid cell on a fixed, pre-split dataset.
// Axis keys must be model keys (data and generator keys would silently not
// apply to the shared dataset). ConfigError otherwise.
std::vector<SweepCell> run_sweep(const RunConfig& base, const Dataset& data,
                                 const std::vector<SweepAxis>& axes,
                                 std::ostream* progress = nullptr);

// One row per cell: axis columns, then metrics/losses/params/seconds.
void write_sweep_csv(std::ostream& os, const std::vector<SweepAxis>& axes,
                     const std::vector<SweepCell>& cells);

// "key=v1,v2,..." -> axis. ConfigError on empty value list or unknown key.
SweepAxis parse_axis(const std::string& spec);

struct BenchReport {
    std::vector<std::pair<std::string, int64_t>> params_by_group;
    int64_t param_total = 0;
    int64_t param_total_expected = 0;  // closed-form count from the dims
    std::vector<std::pair<double, double>> epoch_seconds;    // data fraction -> s
    double epoch_fit_r2 = 0.0;          // linear fit of time vs fraction
    std::vector<std::pair<int, double>> projection_seconds;  // item count -> s
    double projection_fit_r2 = 0.0;
    double projection_max_rel_dev = 0.0;  // worst |t - fit| / fit
};

// Closed-form parameter count for the given dims (embeddings + projections +
// propagation + routing + subspace + head), for cross-checking the registry.
int64_t expected_param_count(const ModelConfig& cfg, int m, int n);

// Times one training epoch at growing fractions of a synthetic dataset and
// the item projection at growing vocabulary sizes.
BenchReport run_bench(const RunConfig& cfg, std::ostream* progress = nullptr);

void write_bench_report(std::ostream& os, const BenchReport& r);

}  // namespace capsrec
