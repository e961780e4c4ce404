// capsrec: shared-account sequential recommender toolkit.
//
// Subcommands: generate | train | evaluate | inspect | bench. Every
// configuration key is available as a mirrored flag (--lr 0.01), via a
// key=value config file (--config run.conf), or as --set lr=0.01; later
// sources win in that order. Exit codes: 0 ok, 2 usage/config, 3 data/graph,
// 4 numeric divergence, 1 anything else.

#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "capsrec/config.hpp"
#include "capsrec/data.hpp"
#include "capsrec/errors.hpp"
#include "capsrec/gc2n.hpp"
#include "capsrec/model.hpp"
#include "capsrec/subspace.hpp"
#include "capsrec/sweep.hpp"
#include "capsrec/tensor.hpp"

namespace fs = std::filesystem;
using namespace capsrec;

namespace {

// Per-subcommand bundle of the three override sources. Mirrored flags stay
// as strings and run through the same parser as config-file lines.
struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::deque<std::string> storage;  // stable addresses for CLI11 bindings
    std::vector<std::pair<std::string, std::string*>> flag_slots;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "key=value configuration file");
        cmd->add_option("--set", sets, "override one key, e.g. --set lr=0.01")
            ->take_all();
        for (const auto& key : RunConfig::known_keys()) {
            storage.emplace_back();
            flag_slots.emplace_back(key, &storage.back());
            cmd->add_option("--" + key, storage.back(), "config key " + key);
        }
    }

    RunConfig resolve(const CLI::App* cmd) const {
        RunConfig rc;
        if (!config_path.empty()) rc.load_file(config_path);
        for (const auto& [key, slot] : flag_slots)
            if (cmd->count("--" + key) > 0) rc.apply(key, *slot);
        for (const auto& s : sets) rc.apply_assignment(s);
        return rc;
    }
};

void apply_ablations(RunConfig& rc, const std::vector<std::string>& ablate) {
    for (const auto& a : ablate) {
        if (a == "la")
            rc.model.caps.use_linear_attention = false;
        else if (a == "dr")
            rc.model.caps.use_dynamic_routing = false;
        else if (a == "cl")
            rc.model.use_contrastive = false;
        else if (a == "sa")
            rc.model.use_subspace = false;
        else
            throw ConfigError("unknown ablation '" + a + "' (expected la, dr, cl or sa)");
    }
}

void echo_config(const RunConfig& rc) {
    std::cout << "# effective configuration\n" << rc.echo();
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot write '" + path.string() + "'");
    return os;
}

void write_config_file(const fs::path& dir, const RunConfig& rc) {
    auto os = open_out(dir / "config.txt");
    os << rc.echo();
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const std::vector<std::string>& artifacts) {
    nlohmann::json j;
    j["command"] = command;
    j["artifacts"] = artifacts;
    auto os = open_out(dir / "MANIFEST.json");
    os << j.dump(2) << "\n";
}

void print_metrics(const std::string& name, const MetricReport& r) {
    std::cout << name << " metrics (" << r.n_evaluated << " sequences)\n";
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %-10s %8s %8s\n", "", "@5", "@20");
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "  %-10s %8.4f %8.4f\n", "recall", r.recall5, r.recall20);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "  %-10s %8.4f %8.4f\n", "mrr", r.mrr5, r.mrr20);
    std::cout << buf;
    std::cout << "recall@5,recall@20,mrr@5,mrr@20,n\n";
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%d\n", r.recall5, r.recall20, r.mrr5,
                  r.mrr20, r.n_evaluated);
    std::cout << buf;
}

Dataset load_split(const RunConfig& rc, const std::string& data_path, uint64_t split_seed) {
    Dataset d = load_dataset(data_path, rc.load_options());
    return split_train_test(d, rc.train_fraction, split_seed);
}

uint64_t checkpoint_seed(const CheckpointData& ck, const RunConfig& rc) {
    auto it = ck.config.find("seed");
    if (it == ck.config.end()) return rc.model.seed;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw DataError("malformed seed in checkpoint: '" + it->second + "'");
    }
}

int cmd_generate(const RunConfig& rc, const std::string& out_path) {
    echo_config(rc);
    Dataset d = synthesize_dataset(rc.synth);
    write_dataset(out_path, d, rc.to_map());
    std::cout << "wrote " << d.sequences.size() << " sequences over " << d.n
              << " accounts and " << d.m << " items to " << out_path << "\n";
    return 0;
}

int cmd_train(const RunConfig& rc, const std::string& data_path, const std::string& out_dir,
              const std::vector<std::string>& grid_specs) {
    echo_config(rc);
    fs::create_directories(out_dir);
    write_config_file(out_dir, rc);
    Dataset split = load_split(rc, data_path, rc.model.seed);

    if (!grid_specs.empty()) {
        std::vector<SweepAxis> axes;
        for (const auto& spec : grid_specs) axes.push_back(parse_axis(spec));
        auto cells = run_sweep(rc, split, axes, &std::cerr);
        {
            auto os = open_out(fs::path(out_dir) / "sweep.csv");
            write_sweep_csv(os, axes, cells);
        }
        write_sweep_csv(std::cout, axes, cells);
        write_manifest(out_dir, "train", {"config.txt", "sweep.csv"});
        return 0;
    }

    Model model(split, rc.model);
    auto metrics_csv = open_out(fs::path(out_dir) / "metrics.csv");
    model.train(&metrics_csv, &std::cerr);
    metrics_csv.close();
    {
        auto os = open_out(fs::path(out_dir) / "checkpoint.txt");
        model.save(os);
    }
    if (!split.test_indices().empty()) print_metrics("test", model.evaluate());
    write_manifest(out_dir, "train", {"config.txt", "metrics.csv", "checkpoint.txt"});
    return 0;
}

int cmd_evaluate(const RunConfig& rc, const std::string& ck_path, const std::string& data_path,
                 bool baseline, bool attribution) {
    std::ifstream is(ck_path);
    if (!is) throw DataError("cannot open checkpoint '" + ck_path + "'");
    CheckpointData ck = read_checkpoint(is);
    // Split with the checkpoint's seed so the same test sequences are held
    // out as during training.
    Dataset split = load_split(rc, data_path, checkpoint_seed(ck, rc));
    Model model = Model::from_checkpoint(ck, split);
    model.set_threads(rc.model.threads);
    print_metrics(baseline ? "popularity baseline" : "model",
                  baseline ? model.evaluate_popularity() : model.evaluate());
    if (attribution)
        std::cout << "attribution_accuracy=" << model.attribution_accuracy() << "\n";
    return 0;
}

int cmd_inspect(const RunConfig& rc, const std::string& ck_path, const std::string& data_path,
                const std::string& out_dir) {
    std::ifstream is(ck_path);
    if (!is) throw DataError("cannot open checkpoint '" + ck_path + "'");
    CheckpointData ck = read_checkpoint(is);
    Dataset split = load_split(rc, data_path, checkpoint_seed(ck, rc));
    Model model = Model::from_checkpoint(ck, split);
    fs::create_directories(out_dir);

    const SequentialGraph& g = model.graph();
    {
        auto os = open_out(fs::path(out_dir) / "graph.tsv");
        os << "src\tdst\trelation\n";
        for (int i = 0; i < g.m; ++i)
            for (int p : g.item_preds[i]) os << "item:" << p << "\titem:" << i << "\tprecedes\n";
        for (int k = 0; k < g.n; ++k)
            for (int i : g.account_items[k])
                os << "account:" << k << "\titem:" << i << "\tinteracts\n";
    }

    NoGradGuard guard;
    CapsuleBank bank = model.forward_graph(false, nullptr);
    const int alpha = model.config().caps.alpha;
    {
        // Correlation of each user capsule with each of its account's items.
        auto os = open_out(fs::path(out_dir) / "correlations.tsv");
        os << "account\tuser\titem\tweight\n";
        for (int k = 0; k < g.n; ++k) {
            const auto& items = g.account_items[k];
            if (items.empty()) continue;
            Tensor U = slice_rows(bank.users_agg, k * alpha, k * alpha + alpha);
            Tensor en = exp_t(matmul(U, transpose(gather_rows(bank.items_agg, items))));
            Tensor corr = div_colvec(en, rowwise_sum(sqrt_t(en)));
            for (int h = 0; h < alpha; ++h)
                for (size_t j = 0; j < items.size(); ++j)
                    os << k << "\t" << h << "\t" << items[j] << "\t"
                       << corr.at(h, static_cast<int>(j)) << "\n";
        }
    }
    {
        auto os = open_out(fs::path(out_dir) / "coupling.tsv");
        os << "account\tuser\tb\n";
        for (int k = 0; k < g.n; ++k)
            for (int h = 0; h < alpha; ++h)
                os << k << "\t" << h << "\t" << bank.b_final.at(k, h) << "\n";
    }
    {
        // Aggregated capsule coordinates for offline geometry analysis.
        auto os = open_out(fs::path(out_dir) / "capsules.tsv");
        os << "node\tid\tslot\tvalues\n";
        auto put_row = [&os](const Tensor& t, int r, const char* node, int id, int slot) {
            os << node << "\t" << id << "\t" << slot << "\t";
            for (int c = 0; c < t.cols(); ++c) os << (c ? " " : "") << t.at(r, c);
            os << "\n";
        };
        for (int k = 0; k < g.n; ++k)
            for (int h = 0; h < alpha; ++h)
                put_row(bank.users_agg, k * alpha + h, "user", k, h);
        for (int i = 0; i < g.m; ++i) put_row(bank.items_agg, i, "item", i, -1);
    }
    std::vector<std::string> artifacts = {"graph.tsv", "correlations.tsv", "coupling.tsv",
                                          "capsules.tsv"};
    if (model.config().use_subspace) {
        auto os = open_out(fs::path(out_dir) / "affinity.tsv");
        os << "sequence\tposition\titem\tsubspace\taffinity\tdominant\n";
        for (size_t si = 0; si < split.sequences.size(); ++si) {
            std::vector<int> history = Model::history_of(split.sequences[si]);
            Tensor stack = gather_rows(bank.items_agg, history);
            Tensor aff = affinity_matrix(stack, model.bases(), model.config().lambda);
            std::vector<int> dom = argmax_rows(aff);
            for (size_t t = 0; t < history.size(); ++t)
                for (int j = 0; j < alpha; ++j)
                    os << si << "\t" << t << "\t" << history[t] << "\t" << j << "\t"
                       << aff.at(static_cast<int>(t), j) << "\t"
                       << (dom[t] == j ? 1 : 0) << "\n";
        }
        artifacts.push_back("affinity.tsv");
    }
    write_manifest(out_dir, "inspect", artifacts);
    std::cout << "inspection artifacts written to " << out_dir << "\n";
    return 0;
}

int cmd_bench(const RunConfig& rc, const std::string& out_dir) {
    echo_config(rc);
    BenchReport r = run_bench(rc, &std::cerr);
    write_bench_report(std::cout, r);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        auto os = open_out(fs::path(out_dir) / "bench.txt");
        write_bench_report(os, r);
        write_manifest(out_dir, "bench", {"bench.txt"});
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"shared-account sequential recommender"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write a synthetic dataset with known latent users");
    ConfigArgs gen_cfg;
    std::string gen_out;
    gen->add_option("--out", gen_out, "output TSV path")->required();
    gen_cfg.attach(gen);

    auto* train = app.add_subcommand("train", "train a model and write checkpoint + metrics");
    ConfigArgs train_cfg;
    std::string train_data, train_out;
    std::vector<std::string> ablate, grid;
    train->add_option("--data", train_data, "dataset TSV path")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--ablate", ablate, "disable a stage: la, dr, cl, sa")->take_all();
    train->add_option("--grid", grid, "sweep axis key=v1,v2,... (repeatable)")->take_all();
    train_cfg.attach(train);

    auto* eval = app.add_subcommand("evaluate", "rank the test split with a trained checkpoint");
    ConfigArgs eval_cfg;
    std::string eval_ck, eval_data;
    bool eval_baseline = false, eval_attr = false;
    eval->add_option("--checkpoint", eval_ck, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset TSV path")->required();
    eval->add_flag("--baseline", eval_baseline, "rank by training popularity instead");
    eval->add_flag("--attribution", eval_attr, "also report latent-user attribution accuracy");
    eval_cfg.attach(eval);

    auto* insp = app.add_subcommand("inspect", "dump graph, correlations, coupling and affinity");
    ConfigArgs insp_cfg;
    std::string insp_ck, insp_data, insp_out;
    insp->add_option("--checkpoint", insp_ck, "checkpoint file")->required();
    insp->add_option("--data", insp_data, "dataset TSV path")->required();
    insp->add_option("--out", insp_out, "output directory")->required();
    insp_cfg.attach(insp);

    auto* bench = app.add_subcommand("bench", "parameter counts and timing scaling report");
    ConfigArgs bench_cfg;
    std::string bench_out;
    bench->add_option("--out", bench_out, "optional output directory");
    bench_cfg.attach(bench);

    try {
        app.parse(argc, argv);
        if (gen->parsed()) return cmd_generate(gen_cfg.resolve(gen), gen_out);
        if (train->parsed()) {
            RunConfig rc = train_cfg.resolve(train);
            apply_ablations(rc, ablate);
            return cmd_train(rc, train_data, train_out, grid);
        }
        if (eval->parsed())
            return cmd_evaluate(eval_cfg.resolve(eval), eval_ck, eval_data, eval_baseline,
                                eval_attr);
        if (insp->parsed())
            return cmd_inspect(insp_cfg.resolve(insp), insp_ck, insp_data, insp_out);
        if (bench->parsed()) return cmd_bench(bench_cfg.resolve(bench), bench_out);
        return 2;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const GraphError& e) {
        std::cerr << "graph error: " << e.what() << "\n";
        return 3;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
