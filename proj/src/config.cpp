#include "capsrec/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "capsrec/errors.hpp"

namespace capsrec {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
    }
}

int64_t to_int64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int64_t x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
    }
}

uint64_t to_uint64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        uint64_t x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a non-negative integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    throw ConfigError("key '" + key + "' expects a boolean (true/false), got '" + v + "'");
}

std::vector<double> to_weights(const std::string& key, const std::string& v) {
    std::vector<double> out;
    if (trim(v).empty()) return out;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(to_double(key, trim(part)));
    return out;
}

// Shortest decimal form that parses back to the same double.
std::string fmt_double(double x) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) break;
    }
    return buf;
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

std::string fmt_weights(const std::vector<double>& w) {
    std::string out;
    for (size_t i = 0; i < w.size(); ++i) {
        if (i) out += ',';
        out += fmt_double(w[i]);
    }
    return out;
}

struct KeyDef {
    const char* name;
    bool model_key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyDef>& key_defs() {
    static const std::vector<KeyDef> defs = {
        // model
        {"seed", true,
         [](RunConfig& c, const std::string& v) {
             c.model.seed = to_uint64("seed", v);
             c.synth.seed = c.model.seed;
         },
         [](const RunConfig& c) { return std::to_string(c.model.seed); }},
        {"d1", true,
         [](RunConfig& c, const std::string& v) { c.model.caps.d1 = to_int("d1", v); },
         [](const RunConfig& c) { return std::to_string(c.model.caps.d1); }},
        {"d2", true,
         [](RunConfig& c, const std::string& v) { c.model.caps.d2 = to_int("d2", v); },
         [](const RunConfig& c) { return std::to_string(c.model.caps.d2); }},
        {"alpha", true,
         [](RunConfig& c, const std::string& v) { c.model.caps.alpha = to_int("alpha", v); },
         [](const RunConfig& c) { return std::to_string(c.model.caps.alpha); }},
        {"layers", true,
         [](RunConfig& c, const std::string& v) { c.model.caps.L = to_int("layers", v); },
         [](const RunConfig& c) { return std::to_string(c.model.caps.L); }},
        {"theta", true,
         [](RunConfig& c, const std::string& v) { c.model.caps.theta = to_int("theta", v); },
         [](const RunConfig& c) { return std::to_string(c.model.caps.theta); }},
        {"linear_attention", true,
         [](RunConfig& c, const std::string& v) {
             c.model.caps.use_linear_attention = to_bool("linear_attention", v);
         },
         [](const RunConfig& c) { return fmt_bool(c.model.caps.use_linear_attention); }},
        {"dynamic_routing", true,
         [](RunConfig& c, const std::string& v) {
             c.model.caps.use_dynamic_routing = to_bool("dynamic_routing", v);
         },
         [](const RunConfig& c) { return fmt_bool(c.model.caps.use_dynamic_routing); }},
        {"literal_double_sum", true,
         [](RunConfig& c, const std::string& v) {
             c.model.caps.literal_double_sum = to_bool("literal_double_sum", v);
         },
         [](const RunConfig& c) { return fmt_bool(c.model.caps.literal_double_sum); }},
        {"subspace", true,
         [](RunConfig& c, const std::string& v) { c.model.use_subspace = to_bool("subspace", v); },
         [](const RunConfig& c) { return fmt_bool(c.model.use_subspace); }},
        {"contrastive", true,
         [](RunConfig& c, const std::string& v) {
             c.model.use_contrastive = to_bool("contrastive", v);
         },
         [](const RunConfig& c) { return fmt_bool(c.model.use_contrastive); }},
        {"soft_refine", true,
         [](RunConfig& c, const std::string& v) {
             c.model.soft_refine = to_bool("soft_refine", v);
         },
         [](const RunConfig& c) { return fmt_bool(c.model.soft_refine); }},
        {"lambda", true,
         [](RunConfig& c, const std::string& v) { c.model.lambda = to_double("lambda", v); },
         [](const RunConfig& c) { return fmt_double(c.model.lambda); }},
        {"beta", true,
         [](RunConfig& c, const std::string& v) { c.model.beta = to_double("beta", v); },
         [](const RunConfig& c) { return fmt_double(c.model.beta); }},
        {"gamma", true,
         [](RunConfig& c, const std::string& v) { c.model.gamma = to_double("gamma", v); },
         [](const RunConfig& c) { return fmt_double(c.model.gamma); }},
        {"lr", true,
         [](RunConfig& c, const std::string& v) { c.model.lr = to_double("lr", v); },
         [](const RunConfig& c) { return fmt_double(c.model.lr); }},
        {"batch_size", true,
         [](RunConfig& c, const std::string& v) { c.model.batch_size = to_int("batch_size", v); },
         [](const RunConfig& c) { return std::to_string(c.model.batch_size); }},
        {"epochs", true,
         [](RunConfig& c, const std::string& v) { c.model.epochs = to_int("epochs", v); },
         [](const RunConfig& c) { return std::to_string(c.model.epochs); }},
        {"dropout", true,
         [](RunConfig& c, const std::string& v) { c.model.dropout = to_double("dropout", v); },
         [](const RunConfig& c) { return fmt_double(c.model.dropout); }},
        {"bases_refresh_every", true,
         [](RunConfig& c, const std::string& v) {
             c.model.bases_refresh_every = to_int("bases_refresh_every", v);
         },
         [](const RunConfig& c) { return std::to_string(c.model.bases_refresh_every); }},
        {"eval_every", true,
         [](RunConfig& c, const std::string& v) { c.model.eval_every = to_int("eval_every", v); },
         [](const RunConfig& c) { return std::to_string(c.model.eval_every); }},
        {"threads", true,
         [](RunConfig& c, const std::string& v) { c.model.threads = to_int("threads", v); },
         [](const RunConfig& c) { return std::to_string(c.model.threads); }},
        {"normalize_adjacency", true,
         [](RunConfig& c, const std::string& v) {
             c.model.normalize_adjacency = to_bool("normalize_adjacency", v);
         },
         [](const RunConfig& c) { return fmt_bool(c.model.normalize_adjacency); }},
        // data handling
        {"train_fraction", false,
         [](RunConfig& c, const std::string& v) {
             c.train_fraction = to_double("train_fraction", v);
         },
         [](const RunConfig& c) { return fmt_double(c.train_fraction); }},
        {"session_gap", false,
         [](RunConfig& c, const std::string& v) {
             c.session_gap = to_int64("session_gap", v);
         },
         [](const RunConfig& c) { return std::to_string(c.session_gap); }},
        {"min_seq_len", false,
         [](RunConfig& c, const std::string& v) {
             c.min_seq_len = to_int("min_seq_len", v);
         },
         [](const RunConfig& c) { return std::to_string(c.min_seq_len); }},
        // synthetic generator
        {"n_accounts", false,
         [](RunConfig& c, const std::string& v) { c.synth.n_accounts = to_int("n_accounts", v); },
         [](const RunConfig& c) { return std::to_string(c.synth.n_accounts); }},
        {"n_items", false,
         [](RunConfig& c, const std::string& v) { c.synth.n_items = to_int("n_items", v); },
         [](const RunConfig& c) { return std::to_string(c.synth.n_items); }},
        {"users_per_account", false,
         [](RunConfig& c, const std::string& v) {
             c.synth.users_per_account = to_int("users_per_account", v);
         },
         [](const RunConfig& c) { return std::to_string(c.synth.users_per_account); }},
        {"pool_overlap", false,
         [](RunConfig& c, const std::string& v) {
             c.synth.pool_overlap = to_double("pool_overlap", v);
         },
         [](const RunConfig& c) { return fmt_double(c.synth.pool_overlap); }},
        {"pool_size", false,
         [](RunConfig& c, const std::string& v) { c.synth.pool_size = to_int("pool_size", v); },
         [](const RunConfig& c) { return std::to_string(c.synth.pool_size); }},
        {"seq_len_min", false,
         [](RunConfig& c, const std::string& v) { c.synth.seq_len_min = to_int("seq_len_min", v); },
         [](const RunConfig& c) { return std::to_string(c.synth.seq_len_min); }},
        {"seq_len_max", false,
         [](RunConfig& c, const std::string& v) { c.synth.seq_len_max = to_int("seq_len_max", v); },
         [](const RunConfig& c) { return std::to_string(c.synth.seq_len_max); }},
        {"sequences_per_account", false,
         [](RunConfig& c, const std::string& v) {
             c.synth.sequences_per_account = to_int("sequences_per_account", v);
         },
         [](const RunConfig& c) { return std::to_string(c.synth.sequences_per_account); }},
        {"follow_prob", false,
         [](RunConfig& c, const std::string& v) {
             c.synth.follow_prob = to_double("follow_prob", v);
         },
         [](const RunConfig& c) { return fmt_double(c.synth.follow_prob); }},
        {"switch_prob", false,
         [](RunConfig& c, const std::string& v) {
             c.synth.switch_prob = to_double("switch_prob", v);
         },
         [](const RunConfig& c) { return fmt_double(c.synth.switch_prob); }},
        {"mix_weights", false,
         [](RunConfig& c, const std::string& v) {
             c.synth.mix_weights = to_weights("mix_weights", v);
         },
         [](const RunConfig& c) { return fmt_weights(c.synth.mix_weights); }},
    };
    return defs;
}

const KeyDef* find_key(const std::string& key) {
    for (const auto& d : key_defs())
        if (key == d.name) return &d;
    return nullptr;
}

}  // namespace

void RunConfig::apply(const std::string& key, const std::string& value) {
    const KeyDef* def = find_key(key);
    if (!def) throw ConfigError("unknown configuration key '" + key + "'");
    def->set(*this, value);
}

void RunConfig::apply_assignment(const std::string& key_eq_value) {
    size_t eq = key_eq_value.find('=');
    if (eq == std::string::npos)
        throw ConfigError("expected key=value, got '" + key_eq_value + "'");
    apply(trim(key_eq_value.substr(0, eq)), trim(key_eq_value.substr(eq + 1)));
}

void RunConfig::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        try {
            apply_assignment(t);
        } catch (const ConfigError& e) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

std::map<std::string, std::string> RunConfig::to_map() const {
    std::map<std::string, std::string> out;
    for (const auto& d : key_defs()) out[d.name] = d.get(*this);
    return out;
}

std::string RunConfig::echo() const {
    std::string out;
    for (const auto& [k, v] : to_map()) out += k + "=" + v + "\n";
    return out;
}

const std::vector<std::string>& RunConfig::known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& d : key_defs()) k.push_back(d.name);
        return k;
    }();
    return keys;
}

bool RunConfig::is_model_key(const std::string& key) {
    const KeyDef* def = find_key(key);
    return def && def->model_key;
}

LoadOptions RunConfig::load_options() const {
    LoadOptions opts;
    opts.session_gap = session_gap;
    opts.min_seq_len = min_seq_len;
    return opts;
}

}  // namespace capsrec
