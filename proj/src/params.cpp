#include "capsrec/params.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

namespace capsrec {

Tensor ParameterSet::add(const std::string& name, const std::string& group, int rows,
                         int cols, bool is_bias) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    Param p;
    p.name = name;
    p.group = group;
    p.is_bias = is_bias;
    p.value = Tensor::zeros(rows, cols, /*requires_grad=*/true);
    p.m.assign(p.value.numel(), 0.0);
    p.v.assign(p.value.numel(), 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return params_.back().value;
}

bool ParameterSet::has(const std::string& name) const { return index_.count(name) > 0; }

Tensor ParameterSet::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter " + name);
    return params_[it->second].value;
}

int64_t ParameterSet::total_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

std::map<std::string, int64_t> ParameterSet::count_by_group() const {
    std::map<std::string, int64_t> out;
    for (const auto& p : params_) out[p.group] += p.value.numel();
    return out;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
}

Tensor xavier_init(int rows, int cols, Rng& rng) {
    const double a = std::sqrt(6.0 / (rows + cols));
    Tensor t = Tensor::zeros(rows, cols);
    for (auto& v : t.value()) v = rng.uniform(-a, a);
    return t;
}

void ParameterSet::init_xavier(Rng& rng) {
    for (auto& p : params_) {
        if (p.is_bias) {
            for (auto& v : p.value.value()) v = 0.0;
            continue;
        }
        const double a = std::sqrt(6.0 / (p.value.rows() + p.value.cols()));
        for (auto& v : p.value.value()) v = rng.uniform(-a, a);
    }
}

void ParameterSet::adam_step(double lr) {
    if (lr <= 0.0) throw ConfigError("learning rate must be positive");
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++adam_steps_;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_steps_));
    for (auto& p : params_) {
        if (!p.value.has_grad()) continue;
        auto& val = p.value.value();
        const auto& g = p.value.data()->grad;
        for (size_t i = 0; i < val.size(); ++i) {
            p.m[i] = b1 * p.m[i] + (1.0 - b1) * g[i];
            p.v[i] = b2 * p.v[i] + (1.0 - b2) * g[i] * g[i];
            val[i] -= lr * (p.m[i] / c1) / (std::sqrt(p.v[i] / c2) + eps);
        }
    }
}

void ParameterSet::set_state(const std::string& name, const Tensor& t) {
    for (auto& [n, v] : states_) {
        if (n == name) {
            v = t;
            return;
        }
    }
    states_.emplace_back(name, t);
}

bool ParameterSet::has_state(const std::string& name) const {
    for (const auto& [n, v] : states_)
        if (n == name) return true;
    return false;
}

Tensor ParameterSet::state(const std::string& name) const {
    for (const auto& [n, v] : states_)
        if (n == name) return v;
    throw ContractError("unknown state tensor " + name);
}

// --------------------------------------------------------------- checkpoint

namespace {

constexpr const char* kMagic = "capsrec-checkpoint v1";

void write_values(std::ostream& os, const std::vector<double>& vs) {
    char buf[40];
    for (size_t i = 0; i < vs.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", vs[i]);
        if (i) os << ' ';
        os << buf;
    }
    os << '\n';
}

std::vector<double> read_values(std::istream& is, size_t n, const std::string& what) {
    std::string line;
    if (!std::getline(is, line)) throw DataError("checkpoint truncated reading " + what);
    std::vector<double> out;
    out.reserve(n);
    const char* p = line.c_str();
    char* end = nullptr;
    while (*p) {
        const double v = std::strtod(p, &end);
        if (end == p) break;
        out.push_back(v);
        p = end;
    }
    if (out.size() != n) {
        throw DataError("checkpoint: expected " + std::to_string(n) + " values for " + what +
                        ", got " + std::to_string(out.size()));
    }
    return out;
}

}  // namespace

void write_checkpoint(std::ostream& os, const std::map<std::string, std::string>& config,
                      const ParameterSet& ps) {
    os << kMagic << '\n';
    os << "[config]\n";
    for (const auto& [k, v] : config) os << k << '=' << v << '\n';
    os << "[adam]\n";
    os << "steps=" << ps.adam_steps() << '\n';
    for (const auto& p : ps.params()) {
        os << "[param] " << p.name << ' ' << p.group << ' ' << (p.is_bias ? 1 : 0) << ' '
           << p.value.rows() << ' ' << p.value.cols() << '\n';
        write_values(os, p.value.value());
        write_values(os, p.m);
        write_values(os, p.v);
    }
    for (const auto& [name, t] : ps.states()) {
        os << "[state] " << name << ' ' << t.rows() << ' ' << t.cols() << '\n';
        write_values(os, t.value());
    }
    os << "[end]\n";
}

CheckpointData read_checkpoint(std::istream& is) {
    CheckpointData data;
    std::string line;
    if (!std::getline(is, line) || line != kMagic) {
        throw DataError("checkpoint: bad or missing header");
    }
    if (!std::getline(is, line) || line != "[config]") {
        throw DataError("checkpoint: missing [config] section");
    }
    while (std::getline(is, line)) {
        if (line == "[adam]") break;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint: bad config line: " + line);
        data.config[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!std::getline(is, line) || line.rfind("steps=", 0) != 0) {
        throw DataError("checkpoint: missing adam step counter");
    }
    data.adam_steps = std::strtoll(line.c_str() + 6, nullptr, 10);
    bool saw_end = false;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (line == "[end]") {
            saw_end = true;
            break;
        }
        std::istringstream hdr(line);
        std::string tag;
        hdr >> tag;
        if (tag == "[param]") {
            CheckpointEntry e;
            int bias = 0;
            hdr >> e.name >> e.group >> bias >> e.rows >> e.cols;
            if (!hdr || e.rows < 0 || e.cols < 0) {
                throw DataError("checkpoint: bad param header: " + line);
            }
            e.is_bias = bias != 0;
            const size_t n = static_cast<size_t>(e.rows) * e.cols;
            e.value = read_values(is, n, e.name);
            e.m = read_values(is, n, e.name + ".m");
            e.v = read_values(is, n, e.name + ".v");
            data.params.push_back(std::move(e));
        } else if (tag == "[state]") {
            CheckpointEntry e;
            hdr >> e.name >> e.rows >> e.cols;
            if (!hdr || e.rows < 0 || e.cols < 0) {
                throw DataError("checkpoint: bad state header: " + line);
            }
            e.value = read_values(is, static_cast<size_t>(e.rows) * e.cols, e.name);
            data.states.push_back(std::move(e));
        } else {
            throw DataError("checkpoint: unexpected line: " + line);
        }
    }
    if (!saw_end) throw DataError("checkpoint: missing [end] marker");
    return data;
}

void restore_parameters(ParameterSet& ps, const CheckpointData& data) {
    std::map<std::string, const CheckpointEntry*> by_name;
    for (const auto& e : data.params) by_name[e.name] = &e;
    for (auto& p : ps.params()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw DataError("checkpoint: missing parameter " + p.name);
        const CheckpointEntry& e = *it->second;
        if (e.rows != p.value.rows() || e.cols != p.value.cols()) {
            throw DataError("checkpoint: shape mismatch for " + p.name + ": file [" +
                            std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                            "] vs model " + p.value.shape_str());
        }
        p.value.value() = e.value;
        p.m = e.m;
        p.v = e.v;
        by_name.erase(it);
    }
    if (!by_name.empty()) {
        throw DataError("checkpoint: unknown parameter " + by_name.begin()->first);
    }
    ps.set_adam_steps(data.adam_steps);
    for (const auto& e : data.states) {
        Tensor t = Tensor::from(e.rows, e.cols, e.value);
        ps.set_state(e.name, t);
    }
}

}  // namespace capsrec
