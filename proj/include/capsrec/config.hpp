#pragma once

#include <map>
#include <string>
#include <vector>

#include "capsrec/data.hpp"
#include "capsrec/model.hpp"

namespace capsrec {

// Flat key=value view over every tunable in the system: model
// hyperparameters, data handling, and the synthetic generator. Loadable from
// a config file, overridable one key at a time, and echoable in a form that
// reproduces the run exactly. Unknown keys are rejected.
struct RunConfig {
    ModelConfig model;
    SyntheticSpec synth;
    double train_fraction = 0.8;
    int64_t session_gap = 1000;  // generated data places sessions 10000 apart
    int min_seq_len = 2;

    // ConfigError on unknown key or unparsable value.
    void apply(const std::string& key, const std::string& value);
    void apply_assignment(const std::string& key_eq_value);  // "key=value"
    void load_file(const std::string& path);

    std::map<std::string, std::string> to_map() const;
    std::string echo() const;  // sorted key=value lines

    static const std::vector<std::string>& known_keys();
    // Keys that only affect the model (safe to vary in a sweep over one
    // prepared dataset).
    static bool is_model_key(const std::string& key);

    LoadOptions load_options() const;
};

}  // namespace capsrec
