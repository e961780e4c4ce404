#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "capsrec/rng.hpp"
#include "capsrec/tensor.hpp"

namespace capsrec {

// One trainable tensor plus its Adam moment buffers.
struct Param {
    std::string name;
    std::string group;  // reporting bucket: "embedding", "attention", ...
    bool is_bias = false;
    Tensor value;
    std::vector<double> m;  // first moment
    std::vector<double> v;  // second moment
};

// Ordered registry of trainable tensors. Registration order is the canonical
// order for initialization and serialization, so two models built the same
// way stay bit-identical.
class ParameterSet {
  public:
    Tensor add(const std::string& name, const std::string& group, int rows, int cols,
               bool is_bias = false);

    bool has(const std::string& name) const;
    Tensor get(const std::string& name) const;  // ContractError when absent

    const std::vector<Param>& params() const { return params_; }
    std::vector<Param>& params() { return params_; }

    int64_t total_count() const;
    std::map<std::string, int64_t> count_by_group() const;

    void zero_grad();

    // Weights get uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out));
    // biases stay zero. One shared random stream, consumed in registration
    // order.
    void init_xavier(Rng& rng);

    // One Adam update (beta1=0.9, beta2=0.999, eps=1e-8) with bias-corrected
    // moments. Parameters without an accumulated gradient are skipped.
    void adam_step(double lr);
    int64_t adam_steps() const { return adam_steps_; }
    void set_adam_steps(int64_t s) { adam_steps_ = s; }

    // Non-trainable tensors carried alongside (routing priors, subspace
    // bases). Stored in checkpoints but never updated by adam_step.
    void set_state(const std::string& name, const Tensor& t);
    bool has_state(const std::string& name) const;
    Tensor state(const std::string& name) const;  // ContractError when absent
    const std::vector<std::pair<std::string, Tensor>>& states() const { return states_; }

  private:
    std::vector<Param> params_;
    std::map<std::string, size_t> index_;
    std::vector<std::pair<std::string, Tensor>> states_;
    int64_t adam_steps_ = 0;
};

// Standalone Xavier draw used by the registry and by tests.
Tensor xavier_init(int rows, int cols, Rng& rng);

// Plain-text checkpoint: a [config] key/value section supplied by the caller,
// the Adam step counter, then every parameter (values + both moments) and
// every state tensor, all printed with %.17g so values round-trip exactly.
struct CheckpointEntry {
    std::string name;
    std::string group;
    bool is_bias = false;
    int rows = 0;
    int cols = 0;
    std::vector<double> value, m, v;
};

struct CheckpointData {
    std::map<std::string, std::string> config;
    int64_t adam_steps = 0;
    std::vector<CheckpointEntry> params;
    std::vector<CheckpointEntry> states;  // m/v unused
};

void write_checkpoint(std::ostream& os, const std::map<std::string, std::string>& config,
                      const ParameterSet& ps);
CheckpointData read_checkpoint(std::istream& is);  // DataError on malformed input

// Installs values/moments/states from a parsed checkpoint. Every registered
// parameter must be present with an identical shape (DataError otherwise);
// state tensors are adopted wholesale.
void restore_parameters(ParameterSet& ps, const CheckpointData& data);

}  // namespace capsrec
