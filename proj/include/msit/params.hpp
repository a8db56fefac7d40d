#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "msit/autodiff.hpp"
#include "msit/rng.hpp"
#include "msit/tensor.hpp"

namespace msit {

struct Param {
    std::string name;   // e.g. "encoder.stem.weight"
    std::string module; // name prefix used for reporting: "encoder", "msno", ...
    autodiff::Var var;
    bool trainable = true;

    void set_trainable(bool t) {
        trainable = t;
        var.node()->requires_grad = t;
    }
};

// Named learnable records with deterministic (registration) iteration order.
class ParamStore {
public:
    int add(const std::string& name, const std::string& module, Tensor value, bool trainable = true);
    // register an existing Var handle (the store and the module share the node)
    int adopt(const std::string& name, const std::string& module, autodiff::Var var,
              bool trainable = true);
    int size() const { return static_cast<int>(params_.size()); }
    Param& at(int i) { return params_[i]; }
    const Param& at(int i) const { return params_[i]; }
    Param* find(const std::string& name);
    const Param* find(const std::string& name) const;
    int index_of(const std::string& name) const;

    std::vector<Param>& all() { return params_; }
    const std::vector<Param>& all() const { return params_; }

    std::int64_t count_scalars(bool trainable_only) const;
    // per-module totals, in first-appearance order
    std::vector<std::pair<std::string, std::int64_t>> breakdown(bool trainable_only) const;

    void zero_grads();

    // remove every record whose name starts with the prefix (used by unwrap)
    void remove_prefix(const std::string& prefix);

private:
    std::vector<Param> params_;
    std::unordered_map<std::string, int> index_;
    void rebuild_index();
};

// weight initializers (fan-in Kaiming uniform, zero biases)
Tensor kaiming_conv(int c_out, int c_in, int k, Rng& rng);
Tensor kaiming_matrix(int in_dim, int out_dim, Rng& rng);

} // namespace msit
