#include "msit/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msit {

int ParamStore::add(const std::string& name, const std::string& module, Tensor value,
                    bool trainable) {
    if (index_.count(name))
        throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
    Param p;
    p.name = name;
    p.module = module;
    p.var = autodiff::Var(std::move(value), trainable);
    p.trainable = trainable;
    const int idx = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    index_[name] = idx;
    return idx;
}

int ParamStore::adopt(const std::string& name, const std::string& module, autodiff::Var var,
                      bool trainable) {
    if (index_.count(name))
        throw std::invalid_argument("ParamStore: duplicate parameter name " + name);
    Param p;
    p.name = name;
    p.module = module;
    p.var = std::move(var);
    p.trainable = trainable;
    p.set_trainable(trainable);
    const int idx = static_cast<int>(params_.size());
    params_.push_back(std::move(p));
    index_[name] = idx;
    return idx;
}

Param* ParamStore::find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

const Param* ParamStore::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
}

int ParamStore::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
}

std::int64_t ParamStore::count_scalars(bool trainable_only) const {
    std::int64_t total = 0;
    for (const auto& p : params_)
        if (!trainable_only || p.trainable) total += static_cast<std::int64_t>(p.var.value().numel());
    return total;
}

std::vector<std::pair<std::string, std::int64_t>> ParamStore::breakdown(bool trainable_only) const {
    std::vector<std::pair<std::string, std::int64_t>> rows;
    for (const auto& p : params_) {
        if (trainable_only && !p.trainable) continue;
        auto it = std::find_if(rows.begin(), rows.end(),
                               [&](const auto& r) { return r.first == p.module; });
        if (it == rows.end()) rows.emplace_back(p.module, p.var.value().numel());
        else it->second += static_cast<std::int64_t>(p.var.value().numel());
    }
    return rows;
}

void ParamStore::zero_grads() {
    for (auto& p : params_) p.var.zero_grad();
}

void ParamStore::remove_prefix(const std::string& prefix) {
    params_.erase(std::remove_if(params_.begin(), params_.end(),
                                 [&](const Param& p) { return p.name.rfind(prefix, 0) == 0; }),
                  params_.end());
    rebuild_index();
}

void ParamStore::rebuild_index() {
    index_.clear();
    for (int i = 0; i < static_cast<int>(params_.size()); ++i) index_[params_[i].name] = i;
}

Tensor kaiming_conv(int c_out, int c_in, int k, Rng& rng) {
    Tensor t(c_out, c_in, k, k);
    const double bound = std::sqrt(6.0 / (static_cast<double>(c_in) * k * k));
    double* d = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(-bound, bound);
    return t;
}

Tensor kaiming_matrix(int in_dim, int out_dim, Rng& rng) {
    Tensor t = Tensor::matrix(in_dim, out_dim);
    const double bound = std::sqrt(6.0 / in_dim);
    double* d = t.data();
    for (std::size_t i = 0; i < t.numel(); ++i) d[i] = rng.uniform(-bound, bound);
    return t;
}

} // namespace msit
