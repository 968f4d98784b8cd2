#include "grn/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace grn::nn {

void ParameterStore::check_unique(const std::string& name) const {
    for (const auto& [n, _] : parameters_)
        if (n == name) throw std::logic_error("duplicate parameter name " + name);
    for (const auto& [n, _] : buffers_)
        if (n == name) throw std::logic_error("duplicate buffer name " + name);
}

Var ParameterStore::add_parameter(const std::string& name, TensorF init) {
    check_unique(name);
    Var v = Var::parameter(std::move(init));
    parameters_.emplace_back(name, v);
    return v;
}

Var ParameterStore::add_buffer(const std::string& name, TensorF init) {
    check_unique(name);
    Var v = Var::constant(std::move(init));
    buffers_.emplace_back(name, v);
    return v;
}

std::vector<Var> ParameterStore::parameter_vars() const {
    std::vector<Var> out;
    out.reserve(parameters_.size());
    for (const auto& [_, v] : parameters_) out.push_back(v);
    return out;
}

Index ParameterStore::parameter_count() const {
    Index total = 0;
    for (const auto& [_, v] : parameters_) total += v.value().size();
    return total;
}

StateDict ParameterStore::state_dict() const {
    StateDict out;
    for (const auto& [n, v] : parameters_) out.emplace(n, v.value());
    for (const auto& [n, v] : buffers_) out.emplace(n, v.value());
    return out;
}

void ParameterStore::load_state_dict(const StateDict& state) {
    auto load = [&](const std::string& name, Var v) {
        auto it = state.find(name);
        if (it == state.end()) throw std::runtime_error("state dict is missing " + name);
        if (!(it->second.shape() == v.shape()))
            throw std::runtime_error("state dict shape mismatch for " + name + ": " + it->second.shape().str() +
                                     " vs " + v.shape().str());
        v.mutable_value() = it->second;
    };
    for (const auto& [n, v] : parameters_) load(n, v);
    for (const auto& [n, v] : buffers_) load(n, v);
}

void ParameterStore::zero_grad() {
    for (auto& [_, v] : parameters_) {
        Var h = v;
        h.zero_grad();
    }
}

bool ParameterStore::all_finite() const {
    for (const auto& [_, v] : parameters_)
        if (!v.value().array().isFinite().all()) return false;
    return true;
}

namespace {

TensorF init_tensor(Shape4 shape, Index fan_in, Init init, std::mt19937_64& rng, bool is_bias) {
    TensorF t(shape);
    if (init == Init::normal_002) {
        if (is_bias) return t;
        std::normal_distribution<float> dist(0.0f, 0.02f);
        for (Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    } else {
        const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
        std::uniform_real_distribution<float> dist(-bound, bound);
        for (Index i = 0; i < t.size(); ++i) t.data()[i] = dist(rng);
    }
    return t;
}

}  // namespace

Conv2d::Conv2d(ParameterStore& store, const std::string& name, Index in_channels, Index out_channels,
               ops::ConvGeometry geometry, Init init, std::mt19937_64& rng, bool bias)
    : geometry_(geometry) {
    const Index k = geometry.kernel;
    const Index fan_in = in_channels * k * k;
    weight_ = store.add_parameter(name + ".weight",
                                  init_tensor(Shape4{out_channels, in_channels, k, k}, fan_in, init, rng, false));
    if (bias)
        bias_ = store.add_parameter(name + ".bias", init_tensor(Shape4{1, out_channels, 1, 1}, fan_in, init, rng, true));
}

ConvTranspose2d::ConvTranspose2d(ParameterStore& store, const std::string& name, Index in_channels,
                                 Index out_channels, ops::ConvGeometry geometry, Init init, std::mt19937_64& rng,
                                 bool bias)
    : geometry_(geometry) {
    const Index k = geometry.kernel;
    // Matches the usual convention of computing fan-in from dim 1 of the weight.
    const Index fan_in = out_channels * k * k;
    weight_ = store.add_parameter(name + ".weight",
                                  init_tensor(Shape4{in_channels, out_channels, k, k}, fan_in, init, rng, false));
    if (bias)
        bias_ = store.add_parameter(name + ".bias", init_tensor(Shape4{1, out_channels, 1, 1}, fan_in, init, rng, true));
}

BatchNorm2d::BatchNorm2d(ParameterStore& store, const std::string& name, Index channels) {
    gamma_ = store.add_parameter(name + ".gamma", TensorF(Shape4{1, channels, 1, 1}, 1.0f));
    beta_ = store.add_parameter(name + ".beta", TensorF(Shape4{1, channels, 1, 1}));
    running_mean_ = store.add_buffer(name + ".running_mean", TensorF(Shape4{1, channels, 1, 1}));
    running_var_ = store.add_buffer(name + ".running_var", TensorF(Shape4{1, channels, 1, 1}, 1.0f));
}

Var BatchNorm2d::operator()(const Var& x, bool training) {
    return ops::batch_norm(x, gamma_, beta_, running_mean_.mutable_value(), running_var_.mutable_value(), training,
                           momentum_, eps_);
}

}  // namespace grn::nn
