#ifndef GRN_NN_HPP
#define GRN_NN_HPP

#include "grn/ops.hpp"

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace grn::nn {

using StateDict = std::map<std::string, TensorF>;

/// Owns the named parameters and buffers of one network. Handles are
/// shared Vars, so layers keep stable references regardless of container
/// growth.
class ParameterStore {
public:
    Var add_parameter(const std::string& name, TensorF init);
    Var add_buffer(const std::string& name, TensorF init);

    const std::vector<std::pair<std::string, Var>>& parameters() const { return parameters_; }
    const std::vector<std::pair<std::string, Var>>& buffers() const { return buffers_; }
    std::vector<Var> parameter_vars() const;
    Index parameter_count() const;

    /// Deep copy of parameters and buffers.
    StateDict state_dict() const;
    /// Throws on missing keys or shape mismatch.
    void load_state_dict(const StateDict& state);
    void zero_grad();
    bool all_finite() const;

private:
    void check_unique(const std::string& name) const;

    std::vector<std::pair<std::string, Var>> parameters_;
    std::vector<std::pair<std::string, Var>> buffers_;
};

enum class Init {
    normal_002,  ///< N(0, 0.02) weights, zero bias
    fan_in,      ///< U(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and bias
};

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(ParameterStore& store, const std::string& name, Index in_channels, Index out_channels,
           ops::ConvGeometry geometry, Init init, std::mt19937_64& rng, bool bias = true);
    Var operator()(const Var& x) const { return ops::conv2d(x, weight_, bias_, geometry_); }
    const ops::ConvGeometry& geometry() const { return geometry_; }

private:
    Var weight_, bias_;
    ops::ConvGeometry geometry_;
};

class ConvTranspose2d {
public:
    ConvTranspose2d() = default;
    ConvTranspose2d(ParameterStore& store, const std::string& name, Index in_channels, Index out_channels,
                    ops::ConvGeometry geometry, Init init, std::mt19937_64& rng, bool bias = true);
    Var operator()(const Var& x) const { return ops::conv_transpose2d(x, weight_, bias_, geometry_); }

private:
    Var weight_, bias_;
    ops::ConvGeometry geometry_;
};

class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(ParameterStore& store, const std::string& name, Index channels);
    /// Updates running statistics when training.
    Var operator()(const Var& x, bool training);

private:
    Var gamma_, beta_, running_mean_, running_var_;
    float momentum_ = 0.1f;
    float eps_ = 1e-5f;
};

}  // namespace grn::nn

#endif  // GRN_NN_HPP
