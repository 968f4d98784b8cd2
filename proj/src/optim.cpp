#include "grn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace grn {

Adam::Adam(std::vector<Var> params, AdamOptions options) : params_(std::move(params)), options_(options) {
    if (!(options_.learning_rate > 0.0f)) throw std::invalid_argument("Adam: learning rate must be positive");
    state_.steps.assign(params_.size(), 0);
    for (const auto& p : params_) {
        state_.first_moment.emplace_back(p.shape());
        state_.second_moment.emplace_back(p.shape());
    }
}

void Adam::step() {
    ++total_steps_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Var& p = params_[i];
        if (!p.has_grad()) continue;
        const auto& g = p.grad().array();
        auto& m = state_.first_moment[i].array();
        auto& v = state_.second_moment[i].array();
        const std::int64_t t = ++state_.steps[i];
        m = options_.beta1 * m + (1.0f - options_.beta1) * g;
        v = options_.beta2 * v + (1.0f - options_.beta2) * g.square();
        const float bc1 = 1.0f - std::pow(options_.beta1, static_cast<float>(t));
        const float bc2 = 1.0f - std::pow(options_.beta2, static_cast<float>(t));
        const float step_size = options_.learning_rate / bc1;
        const float bc2_sqrt = std::sqrt(bc2);
        p.mutable_value().array() -= step_size * m / (v.sqrt() / bc2_sqrt + options_.eps);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void Adam::load_state(const AdamState& state, std::int64_t total_steps) {
    if (state.steps.size() != params_.size() || state.first_moment.size() != params_.size() ||
        state.second_moment.size() != params_.size())
        throw std::runtime_error("Adam state does not match parameter count");
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (!(state.first_moment[i].shape() == params_[i].shape()) ||
            !(state.second_moment[i].shape() == params_[i].shape()))
            throw std::runtime_error("Adam state shape mismatch at parameter " + std::to_string(i));
    state_ = state;
    std::int64_t mx = 0;
    for (auto s : state_.steps) mx = std::max(mx, s);
    total_steps_ = total_steps >= 0 ? total_steps : mx;
}

}  // namespace grn
