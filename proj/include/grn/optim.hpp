#ifndef GRN_OPTIM_HPP
#define GRN_OPTIM_HPP

#include "grn/autograd.hpp"

#include <cstdint>
#include <vector>

namespace grn {

struct AdamOptions {
    float learning_rate = 2e-4f;
    float beta1 = 0.5f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

struct AdamState {
    std::vector<std::int64_t> steps;
    std::vector<TensorF> first_moment;
    std::vector<TensorF> second_moment;
};

/// Adam with per-parameter bias correction. Parameters whose gradient was
/// never allocated are skipped, as are their step counters.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Var> params, AdamOptions options);

    void step();
    void zero_grad();

    const AdamOptions& options() const { return options_; }
    const std::vector<Var>& params() const { return params_; }
    const AdamState& state() const { return state_; }
    /// A negative total falls back to the largest per-parameter count.
    void load_state(const AdamState& state, std::int64_t total_steps = -1);
    std::int64_t total_steps() const { return total_steps_; }

private:
    std::vector<Var> params_;
    AdamOptions options_;
    AdamState state_;
    std::int64_t total_steps_ = 0;
};

}  // namespace grn

#endif  // GRN_OPTIM_HPP
