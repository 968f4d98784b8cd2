#ifndef GRN_AUTOGRAD_HPP
#define GRN_AUTOGRAD_HPP

#include "grn/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace grn {

class GradAccumulator;
struct Node;

using BackwardFn = std::function<void(const TensorF& grad_out, GradAccumulator& acc)>;

struct Node {
    TensorF value;
    /// Accumulated gradient; only leaves that require grad ever populate it.
    TensorF grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    bool is_leaf() const { return parents.empty(); }
};

/// Handle to a node in a dynamically built computation graph. Copies alias
/// the same node. Parameters are leaves with requires_grad set; gradients
/// accumulate into them across backward() calls until zero_grad().
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var parameter(TensorF value);
    static Var constant(TensorF value);
    static Var from_op(TensorF value, std::vector<Var> parents, BackwardFn backward);

    bool defined() const { return static_cast<bool>(node_); }
    const TensorF& value() const { return node_->value; }
    /// Mutable access for optimizers and checkpoint loading only.
    TensorF& mutable_value() { return node_->value; }
    const Shape4& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_->requires_grad; }
    TensorF& grad() { return node_->grad; }
    const TensorF& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() {
        if (!node_->grad.empty()) node_->grad.set_zero();
    }
    float item() const { return node_->value.item(); }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Handed to a node's backward function; hands out zero-initialised
/// gradient slots only for parents that lie on a path to a requested leaf.
class GradAccumulator {
public:
    GradAccumulator(const Node& node, std::vector<TensorF*> slots) : node_(node), slots_(std::move(slots)) {}

    bool needs(std::size_t i) const { return i < slots_.size() && slots_[i] != nullptr; }
    TensorF& slot(std::size_t i);

private:
    const Node& node_;
    std::vector<TensorF*> slots_;
};

/// Reverse-mode sweep from a scalar loss. When `wrt` is non-empty only
/// those leaves receive gradient and only the subgraph reaching them is
/// traversed; everything else is treated as constant.
void backward(const Var& loss, std::span<const Var> wrt = {});

/// Same value, no history.
Var detach(const Var& v);

/// Whether new ops record history on this thread.
bool grad_enabled();

/// Disables history recording for its lifetime (evaluation passes).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

}  // namespace grn

#endif  // GRN_AUTOGRAD_HPP
