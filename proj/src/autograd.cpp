#include "grn/autograd.hpp"

#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace grn {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var Var::parameter(TensorF value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(std::move(node));
}

Var Var::constant(TensorF value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var Var::from_op(TensorF value, std::vector<Var> parents, BackwardFn backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (g_grad_enabled)
        for (const auto& p : parents) node->requires_grad = node->requires_grad || p.requires_grad();
    if (node->requires_grad) {
        node->parents.reserve(parents.size());
        for (auto& p : parents) node->parents.push_back(p.shared());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

TensorF& GradAccumulator::slot(std::size_t i) {
    TensorF* t = slots_.at(i);
    if (t == nullptr) throw std::logic_error("gradient slot requested for a parent that does not need it");
    if (t->empty()) *t = TensorF(node_.parents[i]->value.shape());
    return *t;
}

namespace {

std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace

void backward(const Var& loss, std::span<const Var> wrt) {
    if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
    if (loss.value().size() != 1) throw std::invalid_argument("backward: loss must be scalar, got " + loss.shape().str());
    if (!loss.requires_grad()) return;

    const std::vector<Node*> order = topo_order(loss.node());

    std::unordered_set<Node*> needed;
    if (wrt.empty()) {
        for (Node* n : order) needed.insert(n);
    } else {
        std::unordered_set<Node*> targets;
        for (const auto& v : wrt) targets.insert(v.node());
        for (Node* n : order) {
            bool need = targets.count(n) > 0;
            for (const auto& p : n->parents) need = need || needed.count(p.get()) > 0;
            if (need) needed.insert(n);
        }
        // Leaves not in `wrt` never qualify even if reachable.
        for (Node* n : order)
            if (n->is_leaf() && !targets.count(n)) needed.erase(n);
    }
    if (!needed.count(loss.node())) return;

    std::unordered_map<Node*, TensorF> grads;
    grads.emplace(loss.node(), TensorF::constant(loss.shape(), 1.0f));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto g = grads.find(node);
        if (g == grads.end()) continue;
        // References into the map survive rehashing; iterators do not.
        const TensorF& grad_out = g->second;
        if (node->is_leaf()) {
            if (node->grad.empty()) node->grad = TensorF(node->value.shape());
            node->grad.array() += grad_out.array();
        } else {
            std::vector<TensorF*> slots(node->parents.size(), nullptr);
            for (std::size_t i = 0; i < node->parents.size(); ++i) {
                Node* p = node->parents[i].get();
                if (p->requires_grad && needed.count(p)) slots[i] = &grads[p];
            }
            GradAccumulator acc(*node, std::move(slots));
            node->backward(grad_out, acc);
        }
        grads.erase(node);
    }
}

Var detach(const Var& v) { return Var::constant(v.value()); }

}  // namespace grn
