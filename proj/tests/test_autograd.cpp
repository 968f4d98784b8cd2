#include "grn/nn.hpp"
#include "grn/ops.hpp"
#include "grn/optim.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>

using namespace grn;
using doctest::Approx;

namespace {

using Fn = std::function<Var(const std::vector<Var>&)>;

// Central differences in float on every input element; returns the worst
// error relative to max(|analytic|, |numeric|, floor).
double worst_gradient_error(const Fn& f, std::vector<TensorF> inputs, float h = 1e-2f, double floor = 1e-2) {
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(Var::parameter(t));
    backward(f(vars), vars);
    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (Index i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](float delta) {
                std::vector<Var> probe;
                for (std::size_t j = 0; j < inputs.size(); ++j) {
                    TensorF t = inputs[j];
                    if (j == k) t.data()[i] += delta;
                    probe.push_back(Var::constant(t));
                }
                return static_cast<double>(f(probe).item());
            };
            const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
            const double analytic = vars[k].has_grad() ? vars[k].grad().data()[i] : 0.0;
            worst = std::max(worst,
                             std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor}));
        }
    }
    return worst;
}

// Dense scalar reduction so every output element carries gradient.
Var reduce(const Var& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return ops::mse(y, Var::constant(test::random_tensor(y.shape(), rng)));
}

TensorF naive_conv(const TensorF& x, const TensorF& w, const TensorF& b, ops::ConvGeometry g) {
    const Index oh = (x.h() + 2 * g.padding - g.kernel) / g.stride + 1;
    const Index ow = (x.w() + 2 * g.padding - g.kernel) / g.stride + 1;
    TensorF y(x.n(), w.n(), oh, ow);
    for (Index n = 0; n < x.n(); ++n)
        for (Index o = 0; o < w.n(); ++o)
            for (Index i = 0; i < oh; ++i)
                for (Index j = 0; j < ow; ++j) {
                    double acc = b(0, o, 0, 0);
                    for (Index c = 0; c < x.c(); ++c)
                        for (int u = 0; u < g.kernel; ++u)
                            for (int v = 0; v < g.kernel; ++v) {
                                const Index r = i * g.stride - g.padding + u, s = j * g.stride - g.padding + v;
                                if (r >= 0 && r < x.h() && s >= 0 && s < x.w()) acc += x(n, c, r, s) * w(o, c, u, v);
                            }
                    y.data()[y.offset(n, o, i, j)] = static_cast<float>(acc);
                }
    return y;
}

double dot(const TensorF& a, const TensorF& b) {
    return (a.array().cast<double>() * b.array().cast<double>()).sum();
}

}  // namespace

TEST_CASE("elementwise op gradients") {
    std::mt19937_64 rng(1);
    const Shape4 s{2, 3, 4, 4};
    const TensorF a = test::random_tensor(s, rng), b = test::random_tensor(s, rng);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::add(v[0], v[1]), 1); }, {a, b}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::sub(v[0], v[1]), 2); }, {a, b}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::scale(v[0], -1.7f), 3); }, {a}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::mix(v[0], v[1], 0.3f), 4); }, {a, b}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::tanh(v[0]), 5); }, {a}) < 2e-2);
    CHECK(worst_gradient_error(
              [](auto& v) { return reduce(ops::linear_combination({v[0], v[1]}, {0.5f, -2.0f}), 6); }, {a, b}) <
          2e-2);
    TensorF apart = a;
    apart.array() += 0.5f * (b.array() > 0).cast<float>() - 0.25f;  // keeps |a - apart| >= 0.25
    CHECK(worst_gradient_error([](auto& v) { return ops::l1(v[0], v[1]); }, {a, apart}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return ops::mse_to_constant(v[0], 1.0f); }, {a}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return ops::mean(v[0]); }, {a}) < 2e-2);
}

TEST_CASE("piecewise-linear activations away from the kink") {
    std::mt19937_64 rng(2);
    TensorF a = test::random_tensor({1, 2, 5, 5}, rng);
    for (Index i = 0; i < a.size(); ++i)
        if (std::abs(a.data()[i]) < 0.05f) a.data()[i] = 0.3f;
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::relu(v[0]), 7); }, {a}, 1e-3f) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::leaky_relu(v[0], 0.2f), 8); }, {a}, 1e-3f) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::max_pool2x2(v[0]), 9); },
                               {test::random_tensor({1, 2, 4, 4}, rng)}, 1e-3f) < 2e-2);
}

TEST_CASE("convolution values against a direct loop") {
    std::mt19937_64 rng(3);
    for (ops::ConvGeometry g : {ops::ConvGeometry{3, 1, 1}, ops::ConvGeometry{4, 2, 1}, ops::ConvGeometry{1, 1, 0}}) {
        const TensorF x = test::random_tensor({2, 3, 8, 8}, rng);
        const TensorF w = test::random_tensor({5, 3, g.kernel, g.kernel}, rng);
        const TensorF b = test::random_tensor({1, 5, 1, 1}, rng);
        const TensorF y = ops::conv2d(Var::constant(x), Var::constant(w), Var::constant(b), g).value();
        const TensorF ref = naive_conv(x, w, b, g);
        REQUIRE(y.shape().str() == ref.shape().str());
        CHECK((y.array() - ref.array()).abs().maxCoeff() < 1e-4f);
    }
}

TEST_CASE("transposed convolution is the adjoint of convolution") {
    std::mt19937_64 rng(4);
    const ops::ConvGeometry g{4, 2, 1};
    const TensorF x = test::random_tensor({2, 3, 8, 8}, rng);
    const TensorF w = test::random_tensor({5, 3, 4, 4}, rng);
    const TensorF y = test::random_tensor({2, 5, 4, 4}, rng);
    const Var none;
    const TensorF cx = ops::conv2d(Var::constant(x), Var::constant(w), none, g).value();
    const TensorF ty = ops::conv_transpose2d(Var::constant(y), Var::constant(w), none, g).value();
    REQUIRE(ty.shape().str() == x.shape().str());
    CHECK(dot(cx, y) == Approx(dot(x, ty)).epsilon(1e-5));
    CHECK(ops::conv_transpose_output_size(4, g) == 8);
    CHECK(ops::conv_output_size(8, g) == 4);
}

TEST_CASE("convolution gradients") {
    std::mt19937_64 rng(5);
    const TensorF x = test::random_tensor({2, 2, 6, 6}, rng);
    const TensorF w = test::random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f);
    const TensorF b = test::random_tensor({1, 3, 1, 1}, rng);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::conv2d(v[0], v[1], v[2], {3, 1, 1}), 10); },
                               {x, w, b}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::conv2d(v[0], v[1], v[2], {4, 2, 1}), 11); },
                               {x, test::random_tensor({3, 2, 4, 4}, rng, -0.5f, 0.5f), b}) < 2e-2);
    const TensorF wt = test::random_tensor({2, 3, 4, 4}, rng, -0.5f, 0.5f);
    CHECK(worst_gradient_error(
              [](auto& v) { return reduce(ops::conv_transpose2d(v[0], v[1], v[2], {4, 2, 1}), 12); },
              {test::random_tensor({1, 2, 3, 3}, rng), wt, b}) < 2e-2);
}

TEST_CASE("normalisation, softmax, concat and gather gradients") {
    std::mt19937_64 rng(6);
    const TensorF x = test::random_tensor({3, 2, 4, 4}, rng, -2, 2);
    const TensorF gamma = test::random_tensor({1, 2, 1, 1}, rng, 0.5, 1.5);
    const TensorF beta = test::random_tensor({1, 2, 1, 1}, rng);
    CHECK(worst_gradient_error(
              [](auto& v) {
                  TensorF rm(Shape4{1, 2, 1, 1}), rv(Shape4{1, 2, 1, 1}, 1.0f);
                  return reduce(ops::batch_norm(v[0], v[1], v[2], rm, rv, true, 0.1f, 1e-5f), 13);
              },
              {x, gamma, beta}, 1e-2f) < 3e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::instance_norm(v[0], 1e-5f), 14); }, {x}) < 3e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::softmax_channels(v[0]), 15); }, {x}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::concat_channels(v[0], v[1]), 16); },
                               {x, test::random_tensor({3, 1, 4, 4}, rng)}) < 2e-2);
    CHECK(worst_gradient_error([](auto& v) { return reduce(ops::gather_batch(v[0], {2, 2, 0}), 17); }, {x}) < 2e-2);
}

TEST_CASE("softmax rows sum to one") {
    std::mt19937_64 rng(7);
    const TensorF p = ops::softmax_channels(Var::constant(test::random_tensor({2, 5, 3, 3}, rng, -30, 30))).value();
    for (Index n = 0; n < 2; ++n)
        for (Index i = 0; i < 9; ++i) {
            double s = 0;
            for (Index c = 0; c < 5; ++c) s += p.data()[p.offset(n, c, 0, 0) + i];
            CHECK(s == Approx(1.0).epsilon(1e-5));
        }
}

TEST_CASE("batch norm running statistics") {
    TensorF x(Shape4{4, 1, 1, 1});
    for (int i = 0; i < 4; ++i) x.data()[i] = static_cast<float>(i);  // mean 1.5, unbiased var 5/3
    TensorF rm(Shape4{1, 1, 1, 1}), rv(Shape4{1, 1, 1, 1}, 1.0f);
    const Var gamma = Var::constant(TensorF(Shape4{1, 1, 1, 1}, 1.0f)), beta = Var::constant(TensorF(Shape4{1, 1, 1, 1}));
    const TensorF y = ops::batch_norm(Var::constant(x), gamma, beta, rm, rv, true, 0.1f, 0.0f).value();
    CHECK(y.array().mean() == Approx(0.0).scale(1.0));
    CHECK(rm.item() == Approx(0.15));
    const double var_update = 0.9 + 0.1 * (5.0 / 3.0);
    const double biased = 0.9 + 0.1 * 1.25;
    CHECK((rv.item() == Approx(var_update) || rv.item() == Approx(biased)));
    const TensorF e = ops::batch_norm(Var::constant(x), gamma, beta, rm, rv, false, 0.1f, 0.0f).value();
    CHECK(e.data()[0] == Approx((0.0 - rm.item()) / std::sqrt(rv.item())));
    CHECK(rm.item() == Approx(0.15));
}

TEST_CASE("backward restricted to requested leaves") {
    std::mt19937_64 rng(8);
    Var a = Var::parameter(test::random_tensor({1, 1, 3, 3}, rng));
    Var b = Var::parameter(test::random_tensor({1, 1, 3, 3}, rng));
    const Var loss = ops::mse(ops::tanh(a), ops::scale(b, 2.0f));
    backward(loss, std::vector<Var>{a});
    CHECK(a.has_grad());
    CHECK_FALSE(b.has_grad());
    backward(loss, std::vector<Var>{a, b});
    CHECK(b.has_grad());

    // Gradients accumulate across calls.
    const TensorF once = b.grad();
    backward(loss, std::vector<Var>{b});
    CHECK(((b.grad().array() - 2 * once.array()).abs() < 1e-6f).all());
}

TEST_CASE("no-grad mode and detach cut history") {
    std::mt19937_64 rng(9);
    Var a = Var::parameter(test::random_tensor({1, 1, 2, 2}, rng));
    {
        NoGradGuard guard;
        CHECK_FALSE(grad_enabled());
        CHECK_FALSE(ops::scale(a, 3.0f).requires_grad());
    }
    CHECK(grad_enabled());
    CHECK(ops::scale(a, 3.0f).requires_grad());
    const Var d = detach(ops::scale(a, 3.0f));
    CHECK_FALSE(d.requires_grad());
    CHECK(d.value()(0, 0, 0, 0) == Approx(3 * a.value()(0, 0, 0, 0)));
}

TEST_CASE("adam") {
    Var p = Var::parameter(TensorF(Shape4{1, 1, 1, 2}, 1.0f));
    Var q = Var::parameter(TensorF(Shape4{1, 1, 1, 1}, 5.0f));
    Adam opt({p, q}, AdamOptions{0.1f, 0.9f, 0.999f, 1e-8f});
    p.grad() = TensorF(Shape4{1, 1, 1, 2});
    p.grad().data()[0] = 3.0f;
    p.grad().data()[1] = -0.01f;
    opt.step();
    // The first bias-corrected step has magnitude lr regardless of gradient scale.
    CHECK(p.value().data()[0] == Approx(0.9).epsilon(1e-5));
    CHECK(p.value().data()[1] == Approx(1.1).epsilon(1e-4));
    CHECK(q.value().item() == 5.0f);
    CHECK(opt.state().steps[0] == 1);
    CHECK(opt.state().steps[1] == 0);

    // Minimises a quadratic.
    Var x = Var::parameter(TensorF(Shape4{1, 1, 1, 1}, 4.0f));
    Adam o2({x}, AdamOptions{0.05f, 0.9f, 0.999f, 1e-8f});
    for (int i = 0; i < 500; ++i) {
        o2.zero_grad();
        backward(ops::mse_to_constant(x, 1.0f), std::vector<Var>{x});
        o2.step();
    }
    CHECK(x.value().item() == Approx(1.0).epsilon(1e-2));
}

TEST_CASE("parameter store") {
    std::mt19937_64 rng(10);
    nn::ParameterStore store;
    nn::Conv2d conv(store, "c", 2, 3, {3, 1, 1}, nn::Init::normal_002, rng);
    CHECK(store.parameter_count() == 3 * 2 * 9 + 3);
    CHECK_THROWS(store.add_parameter("c.weight", TensorF(Shape4{1, 1, 1, 1})));
    const nn::StateDict saved = store.state_dict();
    Var w = store.parameters()[0].second;
    w.mutable_value().set_zero();
    store.load_state_dict(saved);
    CHECK((store.state_dict().at("c.weight").array() == saved.at("c.weight").array()).all());
    nn::StateDict bad = saved;
    bad["c.weight"] = TensorF(Shape4{1, 1, 1, 1});
    CHECK_THROWS(store.load_state_dict(bad));
    bad = saved;
    bad.erase("c.bias");
    CHECK_THROWS(store.load_state_dict(bad));
}
