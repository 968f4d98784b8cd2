#include "grn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace grn::ops {

namespace {

using RowMatrixF = RowMatrix<float>;

void im2col(const float* image, Index channels, Index height, Index width, ConvGeometry g, Index out_h,
            Index out_w, float* col, Index ld) {
    const int k = g.kernel;
    for (Index c = 0; c < channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* dst = col + ((c * k + ki) * k + kj) * ld;
                for (Index oh = 0; oh < out_h; ++oh) {
                    const Index ih = oh * g.stride - g.padding + ki;
                    float* d = dst + oh * out_w;
                    if (ih < 0 || ih >= height) {
                        std::fill(d, d + out_w, 0.0f);
                        continue;
                    }
                    const float* src = image + (c * height + ih) * width;
                    for (Index ow = 0; ow < out_w; ++ow) {
                        const Index iw = ow * g.stride - g.padding + kj;
                        d[ow] = (iw >= 0 && iw < width) ? src[iw] : 0.0f;
                    }
                }
            }
        }
    }
}

void col2im(const float* col, Index ld, Index channels, Index height, Index width, ConvGeometry g, Index out_h,
            Index out_w, float* image) {
    const int k = g.kernel;
    for (Index c = 0; c < channels; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* src = col + ((c * k + ki) * k + kj) * ld;
                for (Index oh = 0; oh < out_h; ++oh) {
                    const Index ih = oh * g.stride - g.padding + ki;
                    if (ih < 0 || ih >= height) continue;
                    float* dst = image + (c * height + ih) * width;
                    const float* s = src + oh * out_w;
                    for (Index ow = 0; ow < out_w; ++ow) {
                        const Index iw = ow * g.stride - g.padding + kj;
                        if (iw >= 0 && iw < width) dst[iw] += s[ow];
                    }
                }
            }
        }
    }
}

/// All samples side by side: C x (N * H * W).
RowMatrixF gather_columns(const TensorF& t) {
    const Index plane = t.shape().plane();
    RowMatrixF m(t.c(), t.n() * plane);
    for (Index n = 0; n < t.n(); ++n) m.middleCols(n * plane, plane) = t.sample(n);
    return m;
}

void scatter_columns(const RowMatrixF& m, TensorF& t) {
    const Index plane = t.shape().plane();
    for (Index n = 0; n < t.n(); ++n) t.sample(n) = m.middleCols(n * plane, plane);
}

template <typename Fn, typename Dfn>
Var unary(const Var& x, Fn f, Dfn df) {
    TensorF out(x.shape());
    out.array() = x.value().array().unaryExpr(f);
    const Var xin = x;
    return Var::from_op(std::move(out), {x}, [xin, df](const TensorF& g, GradAccumulator& acc) {
        if (!acc.needs(0)) return;
        acc.slot(0).array() += g.array() * xin.value().array().unaryExpr(df);
    });
}

void check_nonempty(const Var& v, const char* what) {
    if (!v.defined() || v.value().empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    TensorF out(a.shape());
    out.array() = a.value().array() + b.value().array();
    return Var::from_op(std::move(out), {a, b}, [](const TensorF& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.slot(0).array() += g.array();
        if (acc.needs(1)) acc.slot(1).array() += g.array();
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    TensorF out(a.shape());
    out.array() = a.value().array() - b.value().array();
    return Var::from_op(std::move(out), {a, b}, [](const TensorF& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.slot(0).array() += g.array();
        if (acc.needs(1)) acc.slot(1).array() -= g.array();
    });
}

Var scale(const Var& a, float s) {
    TensorF out(a.shape());
    out.array() = a.value().array() * s;
    return Var::from_op(std::move(out), {a}, [s](const TensorF& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.slot(0).array() += g.array() * s;
    });
}

Var linear_combination(const std::vector<Var>& terms, const std::vector<float>& weights) {
    if (terms.empty() || terms.size() != weights.size())
        throw std::invalid_argument("linear_combination: terms/weights size mismatch");
    TensorF out(terms.front().shape());
    for (std::size_t i = 0; i < terms.size(); ++i) {
        require_same_shape(terms[i].shape(), out.shape(), "linear_combination");
        out.array() += weights[i] * terms[i].value().array();
    }
    return Var::from_op(std::move(out), terms, [weights](const TensorF& g, GradAccumulator& acc) {
        for (std::size_t i = 0; i < weights.size(); ++i)
            if (acc.needs(i)) acc.slot(i).array() += weights[i] * g.array();
    });
}

Var mix(const Var& a, const Var& b, float lambda) {
    require_same_shape(a.shape(), b.shape(), "mix");
    if (!(lambda >= 0.0f && lambda <= 1.0f)) throw std::invalid_argument("mix: lambda outside [0, 1]");
    TensorF out(a.shape());
    const float rest = 1.0f - lambda;
    out.array() = lambda * a.value().array() + rest * b.value().array();
    return Var::from_op(std::move(out), {a, b}, [lambda, rest](const TensorF& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.slot(0).array() += lambda * g.array();
        if (acc.needs(1)) acc.slot(1).array() += rest * g.array();
    });
}

Var relu(const Var& x) {
    return unary(
        x, [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Var leaky_relu(const Var& x, float slope) {
    return unary(
        x, [slope](float v) { return v > 0.0f ? v : slope * v; },
        [slope](float v) { return v > 0.0f ? 1.0f : slope; });
}

Var tanh(const Var& x) {
    TensorF out(x.shape());
    out.array() = x.value().array().tanh();
    auto node = Var::from_op(std::move(out), {x}, nullptr);
    if (!node.requires_grad()) return node;
    // The closure needs the output value; hold it by raw pointer to avoid a
    // self-owning cycle. The node outlives every invocation of its backward.
    const TensorF* y = &node.value();
    node.node()->backward = [y](const TensorF& g, GradAccumulator& acc) {
        if (acc.needs(0)) acc.slot(0).array() += g.array() * (1.0f - y->array().square());
    };
    return node;
}

Index conv_output_size(Index in, ConvGeometry g) { return (in + 2 * g.padding - g.kernel) / g.stride + 1; }

Index conv_transpose_output_size(Index in, ConvGeometry g) {
    return (in - 1) * g.stride - 2 * g.padding + g.kernel;
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g) {
    check_nonempty(x, "conv2d");
    const Shape4 in = x.shape();
    const Shape4 ws = weight.shape();
    if (ws.c != in.c || ws.h != g.kernel || ws.w != g.kernel)
        throw std::invalid_argument("conv2d: weight " + ws.str() + " incompatible with input " + in.str());
    const Index out_h = conv_output_size(in.h, g);
    const Index out_w = conv_output_size(in.w, g);
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("conv2d: input " + in.str() + " too small for kernel");
    const Index cout = ws.n;
    const Index kdim = ws.c * g.kernel * g.kernel;
    const Index plane = out_h * out_w;
    const Index cols = in.n * plane;

    RowMatrixF col(kdim, cols);
    for (Index n = 0; n < in.n; ++n)
        im2col(x.value().data() + x.value().offset(n, 0, 0, 0), in.c, in.h, in.w, g, out_h, out_w,
               col.data() + n * plane, cols);
    Eigen::Map<const RowMatrixF> wm(weight.value().data(), cout, kdim);
    RowMatrixF prod = wm * col;
    if (bias.defined()) prod.colwise() += Eigen::Map<const Eigen::VectorXf>(bias.value().data(), cout);

    TensorF out(in.n, cout, out_h, out_w);
    scatter_columns(prod, out);

    const Var xin = x, win = weight;
    std::vector<Var> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return Var::from_op(std::move(out), parents, [xin, win, g, in, out_h, out_w, cout, kdim, plane, cols](
                                                     const TensorF& grad, GradAccumulator& acc) {
        const RowMatrixF gm = gather_columns(grad);
        Eigen::Map<const RowMatrixF> wm(win.value().data(), cout, kdim);
        if (acc.needs(1)) {
            RowMatrixF col(kdim, cols);
            for (Index n = 0; n < in.n; ++n)
                im2col(xin.value().data() + xin.value().offset(n, 0, 0, 0), in.c, in.h, in.w, g, out_h, out_w,
                       col.data() + n * plane, cols);
            Eigen::Map<RowMatrixF> dw(acc.slot(1).data(), cout, kdim);
            dw.noalias() += gm * col.transpose();
        }
        if (acc.needs(2)) {
            Eigen::Map<Eigen::VectorXf> db(acc.slot(2).data(), cout);
            db += gm.rowwise().sum();
        }
        if (acc.needs(0)) {
            const RowMatrixF dcol = wm.transpose() * gm;
            TensorF& dx = acc.slot(0);
            for (Index n = 0; n < in.n; ++n)
                col2im(dcol.data() + n * plane, cols, in.c, in.h, in.w, g, out_h, out_w,
                       dx.data() + dx.offset(n, 0, 0, 0));
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g) {
    check_nonempty(x, "conv_transpose2d");
    const Shape4 in = x.shape();
    const Shape4 ws = weight.shape();
    if (ws.n != in.c || ws.h != g.kernel || ws.w != g.kernel)
        throw std::invalid_argument("conv_transpose2d: weight " + ws.str() + " incompatible with input " + in.str());
    const Index cout = ws.c;
    const Index out_h = conv_transpose_output_size(in.h, g);
    const Index out_w = conv_transpose_output_size(in.w, g);
    const Index kdim = cout * g.kernel * g.kernel;
    const Index plane = in.h * in.w;
    const Index cols = in.n * plane;

    const RowMatrixF xm = gather_columns(x.value());
    Eigen::Map<const RowMatrixF> wm(weight.value().data(), in.c, kdim);
    const RowMatrixF col = wm.transpose() * xm;

    TensorF out(in.n, cout, out_h, out_w);
    for (Index n = 0; n < in.n; ++n)
        col2im(col.data() + n * plane, cols, cout, out_h, out_w, g, in.h, in.w, out.data() + out.offset(n, 0, 0, 0));
    if (bias.defined())
        for (Index n = 0; n < in.n; ++n)
            for (Index c = 0; c < cout; ++c) out.plane(n, c) += bias.value().data()[c];

    const Var xin = x, win = weight;
    std::vector<Var> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return Var::from_op(std::move(out), parents, [xin, win, g, in, out_h, out_w, cout, kdim, plane, cols](
                                                     const TensorF& grad, GradAccumulator& acc) {
        RowMatrixF dcol(kdim, cols);
        for (Index n = 0; n < in.n; ++n)
            im2col(grad.data() + grad.offset(n, 0, 0, 0), cout, out_h, out_w, g, in.h, in.w, dcol.data() + n * plane,
                   cols);
        if (acc.needs(0)) {
            Eigen::Map<const RowMatrixF> wm(win.value().data(), in.c, kdim);
            const RowMatrixF dx = wm * dcol;
            TensorF& slot = acc.slot(0);
            for (Index n = 0; n < in.n; ++n) slot.sample(n) += dx.middleCols(n * plane, plane);
        }
        if (acc.needs(1)) {
            const RowMatrixF xm = gather_columns(xin.value());
            Eigen::Map<RowMatrixF> dw(acc.slot(1).data(), in.c, kdim);
            dw.noalias() += xm * dcol.transpose();
        }
        if (acc.needs(2)) {
            float* db = acc.slot(2).data();
            for (Index n = 0; n < grad.n(); ++n)
                for (Index c = 0; c < cout; ++c) db[c] += grad.plane(n, c).sum();
        }
    });
}

namespace {

/// Shared backward for normalisation layers: given dL/dxhat over a group of
/// M values with normalised values xhat and inverse std, returns dL/dx.
void normalize_backward(const float* dxhat, const float* xhat, Index m, double inv_std, float* dx_out) {
    double sum_d = 0.0, sum_dx = 0.0;
    for (Index i = 0; i < m; ++i) {
        sum_d += dxhat[i];
        sum_dx += static_cast<double>(dxhat[i]) * xhat[i];
    }
    const double scale = inv_std / static_cast<double>(m);
    for (Index i = 0; i < m; ++i)
        dx_out[i] += static_cast<float>(scale * (m * static_cast<double>(dxhat[i]) - sum_d - xhat[i] * sum_dx));
}

}  // namespace

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, TensorF& running_mean, TensorF& running_var,
               bool training, float momentum, float eps) {
    check_nonempty(x, "batch_norm");
    const Shape4 s = x.shape();
    const Index m = s.n * s.plane();
    TensorF xhat(s);
    std::vector<double> inv_std(s.c);

    for (Index c = 0; c < s.c; ++c) {
        double mean = 0.0, var = 0.0;
        if (training) {
            for (Index n = 0; n < s.n; ++n) mean += x.value().plane(n, c).template cast<double>().sum();
            mean /= static_cast<double>(m);
            for (Index n = 0; n < s.n; ++n)
                var += (x.value().plane(n, c).template cast<double>() - mean).square().sum();
            var /= static_cast<double>(m);
            const double unbiased = m > 1 ? var * m / (m - 1) : var;
            running_mean.data()[c] = static_cast<float>((1.0 - momentum) * running_mean.data()[c] + momentum * mean);
            running_var.data()[c] = static_cast<float>((1.0 - momentum) * running_var.data()[c] + momentum * unbiased);
        } else {
            mean = running_mean.data()[c];
            var = running_var.data()[c];
        }
        inv_std[c] = 1.0 / std::sqrt(var + eps);
        for (Index n = 0; n < s.n; ++n)
            xhat.plane(n, c) = ((x.value().plane(n, c).template cast<double>() - mean) * inv_std[c]).template cast<float>();
    }

    TensorF out(s);
    for (Index n = 0; n < s.n; ++n)
        for (Index c = 0; c < s.c; ++c)
            out.plane(n, c) = xhat.plane(n, c) * gamma.value().data()[c] + beta.value().data()[c];

    const Var gin = gamma;
    return Var::from_op(std::move(out), {x, gamma, beta},
                        [gin, xhat = std::move(xhat), inv_std, training, s, m](const TensorF& g, GradAccumulator& acc) {
                            if (acc.needs(1)) {
                                float* dg = acc.slot(1).data();
                                for (Index n = 0; n < s.n; ++n)
                                    for (Index c = 0; c < s.c; ++c)
                                        dg[c] += (g.plane(n, c) * xhat.plane(n, c)).sum();
                            }
                            if (acc.needs(2)) {
                                float* db = acc.slot(2).data();
                                for (Index n = 0; n < s.n; ++n)
                                    for (Index c = 0; c < s.c; ++c) db[c] += g.plane(n, c).sum();
                            }
                            if (!acc.needs(0)) return;
                            TensorF& dx = acc.slot(0);
                            std::vector<float> dxhat(m), xh(m), tmp(m);
                            for (Index c = 0; c < s.c; ++c) {
                                const float gm = gin.value().data()[c];
                                if (!training) {
                                    for (Index n = 0; n < s.n; ++n)
                                        dx.plane(n, c) += g.plane(n, c) * static_cast<float>(gm * inv_std[c]);
                                    continue;
                                }
                                for (Index n = 0; n < s.n; ++n) {
                                    Eigen::Map<Image<float>>(dxhat.data() + n * s.plane(), s.h, s.w) = g.plane(n, c) * gm;
                                    Eigen::Map<Image<float>>(xh.data() + n * s.plane(), s.h, s.w) = xhat.plane(n, c);
                                }
                                std::fill(tmp.begin(), tmp.end(), 0.0f);
                                normalize_backward(dxhat.data(), xh.data(), m, inv_std[c], tmp.data());
                                for (Index n = 0; n < s.n; ++n)
                                    dx.plane(n, c) += Eigen::Map<const Image<float>>(tmp.data() + n * s.plane(), s.h, s.w);
                            }
                        });
}

Var instance_norm(const Var& x, float eps) {
    check_nonempty(x, "instance_norm");
    const Shape4 s = x.shape();
    const Index m = s.plane();
    TensorF out(s);
    std::vector<double> inv_std(s.n * s.c);
    for (Index n = 0; n < s.n; ++n) {
        for (Index c = 0; c < s.c; ++c) {
            const auto p = x.value().plane(n, c).template cast<double>();
            const double mean = p.sum() / m;
            const double var = (p - mean).square().sum() / m;
            const double is = 1.0 / std::sqrt(var + eps);
            inv_std[n * s.c + c] = is;
            out.plane(n, c) = ((p - mean) * is).template cast<float>();
        }
    }
    auto node = Var::from_op(std::move(out), {x}, nullptr);
    if (!node.requires_grad()) return node;
    const TensorF* y = &node.value();
    node.node()->backward = [y, inv_std, s, m](const TensorF& g, GradAccumulator& acc) {
        if (!acc.needs(0)) return;
        TensorF& dx = acc.slot(0);
        for (Index n = 0; n < s.n; ++n)
            for (Index c = 0; c < s.c; ++c) {
                const Index off = y->offset(n, c, 0, 0);
                normalize_backward(g.data() + off, y->data() + off, m, inv_std[n * s.c + c], dx.data() + off);
            }
    };
    return node;
}

Var max_pool2x2(const Var& x) {
    check_nonempty(x, "max_pool2x2");
    const Shape4 s = x.shape();
    if (s.h % 2 != 0 || s.w % 2 != 0) throw std::invalid_argument("max_pool2x2: odd spatial extent " + s.str());
    const Index oh = s.h / 2, ow = s.w / 2;
    TensorF out(s.n, s.c, oh, ow);
    std::vector<Index> argmax(out.size());
    const float* in = x.value().data();
    for (Index n = 0; n < s.n; ++n)
        for (Index c = 0; c < s.c; ++c)
            for (Index i = 0; i < oh; ++i)
                for (Index j = 0; j < ow; ++j) {
                    Index best = x.value().offset(n, c, 2 * i, 2 * j);
                    for (Index di = 0; di < 2; ++di)
                        for (Index dj = 0; dj < 2; ++dj) {
                            const Index o = x.value().offset(n, c, 2 * i + di, 2 * j + dj);
                            if (in[o] > in[best]) best = o;
                        }
                    const Index oo = out.offset(n, c, i, j);
                    out.data()[oo] = in[best];
                    argmax[oo] = best;
                }
    return Var::from_op(std::move(out), {x}, [argmax = std::move(argmax)](const TensorF& g, GradAccumulator& acc) {
        if (!acc.needs(0)) return;
        float* dx = acc.slot(0).data();
        for (Index i = 0; i < g.size(); ++i) dx[argmax[i]] += g.data()[i];
    });
}

Var concat_channels(const Var& a, const Var& b) {
    const Shape4 sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw std::invalid_argument("concat_channels: " + sa.str() + " vs " + sb.str());
    TensorF out(sa.n, sa.c + sb.c, sa.h, sa.w);
    for (Index n = 0; n < sa.n; ++n) {
        out.sample(n).topRows(sa.c) = a.value().sample(n);
        out.sample(n).bottomRows(sb.c) = b.value().sample(n);
    }
    const Index ca = sa.c, cb = sb.c;
    return Var::from_op(std::move(out), {a, b}, [ca, cb](const TensorF& g, GradAccumulator& acc) {
        for (Index n = 0; n < g.n(); ++n) {
            if (acc.needs(0)) acc.slot(0).sample(n) += g.sample(n).topRows(ca);
            if (acc.needs(1)) acc.slot(1).sample(n) += g.sample(n).bottomRows(cb);
        }
    });
}

Var softmax_channels(const Var& x) {
    check_nonempty(x, "softmax_channels");
    const Shape4 s = x.shape();
    TensorF out(s);
    for (Index n = 0; n < s.n; ++n) {
        auto in = x.value().sample(n);
        auto o = out.sample(n);
        const Eigen::RowVectorXf mx = in.colwise().maxCoeff();
        o = (in.rowwise() - mx).array().exp().matrix();
        const Eigen::RowVectorXf denom = o.colwise().sum();
        o.array().rowwise() /= denom.array();
    }
    auto node = Var::from_op(std::move(out), {x}, nullptr);
    if (!node.requires_grad()) return node;
    const TensorF* y = &node.value();
    node.node()->backward = [y](const TensorF& g, GradAccumulator& acc) {
        if (!acc.needs(0)) return;
        TensorF& dx = acc.slot(0);
        for (Index n = 0; n < g.n(); ++n) {
            auto ys = y->sample(n);
            auto gs = g.sample(n);
            const Eigen::RowVectorXf dot = (ys.array() * gs.array()).matrix().colwise().sum();
            dx.sample(n).array() += ys.array() * (gs.rowwise() - dot).array();
        }
    };
    return node;
}

Var gather_batch(const Var& x, const std::vector<Index>& index) {
    const Shape4 s = x.shape();
    TensorF out(Shape4{static_cast<Index>(index.size()), s.c, s.h, s.w});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= s.n) throw std::out_of_range("gather_batch: index out of range");
        out.sample(static_cast<Index>(i)) = x.value().sample(index[i]);
    }
    return Var::from_op(std::move(out), {x}, [index](const TensorF& g, GradAccumulator& acc) {
        if (!acc.needs(0)) return;
        TensorF& dx = acc.slot(0);
        for (std::size_t i = 0; i < index.size(); ++i) dx.sample(index[i]) += g.sample(static_cast<Index>(i));
    });
}

Var mean(const Var& x) {
    check_nonempty(x, "mean");
    const float inv = 1.0f / static_cast<float>(x.value().size());
    const double total = x.value().array().template cast<double>().sum();
    return Var::from_op(TensorF::scalar(static_cast<float>(total * inv)), {x},
                        [inv](const TensorF& g, GradAccumulator& acc) {
                            if (acc.needs(0)) acc.slot(0).array() += g.item() * inv;
                        });
}

Var mse(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "mse");
    check_nonempty(a, "mse");
    const Index count = a.value().size();
    TensorF diff(a.shape());
    diff.array() = a.value().array() - b.value().array();
    const double value = diff.array().template cast<double>().square().sum() / count;
    return Var::from_op(TensorF::scalar(static_cast<float>(value)), {a, b},
                        [diff = std::move(diff), count](const TensorF& g, GradAccumulator& acc) {
                            const float k = 2.0f * g.item() / static_cast<float>(count);
                            if (acc.needs(0)) acc.slot(0).array() += k * diff.array();
                            if (acc.needs(1)) acc.slot(1).array() -= k * diff.array();
                        });
}

Var mse_to_constant(const Var& x, float target) {
    check_nonempty(x, "mse_to_constant");
    const Index count = x.value().size();
    const double value = (x.value().array().template cast<double>() - target).square().sum() / count;
    const Var xin = x;
    return Var::from_op(TensorF::scalar(static_cast<float>(value)), {x},
                        [xin, target, count](const TensorF& g, GradAccumulator& acc) {
                            if (!acc.needs(0)) return;
                            const float k = 2.0f * g.item() / static_cast<float>(count);
                            acc.slot(0).array() += k * (xin.value().array() - target);
                        });
}

Var l1(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "l1");
    check_nonempty(a, "l1");
    const Index count = a.value().size();
    TensorF sign(a.shape());
    sign.array() = (a.value().array() - b.value().array()).sign();
    const double value = (a.value().array() - b.value().array()).abs().template cast<double>().sum() / count;
    return Var::from_op(TensorF::scalar(static_cast<float>(value)), {a, b},
                        [sign = std::move(sign), count](const TensorF& g, GradAccumulator& acc) {
                            const float k = g.item() / static_cast<float>(count);
                            if (acc.needs(0)) acc.slot(0).array() += k * sign.array();
                            if (acc.needs(1)) acc.slot(1).array() -= k * sign.array();
                        });
}

}  // namespace grn::ops
