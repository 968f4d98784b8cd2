#ifndef GRN_OPS_HPP
#define GRN_OPS_HPP

#include "grn/autograd.hpp"

#include <vector>

// Differentiable primitives over NCHW Vars. Each op computes its value
// eagerly and records a closure for the reverse sweep.
namespace grn::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& a, float s);
/// sum_i weights[i] * terms[i]; all terms share a shape.
Var linear_combination(const std::vector<Var>& terms, const std::vector<float>& weights);
/// lambda * a + (1 - lambda) * b
Var mix(const Var& a, const Var& b, float lambda);

Var relu(const Var& x);
Var leaky_relu(const Var& x, float slope);
Var tanh(const Var& x);

struct ConvGeometry {
    int kernel = 3;
    int stride = 1;
    int padding = 1;
};

/// weight: Cout x Cin x k x k, bias: 1 x Cout x 1 x 1 (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g);
/// weight: Cin x Cout x k x k; output extent (H - 1) * stride - 2 * padding + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry g);

Index conv_output_size(Index in, ConvGeometry g);
Index conv_transpose_output_size(Index in, ConvGeometry g);

/// Batch normalisation over (N, H, W). In training mode the running
/// statistics are updated in place with the given momentum.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, TensorF& running_mean, TensorF& running_var,
               bool training, float momentum, float eps);
/// Per-sample, per-channel normalisation over (H, W), no affine terms.
Var instance_norm(const Var& x, float eps);

Var max_pool2x2(const Var& x);
Var concat_channels(const Var& a, const Var& b);
Var softmax_channels(const Var& x);
/// out[i] = x[index[i]] along the batch dimension.
Var gather_batch(const Var& x, const std::vector<Index>& index);

Var mean(const Var& x);
Var mse(const Var& a, const Var& b);
Var mse_to_constant(const Var& x, float target);
Var l1(const Var& a, const Var& b);

}  // namespace grn::ops

#endif  // GRN_OPS_HPP
