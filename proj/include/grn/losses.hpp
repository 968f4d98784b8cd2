#ifndef GRN_LOSSES_HPP
#define GRN_LOSSES_HPP

#include "grn/autograd.hpp"
#include "grn/ops.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace grn::losses {

/// Additive smoothing in numerator and denominator of the soft dice.
inline constexpr double kDiceSmoothing = 1e-5;

struct LossWeights {
    double lambda_adv = 1.0;
    double lambda_seg = 100.0;
    double lambda_l1 = 100.0;
    double lambda_cus = 1.0;

    void validate() const {
        for (double v : {lambda_adv, lambda_seg, lambda_l1, lambda_cus})
            if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("loss weights must be finite and >= 0");
    }
};

/// How the segmentation term enters the generator objective.
enum class SegFeedback { positive, none, negated };

// ---------------------------------------------------------------------------
// Scalar-generic kernels.

/// lambda * a + (1 - lambda) * b as an Eigen expression.
template <typename DerivedA, typename DerivedB>
auto mix(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b,
         typename DerivedA::Scalar lambda) {
    using Scalar = typename DerivedA::Scalar;
    return lambda * a.derived() + (Scalar(1) - lambda) * b.derived();
}

template <typename Scalar>
Tensor<Scalar> mix(const Tensor<Scalar>& a, const Tensor<Scalar>& b, Scalar lambda) {
    require_same_shape(a.shape(), b.shape(), "mix");
    Tensor<Scalar> out(a.shape());
    out.array() = mix(a.array(), b.array(), lambda);
    return out;
}

/// Soft multi-class dice loss on logits (B x C x H x W) against integer
/// labels (B x 1 x H x W). Softmax over channels, per-sample per-class dice
/// with smoothing, averaged over samples and all classes. When `grad` is
/// non-null it receives d(loss)/d(logits).
template <typename Scalar>
Scalar dice_loss_kernel(const Tensor<Scalar>& logits, const LabelBatch& mask, Tensor<Scalar>* grad = nullptr) {
    const Shape4 s = logits.shape();
    if (mask.n() != s.n || mask.c() != 1 || mask.h() != s.h || mask.w() != s.w)
        throw std::invalid_argument("dice_loss: mask " + mask.shape().str() + " does not match logits " + s.str());
    if (s.c < 2) throw std::invalid_argument("dice_loss: need at least two classes");
    if ((mask.array() < 0).any() || (mask.array() >= s.c).any())
        throw std::invalid_argument("dice_loss: mask value outside [0, C)");

    const Scalar eps = static_cast<Scalar>(kDiceSmoothing);
    const Index plane = s.plane();
    if (grad) *grad = Tensor<Scalar>(s);

    Scalar total = 0;
    RowMatrix<Scalar> prob(s.c, plane);
    RowMatrix<Scalar> dprob(s.c, plane);
    for (Index n = 0; n < s.n; ++n) {
        const auto z = logits.sample(n);
        prob = (z.rowwise() - z.colwise().maxCoeff()).array().exp().matrix();
        const auto denom = prob.colwise().sum().eval();
        prob.array().rowwise() /= denom.array();
        const std::int32_t* lab = mask.data() + mask.offset(n, 0, 0, 0);
        for (Index c = 0; c < s.c; ++c) {
            Scalar inter = 0, psum = 0, gsum = 0;
            for (Index i = 0; i < plane; ++i) {
                const Scalar g = lab[i] == c ? Scalar(1) : Scalar(0);
                inter += prob(c, i) * g;
                psum += prob(c, i);
                gsum += g;
            }
            const Scalar num = 2 * inter + eps;
            const Scalar den = psum + gsum + eps;
            total += num / den;
            if (grad) {
                const Scalar scale = -Scalar(1) / static_cast<Scalar>(s.n * s.c);
                for (Index i = 0; i < plane; ++i) {
                    const Scalar g = lab[i] == c ? Scalar(1) : Scalar(0);
                    dprob(c, i) = scale * (2 * g * den - num) / (den * den);
                }
            }
        }
        if (grad) {
            const auto dot = (prob.array() * dprob.array()).colwise().sum().eval();
            grad->sample(n) = (prob.array() * (dprob.array().rowwise() - dot)).matrix();
        }
    }
    return Scalar(1) - total / static_cast<Scalar>(s.n * s.c);
}

/// ICT on precomputed maps: MSE(mixed, mix(a, b, lambda)).
template <typename Scalar>
Scalar ict_from_maps(const Tensor<Scalar>& mixed, const Tensor<Scalar>& a, const Tensor<Scalar>& b, Scalar lambda) {
    require_same_shape(mixed.shape(), a.shape(), "ict_from_maps");
    require_same_shape(a.shape(), b.shape(), "ict_from_maps");
    return (mixed.array() - mix(a.array(), b.array(), lambda)).square().mean();
}

/// Weighted component sums; Var-level losses below use the same weights.
template <typename Scalar>
Scalar compose_generator_sel(Scalar adv, Scalar seg, Scalar l1, const LossWeights& w,
                             SegFeedback feedback = SegFeedback::positive) {
    const Scalar sign = feedback == SegFeedback::positive ? 1 : feedback == SegFeedback::negated ? -1 : 0;
    return static_cast<Scalar>(w.lambda_adv) * adv + sign * static_cast<Scalar>(w.lambda_seg) * seg +
           static_cast<Scalar>(w.lambda_l1) * l1;
}

template <typename Scalar>
Scalar compose_generator_ssl_sup(Scalar seg, Scalar l1, const LossWeights& w) {
    return static_cast<Scalar>(w.lambda_seg) * seg + static_cast<Scalar>(w.lambda_l1) * l1;
}

template <typename Scalar>
Scalar compose_generator_ssl_unsup(Scalar adv, Scalar cus, Scalar l1, const LossWeights& w) {
    return static_cast<Scalar>(w.lambda_adv) * adv + static_cast<Scalar>(w.lambda_cus) * cus +
           static_cast<Scalar>(w.lambda_l1) * l1;
}

// ---------------------------------------------------------------------------
// Differentiable losses.

Var dice_loss(const Var& logits, const LabelBatch& mask);
/// mean((score - target)^2), target 1 = real, 0 = fake.
Var adversarial_mse(const Var& patch_map, float target);
Var l1_recon(const Var& recon, const Var& original);
Var mix(const Var& a, const Var& b, float lambda);
/// Per-sample coefficients, one per batch element.
Var mix(const Var& a, const Var& b, const std::vector<float>& lambdas);

/// Maps a batch of images to class-probability maps.
using ProbabilityFn = std::function<Var(const Var& images)>;

/// Coefficient(s) for one ICT evaluation: a single shared value, or one
/// per batch element.
struct MixCoefficients {
    std::vector<float> values;
    bool per_sample() const { return values.size() > 1; }
};

/// Interpolation-consistency loss: MSE between the maps of the mixed batch
/// and the mix of the maps of the batch and its partner permutation.
Var ict_loss(const ProbabilityFn& probs_of, const Var& images, const std::vector<Index>& partner,
             const MixCoefficients& lambda);
Var ict_loss(const ProbabilityFn& probs_of, const Var& images, const std::vector<Index>& partner, float lambda);

Var generator_loss_sel(const Var& d_score_fake, const Var& seg_logits_fake, const LabelBatch& mask, const Var& recon,
                       const Var& original, const LossWeights& w, SegFeedback feedback = SegFeedback::positive);
Var segmentor_loss_paired(const Var& seg_logits_real, const Var& seg_logits_fake, const LabelBatch& mask);
Var discriminator_loss(const Var& d_score_real, const Var& d_score_fake);
Var generator_loss_ssl_sup(const Var& seg_logits_fake, const LabelBatch& mask, const Var& recon, const Var& original,
                           const LossWeights& w);
Var generator_loss_ssl_unsup(const Var& d_score_fake, const Var& ict_fake_branch, const Var& recon,
                             const Var& original, const LossWeights& w);
Var segmentor_loss_ssl_unsup(const Var& ict_fake_branch, const Var& ict_real_branch);

// ---------------------------------------------------------------------------

enum class MixDistribution { uniform, beta };

/// Draws interpolation coefficients in [0, 1]: Uniform(0, 1) or Beta(a, a).
class MixCoefficientSampler {
public:
    MixCoefficientSampler() = default;
    MixCoefficientSampler(MixDistribution dist, double alpha) : dist_(dist), alpha_(alpha) {
        if (dist == MixDistribution::beta && !(alpha > 0.0)) throw std::invalid_argument("Beta alpha must be > 0");
    }
    float sample(std::mt19937_64& rng) const;
    MixCoefficients draw(std::mt19937_64& rng, Index batch, bool per_sample) const;

    MixDistribution distribution() const { return dist_; }
    double alpha() const { return alpha_; }

private:
    MixDistribution dist_ = MixDistribution::uniform;
    double alpha_ = 1.0;
};

/// Uniform random permutation of [0, n); self-pairs allowed.
std::vector<Index> partner_permutation(Index n, std::mt19937_64& rng);

}  // namespace grn::losses

#endif  // GRN_LOSSES_HPP
