#include "grn/losses.hpp"

#include <algorithm>
#include <numeric>

namespace grn::losses {

Var dice_loss(const Var& logits, const LabelBatch& mask) {
    TensorF grad;
    const float value = dice_loss_kernel(logits.value(), mask, logits.requires_grad() ? &grad : nullptr);
    return Var::from_op(TensorF::scalar(value), {logits},
                        [grad = std::move(grad)](const TensorF& g, GradAccumulator& acc) {
                            if (acc.needs(0)) acc.slot(0).array() += g.item() * grad.array();
                        });
}

Var adversarial_mse(const Var& patch_map, float target) { return ops::mse_to_constant(patch_map, target); }

Var l1_recon(const Var& recon, const Var& original) { return ops::l1(recon, original); }

Var mix(const Var& a, const Var& b, float lambda) { return ops::mix(a, b, lambda); }

Var mix(const Var& a, const Var& b, const std::vector<float>& lambdas) {
    require_same_shape(a.shape(), b.shape(), "mix");
    if (static_cast<Index>(lambdas.size()) != a.shape().n)
        throw std::invalid_argument("mix: need one coefficient per batch element");
    for (float l : lambdas)
        if (!(l >= 0.0f && l <= 1.0f)) throw std::invalid_argument("mix: lambda outside [0, 1]");
    TensorF out(a.shape());
    for (Index n = 0; n < a.shape().n; ++n)
        out.sample(n) = lambdas[n] * a.value().sample(n) + (1.0f - lambdas[n]) * b.value().sample(n);
    return Var::from_op(std::move(out), {a, b}, [lambdas](const TensorF& g, GradAccumulator& acc) {
        for (Index n = 0; n < g.n(); ++n) {
            if (acc.needs(0)) acc.slot(0).sample(n) += lambdas[n] * g.sample(n);
            if (acc.needs(1)) acc.slot(1).sample(n) += (1.0f - lambdas[n]) * g.sample(n);
        }
    });
}

namespace {

Var mix_with(const Var& a, const Var& b, const MixCoefficients& lambda) {
    if (lambda.values.empty()) throw std::invalid_argument("ict_loss: no mixing coefficient");
    return lambda.per_sample() ? mix(a, b, lambda.values) : mix(a, b, lambda.values.front());
}

}  // namespace

Var ict_loss(const ProbabilityFn& probs_of, const Var& images, const std::vector<Index>& partner,
             const MixCoefficients& lambda) {
    const Index batch = images.shape().n;
    if (batch < 2) throw std::invalid_argument("ict_loss: batch of size " + std::to_string(batch) + ", need >= 2");
    if (static_cast<Index>(partner.size()) != batch) throw std::invalid_argument("ict_loss: partner size mismatch");
    std::vector<Index> sorted(partner);
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < batch; ++i)
        if (sorted[i] != i) throw std::invalid_argument("ict_loss: partner is not a permutation");

    const Var maps = probs_of(images);
    const Var partner_maps = ops::gather_batch(maps, partner);
    const Var mixed_images = mix_with(images, ops::gather_batch(images, partner), lambda);
    const Var mixed_maps = probs_of(mixed_images);
    return ops::mse(mixed_maps, mix_with(maps, partner_maps, lambda));
}

Var ict_loss(const ProbabilityFn& probs_of, const Var& images, const std::vector<Index>& partner, float lambda) {
    return ict_loss(probs_of, images, partner, MixCoefficients{{lambda}});
}

Var generator_loss_sel(const Var& d_score_fake, const Var& seg_logits_fake, const LabelBatch& mask, const Var& recon,
                       const Var& original, const LossWeights& w, SegFeedback feedback) {
    w.validate();
    std::vector<Var> terms{adversarial_mse(d_score_fake, 1.0f), l1_recon(recon, original)};
    std::vector<float> weights{static_cast<float>(w.lambda_adv), static_cast<float>(w.lambda_l1)};
    if (feedback != SegFeedback::none) {
        terms.push_back(dice_loss(seg_logits_fake, mask));
        const float sign = feedback == SegFeedback::negated ? -1.0f : 1.0f;
        weights.push_back(sign * static_cast<float>(w.lambda_seg));
    }
    return ops::linear_combination(terms, weights);
}

Var segmentor_loss_paired(const Var& seg_logits_real, const Var& seg_logits_fake, const LabelBatch& mask) {
    if (seg_logits_real.node() == seg_logits_fake.node()) return dice_loss(seg_logits_real, mask);
    return ops::linear_combination({dice_loss(seg_logits_real, mask), dice_loss(seg_logits_fake, mask)},
                                   {0.5f, 0.5f});
}

Var discriminator_loss(const Var& d_score_real, const Var& d_score_fake) {
    return ops::linear_combination({adversarial_mse(d_score_real, 1.0f), adversarial_mse(d_score_fake, 0.0f)},
                                   {0.5f, 0.5f});
}

Var generator_loss_ssl_sup(const Var& seg_logits_fake, const LabelBatch& mask, const Var& recon, const Var& original,
                           const LossWeights& w) {
    w.validate();
    return ops::linear_combination({dice_loss(seg_logits_fake, mask), l1_recon(recon, original)},
                                   {static_cast<float>(w.lambda_seg), static_cast<float>(w.lambda_l1)});
}

Var generator_loss_ssl_unsup(const Var& d_score_fake, const Var& ict_fake_branch, const Var& recon,
                             const Var& original, const LossWeights& w) {
    w.validate();
    return ops::linear_combination(
        {adversarial_mse(d_score_fake, 1.0f), ict_fake_branch, l1_recon(recon, original)},
        {static_cast<float>(w.lambda_adv), static_cast<float>(w.lambda_cus), static_cast<float>(w.lambda_l1)});
}

Var segmentor_loss_ssl_unsup(const Var& ict_fake_branch, const Var& ict_real_branch) {
    return ops::linear_combination({ict_fake_branch, ict_real_branch}, {0.5f, 0.5f});
}

float MixCoefficientSampler::sample(std::mt19937_64& rng) const {
    if (dist_ == MixDistribution::uniform) return std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    std::gamma_distribution<double> gamma(alpha_, 1.0);
    const double x = gamma(rng);
    const double y = gamma(rng);
    const double s = x + y;
    return s > 0.0 ? static_cast<float>(x / s) : 0.5f;
}

MixCoefficients MixCoefficientSampler::draw(std::mt19937_64& rng, Index batch, bool per_sample) const {
    MixCoefficients out;
    const Index count = per_sample ? batch : 1;
    for (Index i = 0; i < count; ++i) out.values.push_back(sample(rng));
    return out;
}

std::vector<Index> partner_permutation(Index n, std::mt19937_64& rng) {
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    // Fisher-Yates with an explicit draw so the order is library-independent.
    for (Index i = n - 1; i > 0; --i) {
        const Index j = static_cast<Index>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

}  // namespace grn::losses
