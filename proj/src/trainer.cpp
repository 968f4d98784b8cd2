#include "grn/trainer.hpp"

#include "grn/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace grn::trainer {

using models::ModelBundle;
using nlohmann::json;

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::grn_sel: return "grn_sel";
        case Mode::grn_ssl: return "grn_ssl";
        case Mode::supervised: return "supervised";
        case Mode::supervised_img_aug: return "supervised_img_aug";
        case Mode::gan_aug_baseline: return "gan_aug_baseline";
    }
    return "?";
}

Mode parse_mode(const std::string& s) {
    for (Mode m : {Mode::grn_sel, Mode::grn_ssl, Mode::supervised, Mode::supervised_img_aug, Mode::gan_aug_baseline})
        if (s == mode_name(m)) return m;
    throw std::invalid_argument("unknown training mode '" + s + "'");
}

const char* ablation_name(Ablation a) {
    switch (a) {
        case Ablation::none: return "none";
        case Ablation::no_seg_feedback: return "no_seg_feedback";
        case Ablation::negated_seg_feedback: return "negated_seg_feedback";
        case Ablation::freeze_segmentor_for_LG: return "freeze_segmentor_for_LG";
    }
    return "?";
}

Ablation parse_ablation(const std::string& s) {
    for (Ablation a : {Ablation::none, Ablation::no_seg_feedback, Ablation::negated_seg_feedback,
                       Ablation::freeze_segmentor_for_LG})
        if (s == ablation_name(a)) return a;
    throw std::invalid_argument("unknown ablation '" + s + "'");
}

const char* phase_name(Phase p) {
    switch (p) {
        case Phase::discriminator: return "D";
        case Phase::generator: return "G";
        case Phase::segmentor: return "S";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (mode == Mode::grn_ssl && batch_size < 2)
        throw std::invalid_argument("grn_ssl needs batch_size >= 2 (interpolation consistency pairs samples)");
    if (max_epochs < 0) throw std::invalid_argument("max_epochs must be >= 0");
    if (patience < 1) throw std::invalid_argument("patience must be >= 1");
    if (patience > max_epochs && max_epochs > 0) throw std::invalid_argument("patience must not exceed max_epochs");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw std::invalid_argument("learning_rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
        throw std::invalid_argument("Adam betas must lie in [0, 1)");
    weights.validate();
    if (ablation != Ablation::none && mode != Mode::grn_sel)
        throw std::invalid_argument(std::string("ablation ") + ablation_name(ablation) +
                                    " is only valid with mode grn_sel");
    if (mix_distribution == losses::MixDistribution::beta && !(mix_alpha > 0.0))
        throw std::invalid_argument("mix_alpha must be > 0");
    if (gan_pretrain_epochs < 0) throw std::invalid_argument("gan_pretrain_epochs must be >= 0");
    if (validation_batch_size < 1) throw std::invalid_argument("validation_batch_size must be >= 1");
    if (!(augmentation.flip_probability >= 0.0 && augmentation.flip_probability <= 1.0) ||
        !(augmentation.max_rotation_degrees >= 0.0) ||
        !(augmentation.intensity_scale >= 0.0 && augmentation.intensity_scale < 1.0))
        throw std::invalid_argument("augmentation parameters out of range");
}

AdamOptions TrainConfig::adam() const {
    AdamOptions o;
    o.learning_rate = static_cast<float>(learning_rate);
    o.beta1 = static_cast<float>(beta1);
    o.beta2 = static_cast<float>(beta2);
    return o;
}

losses::SegFeedback TrainConfig::feedback() const {
    switch (ablation) {
        case Ablation::no_seg_feedback: return losses::SegFeedback::none;
        case Ablation::negated_seg_feedback: return losses::SegFeedback::negated;
        default: return losses::SegFeedback::positive;
    }
}

models::BundleConfig with_optimizer(models::BundleConfig bundle, const TrainConfig& config) {
    bundle.optimizer = config.adam();
    return bundle;
}

// ---------------------------------------------------------------------------

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(const std::optional<double>& v) {
    if (!v) return "-";
    std::ostringstream out;
    out.precision(6);
    out << *v;
    return out.str();
}

}  // namespace

std::string TrainHistory::to_jsonl() const {
    std::string out;
    for (const auto& r : iterations) {
        const json j{{"event", "iteration"}, {"epoch", r.epoch},           {"iteration", r.iteration},
                     {"phase", r.phase},     {"L_G", optional_json(r.loss_g)}, {"L_S", optional_json(r.loss_s)},
                     {"L_D", optional_json(r.loss_d)}};
        out += j.dump() + "\n";
    }
    for (const auto& e : epochs) {
        const json j{{"event", "epoch"},
                     {"epoch", e.epoch},
                     {"val_dice_loss", e.val_loss},
                     {"val_dice_loss_sge", optional_json(e.val_loss_sge)},
                     {"selection", e.selection},
                     {"improved", e.improved}};
        out += j.dump() + "\n";
    }
    out += json{{"event", "summary"}, {"best_epoch", best_epoch}, {"best_value", best_value}, {"stop_reason", stop_reason}}
               .dump() +
           "\n";
    return out;
}

// ---------------------------------------------------------------------------

namespace {

void fire(const std::function<void(Phase, ModelBundle&)>& hook, Phase p, ModelBundle& b) {
    if (hook) hook(p, b);
}

std::vector<Var> concat(std::vector<Var> a, const std::vector<Var>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

Var discriminator_update(ModelBundle& bundle, const Var& real, const Var& recon, const TrainHooks& hooks) {
    auto& D = bundle.discriminator();
    const Var loss = losses::discriminator_loss(D(real), D(detach(recon)));
    const auto params = D.store().parameter_vars();
    backward(loss, params);
    fire(hooks.after_backward, Phase::discriminator, bundle);
    bundle.adam_discriminator().step();
    fire(hooks.after_step, Phase::discriminator, bundle);
    return loss;
}

}  // namespace

StepLosses sel_step(ModelBundle& bundle, const TrainConfig& config, const data::Batch& batch,
                    const TrainHooks& hooks) {
    bundle.zero_grad();
    auto& G = bundle.generator();
    auto& S = bundle.segmentor();
    auto& D = bundle.discriminator();
    const Var images = Var::constant(batch.images);
    const Var recon = G(images);

    const Var loss_d = discriminator_update(bundle, images, recon, hooks);

    const Var seg_fake = S(recon, true);
    const losses::SegFeedback feedback = config.feedback();
    const Var loss_g =
        losses::generator_loss_sel(D(recon), seg_fake, batch.masks, recon, images, config.weights, feedback);
    const auto g_params = G.store().parameter_vars();
    const auto s_params = S.store().parameter_vars();
    const bool frozen = config.ablation == Ablation::freeze_segmentor_for_LG;
    if (feedback == losses::SegFeedback::positive && !frozen) {
        backward(loss_g, concat(g_params, s_params));
    } else {
        backward(loss_g, g_params);
        // Only the generator sees the flipped sign; the segmentor keeps the
        // ordinary segmentation term from L_G.
        if (feedback == losses::SegFeedback::negated && !frozen)
            backward(ops::scale(losses::dice_loss(seg_fake, batch.masks), static_cast<float>(config.weights.lambda_seg)),
                     s_params);
    }
    fire(hooks.after_backward, Phase::generator, bundle);
    bundle.adam_generator().step();
    fire(hooks.after_step, Phase::generator, bundle);

    const Var loss_s = losses::segmentor_loss_paired(S(images, true), seg_fake, batch.masks);
    backward(loss_s, s_params);
    fire(hooks.after_backward, Phase::segmentor, bundle);
    bundle.adam_segmentor().step();
    fire(hooks.after_step, Phase::segmentor, bundle);
    return {loss_g.item(), loss_s.item(), loss_d.item()};
}

StepLosses ssl_supervised_step(ModelBundle& bundle, const TrainConfig& config, const data::Batch& batch,
                               const TrainHooks& hooks) {
    bundle.zero_grad();
    auto& G = bundle.generator();
    auto& S = bundle.segmentor();
    const Var images = Var::constant(batch.images);
    const Var recon = G(images);
    const Var seg_fake = S(recon, true);
    const Var loss_g = losses::generator_loss_ssl_sup(seg_fake, batch.masks, recon, images, config.weights);
    const auto s_params = S.store().parameter_vars();
    backward(loss_g, concat(G.store().parameter_vars(), s_params));
    fire(hooks.after_backward, Phase::generator, bundle);
    bundle.adam_generator().step();
    fire(hooks.after_step, Phase::generator, bundle);

    const Var loss_s = losses::segmentor_loss_paired(S(images, true), seg_fake, batch.masks);
    backward(loss_s, s_params);
    fire(hooks.after_backward, Phase::segmentor, bundle);
    bundle.adam_segmentor().step();
    fire(hooks.after_step, Phase::segmentor, bundle);
    return {loss_g.item(), loss_s.item(), std::nullopt};
}

StepLosses ssl_unsupervised_step(ModelBundle& bundle, const TrainConfig& config, const TensorF& batch_images,
                                 const TrainHooks& hooks) {
    if (batch_images.n() < 2) throw std::invalid_argument("unsupervised step needs at least two images");
    bundle.zero_grad();
    auto& G = bundle.generator();
    auto& S = bundle.segmentor();
    auto& D = bundle.discriminator();
    const Var images = Var::constant(batch_images);
    const Var recon = G(images);

    const Var loss_d = discriminator_update(bundle, images, recon, hooks);

    const losses::MixCoefficientSampler sampler(config.mix_distribution, config.mix_alpha);
    const std::vector<Index> partner = losses::partner_permutation(batch_images.n(), bundle.rng());
    const losses::MixCoefficients lambda = sampler.draw(bundle.rng(), batch_images.n(), config.per_sample_lambda);
    const losses::ProbabilityFn probs = [&S](const Var& x) { return ops::softmax_channels(S(x, true)); };

    const Var ict_fake = losses::ict_loss(probs, recon, partner, lambda);
    const Var loss_g = losses::generator_loss_ssl_unsup(D(recon), ict_fake, recon, images, config.weights);
    const auto s_params = S.store().parameter_vars();
    backward(loss_g, concat(G.store().parameter_vars(), s_params));
    fire(hooks.after_backward, Phase::generator, bundle);
    bundle.adam_generator().step();
    fire(hooks.after_step, Phase::generator, bundle);

    const Var ict_real = losses::ict_loss(probs, images, partner, lambda);
    const Var loss_s = losses::segmentor_loss_ssl_unsup(ict_fake, ict_real);
    backward(loss_s, s_params);
    fire(hooks.after_backward, Phase::segmentor, bundle);
    bundle.adam_segmentor().step();
    fire(hooks.after_step, Phase::segmentor, bundle);
    return {loss_g.item(), loss_s.item(), loss_d.item()};
}

StepLosses segmentor_step(ModelBundle& bundle, const data::Batch& batch, const TrainHooks& hooks) {
    bundle.zero_grad();
    auto& S = bundle.segmentor();
    const Var loss_s = losses::dice_loss(S(Var::constant(batch.images), true), batch.masks);
    backward(loss_s, S.store().parameter_vars());
    fire(hooks.after_backward, Phase::segmentor, bundle);
    bundle.adam_segmentor().step();
    fire(hooks.after_step, Phase::segmentor, bundle);
    return {std::nullopt, loss_s.item(), std::nullopt};
}

StepLosses gan_step(ModelBundle& bundle, const TrainConfig& config, const TensorF& batch_images,
                    const TrainHooks& hooks) {
    bundle.zero_grad();
    auto& G = bundle.generator();
    const Var images = Var::constant(batch_images);
    const Var recon = G(images);
    const Var loss_d = discriminator_update(bundle, images, recon, hooks);
    const Var loss_g = ops::linear_combination(
        {losses::adversarial_mse(bundle.discriminator()(recon), 1.0f), losses::l1_recon(recon, images)},
        {static_cast<float>(config.weights.lambda_adv), static_cast<float>(config.weights.lambda_l1)});
    backward(loss_g, G.store().parameter_vars());
    fire(hooks.after_backward, Phase::generator, bundle);
    bundle.adam_generator().step();
    fire(hooks.after_step, Phase::generator, bundle);
    return {loss_g.item(), std::nullopt, loss_d.item()};
}

// ---------------------------------------------------------------------------

data::Batch augment(const data::Batch& batch, const ImageAugmentation& aug, std::mt19937_64& rng) {
    data::Batch out{TensorF(batch.images.shape()), LabelBatch(batch.masks.shape())};
    const Index H = batch.images.h(), W = batch.images.w();
    const double cy = 0.5 * static_cast<double>(H - 1), cx = 0.5 * static_cast<double>(W - 1);
    for (Index n = 0; n < batch.images.n(); ++n) {
        const bool flip = uniform01(rng) < aug.flip_probability;
        const double angle = (2.0 * uniform01(rng) - 1.0) * aug.max_rotation_degrees * std::numbers::pi / 180.0;
        const double scale = 1.0 + (2.0 * uniform01(rng) - 1.0) * aug.intensity_scale;
        const double cs = std::cos(angle), sn = std::sin(angle);
        const auto src = batch.images.plane(n, 0);
        const auto msk = batch.masks.plane(n, 0);
        auto dst = out.images.plane(n, 0);
        auto dmsk = out.masks.plane(n, 0);
        for (Index r = 0; r < H; ++r)
            for (Index c = 0; c < W; ++c) {
                const double oc = flip ? static_cast<double>(W - 1 - c) : static_cast<double>(c);
                // Inverse rotation of the output coordinate about the centre.
                const double dy = static_cast<double>(r) - cy, dx = oc - cx;
                const double sy = std::clamp(cs * dy + sn * dx + cy, 0.0, static_cast<double>(H - 1));
                const double sx = std::clamp(-sn * dy + cs * dx + cx, 0.0, static_cast<double>(W - 1));
                const auto y0 = static_cast<Index>(std::floor(sy)), x0 = static_cast<Index>(std::floor(sx));
                const Index y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
                const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
                const double v = (1 - fy) * ((1 - fx) * src(y0, x0) + fx * src(y0, x1)) +
                                 fy * ((1 - fx) * src(y1, x0) + fx * src(y1, x1));
                dst(r, c) = static_cast<float>(std::clamp((v + 1.0) * scale - 1.0, -1.0, 1.0));
                dmsk(r, c) = msk(static_cast<Index>(std::lround(sy)), static_cast<Index>(std::lround(sx)));
            }
    }
    return out;
}

// ---------------------------------------------------------------------------

double validate(const LogitsFn& logits_of, const std::vector<data::LabeledSample>& validation,
                std::size_t batch_size) {
    if (validation.empty()) throw std::invalid_argument("validation set is empty");
    NoGradGuard no_grad;
    double total = 0.0;
    data::BatchIterator it(validation.size(), batch_size, false, 0, false);
    while (auto idx = it.next()) {
        const data::Batch b = data::make_batch(validation, *idx);
        const Var logits = logits_of(Var::constant(b.images));
        total += static_cast<double>(losses::dice_loss(logits, b.masks).item()) * static_cast<double>(idx->size());
    }
    return total / static_cast<double>(validation.size());
}

double validate(ModelBundle& bundle, const std::vector<data::LabeledSample>& validation, bool use_sge,
                std::size_t batch_size) {
    auto& G = bundle.generator();
    auto& S = bundle.segmentor();
    return validate([&](const Var& x) { return S(use_sge ? G(x) : x, false); }, validation, batch_size);
}

bool EarlyStopping::observe(int epoch, double value) {
    if (best_epoch_ < 0 || value < best_value_) {
        best_epoch_ = epoch;
        best_value_ = value;
        return true;
    }
    return false;
}

// ---------------------------------------------------------------------------

namespace {

struct EpochSummary {
    std::int64_t last_iteration = 0;
    std::optional<double> loss_g, loss_s, loss_d;
};

class Recorder {
public:
    Recorder(TrainHistory& history, ModelBundle& bundle) : history_(history), bundle_(bundle) {}

    void record(int epoch, const std::string& phase, const StepLosses& l) {
        for (const auto& v : {l.loss_g, l.loss_s, l.loss_d})
            if (v && !std::isfinite(*v)) diverged(epoch, l);
        if (!bundle_.all_finite()) diverged(epoch, l);
        history_.iterations.push_back({epoch, iteration_, phase, l.loss_g, l.loss_s, l.loss_d});
        accumulate(sum_g_, count_g_, l.loss_g);
        accumulate(sum_s_, count_s_, l.loss_s);
        accumulate(sum_d_, count_d_, l.loss_d);
    }
    void next_iteration() { ++iteration_; }

    EpochSummary take_summary() {
        EpochSummary s;
        s.last_iteration = iteration_;
        if (count_g_) s.loss_g = sum_g_ / count_g_;
        if (count_s_) s.loss_s = sum_s_ / count_s_;
        if (count_d_) s.loss_d = sum_d_ / count_d_;
        sum_g_ = sum_s_ = sum_d_ = 0.0;
        count_g_ = count_s_ = count_d_ = 0;
        return s;
    }

private:
    static void accumulate(double& sum, int& count, const std::optional<double>& v) {
        if (v) {
            sum += *v;
            ++count;
        }
    }
    [[noreturn]] void diverged(int epoch, const StepLosses& l) const {
        throw TrainingDiverged("non-finite value at epoch " + std::to_string(epoch) + " iteration " +
                               std::to_string(iteration_) + ": L_G=" + fmt(l.loss_g) + " L_S=" + fmt(l.loss_s) +
                               " L_D=" + fmt(l.loss_d));
    }

    TrainHistory& history_;
    ModelBundle& bundle_;
    std::int64_t iteration_ = 0;
    double sum_g_ = 0, sum_s_ = 0, sum_d_ = 0;
    int count_g_ = 0, count_s_ = 0, count_d_ = 0;
};

/// Shared epoch loop: validation at epoch 0 (initialisation) and after each
/// epoch, best-state tracking, patience-based stopping.
template <typename EpochFn>
TrainResult run_epochs(const TrainConfig& config, std::unique_ptr<ModelBundle> bundle,
                       const std::vector<data::LabeledSample>& validation, const TrainHooks& hooks,
                       EpochFn&& run_epoch) {
    TrainResult result;
    TrainHistory& history = result.history;
    Recorder recorder(history, *bundle);
    EarlyStopping stopper(config.patience);
    const bool has_generator = !bundle->config().generator.identity;

    auto evaluate = [&](int epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        if (hooks.validation_override) {
            rec.val_loss = rec.selection = hooks.validation_override(epoch, *bundle);
        } else {
            rec.val_loss = validate(*bundle, validation, false, config.validation_batch_size);
            if (has_generator) rec.val_loss_sge = validate(*bundle, validation, true, config.validation_batch_size);
            rec.selection = config.sge_for_selection && rec.val_loss_sge ? *rec.val_loss_sge : rec.val_loss;
        }
        return rec;
    };
    auto log = [&](const EpochRecord& rec, const EpochSummary& s) {
        if (!hooks.log) return;
        std::ostringstream line;
        line << "epoch=" << rec.epoch << " iter=" << s.last_iteration << " L_G=" << fmt(s.loss_g)
             << " L_S=" << fmt(s.loss_s) << " L_D=" << fmt(s.loss_d) << " val=" << fmt(rec.selection);
        hooks.log(line.str());
    };

    EpochRecord first = evaluate(0);
    first.improved = stopper.observe(0, first.selection);
    history.epochs.push_back(first);
    models::BundleState best = bundle->snapshot();
    log(first, recorder.take_summary());

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        run_epoch(epoch, *bundle, recorder);
        EpochRecord rec = evaluate(epoch);
        rec.improved = stopper.observe(epoch, rec.selection);
        if (rec.improved) best = bundle->snapshot();
        history.epochs.push_back(rec);
        log(rec, recorder.take_summary());
        if (stopper.should_stop(epoch)) {
            history.stop_reason = "no improvement for " + std::to_string(config.patience) + " epochs";
            break;
        }
    }
    if (history.stop_reason.empty()) history.stop_reason = "max_epochs";
    history.best_epoch = stopper.best_epoch();
    history.best_value = stopper.best_value();
    bundle->restore(best);
    result.bundle = std::move(bundle);
    return result;
}

void require_nonempty(const LabeledSet& set, const char* what) {
    if (set.empty()) throw std::invalid_argument(std::string(what) + " set is empty");
}

std::unique_ptr<ModelBundle> make_bundle(const TrainConfig& config, models::BundleConfig bundle_config) {
    return std::make_unique<ModelBundle>(with_optimizer(std::move(bundle_config), config));
}

std::uint64_t order_seed(const TrainConfig& config, const char* stream) { return derive_seed(config.seed, stream); }

}  // namespace

TrainResult train_grn_sel(const TrainConfig& config, const models::BundleConfig& bundle_config,
                          const LabeledSet& labeled, const LabeledSet& validation, const TrainHooks& hooks) {
    config.validate();
    if (config.mode != Mode::grn_sel) throw std::invalid_argument("train_grn_sel requires mode grn_sel");
    require_nonempty(labeled, "labeled");
    require_nonempty(validation, "validation");
    if (bundle_config.generator.identity) throw std::invalid_argument("grn_sel needs a trainable generator");
    auto bundle = make_bundle(config, bundle_config);
    data::BatchIterator order(labeled.size(), config.batch_size, true, order_seed(config, "sel-order"), false);
    return run_epochs(config, std::move(bundle), validation, hooks, [&](int epoch, ModelBundle& b, Recorder& rec) {
        order.reset(static_cast<std::size_t>(epoch));
        while (auto idx = order.next()) {
            rec.record(epoch, "sel", sel_step(b, config, data::make_batch(labeled, *idx), hooks));
            rec.next_iteration();
        }
    });
}

TrainResult train_grn_ssl(const TrainConfig& config, const models::BundleConfig& bundle_config,
                          const LabeledSet& labeled, const UnlabeledSet& unlabeled, const LabeledSet& validation,
                          const TrainHooks& hooks) {
    config.validate();
    if (config.mode != Mode::grn_ssl) throw std::invalid_argument("train_grn_ssl requires mode grn_ssl");
    require_nonempty(labeled, "labeled");
    require_nonempty(validation, "validation");
    if (unlabeled.size() < 2) throw std::invalid_argument("unlabeled set needs at least two images");
    if (bundle_config.generator.identity) throw std::invalid_argument("grn_ssl needs a trainable generator");
    auto bundle = make_bundle(config, bundle_config);
    data::BatchIterator labeled_stream(labeled.size(), config.batch_size, true, order_seed(config, "ssl-labeled"),
                                       true);
    data::BatchIterator order(unlabeled.size(), config.batch_size, true, order_seed(config, "ssl-unlabeled"), false);
    return run_epochs(config, std::move(bundle), validation, hooks, [&](int epoch, ModelBundle& b, Recorder& rec) {
        order.reset(static_cast<std::size_t>(epoch));
        std::vector<std::size_t> first;
        while (auto idx = order.next()) {
            if (first.empty()) first = *idx;
            // A trailing single image cannot form an interpolation pair;
            // pair it with the epoch's first image.
            if (idx->size() == 1) idx->push_back(first.front() == idx->front() ? first.back() : first.front());
            rec.record(epoch, "sup", ssl_supervised_step(b, config, data::make_batch(labeled, *labeled_stream.next()), hooks));
            rec.record(epoch, "unsup", ssl_unsupervised_step(b, config, data::make_image_batch(unlabeled, *idx), hooks));
            rec.next_iteration();
        }
    });
}

TrainResult train_supervised_baseline(const TrainConfig& config, const models::BundleConfig& bundle_config,
                                      const LabeledSet& labeled, const LabeledSet& validation,
                                      const TrainHooks& hooks) {
    config.validate();
    if (config.mode != Mode::supervised && config.mode != Mode::supervised_img_aug)
        throw std::invalid_argument("train_supervised_baseline requires mode supervised or supervised_img_aug");
    require_nonempty(labeled, "labeled");
    require_nonempty(validation, "validation");
    models::BundleConfig cfg = bundle_config;
    cfg.generator.identity = true;
    auto bundle = make_bundle(config, cfg);
    const bool augmenting = config.mode == Mode::supervised_img_aug;
    data::BatchIterator order(labeled.size(), config.batch_size, true, order_seed(config, "sup-order"), false);
    return run_epochs(config, std::move(bundle), validation, hooks, [&](int epoch, ModelBundle& b, Recorder& rec) {
        order.reset(static_cast<std::size_t>(epoch));
        while (auto idx = order.next()) {
            data::Batch batch = data::make_batch(labeled, *idx);
            if (augmenting) batch = augment(batch, config.augmentation, b.rng());
            rec.record(epoch, "seg", segmentor_step(b, batch, hooks));
            rec.next_iteration();
        }
    });
}

LabeledSet gan_joint_dataset(ModelBundle& bundle, const LabeledSet& labeled, std::size_t batch_size) {
    NoGradGuard no_grad;
    LabeledSet joint(labeled);
    data::BatchIterator order(labeled.size(), batch_size, false, 0, false);
    while (auto idx = order.next()) {
        std::vector<const ImageF*> imgs;
        for (auto i : *idx) imgs.push_back(&labeled[i].image);
        const Var recon = bundle.generator()(Var::constant(data::stack_images(imgs)));
        for (std::size_t k = 0; k < idx->size(); ++k) {
            data::LabeledSample s = labeled[(*idx)[k]];
            s.image = recon.value().plane(static_cast<Index>(k), 0);
            joint.push_back(std::move(s));
        }
    }
    return joint;
}

TrainResult train_gan_aug_baseline(const TrainConfig& config, const models::BundleConfig& bundle_config,
                                   const LabeledSet& labeled, const LabeledSet& validation, const TrainHooks& hooks) {
    config.validate();
    if (config.mode != Mode::gan_aug_baseline)
        throw std::invalid_argument("train_gan_aug_baseline requires mode gan_aug_baseline");
    require_nonempty(labeled, "labeled");
    require_nonempty(validation, "validation");
    if (bundle_config.generator.identity) throw std::invalid_argument("gan_aug_baseline needs a trainable generator");
    auto bundle = make_bundle(config, bundle_config);

    TrainHistory pretrain;
    {
        Recorder rec(pretrain, *bundle);
        data::BatchIterator order(labeled.size(), config.batch_size, true, order_seed(config, "gan-order"), false);
        for (int epoch = 1; epoch <= config.gan_pretrain_epochs; ++epoch) {
            order.reset(static_cast<std::size_t>(epoch));
            while (auto idx = order.next()) {
                std::vector<const ImageF*> imgs;
                for (auto i : *idx) imgs.push_back(&labeled[i].image);
                rec.record(epoch, "gan", gan_step(*bundle, config, data::stack_images(imgs), hooks));
                rec.next_iteration();
            }
            if (hooks.log) {
                const EpochSummary s = rec.take_summary();
                hooks.log("pretrain epoch=" + std::to_string(epoch) + " iter=" + std::to_string(s.last_iteration) +
                          " L_G=" + fmt(s.loss_g) + " L_D=" + fmt(s.loss_d));
            }
        }
    }

    const LabeledSet joint = gan_joint_dataset(*bundle, labeled, config.batch_size);
    data::BatchIterator order(joint.size(), config.batch_size, true, order_seed(config, "gan-seg-order"), false);
    TrainResult result =
        run_epochs(config, std::move(bundle), validation, hooks, [&](int epoch, ModelBundle& b, Recorder& rec) {
            order.reset(static_cast<std::size_t>(epoch));
            while (auto idx = order.next()) {
                rec.record(epoch, "seg", segmentor_step(b, data::make_batch(joint, *idx), hooks));
                rec.next_iteration();
            }
        });
    // Pre-training events go first and are tagged with epoch numbers <= 0.
    for (auto& r : pretrain.iterations) r.epoch -= config.gan_pretrain_epochs;
    result.history.iterations.insert(result.history.iterations.begin(), pretrain.iterations.begin(),
                                     pretrain.iterations.end());
    return result;
}

// ---------------------------------------------------------------------------

const std::map<std::string, TrainFn>& method_registry() {
    static const std::map<std::string, TrainFn> registry = {
        {"grn_sel",
         [](const TrainConfig& c, const models::BundleConfig& b, const TrainData& d, const TrainHooks& h) {
             return train_grn_sel(c, b, *d.labeled, *d.validation, h);
         }},
        {"grn_ssl",
         [](const TrainConfig& c, const models::BundleConfig& b, const TrainData& d, const TrainHooks& h) {
             if (!d.unlabeled) throw std::invalid_argument("grn_ssl needs an unlabeled set");
             return train_grn_ssl(c, b, *d.labeled, *d.unlabeled, *d.validation, h);
         }},
        {"supervised",
         [](const TrainConfig& c, const models::BundleConfig& b, const TrainData& d, const TrainHooks& h) {
             return train_supervised_baseline(c, b, *d.labeled, *d.validation, h);
         }},
        {"supervised_img_aug",
         [](const TrainConfig& c, const models::BundleConfig& b, const TrainData& d, const TrainHooks& h) {
             return train_supervised_baseline(c, b, *d.labeled, *d.validation, h);
         }},
        {"gan_aug_baseline",
         [](const TrainConfig& c, const models::BundleConfig& b, const TrainData& d, const TrainHooks& h) {
             return train_gan_aug_baseline(c, b, *d.labeled, *d.validation, h);
         }},
    };
    return registry;
}

TrainResult train(const TrainConfig& config, const models::BundleConfig& bundle_config, const TrainData& data,
                  const TrainHooks& hooks) {
    if (!data.labeled || !data.validation) throw std::invalid_argument("training needs labeled and validation sets");
    const auto& registry = method_registry();
    auto it = registry.find(mode_name(config.mode));
    if (it == registry.end()) throw std::invalid_argument(std::string("no trainer for mode ") + mode_name(config.mode));
    return it->second(config, bundle_config, data, hooks);
}

// ---------------------------------------------------------------------------

LinearProbeResult run_linear_probe(Index inputs, Index outputs, Index batch, const std::vector<Index>& noise_coords,
                                   ProbeLoss loss, int steps, std::uint64_t seed) {
    if (inputs < 1 || outputs < 1 || batch < 1 || steps < 0) throw std::invalid_argument("linear probe: bad sizes");
    if (loss == ProbeLoss::dice && outputs < 2) throw std::invalid_argument("linear probe: dice needs >= 2 outputs");
    for (Index k : noise_coords)
        if (k < 0 || k >= inputs) throw std::invalid_argument("linear probe: noise coordinate out of range");
    std::mt19937_64 rng(derive_seed(seed, "linear-probe"));
    std::normal_distribution<float> normal(0.0f, 1.0f);

    TensorF w0(outputs, inputs, 1, 1);
    for (Index i = 0; i < w0.size(); ++i) w0.data()[i] = 0.1f * normal(rng);
    Var weight = Var::parameter(w0);
    Adam adam({weight}, AdamOptions{});

    LinearProbeResult out;
    out.initial_weight = w0;
    for (int step = 0; step < steps; ++step) {
        TensorF x(batch, inputs, 1, 1);
        for (Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
        for (Index n = 0; n < batch; ++n)
            for (Index k : noise_coords) x(n, k, 0, 0) = 0.0f;
        const Var y = ops::conv2d(Var::constant(x), weight, Var(), {1, 1, 0});
        Var value;
        switch (loss) {
            case ProbeLoss::mse:
            case ProbeLoss::l1: {
                TensorF target(batch, outputs, 1, 1);
                for (Index i = 0; i < target.size(); ++i) target.data()[i] = normal(rng);
                value = loss == ProbeLoss::mse ? ops::mse(y, Var::constant(target))
                                               : losses::l1_recon(y, Var::constant(target));
                break;
            }
            case ProbeLoss::dice: {
                LabelBatch mask(batch, 1, 1, 1);
                for (Index n = 0; n < batch; ++n) mask.data()[n] = static_cast<std::int32_t>(rng() % outputs);
                value = losses::dice_loss(y, mask);
                break;
            }
            case ProbeLoss::adversarial: value = losses::adversarial_mse(y, 1.0f); break;
        }
        adam.zero_grad();
        backward(value);
        adam.step();
        out.losses.push_back(value.item());
    }
    out.final_weight = weight.value();
    return out;
}

}  // namespace grn::trainer
