#ifndef GRN_TRAINER_HPP
#define GRN_TRAINER_HPP

#include "grn/data.hpp"
#include "grn/losses.hpp"
#include "grn/models.hpp"

#include <json.hpp>

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace grn::trainer {

enum class Mode { grn_sel, grn_ssl, supervised, supervised_img_aug, gan_aug_baseline };
enum class Ablation { none, no_seg_feedback, negated_seg_feedback, freeze_segmentor_for_LG };

const char* mode_name(Mode m);
Mode parse_mode(const std::string& s);
const char* ablation_name(Ablation a);
Ablation parse_ablation(const std::string& s);

/// Geometric and intensity augmentation for the image-augmentation baseline.
struct ImageAugmentation {
    double flip_probability = 0.5;
    double max_rotation_degrees = 10.0;
    /// Relative intensity scaling range, applied on the [0, 1] scale.
    double intensity_scale = 0.1;
};

struct TrainConfig {
    Mode mode = Mode::grn_sel;
    Ablation ablation = Ablation::none;
    std::size_t batch_size = 8;
    int max_epochs = 50;
    int patience = 5;
    double learning_rate = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    losses::LossWeights weights;
    bool sge_for_selection = false;
    /// Data order; network initialisation comes from the bundle seed.
    std::uint64_t seed = 0;
    losses::MixDistribution mix_distribution = losses::MixDistribution::uniform;
    double mix_alpha = 1.0;
    bool per_sample_lambda = false;
    ImageAugmentation augmentation;
    /// Stage-1 epochs of the GAN-augmentation baseline.
    int gan_pretrain_epochs = 10;
    std::size_t validation_batch_size = 8;

    void validate() const;
    AdamOptions adam() const;
    losses::SegFeedback feedback() const;
};

/// Updates the optimizer section of a bundle config from the training config.
models::BundleConfig with_optimizer(models::BundleConfig bundle, const TrainConfig& config);

struct IterationRecord {
    int epoch = 0;
    std::int64_t iteration = 0;
    std::string phase;  ///< "sel", "sup", "unsup", "seg", "gan"
    std::optional<double> loss_g, loss_s, loss_d;
};

struct EpochRecord {
    int epoch = 0;
    double val_loss = 0.0;
    std::optional<double> val_loss_sge;
    double selection = 0.0;
    bool improved = false;
};

struct TrainHistory {
    std::vector<IterationRecord> iterations;
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_value = 0.0;
    std::string stop_reason;

    /// One JSON object per line: iteration events, epoch events, summary.
    std::string to_jsonl() const;
};

enum class Phase { discriminator, generator, segmentor };
const char* phase_name(Phase p);

/// Instrumentation seams. `after_backward` fires once gradients for a
/// phase are populated and before that phase's optimizer step;
/// `after_step` fires right after the step.
struct TrainHooks {
    std::function<void(Phase, models::ModelBundle&)> after_backward;
    std::function<void(Phase, models::ModelBundle&)> after_step;
    /// Replaces the computed selection metric for an epoch (epoch 0 is the
    /// initialisation).
    std::function<double(int epoch, models::ModelBundle&)> validation_override;
    std::function<void(const std::string&)> log;
};

/// Thrown when a loss or parameter turns non-finite.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct StepLosses {
    std::optional<double> loss_g, loss_s, loss_d;
};

// Single-iteration updates. Each zeroes gradients first and uses the
// bundle RNG for any sampling, so a restored bundle continues identically.

/// D step on detached G(I); L_G through S into G; L_S; steps D, G, S.
StepLosses sel_step(models::ModelBundle& bundle, const TrainConfig& config, const data::Batch& batch,
                    const TrainHooks& hooks = {});
/// Supervised phase: L_G (dice + L1) through S into G, then L_S; steps G, S.
StepLosses ssl_supervised_step(models::ModelBundle& bundle, const TrainConfig& config, const data::Batch& batch,
                               const TrainHooks& hooks = {});
/// Unsupervised phase: D step, L_G with reconstructed-branch ICT, then the
/// two-branch ICT segmentor loss; steps D, G, S.
StepLosses ssl_unsupervised_step(models::ModelBundle& bundle, const TrainConfig& config, const TensorF& images,
                                 const TrainHooks& hooks = {});
/// Dice loss on S alone.
StepLosses segmentor_step(models::ModelBundle& bundle, const data::Batch& batch, const TrainHooks& hooks = {});
/// Plain reconstruction GAN (no segmentation term); steps D, G.
StepLosses gan_step(models::ModelBundle& bundle, const TrainConfig& config, const TensorF& images,
                    const TrainHooks& hooks = {});

/// Flip, rotation (bilinear image, nearest mask) and intensity scaling.
data::Batch augment(const data::Batch& batch, const ImageAugmentation& aug, std::mt19937_64& rng);

using LogitsFn = std::function<Var(const Var& images)>;

/// Mean dice loss over all validation images, evaluated batch-wise.
double validate(const LogitsFn& logits_of, const std::vector<data::LabeledSample>& validation,
                std::size_t batch_size = 8);
/// Eval-mode S(x), or S(G(x)) with SGE.
double validate(models::ModelBundle& bundle, const std::vector<data::LabeledSample>& validation, bool use_sge,
                std::size_t batch_size = 8);

/// Patience-based model selection on a lower-is-better metric.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}
    /// Returns true when the value strictly improves on the best so far.
    bool observe(int epoch, double value);
    bool should_stop(int epoch) const { return epoch - best_epoch_ >= patience_; }
    int best_epoch() const { return best_epoch_; }
    double best_value() const { return best_value_; }

private:
    int patience_;
    int best_epoch_ = -1;
    double best_value_ = 0.0;
};

struct TrainResult {
    std::unique_ptr<models::ModelBundle> bundle;
    TrainHistory history;
};

using LabeledSet = std::vector<data::LabeledSample>;
using UnlabeledSet = std::vector<data::ImageSample>;

TrainResult train_grn_sel(const TrainConfig& config, const models::BundleConfig& bundle_config,
                          const LabeledSet& labeled, const LabeledSet& validation, const TrainHooks& hooks = {});
TrainResult train_grn_ssl(const TrainConfig& config, const models::BundleConfig& bundle_config,
                          const LabeledSet& labeled, const UnlabeledSet& unlabeled, const LabeledSet& validation,
                          const TrainHooks& hooks = {});
/// Segmentor only; the bundle's generator is the identity. Augments
/// batches when the mode is supervised_img_aug.
TrainResult train_supervised_baseline(const TrainConfig& config, const models::BundleConfig& bundle_config,
                                      const LabeledSet& labeled, const LabeledSet& validation,
                                      const TrainHooks& hooks = {});
/// Originals followed by their reconstructions under the current G.
LabeledSet gan_joint_dataset(models::ModelBundle& bundle, const LabeledSet& labeled, std::size_t batch_size = 8);
/// Stage 1 pre-trains G and D; stage 2 freezes G and trains S on the
/// union of originals and reconstructions.
TrainResult train_gan_aug_baseline(const TrainConfig& config, const models::BundleConfig& bundle_config,
                                   const LabeledSet& labeled, const LabeledSet& validation,
                                   const TrainHooks& hooks = {});

struct TrainData {
    const LabeledSet* labeled = nullptr;
    const UnlabeledSet* unlabeled = nullptr;
    const LabeledSet* validation = nullptr;
};

using TrainFn = std::function<TrainResult(const TrainConfig&, const models::BundleConfig&, const TrainData&,
                                          const TrainHooks&)>;

/// Trainers by mode name; the harness dispatches through this table.
const std::map<std::string, TrainFn>& method_registry();
TrainResult train(const TrainConfig& config, const models::BundleConfig& bundle_config, const TrainData& data,
                  const TrainHooks& hooks = {});

// ---------------------------------------------------------------------------
// Linear probe: y = W x trained with Adam on inputs whose noise coordinates
// are identically zero.

enum class ProbeLoss { mse, l1, dice, adversarial };

struct LinearProbeResult {
    TensorF initial_weight;  ///< out x in x 1 x 1
    TensorF final_weight;
    std::vector<double> losses;
};

LinearProbeResult run_linear_probe(Index inputs, Index outputs, Index batch, const std::vector<Index>& noise_coords,
                                   ProbeLoss loss, int steps, std::uint64_t seed);

}  // namespace grn::trainer

#endif  // GRN_TRAINER_HPP
