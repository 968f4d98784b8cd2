#ifndef GRN_MODELS_HPP
#define GRN_MODELS_HPP

#include "grn/nn.hpp"
#include "grn/optim.hpp"

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace grn::models {

/// Input extent violates a network's spatial preconditions.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

struct SegmentorConfig {
    Index in_channels = 1;
    int class_count = 7;
    std::vector<Index> encoder_channels = {16, 32, 64, 128, 256};

    void validate() const;
    /// H and W must be multiples of this (one halving per pooling stage).
    Index divisor() const { return Index{1} << (encoder_channels.size() - 1); }
    bool operator==(const SegmentorConfig&) const = default;
};

struct GeneratorConfig {
    Index base_channels = 32;
    int downsample_stages = 3;
    int residual_blocks_per_stage = 2;
    /// Add encoder features to the decoder at matching resolutions.
    bool skip_connections = false;
    /// Pass-through generator with no parameters (supervised baselines, stubs).
    bool identity = false;

    void validate() const;
    Index divisor() const { return Index{1} << downsample_stages; }
    bool operator==(const GeneratorConfig&) const = default;
};

struct DiscriminatorConfig {
    /// Kernel 4 throughout; stride 2 for all but the last listed layer,
    /// which uses stride 1, followed by a stride-1 projection to one channel.
    std::vector<Index> layer_channels = {64, 128, 256, 512};

    void validate() const;
    Index receptive_field() const;
    /// Spatial extent of the patch map for an input extent.
    Index output_size(Index input) const;
    bool operator==(const DiscriminatorConfig&) const = default;
};

/// U-Net: DoubleConv blocks (conv3-BN-ReLU x2), max-pool down, transposed
/// conv up with concatenated skips, 1x1 head.
class Segmentor {
public:
    Segmentor(const SegmentorConfig& config, std::uint64_t seed);
    Segmentor(const Segmentor&) = delete;
    Segmentor& operator=(const Segmentor&) = delete;

    /// Logits B x C x H x W. Training mode uses batch statistics and
    /// updates the running ones.
    Var forward(const Var& images, bool training);
    Var operator()(const Var& images, bool training) { return forward(images, training); }

    const SegmentorConfig& config() const { return config_; }
    nn::ParameterStore& store() { return store_; }
    const nn::ParameterStore& store() const { return store_; }

private:
    struct DoubleConv {
        nn::Conv2d conv1, conv2;
        nn::BatchNorm2d bn1, bn2;
        Var operator()(const Var& x, bool training);
    };

    SegmentorConfig config_;
    nn::ParameterStore store_;
    std::vector<DoubleConv> down_;
    std::vector<nn::ConvTranspose2d> up_;
    std::vector<DoubleConv> merge_;
    nn::Conv2d head_;
};

/// Residual encoder / transposed-convolution decoder with tanh output.
class Generator {
public:
    Generator(const GeneratorConfig& config, std::uint64_t seed);
    Generator(const Generator&) = delete;
    Generator& operator=(const Generator&) = delete;

    /// Reconstruction B x 1 x H x W in [-1, 1].
    Var forward(const Var& images);
    Var operator()(const Var& images) { return forward(images); }

    const GeneratorConfig& config() const { return config_; }
    nn::ParameterStore& store() { return store_; }
    const nn::ParameterStore& store() const { return store_; }

private:
    struct ResidualBlock {
        nn::Conv2d conv1, conv2;
    };

    GeneratorConfig config_;
    nn::ParameterStore store_;
    nn::Conv2d stem_;
    std::vector<nn::Conv2d> down_;
    std::vector<std::vector<ResidualBlock>> blocks_;
    std::vector<nn::ConvTranspose2d> up_;
    nn::Conv2d out_;
};

/// Patch classifier producing an unbounded real/fake score map.
class Discriminator {
public:
    Discriminator(const DiscriminatorConfig& config, std::uint64_t seed);
    Discriminator(const Discriminator&) = delete;
    Discriminator& operator=(const Discriminator&) = delete;

    Var forward(const Var& images);
    Var operator()(const Var& images) { return forward(images); }

    const DiscriminatorConfig& config() const { return config_; }
    nn::ParameterStore& store() { return store_; }
    const nn::ParameterStore& store() const { return store_; }

private:
    DiscriminatorConfig config_;
    nn::ParameterStore store_;
    std::vector<nn::Conv2d> layers_;
    nn::Conv2d out_;
};

struct BundleConfig {
    SegmentorConfig segmentor;
    GeneratorConfig generator;
    DiscriminatorConfig discriminator;
    AdamOptions optimizer;
    std::uint64_t seed = 0;

    bool operator==(const BundleConfig& o) const {
        return segmentor == o.segmentor && generator == o.generator && discriminator == o.discriminator &&
               optimizer.learning_rate == o.optimizer.learning_rate && optimizer.beta1 == o.optimizer.beta1 &&
               optimizer.beta2 == o.optimizer.beta2 && optimizer.eps == o.optimizer.eps && seed == o.seed;
    }
};

/// Full mutable state of a bundle, detached from the live networks.
struct BundleState {
    nn::StateDict generator, segmentor, discriminator;
    AdamState adam_generator, adam_segmentor, adam_discriminator;
    std::int64_t steps_generator = 0, steps_segmentor = 0, steps_discriminator = 0;
    std::string rng;
};

/// G, S, D with one Adam each and the training RNG.
class ModelBundle {
public:
    explicit ModelBundle(const BundleConfig& config);
    ModelBundle(const ModelBundle&) = delete;
    ModelBundle& operator=(const ModelBundle&) = delete;

    const BundleConfig& config() const { return config_; }
    Generator& generator() { return generator_; }
    Segmentor& segmentor() { return segmentor_; }
    Discriminator& discriminator() { return discriminator_; }
    Adam& adam_generator() { return adam_g_; }
    Adam& adam_segmentor() { return adam_s_; }
    Adam& adam_discriminator() { return adam_d_; }
    std::mt19937_64& rng() { return rng_; }

    BundleState snapshot() const;
    void restore(const BundleState& state);

    void zero_grad();
    bool all_finite() const;

    /// Checks an input batch against the preconditions of every network
    /// that will see it; D and G are skipped for an identity generator.
    void check_input(const Shape4& shape) const;

private:
    BundleConfig config_;
    Generator generator_;
    Segmentor segmentor_;
    Discriminator discriminator_;
    Adam adam_g_, adam_s_, adam_d_;
    std::mt19937_64 rng_;
};

Index parameter_count(const SegmentorConfig& config);
Index parameter_count(const GeneratorConfig& config);
Index parameter_count(const DiscriminatorConfig& config);

std::string rng_to_string(const std::mt19937_64& rng);
void rng_from_string(std::mt19937_64& rng, const std::string& text);

}  // namespace grn::models

#endif  // GRN_MODELS_HPP
