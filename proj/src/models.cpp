#include "grn/models.hpp"

#include "grn/random.hpp"

#include <sstream>

namespace grn::models {

namespace {

constexpr float kLeakySlope = 0.2f;
constexpr float kInstanceNormEps = 1e-5f;

void check_divisible(const Shape4& s, Index divisor, const char* who) {
    if (s.c != 1) throw ShapeError(std::string(who) + ": expected a single-channel input, got " + s.str());
    if (s.h % divisor != 0 || s.w % divisor != 0)
        throw ShapeError(std::string(who) + ": input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " must have H and W divisible by " + std::to_string(divisor));
}

}  // namespace

void SegmentorConfig::validate() const {
    if (in_channels != 1) throw std::invalid_argument("segmentor: only single-channel input is supported");
    if (class_count < 2) throw std::invalid_argument("segmentor: class_count must be >= 2");
    if (encoder_channels.size() < 2) throw std::invalid_argument("segmentor: need at least two encoder levels");
    for (std::size_t i = 0; i < encoder_channels.size(); ++i) {
        if (encoder_channels[i] < 1) throw std::invalid_argument("segmentor: channels must be positive");
        if (i && encoder_channels[i] <= encoder_channels[i - 1])
            throw std::invalid_argument("segmentor: encoder_channels must be strictly increasing");
    }
}

void GeneratorConfig::validate() const {
    if (identity) return;
    if (base_channels < 1) throw std::invalid_argument("generator: base_channels must be positive");
    if (downsample_stages < 1 || downsample_stages > 8)
        throw std::invalid_argument("generator: downsample_stages must be in [1, 8]");
    if (residual_blocks_per_stage < 0) throw std::invalid_argument("generator: negative residual block count");
}

void DiscriminatorConfig::validate() const {
    if (layer_channels.empty()) throw std::invalid_argument("discriminator: need at least one layer");
    for (Index c : layer_channels)
        if (c < 1) throw std::invalid_argument("discriminator: channels must be positive");
}

Index DiscriminatorConfig::receptive_field() const {
    // Walk back from one output pixel: r <- (r - 1) * stride + kernel.
    Index r = 4;  // final stride-1 projection
    for (std::size_t i = layer_channels.size(); i-- > 0;) {
        const Index stride = i + 1 == layer_channels.size() ? 1 : 2;
        r = (r - 1) * stride + 4;
    }
    return r;
}

Index DiscriminatorConfig::output_size(Index input) const {
    Index s = input;
    for (std::size_t i = 0; i < layer_channels.size(); ++i) {
        const int stride = i + 1 == layer_channels.size() ? 1 : 2;
        s = ops::conv_output_size(s, {4, stride, 1});
    }
    return ops::conv_output_size(s, {4, 1, 1});
}

// ---------------------------------------------------------------------------

Var Segmentor::DoubleConv::operator()(const Var& x, bool training) {
    Var y = ops::relu(bn1(conv1(x), training));
    return ops::relu(bn2(conv2(y), training));
}

Segmentor::Segmentor(const SegmentorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(derive_seed(seed, "segmentor"));
    const auto& ch = config_.encoder_channels;
    const ops::ConvGeometry k3{3, 1, 1};
    auto double_conv = [&](const std::string& name, Index cin, Index cout) {
        DoubleConv d;
        d.conv1 = nn::Conv2d(store_, name + ".conv1", cin, cout, k3, nn::Init::fan_in, rng, false);
        d.bn1 = nn::BatchNorm2d(store_, name + ".bn1", cout);
        d.conv2 = nn::Conv2d(store_, name + ".conv2", cout, cout, k3, nn::Init::fan_in, rng, false);
        d.bn2 = nn::BatchNorm2d(store_, name + ".bn2", cout);
        return d;
    };
    Index cin = config_.in_channels;
    for (std::size_t i = 0; i < ch.size(); ++i) {
        down_.push_back(double_conv("down" + std::to_string(i), cin, ch[i]));
        cin = ch[i];
    }
    for (std::size_t i = ch.size() - 1; i-- > 0;) {
        up_.push_back(nn::ConvTranspose2d(store_, "up" + std::to_string(i), ch[i + 1], ch[i], {2, 2, 0},
                                          nn::Init::fan_in, rng));
        merge_.push_back(double_conv("merge" + std::to_string(i), 2 * ch[i], ch[i]));
    }
    head_ = nn::Conv2d(store_, "head", ch[0], config_.class_count, {1, 1, 0}, nn::Init::fan_in, rng);
}

Var Segmentor::forward(const Var& images, bool training) {
    check_divisible(images.shape(), config_.divisor(), "segmentor");
    std::vector<Var> skips;
    Var x = images;
    for (std::size_t i = 0; i < down_.size(); ++i) {
        x = down_[i](x, training);
        if (i + 1 < down_.size()) {
            skips.push_back(x);
            x = ops::max_pool2x2(x);
        }
    }
    for (std::size_t j = 0; j < up_.size(); ++j) {
        x = up_[j](x);
        x = merge_[j](ops::concat_channels(skips[skips.size() - 1 - j], x), training);
    }
    return head_(x);
}

// ---------------------------------------------------------------------------

Generator::Generator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    if (config_.identity) return;
    std::mt19937_64 rng(derive_seed(seed, "generator"));
    const Index base = config_.base_channels;
    const auto init = nn::Init::normal_002;
    const ops::ConvGeometry k3{3, 1, 1}, k4s2{4, 2, 1};
    // Convolutions followed by instance norm carry no bias: IN would cancel it.
    stem_ = nn::Conv2d(store_, "stem", 1, base, k3, init, rng, false);
    for (int i = 1; i <= config_.downsample_stages; ++i) {
        const Index cin = base << (i - 1), cout = base << i;
        down_.push_back(nn::Conv2d(store_, "down" + std::to_string(i), cin, cout, k4s2, init, rng, false));
        std::vector<ResidualBlock> blocks;
        for (int b = 0; b < config_.residual_blocks_per_stage; ++b) {
            const std::string name = "res" + std::to_string(i) + "_" + std::to_string(b);
            blocks.push_back({nn::Conv2d(store_, name + ".conv1", cout, cout, k3, init, rng, false),
                              nn::Conv2d(store_, name + ".conv2", cout, cout, k3, init, rng, false)});
        }
        blocks_.push_back(std::move(blocks));
    }
    for (int i = config_.downsample_stages; i >= 1; --i)
        up_.push_back(nn::ConvTranspose2d(store_, "up" + std::to_string(i), base << i, base << (i - 1), k4s2, init,
                                          rng, false));
    out_ = nn::Conv2d(store_, "out", base, 1, k3, init, rng, true);
}

Var Generator::forward(const Var& images) {
    if (config_.identity) return images;
    check_divisible(images.shape(), config_.divisor(), "generator");
    auto in_relu = [](const Var& v) { return ops::relu(ops::instance_norm(v, kInstanceNormEps)); };
    Var x = in_relu(stem_(images));
    std::vector<Var> skips{x};
    for (std::size_t i = 0; i < down_.size(); ++i) {
        x = in_relu(down_[i](x));
        for (const auto& b : blocks_[i]) {
            Var r = ops::instance_norm(b.conv2(in_relu(b.conv1(x))), kInstanceNormEps);
            x = ops::add(x, r);
        }
        skips.push_back(x);
    }
    for (std::size_t j = 0; j < up_.size(); ++j) {
        x = in_relu(up_[j](x));
        if (config_.skip_connections) x = ops::add(x, skips[skips.size() - 2 - j]);
    }
    return ops::tanh(out_(x));
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const DiscriminatorConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(derive_seed(seed, "discriminator"));
    Index cin = 1;
    const auto& ch = config_.layer_channels;
    for (std::size_t i = 0; i < ch.size(); ++i) {
        const int stride = i + 1 == ch.size() ? 1 : 2;
        // The first layer has no normalisation and keeps its bias.
        layers_.push_back(nn::Conv2d(store_, "layer" + std::to_string(i), cin, ch[i], {4, stride, 1},
                                     nn::Init::normal_002, rng, i == 0));
        cin = ch[i];
    }
    out_ = nn::Conv2d(store_, "out", cin, 1, {4, 1, 1}, nn::Init::normal_002, rng, true);
}

Var Discriminator::forward(const Var& images) {
    const Shape4& s = images.shape();
    const Index rf = config_.receptive_field();
    if (s.c != 1) throw ShapeError("discriminator: expected a single-channel input, got " + s.str());
    if (s.h < rf || s.w < rf)
        throw ShapeError("discriminator: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                         " is smaller than the receptive field " + std::to_string(rf));
    Var x = images;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        x = layers_[i](x);
        if (i > 0) x = ops::instance_norm(x, kInstanceNormEps);
        x = ops::leaky_relu(x, kLeakySlope);
    }
    return out_(x);
}

// ---------------------------------------------------------------------------

ModelBundle::ModelBundle(const BundleConfig& config)
    : config_(config),
      generator_(config.generator, config.seed),
      segmentor_(config.segmentor, config.seed),
      discriminator_(config.discriminator, config.seed),
      adam_g_(generator_.store().parameter_vars(), config.optimizer),
      adam_s_(segmentor_.store().parameter_vars(), config.optimizer),
      adam_d_(discriminator_.store().parameter_vars(), config.optimizer),
      rng_(derive_seed(config.seed, "bundle-rng")) {}

BundleState ModelBundle::snapshot() const {
    BundleState s;
    s.generator = generator_.store().state_dict();
    s.segmentor = segmentor_.store().state_dict();
    s.discriminator = discriminator_.store().state_dict();
    s.adam_generator = adam_g_.state();
    s.adam_segmentor = adam_s_.state();
    s.adam_discriminator = adam_d_.state();
    s.steps_generator = adam_g_.total_steps();
    s.steps_segmentor = adam_s_.total_steps();
    s.steps_discriminator = adam_d_.total_steps();
    s.rng = rng_to_string(rng_);
    return s;
}

void ModelBundle::restore(const BundleState& s) {
    generator_.store().load_state_dict(s.generator);
    segmentor_.store().load_state_dict(s.segmentor);
    discriminator_.store().load_state_dict(s.discriminator);
    adam_g_.load_state(s.adam_generator, s.steps_generator);
    adam_s_.load_state(s.adam_segmentor, s.steps_segmentor);
    adam_d_.load_state(s.adam_discriminator, s.steps_discriminator);
    rng_from_string(rng_, s.rng);
    zero_grad();
}

void ModelBundle::zero_grad() {
    generator_.store().zero_grad();
    segmentor_.store().zero_grad();
    discriminator_.store().zero_grad();
}

bool ModelBundle::all_finite() const {
    return generator_.store().all_finite() && segmentor_.store().all_finite() && discriminator_.store().all_finite();
}

void ModelBundle::check_input(const Shape4& shape) const {
    check_divisible(shape, config_.segmentor.divisor(), "segmentor");
    if (config_.generator.identity) return;
    check_divisible(shape, config_.generator.divisor(), "generator");
    const Index rf = config_.discriminator.receptive_field();
    if (shape.h < rf || shape.w < rf)
        throw ShapeError("discriminator: input " + std::to_string(shape.h) + "x" + std::to_string(shape.w) +
                         " is smaller than the receptive field " + std::to_string(rf));
}

Index parameter_count(const SegmentorConfig& config) { return Segmentor(config, 0).store().parameter_count(); }
Index parameter_count(const GeneratorConfig& config) { return Generator(config, 0).store().parameter_count(); }
Index parameter_count(const DiscriminatorConfig& config) {
    return Discriminator(config, 0).store().parameter_count();
}

std::string rng_to_string(const std::mt19937_64& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& text) {
    std::istringstream in(text);
    in >> rng;
    if (in.fail()) throw std::runtime_error("corrupt RNG state");
}

}  // namespace grn::models
