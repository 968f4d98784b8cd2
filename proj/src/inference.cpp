#include "grn/inference.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

namespace grn::inference {

namespace fs = std::filesystem;

LabelImage argmax_classes(const TensorF& logits, Index n) {
    const Index C = logits.c();
    LabelImage out(logits.h(), logits.w());
    for (Index r = 0; r < logits.h(); ++r)
        for (Index col = 0; col < logits.w(); ++col) {
            std::int32_t best = 0;
            float best_value = logits(n, 0, r, col);
            for (Index c = 1; c < C; ++c) {
                const float v = logits(n, c, r, col);
                if (v > best_value) {
                    best_value = v;
                    best = static_cast<std::int32_t>(c);
                }
            }
            out(r, col) = best;
        }
    return out;
}

TensorF predict_logits(models::ModelBundle& bundle, const TensorF& images, bool use_sge) {
    NoGradGuard no_grad;
    bundle.check_input(images.shape());
    Var x = Var::constant(images);
    if (use_sge) x = bundle.generator()(x);
    return bundle.segmentor()(x, false).value();
}

LabelImage predict(models::ModelBundle& bundle, const ImageF& image, bool use_sge, const LogitsHook& hook) {
    TensorF batch(1, 1, image.rows(), image.cols());
    batch.plane(0, 0) = image;
    TensorF logits = predict_logits(bundle, batch, use_sge);
    if (hook) hook(logits);
    return argmax_classes(logits, 0);
}

StackPrediction predict_stack(models::ModelBundle& bundle, const std::vector<ImageF>& slices, bool use_sge,
                              bool emit_probabilities) {
    StackPrediction out;
    for (const ImageF& slice : slices) {
        const auto t0 = std::chrono::steady_clock::now();
        TensorF batch(1, 1, slice.rows(), slice.cols());
        batch.plane(0, 0) = slice;
        const TensorF logits = predict_logits(bundle, batch, use_sge);
        out.masks.push_back(argmax_classes(logits, 0));
        if (emit_probabilities) {
            NoGradGuard no_grad;
            const TensorF p = ops::softmax_channels(Var::constant(logits)).value();
            out.probabilities.push_back(p);
        }
        out.seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return out;
}

StackPrediction run(models::ModelBundle& bundle, const PredictionRequest& request) {
    return predict_stack(bundle, request.images, request.use_sge, request.emit_probabilities);
}

Palette default_palette() {
    return {{0, 0, 0},     {230, 25, 75},  {60, 180, 75},  {255, 225, 25}, {0, 130, 200},
            {245, 130, 48}, {145, 30, 180}, {70, 240, 240}, {240, 50, 230}, {210, 245, 60}};
}

io::RgbImage render_overlay(const ImageF& image, const LabelImage& mask, const Palette& palette, int class_count,
                            double alpha) {
    if (static_cast<int>(palette.size()) < class_count)
        throw std::invalid_argument("palette has " + std::to_string(palette.size()) + " colours, need " +
                                    std::to_string(class_count));
    if (image.rows() != mask.rows() || image.cols() != mask.cols())
        throw std::invalid_argument("overlay: image and mask sizes differ");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("overlay: alpha outside [0, 1]");
    io::RgbImage out(image.rows(), image.cols());
    for (Index r = 0; r < image.rows(); ++r)
        for (Index c = 0; c < image.cols(); ++c) {
            const double gray = std::clamp((static_cast<double>(image(r, c)) + 1.0) * 127.5, 0.0, 255.0);
            const int k = mask(r, c);
            if (k < 0 || k >= class_count) throw std::invalid_argument("overlay: mask value outside [0, C)");
            std::uint8_t* px = out.at(r, c);
            for (int ch = 0; ch < 3; ++ch) {
                const double v = k == 0 ? gray : (1.0 - alpha) * gray + alpha * palette[k][ch];
                px[ch] = static_cast<std::uint8_t>(std::lround(v));
            }
        }
    return out;
}

void export_overlay(const ImageF& image, const LabelImage& mask, const Palette& palette, int class_count,
                    const fs::path& path, double alpha) {
    io::write_rgb_png(path, render_overlay(image, mask, palette, class_count, alpha));
}

fs::path prediction_path(const fs::path& image_path, const fs::path& out_dir) {
    return out_dir / (image_path.stem().string() + "_pred.png");
}

void write_prediction(const LabelImage& mask, const fs::path& path, const std::string& checkpoint_hash, bool use_sge,
                      double seconds) {
    if ((mask.array() < 0).any() || (mask.array() > 255).any())
        throw std::invalid_argument("mask values do not fit an 8-bit PNG");
    io::write_gray8_png(path, mask.cast<std::uint8_t>());
    fs::path sidecar = path;
    sidecar.replace_extension(".json");
    std::ofstream out(sidecar);
    if (!out) throw std::runtime_error("cannot write " + sidecar.string());
    out << nlohmann::json{{"checkpoint_hash", checkpoint_hash}, {"use_sge", use_sge}, {"seconds", seconds}}.dump(1)
        << "\n";
}

}  // namespace grn::inference
