#ifndef GRN_INFERENCE_HPP
#define GRN_INFERENCE_HPP

#include "grn/models.hpp"
#include "grn/png_io.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace grn::inference {

/// Optional edit applied to logits before argmax (testing seam).
using LogitsHook = std::function<void(TensorF& logits)>;

struct PredictionRequest {
    std::vector<ImageF> images;
    bool use_sge = false;
    bool emit_probabilities = false;
};

/// Per-pixel argmax of one batch element; ties go to the lowest class.
LabelImage argmax_classes(const TensorF& logits, Index n);

/// Eval-mode logits of S(x), or S(G(x)) with SGE. Never records history.
TensorF predict_logits(models::ModelBundle& bundle, const TensorF& images, bool use_sge);

LabelImage predict(models::ModelBundle& bundle, const ImageF& image, bool use_sge, const LogitsHook& hook = {});

struct StackPrediction {
    std::vector<LabelImage> masks;
    /// C x H x W softmax maps per slice when requested.
    std::vector<TensorF> probabilities;
    std::vector<double> seconds;
};

/// Slice-wise prediction preserving order.
StackPrediction predict_stack(models::ModelBundle& bundle, const std::vector<ImageF>& slices, bool use_sge,
                              bool emit_probabilities = false);
StackPrediction run(models::ModelBundle& bundle, const PredictionRequest& request);

using Color = std::array<std::uint8_t, 3>;
using Palette = std::vector<Color>;

Palette default_palette();

/// Grayscale image in [-1, 1] with non-background classes alpha-blended in
/// their palette colour. Class 0 is left unblended.
io::RgbImage render_overlay(const ImageF& image, const LabelImage& mask, const Palette& palette, int class_count,
                            double alpha = 0.45);
void export_overlay(const ImageF& image, const LabelImage& mask, const Palette& palette, int class_count,
                    const std::filesystem::path& path, double alpha = 0.45);

/// `<stem>_pred.png` inside out_dir.
std::filesystem::path prediction_path(const std::filesystem::path& image_path, const std::filesystem::path& out_dir);

/// Writes the class-index PNG and a `<stem>_pred.json` sidecar carrying the
/// checkpoint hash, SGE flag and timing.
void write_prediction(const LabelImage& mask, const std::filesystem::path& path, const std::string& checkpoint_hash,
                      bool use_sge, double seconds);

}  // namespace grn::inference

#endif  // GRN_INFERENCE_HPP
