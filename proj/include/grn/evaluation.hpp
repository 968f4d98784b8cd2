#ifndef GRN_EVALUATION_HPP
#define GRN_EVALUATION_HPP

#include "grn/tensor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace grn::evaluation {

using BinaryMask = Image<std::uint8_t>;
using Pixel = std::pair<Index, Index>;  ///< (row, col)

/// A metric value with its empty-mask status. `defined` is false only when
/// both prediction and reference are empty for the class; such entries are
/// left out of means. `one_side_empty` marks sentinel/zero values that are
/// still averaged.
struct Metric {
    double value = 0.0;
    bool defined = true;
    bool one_side_empty = false;
};

BinaryMask class_mask(const LabelImage& labels, int class_id);

/// Foreground pixels with a background or out-of-bounds 4-neighbour,
/// in row-major order.
std::vector<Pixel> extract_surface(const BinaryMask& mask);

/// Exact Euclidean distance from every pixel to the nearest nonzero pixel
/// of `targets`. +inf everywhere when there are none.
Image<double> distance_transform(const BinaryMask& targets);

/// Linear interpolation between closest ranks, q in [0, 100].
double percentile(std::vector<double> values, double q);

// Class ids must lie in [0, class_count); masks must share a shape.
Metric dsc(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count);
Metric iou(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count);
Metric hd95(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count);
Metric asd(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count);

/// Directed surface distances d(a -> B) for every surface pixel of a.
std::vector<double> surface_distances(const BinaryMask& from, const BinaryMask& to);

struct ClassMetrics {
    int class_id = 0;
    Metric dsc, iou, hd95, asd;
};

struct ImageMetrics {
    std::string id;
    std::vector<ClassMetrics> classes;  ///< indexed by class id
};

ImageMetrics evaluate_image(const std::string& id, const LabelImage& pred, const LabelImage& gt, int class_count);

/// Mean with a Student-t 95% interval; bounds are absent when n < 2.
struct Interval {
    double mean = 0.0;
    std::optional<double> lower, upper;
    std::size_t n = 0;

    std::optional<double> half_width() const;
};

Interval t_interval(const std::vector<double>& values, double confidence = 0.95);

struct PairedTest {
    double t = 0.0;
    double p = 1.0;
    std::size_t df = 0;
    bool degenerate = false;
};

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

enum class MetricKind { dsc, iou, hd95, asd };
const char* metric_name(MetricKind k);
const std::vector<MetricKind>& all_metrics();
const Metric& pick(const ClassMetrics& m, MetricKind k);

struct ClassSummary {
    int class_id = 0;
    std::map<MetricKind, Interval> metrics;
    std::size_t one_side_empty = 0;
    std::size_t both_empty = 0;
};

struct MetricReport {
    std::string method;
    std::string labeling;
    int class_count = 0;
    bool exclude_background = true;
    std::vector<ImageMetrics> images;
    std::vector<ClassSummary> classes;  ///< included classes only
    /// Mean of per-class means. The interval half-width comes from the
    /// per-image means over included, defined classes.
    std::map<MetricKind, Interval> overall;
    /// Per-class and overall DSC p-values against a reference report.
    std::map<std::string, PairedTest> tests;
    std::string reference;
};

MetricReport aggregate(const std::vector<ImageMetrics>& images, int class_count, bool exclude_background = true);

/// Paired DSC tests per included class and for the per-image overall mean.
/// Images are matched by id; both reports must cover the same ids.
void attach_tests(MetricReport& report, const MetricReport& reference, const std::string& reference_name);

void write_csv(const MetricReport& report, const std::filesystem::path& path);
nlohmann::json to_json(const MetricReport& report);
void write_json(const MetricReport& report, const std::filesystem::path& path);

}  // namespace grn::evaluation

#endif  // GRN_EVALUATION_HPP
