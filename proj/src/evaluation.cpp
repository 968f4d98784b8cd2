#include "grn/evaluation.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace grn::evaluation {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_pair(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count) {
    if (class_count <= 0) throw std::invalid_argument("class_count must be positive");
    if (class_id < 0 || class_id >= class_count)
        throw std::invalid_argument("class id " + std::to_string(class_id) + " outside [0, " +
                                    std::to_string(class_count) + ")");
    if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
        throw std::invalid_argument("prediction and reference shapes differ");
}

struct Counts {
    Index p = 0, g = 0, both = 0;
};

Counts count(const LabelImage& pred, const LabelImage& gt, int class_id) {
    const auto p = pred == class_id;
    const auto g = gt == class_id;
    return {p.count(), g.count(), (p && g).count()};
}

// Squared 1-D distance transform of f (lower envelope of parabolas).
void edt_1d(const double* f, double* d, Index n, std::vector<Index>& v, std::vector<double>& z) {
    v.assign(n, 0);
    z.assign(n + 1, 0.0);
    Index k = 0;
    Index first = 0;
    while (first < n && f[first] == kInf) ++first;
    if (first == n) {
        std::fill(d, d + n, kInf);
        return;
    }
    v[0] = first;
    z[0] = -kInf;
    z[1] = kInf;
    for (Index q = first + 1; q < n; ++q) {
        if (f[q] == kInf) continue;
        const auto meet = [&](Index p) {
            return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * double(q - p));
        };
        double s = meet(v[k]);
        while (s <= z[k]) s = meet(v[--k]);
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = kInf;
    }
    k = 0;
    for (Index q = 0; q < n; ++q) {
        while (z[k + 1] < double(q)) ++k;
        const double dq = double(q - v[k]);
        d[q] = dq * dq + f[v[k]];
    }
}

// Empty-side policy shared by the distance metrics.
std::optional<Metric> empty_policy(const BinaryMask& p, const BinaryMask& g) {
    const bool pe = (p == 0).all();
    const bool ge = (g == 0).all();
    if (pe && ge) return Metric{0.0, false, false};
    if (pe || ge) {
        const double diag = std::hypot(double(p.rows()), double(p.cols()));
        return Metric{diag, true, true};
    }
    return std::nullopt;
}

double mean_of(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

json interval_json(const Interval& iv) {
    json j{{"mean", iv.mean}, {"n", iv.n}};
    j["ci_lower"] = iv.lower ? json(*iv.lower) : json(nullptr);
    j["ci_upper"] = iv.upper ? json(*iv.upper) : json(nullptr);
    return j;
}

// Per-image mean over included, defined classes; nullopt when none are.
std::optional<double> image_overall(const ImageMetrics& im, MetricKind k, bool exclude_background) {
    double sum = 0.0;
    int n = 0;
    for (const ClassMetrics& c : im.classes) {
        if (exclude_background && c.class_id == 0) continue;
        const Metric& m = pick(c, k);
        if (!m.defined) continue;
        sum += m.value;
        ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

}  // namespace

BinaryMask class_mask(const LabelImage& labels, int class_id) { return (labels == class_id).cast<std::uint8_t>(); }

std::vector<Pixel> extract_surface(const BinaryMask& mask) {
    std::vector<Pixel> out;
    const Index H = mask.rows(), W = mask.cols();
    auto bg = [&](Index r, Index c) { return r < 0 || c < 0 || r >= H || c >= W || mask(r, c) == 0; };
    for (Index r = 0; r < H; ++r)
        for (Index c = 0; c < W; ++c)
            if (mask(r, c) != 0 && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1)))
                out.emplace_back(r, c);
    return out;
}

Image<double> distance_transform(const BinaryMask& targets) {
    const Index H = targets.rows(), W = targets.cols();
    Image<double> sq(H, W);
    for (Index r = 0; r < H; ++r)
        for (Index c = 0; c < W; ++c) sq(r, c) = targets(r, c) ? 0.0 : kInf;
    std::vector<Index> v;
    std::vector<double> z;
    std::vector<double> f(std::max(H, W)), d(std::max(H, W));
    for (Index c = 0; c < W; ++c) {
        for (Index r = 0; r < H; ++r) f[r] = sq(r, c);
        edt_1d(f.data(), d.data(), H, v, z);
        for (Index r = 0; r < H; ++r) sq(r, c) = d[r];
    }
    for (Index r = 0; r < H; ++r) {
        for (Index c = 0; c < W; ++c) f[c] = sq(r, c);
        edt_1d(f.data(), d.data(), W, v, z);
        for (Index c = 0; c < W; ++c) sq(r, c) = d[c];
    }
    return sq.unaryExpr([](double x) { return std::sqrt(x); });
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile of an empty list");
    if (!(q >= 0.0 && q <= 100.0)) throw std::invalid_argument("percentile rank outside [0, 100]");
    std::sort(values.begin(), values.end());
    const double rank = q / 100.0 * double(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - double(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<double> surface_distances(const BinaryMask& from, const BinaryMask& to) {
    BinaryMask to_surface = BinaryMask::Zero(to.rows(), to.cols());
    for (const auto& [r, c] : extract_surface(to)) to_surface(r, c) = 1;
    const Image<double> dt = distance_transform(to_surface);
    std::vector<double> out;
    for (const auto& [r, c] : extract_surface(from)) out.push_back(dt(r, c));
    return out;
}

Metric dsc(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count) {
    check_pair(pred, gt, class_id, class_count);
    const Counts n = count(pred, gt, class_id);
    if (n.p + n.g == 0) return {0.0, false, false};
    return {100.0 * 2.0 * double(n.both) / double(n.p + n.g), true, n.p == 0 || n.g == 0};
}

Metric iou(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count) {
    check_pair(pred, gt, class_id, class_count);
    const Counts n = count(pred, gt, class_id);
    const Index uni = n.p + n.g - n.both;
    if (uni == 0) return {0.0, false, false};
    return {100.0 * double(n.both) / double(uni), true, n.p == 0 || n.g == 0};
}

Metric hd95(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count) {
    check_pair(pred, gt, class_id, class_count);
    const BinaryMask p = class_mask(pred, class_id), g = class_mask(gt, class_id);
    if (auto m = empty_policy(p, g)) return *m;
    return {std::max(percentile(surface_distances(p, g), 95.0), percentile(surface_distances(g, p), 95.0)), true,
            false};
}

Metric asd(const LabelImage& pred, const LabelImage& gt, int class_id, int class_count) {
    check_pair(pred, gt, class_id, class_count);
    const BinaryMask p = class_mask(pred, class_id), g = class_mask(gt, class_id);
    if (auto m = empty_policy(p, g)) return *m;
    std::vector<double> d = surface_distances(p, g);
    const std::vector<double> back = surface_distances(g, p);
    d.insert(d.end(), back.begin(), back.end());
    return {mean_of(d), true, false};
}

ImageMetrics evaluate_image(const std::string& id, const LabelImage& pred, const LabelImage& gt, int class_count) {
    ImageMetrics out{id, {}};
    for (int k = 0; k < class_count; ++k)
        out.classes.push_back({k, dsc(pred, gt, k, class_count), iou(pred, gt, k, class_count),
                               hd95(pred, gt, k, class_count), asd(pred, gt, k, class_count)});
    return out;
}

std::optional<double> Interval::half_width() const {
    if (!upper) return std::nullopt;
    return *upper - mean;
}

Interval t_interval(const std::vector<double>& values, double confidence) {
    Interval out;
    out.n = values.size();
    if (values.empty()) return out;
    out.mean = mean_of(values);
    if (values.size() < 2) return out;
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / double(values.size() - 1));
    boost::math::students_t dist(double(values.size() - 1));
    const double tq = boost::math::quantile(dist, 0.5 + confidence / 2.0);
    const double h = tq * sd / std::sqrt(double(values.size()));
    out.lower = out.mean - h;
    out.upper = out.mean + h;
    return out;
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired test needs equal lengths");
    if (a.size() < 2) throw std::invalid_argument("paired test needs at least two pairs");
    const std::size_t n = a.size();
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
    PairedTest out;
    out.df = n - 1;
    const double mean = mean_of(d);
    double ss = 0.0;
    for (double x : d) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / double(n - 1));
    if (sd == 0.0) {
        if (mean == 0.0) return out;
        out.t = mean > 0 ? kInf : -kInf;
        out.p = 0.0;
        out.degenerate = true;
        return out;
    }
    out.t = mean / (sd / std::sqrt(double(n)));
    boost::math::students_t dist(double(n - 1));
    out.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
    return out;
}

const char* metric_name(MetricKind k) {
    switch (k) {
        case MetricKind::dsc: return "dsc";
        case MetricKind::iou: return "iou";
        case MetricKind::hd95: return "hd95";
        case MetricKind::asd: return "asd";
    }
    return "?";
}

const std::vector<MetricKind>& all_metrics() {
    static const std::vector<MetricKind> kinds{MetricKind::dsc, MetricKind::iou, MetricKind::hd95, MetricKind::asd};
    return kinds;
}

const Metric& pick(const ClassMetrics& m, MetricKind k) {
    switch (k) {
        case MetricKind::dsc: return m.dsc;
        case MetricKind::iou: return m.iou;
        case MetricKind::hd95: return m.hd95;
        case MetricKind::asd: return m.asd;
    }
    throw std::logic_error("unknown metric");
}

MetricReport aggregate(const std::vector<ImageMetrics>& images, int class_count, bool exclude_background) {
    MetricReport report;
    report.class_count = class_count;
    report.exclude_background = exclude_background;
    report.images = images;
    for (const ImageMetrics& im : images)
        if (static_cast<int>(im.classes.size()) != class_count)
            throw std::invalid_argument("image " + im.id + " has " + std::to_string(im.classes.size()) +
                                        " classes, expected " + std::to_string(class_count));

    for (int k = exclude_background ? 1 : 0; k < class_count; ++k) {
        ClassSummary cs;
        cs.class_id = k;
        for (const ImageMetrics& im : images) {
            const ClassMetrics& c = im.classes[k];
            if (!c.dsc.defined) ++cs.both_empty;
            else if (c.dsc.one_side_empty) ++cs.one_side_empty;
        }
        for (MetricKind kind : all_metrics()) {
            std::vector<double> values;
            for (const ImageMetrics& im : images) {
                const Metric& m = pick(im.classes[k], kind);
                if (m.defined) values.push_back(m.value);
            }
            cs.metrics[kind] = t_interval(values);
        }
        report.classes.push_back(std::move(cs));
    }

    for (MetricKind kind : all_metrics()) {
        std::vector<double> class_means;
        for (const ClassSummary& cs : report.classes)
            if (cs.metrics.at(kind).n > 0) class_means.push_back(cs.metrics.at(kind).mean);
        std::vector<double> per_image;
        for (const ImageMetrics& im : images)
            if (auto v = image_overall(im, kind, exclude_background)) per_image.push_back(*v);
        Interval iv = t_interval(per_image);
        iv.mean = class_means.empty() ? 0.0 : mean_of(class_means);
        if (iv.lower) {
            const double h = *iv.upper - mean_of(per_image);
            iv.lower = iv.mean - h;
            iv.upper = iv.mean + h;
        }
        report.overall[kind] = iv;
    }
    return report;
}

void attach_tests(MetricReport& report, const MetricReport& reference, const std::string& reference_name) {
    std::map<std::string, const ImageMetrics*> ref;
    for (const ImageMetrics& im : reference.images) ref[im.id] = &im;
    if (ref.size() != report.images.size())
        throw std::invalid_argument("reference report covers a different image set");
    for (const ImageMetrics& im : report.images)
        if (!ref.count(im.id)) throw std::invalid_argument("image " + im.id + " missing from reference report");

    report.reference = reference_name;
    report.tests.clear();
    auto run = [&](const std::string& key, const std::vector<double>& a, const std::vector<double>& b) {
        if (a.size() >= 2) report.tests[key] = paired_t_test(a, b);
    };
    for (const ClassSummary& cs : report.classes) {
        std::vector<double> a, b;
        for (const ImageMetrics& im : report.images) {
            const Metric& x = im.classes[cs.class_id].dsc;
            const Metric& y = ref.at(im.id)->classes[cs.class_id].dsc;
            if (x.defined && y.defined) {
                a.push_back(x.value);
                b.push_back(y.value);
            }
        }
        run("class_" + std::to_string(cs.class_id), a, b);
    }
    std::vector<double> a, b;
    for (const ImageMetrics& im : report.images) {
        const auto x = image_overall(im, MetricKind::dsc, report.exclude_background);
        const auto y = image_overall(*ref.at(im.id), MetricKind::dsc, report.exclude_background);
        if (x && y) {
            a.push_back(*x);
            b.push_back(*y);
        }
    }
    run("overall", a, b);
}

void write_csv(const MetricReport& report, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "image,class,dsc,iou,hd95,asd,defined,one_side_empty\n";
    for (const ImageMetrics& im : report.images)
        for (const ClassMetrics& c : im.classes)
            out << im.id << ',' << c.class_id << ',' << format_double(c.dsc.value) << ','
                << format_double(c.iou.value) << ',' << format_double(c.hd95.value) << ','
                << format_double(c.asd.value) << ',' << (c.dsc.defined ? 1 : 0) << ','
                << (c.dsc.one_side_empty ? 1 : 0) << '\n';
}

json to_json(const MetricReport& report) {
    json j;
    j["method"] = report.method;
    j["labeling"] = report.labeling;
    j["class_count"] = report.class_count;
    j["exclude_background"] = report.exclude_background;
    j["images"] = report.images.size();
    json classes = json::array();
    for (const ClassSummary& cs : report.classes) {
        json c{{"class", cs.class_id}, {"one_side_empty", cs.one_side_empty}, {"both_empty", cs.both_empty}};
        for (const auto& [k, iv] : cs.metrics) c[metric_name(k)] = interval_json(iv);
        classes.push_back(std::move(c));
    }
    j["classes"] = std::move(classes);
    json overall = json::object();
    for (const auto& [k, iv] : report.overall) overall[metric_name(k)] = interval_json(iv);
    j["overall"] = std::move(overall);
    if (!report.reference.empty()) {
        json tests = json::object();
        for (const auto& [key, t] : report.tests)
            tests[key] = {{"t", std::isfinite(t.t) ? json(t.t) : json(nullptr)},
                          {"p", t.p},
                          {"df", t.df},
                          {"degenerate", t.degenerate}};
        j["reference"] = report.reference;
        j["paired_tests"] = std::move(tests);
    }
    return j;
}

void write_json(const MetricReport& report, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(report).dump(1) << "\n";
}

}  // namespace grn::evaluation
