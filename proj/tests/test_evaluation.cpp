#include "grn/evaluation.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

using namespace grn;
using namespace grn::evaluation;
using doctest::Approx;

namespace {

LabelImage from_rows(const std::vector<std::vector<int>>& rows) {
    LabelImage img(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) img(r, c) = rows[r][c];
    return img;
}

LabelImage random_mask(std::mt19937_64& rng, Index h, Index w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double p = 0.05 + 0.6 * u(rng);
    LabelImage img(h, w);
    for (Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng) < p ? 1 : 0;
    if ((img == 0).all()) img(h / 2, w / 2) = 1;
    return img;
}

// Exhaustive reference: surfaces by direct neighbour checks, nearest
// distance by scanning every surface pixel of the other mask.
std::vector<std::pair<int, int>> oracle_surface(const LabelImage& m) {
    std::vector<std::pair<int, int>> out;
    const int h = m.rows(), w = m.cols();
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            if (m(r, c) != 1) continue;
            const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1 || m(r - 1, c) != 1 ||
                              m(r + 1, c) != 1 || m(r, c - 1) != 1 || m(r, c + 1) != 1;
            if (edge) out.emplace_back(r, c);
        }
    return out;
}

std::vector<double> oracle_directed(const LabelImage& a, const LabelImage& b) {
    const auto sa = oracle_surface(a), sb = oracle_surface(b);
    std::vector<double> d;
    for (auto [r, c] : sa) {
        double best = std::numeric_limits<double>::infinity();
        for (auto [s, t] : sb) best = std::min(best, std::hypot(double(r - s), double(c - t)));
        d.push_back(best);
    }
    return d;
}

double oracle_p95(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const double rank = 0.95 * (v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (rank - lo) * (v[hi] - v[lo]);
}

double oracle_hd95(const LabelImage& a, const LabelImage& b) {
    return std::max(oracle_p95(oracle_directed(a, b)), oracle_p95(oracle_directed(b, a)));
}

double oracle_asd(const LabelImage& a, const LabelImage& b) {
    auto d = oracle_directed(a, b);
    const auto e = oracle_directed(b, a);
    d.insert(d.end(), e.begin(), e.end());
    double s = 0;
    for (double x : d) s += x;
    return s / d.size();
}

// Student-t CDF for four degrees of freedom in closed form.
double t4_cdf(double t) {
    const double q = 1.0 + t * t / 4.0;
    return 0.5 + 0.375 * (t / std::sqrt(q)) * (1.0 - t * t / (12.0 * q));
}

double t4_quantile(double p) {
    double lo = 0.0, hi = 50.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (t4_cdf(mid) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

LabelImage shifted(const LabelImage& m, Index dr, Index dc, Index h, Index w) {
    LabelImage out = LabelImage::Zero(h, w);
    for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) out(r + dr, c + dc) = m(r, c);
    return out;
}

}  // namespace

TEST_CASE("overlap metric examples") {
    const LabelImage p = from_rows({{1, 1, 0}, {1, 1, 0}, {0, 0, 0}});
    const LabelImage g = from_rows({{0, 0, 0}, {1, 1, 0}, {1, 1, 0}});
    CHECK(dsc(p, g, 1, 2).value == Approx(50.0));
    CHECK(iou(p, g, 1, 2).value == Approx(100.0 / 3.0));
    CHECK(dsc(p, p, 1, 2).value == 100.0);
    CHECK(iou(p, p, 1, 2).value == 100.0);
    const LabelImage q = from_rows({{0, 0, 0}, {0, 0, 0}, {0, 0, 1}});
    CHECK(dsc(p, q, 1, 2).value == 0.0);
    CHECK_THROWS_AS(dsc(p, g, 2, 2), std::invalid_argument);
    CHECK_THROWS_AS(hd95(p, LabelImage::Zero(4, 4), 1, 2), std::invalid_argument);
}

TEST_CASE("surface extraction") {
    BinaryMask single = BinaryMask::Zero(5, 5);
    single(2, 3) = 1;
    CHECK(extract_surface(single) == std::vector<Pixel>{{2, 3}});
    CHECK(extract_surface(BinaryMask::Zero(4, 4)).empty());
    BinaryMask square = BinaryMask::Zero(8, 8);
    square.block(2, 2, 4, 4).setOnes();
    const auto s = extract_surface(square);
    CHECK(s.size() == 12);
    for (auto [r, c] : s) CHECK((r == 2 || r == 5 || c == 2 || c == 5));
}

TEST_CASE("distance metric examples") {
    LabelImage a = LabelImage::Zero(6, 6), b = LabelImage::Zero(6, 6);
    a(0, 0) = 1;
    b(3, 4) = 1;
    CHECK(hd95(a, b, 1, 2).value == 5.0);
    CHECK(asd(a, b, 1, 2).value == 5.0);
    CHECK(hd95(a, a, 1, 2).value == 0.0);
    CHECK(asd(a, a, 1, 2).value == 0.0);
}

TEST_CASE("empty-mask policy") {
    const LabelImage empty = LabelImage::Zero(6, 8);
    LabelImage one = empty;
    one(1, 1) = 1;
    const Metric both = hd95(empty, empty, 1, 2);
    CHECK(both.value == 0.0);
    CHECK_FALSE(both.defined);
    CHECK_FALSE(dsc(empty, empty, 1, 2).defined);
    CHECK_FALSE(iou(empty, empty, 1, 2).defined);
    const Metric side = hd95(one, empty, 1, 2);
    CHECK(side.one_side_empty);
    CHECK(side.value == Approx(10.0));  // diagonal of 6 x 8
    CHECK(asd(empty, one, 1, 2).value == Approx(10.0));
    CHECK(dsc(one, empty, 1, 2).value == 0.0);
    CHECK(dsc(one, empty, 1, 2).one_side_empty);
}

TEST_CASE("distance transform agrees with brute force") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const LabelImage m = random_mask(rng, 11, 13);
        const BinaryMask b = (m == 1).cast<std::uint8_t>();
        const Image<double> dt = distance_transform(b);
        for (Index r = 0; r < 11; ++r)
            for (Index c = 0; c < 13; ++c) {
                double best = std::numeric_limits<double>::infinity();
                for (Index s = 0; s < 11; ++s)
                    for (Index t = 0; t < 13; ++t)
                        if (b(s, t)) best = std::min(best, std::hypot(double(r - s), double(c - t)));
                CHECK(dt(r, c) == Approx(best).epsilon(1e-12));
            }
    }
    CHECK(std::isinf(distance_transform(BinaryMask::Zero(3, 3))(1, 1)));
}

TEST_CASE("percentile") {
    CHECK(percentile({3, 1, 2}, 50) == 2.0);
    CHECK(percentile({0, 10}, 95) == Approx(9.5));
    CHECK(percentile({7}, 95) == 7.0);
    CHECK(percentile({1, 2, 3, 4}, 0) == 1.0);
    CHECK(percentile({1, 2, 3, 4}, 100) == 4.0);
    CHECK_THROWS(percentile({}, 50));
    CHECK_THROWS(percentile({1.0}, 101));
}

TEST_CASE("surface distances match the exhaustive oracle") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 200; ++trial) {
        const LabelImage a = random_mask(rng, 16, 16), b = random_mask(rng, 16, 16);
        CHECK(std::abs(hd95(a, b, 1, 2).value - oracle_hd95(a, b)) <= 1e-9);
        CHECK(std::abs(asd(a, b, 1, 2).value - oracle_asd(a, b)) <= 1e-9);
        const double d = dsc(a, b, 1, 2).value;
        CHECK(iou(a, b, 1, 2).value == Approx(100.0 * d / (200.0 - d)).epsilon(1e-12));
    }
}

TEST_CASE("symmetry and translation invariance") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const LabelImage a = random_mask(rng, 12, 12), b = random_mask(rng, 12, 12);
        CHECK(hd95(a, b, 1, 2).value == hd95(b, a, 1, 2).value);
        CHECK(asd(a, b, 1, 2).value == Approx(asd(b, a, 1, 2).value).epsilon(1e-14));
        const LabelImage sa = shifted(a, 3, 5, 20, 20), sb = shifted(b, 3, 5, 20, 20);
        const LabelImage pa = shifted(a, 0, 0, 20, 20), pb = shifted(b, 0, 0, 20, 20);
        for (auto metric : {dsc, iou, hd95, asd})
            CHECK(metric(sa, sb, 1, 2).value == Approx(metric(pa, pb, 1, 2).value).epsilon(1e-12));
    }
}

TEST_CASE("growing the prediction toward the truth never lowers DSC") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const LabelImage g = random_mask(rng, 10, 10);
        LabelImage p = random_mask(rng, 10, 10);
        double last = dsc(p, g, 1, 2).value;
        for (Index i = 0; i < g.size(); ++i) {
            if (g.data()[i] != 1 || p.data()[i] == 1) continue;
            p.data()[i] = 1;
            const double now = dsc(p, g, 1, 2).value;
            CHECK(now >= last);
            last = now;
        }
    }
}

TEST_CASE("evaluate_image covers every class") {
    const LabelImage p = from_rows({{0, 1, 2}, {0, 1, 2}});
    const ImageMetrics m = evaluate_image("x", p, p, 4);
    REQUIRE(m.classes.size() == 4);
    CHECK(m.classes[1].dsc.value == 100.0);
    CHECK_FALSE(m.classes[3].dsc.defined);
    CHECK(m.classes[2].class_id == 2);
}

TEST_CASE("t interval") {
    const Interval i = t_interval({1, 2, 3, 4, 5});
    CHECK(i.mean == 3.0);
    CHECK(i.n == 5);
    const double s = std::sqrt(10.0 / 4.0);
    const double half = t4_quantile(0.975) * s / std::sqrt(5.0);
    CHECK(half == Approx(1.963).epsilon(1e-3));
    REQUIRE(i.half_width());
    CHECK(*i.half_width() == Approx(half).epsilon(1e-9));
    const Interval one = t_interval({4.0});
    CHECK(one.mean == 4.0);
    CHECK_FALSE(one.lower);
    CHECK_FALSE(one.half_width());
}

TEST_CASE("paired t test") {
    const PairedTest same = paired_t_test({1, 2, 3}, {1, 2, 3});
    CHECK(same.t == 0.0);
    CHECK(same.p == 1.0);

    std::vector<double> a(10), b(10);
    for (int i = 0; i < 10; ++i) {
        a[i] = i * 0.7;
        b[i] = a[i] - 1.0;
    }
    const PairedTest constant = paired_t_test(a, b);
    CHECK(constant.degenerate);
    CHECK(constant.p == 0.0);

    const std::vector<double> d{1, -1, 2, 0, 3};
    const PairedTest r = paired_t_test(d, std::vector<double>(5, 0.0));
    const double t = 1.0 / (std::sqrt(2.5) / std::sqrt(5.0));
    CHECK(r.t == Approx(t).epsilon(1e-9));
    CHECK(r.p == Approx(2.0 * (1.0 - t4_cdf(t))).epsilon(1e-6));
    CHECK(r.df == 4);
    CHECK_THROWS(paired_t_test({1.0}, {2.0}));
    CHECK_THROWS(paired_t_test({1.0, 2.0}, {2.0}));
}

TEST_CASE("aggregation") {
    auto image = [](const std::string& id, double d1, double d2) {
        ImageMetrics m{id, {}};
        for (int c = 0; c < 3; ++c) {
            ClassMetrics cm;
            cm.class_id = c;
            cm.dsc.value = c == 0 ? 99.0 : c == 1 ? d1 : d2;
            m.classes.push_back(cm);
        }
        return m;
    };
    SUBCASE("two images") {
        const MetricReport r = aggregate({image("a", 40, 10), image("b", 60, 30)}, 3);
        REQUIRE(r.classes.size() == 2);
        CHECK(r.classes[0].metrics.at(MetricKind::dsc).mean == 50.0);
        CHECK(r.classes[1].metrics.at(MetricKind::dsc).mean == 20.0);
        CHECK(r.overall.at(MetricKind::dsc).mean == Approx(35.0).epsilon(1e-12));
        const MetricReport with_bg = aggregate({image("a", 40, 10), image("b", 60, 30)}, 3, false);
        CHECK(with_bg.classes.size() == 3);
        CHECK(with_bg.overall.at(MetricKind::dsc).mean == Approx((99.0 + 50.0 + 20.0) / 3.0));
    }
    SUBCASE("single image has no interval") {
        const MetricReport r = aggregate({image("a", 70, 30)}, 3);
        CHECK(r.overall.at(MetricKind::dsc).mean == Approx(50.0));
        CHECK_FALSE(r.overall.at(MetricKind::dsc).lower);
    }
    SUBCASE("undefined entries are left out") {
        ImageMetrics m = image("b", 0, 30);
        m.classes[1].dsc.defined = false;
        const MetricReport r = aggregate({image("a", 40, 10), m}, 3);
        CHECK(r.classes[0].metrics.at(MetricKind::dsc).mean == 40.0);
        CHECK(r.classes[0].metrics.at(MetricKind::dsc).n == 1);
        CHECK(r.classes[0].both_empty == 1);
    }
    SUBCASE("overall mean is the mean of included class means") {
        std::mt19937_64 rng(5);
        std::vector<ImageMetrics> imgs;
        for (int i = 0; i < 7; ++i) {
            const LabelImage p = test::random_labels({1, 1, 12, 12}, 4, rng).plane(0, 0);
            const LabelImage g = test::random_labels({1, 1, 12, 12}, 4, rng).plane(0, 0);
            imgs.push_back(evaluate_image(std::to_string(i), p, g, 4));
        }
        const MetricReport r = aggregate(imgs, 4);
        for (MetricKind k : all_metrics()) {
            double s = 0;
            for (const auto& c : r.classes) s += c.metrics.at(k).mean;
            CHECK(std::abs(r.overall.at(k).mean - s / r.classes.size()) <= 1e-9);
        }
    }
}

TEST_CASE("paired tests against a reference report and export") {
    std::mt19937_64 rng(6);
    std::vector<ImageMetrics> a, b;
    for (int i = 0; i < 6; ++i) {
        const LabelImage g = test::random_labels({1, 1, 10, 10}, 3, rng).plane(0, 0);
        const LabelImage p = test::random_labels({1, 1, 10, 10}, 3, rng).plane(0, 0);
        a.push_back(evaluate_image("img" + std::to_string(i), g, g, 3));
        b.push_back(evaluate_image("img" + std::to_string(i), p, g, 3));
    }
    MetricReport ra = aggregate(a, 3), rb = aggregate(b, 3);
    ra.method = "ours";
    attach_tests(ra, rb, "baseline");
    CHECK(ra.tests.count("overall") == 1);
    CHECK(ra.tests.count("class_1") == 1);
    CHECK(ra.tests.count("class_0") == 0);
    CHECK(ra.tests.at("overall").p < 0.05);

    MetricReport missing = aggregate({b.begin(), b.begin() + 3}, 3);
    CHECK_THROWS(attach_tests(ra, missing, "partial"));

    test::TempDir dir("eval");
    write_csv(ra, dir / "m.csv");
    write_json(ra, dir / "m.json");
    std::ifstream csv(dir / "m.csv");
    std::string header;
    std::getline(csv, header);
    CHECK(header == "image,class,dsc,iou,hd95,asd,defined,one_side_empty");
    int rows = 0;
    for (std::string line; std::getline(csv, line);) ++rows;
    CHECK(rows == 6 * 3);
    const nlohmann::json j = nlohmann::json::parse(std::ifstream(dir / "m.json"));
    CHECK(j.at("method") == "ours");
    CHECK(j.at("reference") == "baseline");
    CHECK(j.at("overall").at("dsc").at("mean").get<double>() == Approx(100.0));
    CHECK(j.contains("paired_tests"));
}
