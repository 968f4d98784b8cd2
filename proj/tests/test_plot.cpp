#include "grn/plot.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>

using namespace grn;
using namespace grn::plot;

TEST_CASE("nice ticks") {
    const auto t = nice_ticks(0.0, 100.0);
    REQUIRE(t.size() == 6);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(20.0 * i));

    const auto f = nice_ticks(0.1, 0.93);
    REQUIRE(f.size() == 4);
    CHECK(f.front() == doctest::Approx(0.2));
    CHECK(f.back() == doctest::Approx(0.8));

    CHECK(nice_ticks(3.0, 3.0) == std::vector<double>{3.0});
    for (double hi : {0.7, 13.0, 251.0, 4e4}) {
        const auto ticks = nice_ticks(-hi / 3, hi, 5);
        CHECK(ticks.size() >= 3);
        CHECK(ticks.size() <= 11);
        CHECK(ticks.front() >= -hi / 3 - 1e-9);
        CHECK(ticks.back() <= hi + 1e-9);
    }
}

TEST_CASE("rendering") {
    LinePlot p;
    p.title = "Validation loss";
    p.x_label = "epoch";
    p.y_label = "loss";
    p.series.push_back({"grn_sel", {0, 1, 2, 3}, {0.9, 0.6, 0.5, 0.45}});
    p.series.push_back({"supervised", {0, 1, 2, 3}, {0.9, 0.7, 0.6, 0.58}});
    p.reference = ReferenceLine{0.5, "target"};

    const io::RgbImage img = render(p);
    CHECK(img.width == 720);
    CHECK(img.height == 440);
    CHECK(std::count(img.data.begin(), img.data.end(), 255) < static_cast<long>(img.data.size()));

    test::TempDir dir("plot");
    write_png(p, dir / "a.png");
    write_png(p, dir / "b.png");
    std::ifstream a(dir / "a.png", std::ios::binary), b(dir / "b.png", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

    p.series[0].y.pop_back();
    CHECK_THROWS(render(p));
    p.series.clear();
    p.width = 100;
    CHECK_THROWS(render(p));
}
