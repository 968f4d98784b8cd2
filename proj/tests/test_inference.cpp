#include "grn/inference.hpp"
#include "grn/png_io.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>
#include <json.hpp>

using namespace grn;
using namespace grn::inference;

namespace {

models::BundleConfig small_bundle(bool identity_generator) {
    models::BundleConfig c;
    c.segmentor.encoder_channels = {4, 8, 16};
    c.generator.base_channels = 4;
    c.generator.downsample_stages = 2;
    c.generator.residual_blocks_per_stage = 1;
    c.generator.identity = identity_generator;
    c.discriminator.layer_channels = {4, 8, 16};
    c.seed = 3;
    return c;
}

ImageF random_image(std::mt19937_64& rng, Index size = 48) {
    return test::random_tensor({1, 1, size, size}, rng).plane(0, 0);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("argmax picks the lowest class on ties") {
    TensorF logits(Shape4{1, 3, 1, 3}, 0.0f);
    logits(0, 1, 0, 1) = 2.0f;
    logits(0, 2, 0, 1) = 2.0f;
    logits(0, 2, 0, 2) = -1.0f;
    logits(0, 0, 0, 2) = -1.0f;
    const LabelImage m = argmax_classes(logits, 0);
    CHECK(m(0, 0) == 0);
    CHECK(m(0, 1) == 1);
    CHECK(m(0, 2) == 1);
}

TEST_CASE("identity generator makes SGE a no-op") {
    models::ModelBundle b(small_bundle(true));
    std::mt19937_64 rng(1);
    for (int i = 0; i < 5; ++i) {
        const ImageF x = random_image(rng);
        CHECK((predict(b, x, true).array() == predict(b, x, false).array()).all());
    }
}

TEST_CASE("predictions are deterministic and in range") {
    models::ModelBundle b(small_bundle(false));
    std::mt19937_64 rng(2);
    const ImageF x = random_image(rng);
    for (bool sge : {false, true}) {
        const LabelImage m = predict(b, x, sge);
        CHECK((m.array() == predict(b, x, sge).array()).all());
        CHECK(m.minCoeff() >= 0);
        CHECK(m.maxCoeff() <= 6);
    }
    CHECK_THROWS_AS(predict(b, ImageF::Zero(42, 42), false), models::ShapeError);

    const LabelImage forced = predict(b, x, false, [](TensorF& l) { l.plane(0, 4).array() += 1e6f; });
    CHECK((forced.array() == 4).all());
}

TEST_CASE("stack prediction") {
    models::ModelBundle b(small_bundle(false));
    std::mt19937_64 rng(3);
    CHECK(predict_stack(b, {}, false).masks.empty());

    const ImageF x = random_image(rng);
    const StackPrediction same = predict_stack(b, {x, x, x}, false);
    REQUIRE(same.masks.size() == 3);
    CHECK(same.seconds.size() == 3);
    CHECK((same.masks[0].array() == same.masks[2].array()).all());

    std::vector<ImageF> slices;
    for (int i = 0; i < 4; ++i) slices.push_back(random_image(rng));
    const StackPrediction stack = run(b, {slices, true, true});
    REQUIRE(stack.probabilities.size() == 4);
    for (std::size_t i = 0; i < slices.size(); ++i) {
        CHECK((stack.masks[i].array() == predict(b, slices[i], true).array()).all());
        const TensorF& p = stack.probabilities[i];
        CHECK(p.c() == 7);
        float sum = 0.0f;
        for (Index c = 0; c < 7; ++c) sum += p(0, c, 5, 7);
        CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
    }
}

TEST_CASE("overlay") {
    ImageF img(2, 2);
    img << -1.0f, 1.0f, 0.0f, 0.5f;
    const Palette pal = default_palette();

    SUBCASE("background leaves the grayscale untouched") {
        const io::RgbImage o = render_overlay(img, LabelImage::Zero(2, 2), pal, 7);
        const int expected[4] = {0, 255, 128, 191};  // (v + 1) * 127.5, rounded
        for (int i = 0; i < 4; ++i)
            for (int ch = 0; ch < 3; ++ch) CHECK(o.at(i / 2, i % 2)[ch] == expected[i]);
    }
    SUBCASE("foreground is alpha blended") {
        LabelImage m = LabelImage::Zero(2, 2);
        m(0, 0) = 1;
        const io::RgbImage o = render_overlay(img, m, pal, 7, 0.5);
        CHECK(o.at(0, 0)[0] == 115);  // 0.5 * 0 + 0.5 * 230
        CHECK(o.at(0, 0)[1] == 13);
        CHECK(o.at(0, 1)[0] == 255);
    }
    SUBCASE("errors") {
        CHECK_THROWS(render_overlay(img, LabelImage::Zero(2, 2), Palette(pal.begin(), pal.begin() + 3), 7));
        CHECK_THROWS(render_overlay(img, LabelImage::Zero(3, 2), pal, 7));
        LabelImage m = LabelImage::Zero(2, 2);
        m(1, 1) = 7;
        CHECK_THROWS(render_overlay(img, m, pal, 7));
    }
    SUBCASE("file bytes are reproducible") {
        test::TempDir dir("overlay");
        LabelImage m = LabelImage::Zero(2, 2);
        m(1, 0) = 3;
        export_overlay(img, m, pal, 7, dir / "a.png");
        export_overlay(img, m, pal, 7, dir / "b.png");
        CHECK(slurp(dir / "a.png") == slurp(dir / "b.png"));
    }
}

TEST_CASE("prediction files") {
    test::TempDir dir("pred");
    CHECK(prediction_path("/data/scan_01.png", dir.path()) == dir / "scan_01_pred.png");

    LabelImage m(3, 4);
    m << 0, 1, 2, 3, 4, 5, 6, 0, 1, 1, 1, 1;
    write_prediction(m, dir / "x_pred.png", "abcd", true, 0.25);
    const io::GrayPng back = io::read_gray_png(dir / "x_pred.png");
    CHECK((back.pixels.cast<std::int32_t>() == m).all());
    const auto side = nlohmann::json::parse(std::ifstream(dir / "x_pred.json"));
    CHECK(side["checkpoint_hash"] == "abcd");
    CHECK(side["use_sge"] == true);
    CHECK(side["seconds"].get<double>() == 0.25);

    m(0, 0) = 300;
    CHECK_THROWS(write_prediction(m, dir / "y_pred.png", "abcd", false, 0.0));
}
