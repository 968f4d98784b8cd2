#include "grn/checkpoint.hpp"
#include "grn/models.hpp"
#include "grn/trainer.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <fstream>

using namespace grn;
using namespace grn::models;

namespace {

BundleConfig small_bundle(std::uint64_t seed = 1) {
    BundleConfig c;
    c.segmentor.encoder_channels = {4, 8, 16};
    c.generator.base_channels = 4;
    c.generator.downsample_stages = 2;
    c.generator.residual_blocks_per_stage = 1;
    c.discriminator.layer_channels = {4, 8, 16};
    c.seed = seed;
    return c;
}

data::Batch random_batch(std::mt19937_64& rng, int classes, Index n = 2, Index size = 48) {
    return {test::random_tensor({n, 1, size, size}, rng), test::random_labels({n, 1, size, size}, classes, rng)};
}

bool same(const TensorF& a, const TensorF& b) {
    return a.shape().str() == b.shape().str() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("segmentor shapes") {
    Segmentor s(SegmentorConfig{}, 3);
    std::mt19937_64 rng(1);
    const Var x = Var::constant(test::random_tensor({2, 1, 64, 64}, rng));
    NoGradGuard guard;
    const TensorF y = s(x, false).value();
    CHECK(y.shape().str() == Shape4{2, 7, 64, 64}.str());
    CHECK(same(y, s(x, false).value()));
    CHECK_THROWS_AS(s(Var::constant(TensorF(1, 1, 40, 40)), false), ShapeError);
    SegmentorConfig bad;
    bad.encoder_channels = {16, 16, 32};
    CHECK_THROWS(bad.validate());
    bad = {};
    bad.class_count = 1;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("generator shapes and range") {
    Generator g(GeneratorConfig{}, 4);
    std::mt19937_64 rng(2);
    const Var x = Var::constant(test::random_tensor({4, 1, 64, 64}, rng));
    NoGradGuard guard;
    const TensorF y = g(x).value();
    CHECK(y.shape().str() == Shape4{4, 1, 64, 64}.str());
    CHECK(y.array().minCoeff() >= -1.0f);
    CHECK(y.array().maxCoeff() <= 1.0f);
    CHECK(same(y, g(x).value()));
    CHECK(g(Var::constant(TensorF(1, 1, 64, 64))).value().array().isFinite().all());
    CHECK_THROWS_AS(g(Var::constant(TensorF(1, 1, 60, 60))), ShapeError);

    GeneratorConfig skip = small_bundle().generator;
    skip.skip_connections = true;
    Generator gs(skip, 5);
    CHECK(gs(Var::constant(TensorF(2, 1, 16, 16))).value().shape().str() == Shape4{2, 1, 16, 16}.str());

    GeneratorConfig id;
    id.identity = true;
    Generator gi(id, 0);
    CHECK(gi.store().parameters().empty());
    CHECK(same(gi(x).value(), x.value()));
}

TEST_CASE("discriminator patch map") {
    Discriminator d(DiscriminatorConfig{}, 5);
    CHECK(d.config().output_size(256) == 30);
    CHECK(d.config().receptive_field() == 70);
    std::mt19937_64 rng(3);
    NoGradGuard guard;
    const TensorF big = d(Var::constant(test::random_tensor({1, 1, 256, 256}, rng))).value();
    CHECK(big.shape().str() == Shape4{1, 1, 30, 30}.str());

    Discriminator small(small_bundle().discriminator, 6);
    const TensorF a = test::random_tensor({1, 1, 48, 48}, rng), b = test::random_tensor({1, 1, 48, 48}, rng);
    TensorF batch(3, 1, 48, 48);
    batch.sample(0) = a.sample(0);
    batch.sample(1) = b.sample(0);
    batch.sample(2) = a.sample(0);
    const TensorF m = small(Var::constant(batch)).value();
    CHECK(m.n() == 3);
    CHECK(m.h() == small.config().output_size(48));
    CHECK(same(small(Var::constant(a)).value(), small(Var::constant(a)).value()));
    // Batched GEMM may sum in a different order per column.
    CHECK((m.sample(0).array() - m.sample(2).array()).abs().maxCoeff() < 1e-5f);
    CHECK_FALSE((m.sample(0).array() == m.sample(1).array()).all());
}

TEST_CASE("parameter counts match the constructed networks") {
    const BundleConfig c = small_bundle();
    ModelBundle b(c);
    CHECK(parameter_count(c.segmentor) == b.segmentor().store().parameter_count());
    CHECK(parameter_count(c.generator) == b.generator().store().parameter_count());
    CHECK(parameter_count(c.discriminator) == b.discriminator().store().parameter_count());
    CHECK(parameter_count(SegmentorConfig{}) == Segmentor(SegmentorConfig{}, 0).store().parameter_count());
}

TEST_CASE("same seed, same networks") {
    ModelBundle a(small_bundle(9)), b(small_bundle(9)), c(small_bundle(10));
    CHECK(same(a.segmentor().store().parameters()[0].second.value(), b.segmentor().store().parameters()[0].second.value()));
    CHECK_FALSE(
        same(a.segmentor().store().parameters()[0].second.value(), c.segmentor().store().parameters()[0].second.value()));
    CHECK_THROWS_AS(a.check_input({1, 1, 20, 20}), ShapeError);
    CHECK_THROWS_AS(a.check_input({1, 1, 32, 32}), ShapeError);  // below D's receptive field
    CHECK_NOTHROW(a.check_input({1, 1, 48, 48}));
}

TEST_CASE("checkpoint round trip") {
    test::TempDir dir("ckpt");
    std::mt19937_64 rng(4);
    trainer::TrainConfig tc;
    ModelBundle b(trainer::with_optimizer(small_bundle(), tc));
    for (int i = 0; i < 2; ++i) trainer::sel_step(b, tc, random_batch(rng, 7));
    checkpoint::save(b, dir / "b.grn", {{"note", "x"}});

    auto loaded = checkpoint::load(dir / "b.grn", b.config());
    CHECK(loaded.metadata.at("note") == "x");
    const Var x = Var::constant(test::random_tensor({2, 1, 48, 48}, rng));
    {
        NoGradGuard guard;
        const TensorF p = b.segmentor()(x, false).value(), q = loaded.bundle->segmentor()(x, false).value();
        CHECK((p.array() - q.array()).abs().maxCoeff() <= 1e-6f);
        CHECK(same(b.generator()(x).value(), loaded.bundle->generator()(x).value()));
    }
    CHECK(checkpoint::read_header(dir / "b.grn").contains("config"));
    CHECK(checkpoint::file_hash(dir / "b.grn").size() == 16);

    SUBCASE("resumed training continues identically") {
        const data::Batch next = random_batch(rng, 7);
        const auto direct = trainer::sel_step(b, tc, next);
        const auto resumed = trainer::sel_step(*loaded.bundle, tc, next);
        CHECK(*resumed.loss_g == doctest::Approx(*direct.loss_g).epsilon(1e-5));
        CHECK(*resumed.loss_s == doctest::Approx(*direct.loss_s).epsilon(1e-5));
        CHECK(*resumed.loss_d == doctest::Approx(*direct.loss_d).epsilon(1e-5));
    }
    SUBCASE("configuration mismatch") {
        BundleConfig other = b.config();
        other.segmentor.class_count = 5;
        CHECK_THROWS_AS(checkpoint::load(dir / "b.grn", other), checkpoint::CheckpointError);
    }
    SUBCASE("corrupt files") {
        std::ofstream(dir / "bad.grn") << "not a checkpoint";
        CHECK_THROWS_AS(checkpoint::load(dir / "bad.grn"), checkpoint::CheckpointError);
        CHECK_THROWS_AS(checkpoint::load(dir / "missing.grn"), checkpoint::CheckpointError);
    }
}

TEST_CASE("bundle snapshot and restore") {
    std::mt19937_64 rng(5);
    trainer::TrainConfig tc;
    ModelBundle b(trainer::with_optimizer(small_bundle(), tc));
    const BundleState s0 = b.snapshot();
    trainer::sel_step(b, tc, random_batch(rng, 7));
    CHECK_FALSE(same(b.segmentor().store().state_dict().begin()->second, s0.segmentor.begin()->second));
    b.restore(s0);
    CHECK(same(b.segmentor().store().state_dict().begin()->second, s0.segmentor.begin()->second));
    CHECK(b.adam_segmentor().total_steps() == 0);
    CHECK(b.all_finite());
}
