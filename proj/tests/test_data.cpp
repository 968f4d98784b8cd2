#include "grn/data.hpp"
#include "grn/phantom.hpp"
#include "grn/png_io.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <fstream>
#include <iterator>
#include <json.hpp>

using namespace grn;
using namespace grn::data;
namespace fs = std::filesystem;

namespace {

// In-memory manifest; the split and selection logic never opens files.
DatasetManifest fake_manifest(int patients, int scans_per_patient, int slices) {
    DatasetManifest m;
    m.root = "/nonexistent";
    for (int p = 0; p < patients; ++p)
        for (int s = 0; s < scans_per_patient; ++s)
            for (int k = 0; k < slices; ++k) {
                ManifestEntry e;
                e.meta = {"p" + std::to_string(p), "s" + std::to_string(s), k};
                e.image = m.root / "x.png";
                e.mask = m.root / "y.png";
                m.entries.push_back(e);
            }
    return m;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("patient split") {
    SUBCASE("counts follow rounded fractions") {
        const auto m = fake_manifest(10, 2, 3);
        for (std::uint64_t seed : {0u, 1u, 99u}) {
            const SplitAssignment s = split_by_patient(m, {}, seed);
            CHECK(s.patient_count(Role::train) == 6);
            CHECK(s.patient_count(Role::validation) == 2);
            CHECK(s.patient_count(Role::test) == 2);
        }
    }
    SUBCASE("override") {
        const auto m = fake_manifest(29, 1, 1);
        SplitOverride o;
        for (int p = 0; p < 29; ++p) o["p" + std::to_string(p)] = p < 16 ? Role::train : p < 18 ? Role::validation : Role::test;
        const SplitAssignment s = split_by_patient(m, {}, 5, o);
        CHECK(s.patient_count(Role::train) == 16);
        CHECK(s.patient_count(Role::validation) == 2);
        CHECK(s.patient_count(Role::test) == 11);
        o.erase("p3");
        CHECK_THROWS_AS(split_by_patient(m, {}, 5, o), DataError);
    }
    SUBCASE("too few patients") {
        CHECK_THROWS_AS(split_by_patient(fake_manifest(2, 1, 1), {}, 0), DataError);
    }
    SUBCASE("no patient crosses roles and splits are deterministic") {
        for (std::uint64_t seed = 0; seed < 20; ++seed) {
            const auto m = fake_manifest(5 + seed % 7, 3, 2);
            const SplitAssignment s = split_by_patient(m, {0.5, 0.25, 0.25}, seed);
            std::map<std::string, std::set<Role>> seen;
            for (Role r : {Role::train, Role::validation, Role::test})
                for (const auto& e : s.entries(m, r)) seen[e.meta.patient_id].insert(r);
            for (const auto& [p, roles] : seen) CHECK(roles.size() == 1);
            CHECK(split_by_patient(m, {0.5, 0.25, 0.25}, seed).roles == s.roles);
        }
    }
    SUBCASE("split override file") {
        test::TempDir dir("split");
        std::ofstream(dir / "splits.json") << R"({"a": "train", "b": "test"})";
        const SplitOverride o = load_split_override(dir / "splits.json");
        CHECK(o.at("a") == Role::train);
        CHECK(o.at("b") == Role::test);
        std::ofstream(dir / "bad.json") << R"({"a": "holdout"})";
        CHECK_THROWS_AS(load_split_override(dir / "bad.json"), DataError);
    }
}

TEST_CASE("labeled fraction selection") {
    const auto m = fake_manifest(44, 1, 3);
    SplitOverride all_train;
    for (int p = 0; p < 44; ++p) all_train["p" + std::to_string(p)] = Role::train;
    SplitAssignment s = split_by_patient(m, {1.0, 0.0, 0.0}, 0, all_train);
    const auto train = s.entries(m, Role::train);

    const LabelSelection five = select_labeled_fraction(s, train, 0.05, 3);
    CHECK(five.labeled_scans.size() == 2);
    CHECK(five.labeled.size() == 6);
    CHECK(five.labeled.size() + five.unlabeled.size() == train.size());
    std::set<std::string> labeled_keys, unlabeled_keys;
    for (const auto& e : five.labeled) labeled_keys.insert(e.meta.scan_key());
    for (const auto& e : five.unlabeled) unlabeled_keys.insert(e.meta.scan_key());
    for (const auto& k : labeled_keys) CHECK(unlabeled_keys.count(k) == 0);

    CHECK(select_labeled_fraction(s, train, 0.05, 3).labeled_scans == five.labeled_scans);
    CHECK(select_labeled_fraction(s, train, 0.001, 3).labeled_scans.size() == 1);
    CHECK(select_labeled_fraction(s, train, 1.0, 3).unlabeled.empty());
    CHECK_THROWS_AS(select_labeled_fraction(s, train, 0.0, 3), DataError);
    CHECK_THROWS_AS(select_labeled_fraction(s, train, 1.5, 3), DataError);
}

TEST_CASE("normalisation") {
    Image<std::uint16_t> raw(1, 3);
    raw << 0, 255, 128;
    const ImageF v = normalize(raw, 8);
    CHECK(v(0, 0) == -1.0f);
    CHECK(v(0, 1) == 1.0f);
    CHECK(v(0, 2) == doctest::Approx(2.0 * 128 / 255 - 1).epsilon(1e-6));
    Image<std::uint16_t> all(16, 16);
    for (int i = 0; i < 256; ++i) all.data()[i] = i;
    CHECK((denormalize(normalize(all, 8), 8) == all).all());
    raw(0, 0) = 256;
    CHECK_THROWS_AS(normalize(raw, 8), DataError);
}

TEST_CASE("batch iterator") {
    SUBCASE("short final batch is kept") {
        BatchIterator it(10, 4, false, 0, false);
        std::vector<std::size_t> sizes;
        while (auto b = it.next()) sizes.push_back(b->size());
        CHECK(sizes == std::vector<std::size_t>{4, 4, 2});
        CHECK(it.batches_per_epoch() == 3);
    }
    SUBCASE("cycling wraps") {
        BatchIterator it(3, 7, false, 0, true);
        CHECK(*it.next() == std::vector<std::size_t>{0, 1, 2, 0, 1, 2, 0});
    }
    SUBCASE("seeded shuffles") {
        CHECK(epoch_order(50, true, 1, 0) == epoch_order(50, true, 1, 0));
        CHECK(epoch_order(50, true, 1, 0) != epoch_order(50, true, 2, 0));
        CHECK(epoch_order(50, true, 1, 0) != epoch_order(50, true, 1, 1));
        auto o = epoch_order(50, true, 1, 3);
        std::sort(o.begin(), o.end());
        CHECK(o == epoch_order(50, false, 1, 3));
    }
    SUBCASE("empty") {
        CHECK_THROWS_AS(BatchIterator(0, 4, false, 0, false), DataError);
    }
}

TEST_CASE("phantom") {
    test::TempDir dir("phantom");
    PhantomConfig cfg = default_phantom_config(6, 32, 11);

    SUBCASE("deterministic files") {
        generate_phantom(cfg, 2, 3, dir / "a");
        generate_phantom(cfg, 2, 3, dir / "b");
        for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
            if (!e.is_regular_file()) continue;
            const fs::path rel = fs::relative(e.path(), dir / "a");
            CHECK(slurp(e.path()) == slurp(dir / "b" / rel));
        }
        const DatasetManifest m = load_manifest(dir / "a");
        CHECK(m.entries.size() == 6);
        CHECK(m.class_count == 7);
    }
    SUBCASE("layered masks") {
        cfg.height = cfg.width = 64;
        for (Index scan = 0; scan < 3; ++scan)
            for (Index slice = 0; slice < 4; ++slice) {
                const PhantomSlice s = render_phantom_slice(cfg, scan, slice);
                CHECK(s.mask.minCoeff() >= 0);
                CHECK(s.mask.maxCoeff() <= 6);
                for (Index c = 0; c < 64; ++c)
                    for (Index r = 1; r < 64; ++r) CHECK(s.mask(r, c) >= s.mask(r - 1, c));
                std::set<int> classes(s.mask.data(), s.mask.data() + s.mask.size());
                CHECK(classes.size() == 7);
            }
    }
    SUBCASE("flat bands without waviness or jitter") {
        cfg.waviness = 0.0;
        cfg.thickness_jitter = 0.0;
        const PhantomSlice s = render_phantom_slice(cfg, 0, 0);
        for (Index r = 0; r < s.mask.rows(); ++r) CHECK((s.mask.row(r) == s.mask(r, 0)).all());
    }
    SUBCASE("invalid configs") {
        PhantomConfig bad = cfg;
        bad.waviness = 40.0;
        CHECK_THROWS_AS(bad.validate(), DataError);
        CHECK_THROWS_AS(default_phantom_config(8, 32, 0).validate(), DataError);
        bad = cfg;
        bad.thickness[0] += 0.5;
        CHECK_THROWS_AS(bad.validate(), DataError);
    }
}

TEST_CASE("manifest loading") {
    test::TempDir dir("manifest");
    generate_phantom(default_phantom_config(6, 16, 0), 1, 2, dir.path());
    nlohmann::json doc = nlohmann::json::parse(std::ifstream(dir / "manifest.json"));

    auto rewrite = [&](const nlohmann::json& j) { std::ofstream(dir / "manifest.json") << j.dump(); };
    SUBCASE("round trip") {
        const DatasetManifest m = load_manifest(dir / "manifest.json");
        write_manifest(m, dir / "copy");
        CHECK(load_manifest(dir / "copy").entries.size() == 2);
        const auto samples = load_labeled(m.entries, m.class_count);
        CHECK(samples[0].image.rows() == 16);
        CHECK(samples[0].image.minCoeff() >= -1.0f);
        CHECK(samples[0].image.maxCoeff() <= 1.0f);
    }
    SUBCASE("missing file names the entry") {
        doc["entries"][1]["image"] = "images/missing.png";
        rewrite(doc);
        try {
            load_manifest(dir.path());
            FAIL("expected a DataError");
        } catch (const DataError& e) {
            REQUIRE(e.meta());
            CHECK(e.meta()->slice_index == doc["entries"][1]["slice_index"].get<Index>());
        }
    }
    SUBCASE("duplicate entries") {
        doc["entries"].push_back(doc["entries"][0]);
        rewrite(doc);
        CHECK_THROWS_AS(load_manifest(dir.path()), DataError);
    }
    SUBCASE("mask values beyond the class count") {
        doc["class_count"] = 3;
        rewrite(doc);
        CHECK_THROWS_AS(load_manifest(dir.path()), DataError);
    }
    SUBCASE("images below the minimum extent") {
        io::write_gray8_png(dir / "tiny.png", Image<std::uint8_t>::Zero(8, 8));
        doc["entries"][0]["image"] = "tiny.png";
        doc["entries"][0]["mask"] = nullptr;
        rewrite(doc);
        CHECK_THROWS_AS(load_images(load_manifest(dir.path()).entries), DataError);
    }
    SUBCASE("no manifest") {
        CHECK_THROWS_AS(load_manifest(dir / "nowhere"), DataError);
    }
}
