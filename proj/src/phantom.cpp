#include "grn/phantom.hpp"

#include "grn/png_io.hpp"
#include "grn/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

namespace grn::data {

namespace fs = std::filesystem;

namespace {

constexpr int kHarmonics = 3;

// Box-Muller on raw engine draws; keeps files identical across standard
// library implementations.
double normal(std::mt19937_64& rng) {
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double symmetric(std::mt19937_64& rng) { return 2.0 * uniform01(rng) - 1.0; }

struct Wave {
    double amplitude[kHarmonics];
    double cycles[kHarmonics];
    double phase[kHarmonics];
    double drift[kHarmonics];
};

struct ScanGeometry {
    std::vector<double> depth;  ///< boundary k at depth[k - 1] * height
    std::vector<Wave> waves;
    double gain = 1.0;
};

ScanGeometry scan_geometry(const PhantomConfig& cfg, Index scan) {
    std::mt19937_64 rng(derive_seed(cfg.seed, "phantom-scan", {static_cast<std::uint64_t>(scan)}));
    std::vector<double> frac(cfg.thickness);
    for (double& f : frac) f *= 1.0 + cfg.thickness_jitter * symmetric(rng);
    const double total = std::accumulate(frac.begin(), frac.end(), 0.0);
    ScanGeometry g;
    double cum = 0.0;
    for (int k = 0; k < cfg.layer_count; ++k) {
        cum += frac[k] / total;
        g.depth.push_back(cum);
    }
    g.gain = 1.0 + cfg.gain_jitter * symmetric(rng);
    for (int k = 0; k < cfg.layer_count; ++k) {
        Wave w{};
        for (int m = 0; m < kHarmonics; ++m) {
            w.amplitude[m] = 0.3 + 0.7 * uniform01(rng);
            w.cycles[m] = 0.5 + 0.75 * (m + uniform01(rng));
            w.phase[m] = 2.0 * std::numbers::pi * uniform01(rng);
            w.drift[m] = 0.15 * symmetric(rng);
        }
        g.waves.push_back(w);
    }
    return g;
}

double displacement(const Wave& w, double x, Index slice) {
    double sum = 0.0, norm = 0.0;
    for (int m = 0; m < kHarmonics; ++m) {
        sum += w.amplitude[m] *
               std::sin(2.0 * std::numbers::pi * w.cycles[m] * x + w.phase[m] + w.drift[m] * static_cast<double>(slice));
        norm += w.amplitude[m];
    }
    return sum / norm;
}

std::string id(char prefix, Index n) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c%03ld", prefix, static_cast<long>(n));
    return buf;
}

}  // namespace

void PhantomConfig::validate() const {
    if (layer_count < 1) throw DataError("phantom needs at least one layer");
    if (layer_count + 1 > kDefaultClassCount)
        throw DataError("layer_count " + std::to_string(layer_count) + " gives " + std::to_string(layer_count + 1) +
                        " classes; the segmentation model supports at most 7 classes (background + 6 layers)");
    if (height < kMinImageExtent || width < kMinImageExtent)
        throw DataError("phantom extent must be at least " + std::to_string(kMinImageExtent));
    const auto regions = static_cast<std::size_t>(layer_count + 1);
    if (thickness.size() != regions || intensity.size() != regions)
        throw DataError("thickness and intensity need layer_count + 1 = " + std::to_string(regions) + " entries");
    for (double f : thickness)
        if (!(f > 0.0)) throw DataError("thickness fractions must be positive");
    if (std::abs(std::accumulate(thickness.begin(), thickness.end(), 0.0) - 1.0) > 1e-9)
        throw DataError("thickness fractions must sum to 1");
    for (double v : intensity)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("intensities must lie in [0, 1]");
    if (!(waviness >= 0.0) || !(speckle >= 0.0) || !(noise_sigma >= 0.0))
        throw DataError("waviness, speckle and noise must be non-negative");
    if (!(thickness_jitter >= 0.0 && thickness_jitter < 1.0) || !(gain_jitter >= 0.0 && gain_jitter < 1.0))
        throw DataError("jitter amounts must lie in [0, 1)");
    if (scans_per_patient < 1) throw DataError("scans_per_patient must be >= 1");
    // Adjacent boundaries move independently by up to `waviness` each; the
    // thinnest jittered region must absorb both excursions.
    const double min_frac = *std::min_element(thickness.begin(), thickness.end());
    const double min_rows = min_frac * static_cast<double>(height) * (1.0 - thickness_jitter) / (1.0 + thickness_jitter);
    if (2.0 * waviness >= min_rows)
        throw DataError("waviness " + std::to_string(waviness) + " would let layers invert (thinnest layer spans " +
                        std::to_string(min_rows) + " rows)");
}

PhantomConfig default_phantom_config(int layer_count, Index size, std::uint64_t seed) {
    PhantomConfig cfg;
    cfg.height = cfg.width = size;
    cfg.seed = seed;
    cfg.waviness *= static_cast<double>(size) / 64.0;
    if (layer_count == 6 || layer_count < 1 || layer_count + 1 > kDefaultClassCount) {
        cfg.layer_count = layer_count;
        return cfg;
    }
    cfg.layer_count = layer_count;
    const auto regions = static_cast<std::size_t>(layer_count + 1);
    cfg.thickness.assign(regions, 1.0 / static_cast<double>(regions));
    cfg.intensity.clear();
    for (std::size_t k = 0; k < regions; ++k) cfg.intensity.push_back(k == 0 ? 0.05 : (k % 2 ? 0.8 : 0.35));
    return cfg;
}

PhantomSlice render_phantom_slice(const PhantomConfig& cfg, Index scan, Index slice) {
    cfg.validate();
    const ScanGeometry geo = scan_geometry(cfg, scan);
    std::mt19937_64 rng(
        derive_seed(cfg.seed, "phantom-slice", {static_cast<std::uint64_t>(scan), static_cast<std::uint64_t>(slice)}));
    const auto H = static_cast<double>(cfg.height);

    PhantomSlice out;
    out.mask.resize(cfg.height, cfg.width);
    out.image.resize(cfg.height, cfg.width);
    std::vector<double> boundary(cfg.layer_count);
    for (Index c = 0; c < cfg.width; ++c) {
        const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(cfg.width);
        for (int k = 0; k < cfg.layer_count; ++k)
            boundary[k] = geo.depth[k] * H + cfg.waviness * displacement(geo.waves[k], x, slice);
        for (Index r = 0; r < cfg.height; ++r) {
            const double centre = static_cast<double>(r) + 0.5;
            out.mask(r, c) = static_cast<std::int32_t>(
                std::count_if(boundary.begin(), boundary.end(), [&](double b) { return b <= centre; }));
        }
    }
    const double s = cfg.speckle;
    for (Index r = 0; r < cfg.height; ++r)
        for (Index c = 0; c < cfg.width; ++c) {
            const double level = cfg.intensity[out.mask(r, c)] * geo.gain;
            const double speckle = std::exp(s * normal(rng) - 0.5 * s * s);
            const double v = std::clamp(level * speckle + cfg.noise_sigma * normal(rng), 0.0, 1.0);
            out.image(r, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
    return out;
}

DatasetManifest generate_phantom(const PhantomConfig& cfg, Index n_scans, Index slices_per_scan,
                                 const fs::path& out_dir) {
    cfg.validate();
    if (n_scans < 1 || slices_per_scan < 1) throw DataError("phantom needs at least one scan and one slice");
    std::error_code ec;
    fs::create_directories(out_dir / "images", ec);
    if (!ec) fs::create_directories(out_dir / "masks", ec);
    if (ec) throw DataError("cannot create output directory " + out_dir.string() + ": " + ec.message());
    const fs::path base = fs::absolute(out_dir);

    DatasetManifest manifest;
    manifest.root = base;
    manifest.class_count = kDefaultClassCount;
    for (Index s = 0; s < n_scans; ++s) {
        for (Index i = 0; i < slices_per_scan; ++i) {
            const PhantomSlice slice = render_phantom_slice(cfg, s, i);
            ManifestEntry e;
            e.meta = {id('P', s / cfg.scans_per_patient), id('S', s), i};
            char name[64];
            std::snprintf(name, sizeof(name), "%s_%s_%03ld.png", e.meta.patient_id.c_str(), e.meta.scan_id.c_str(),
                          static_cast<long>(i));
            e.image = base / "images" / name;
            e.mask = base / "masks" / name;
            try {
                io::write_gray8_png(e.image, slice.image);
                io::write_gray8_png(*e.mask, slice.mask.cast<std::uint8_t>());
            } catch (const io::PngError& err) {
                throw DataError(err.what(), e.meta);
            }
            manifest.entries.push_back(std::move(e));
        }
    }
    write_manifest(manifest, base);
    return manifest;
}

}  // namespace grn::data
