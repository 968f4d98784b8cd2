#ifndef GRN_PHANTOM_HPP
#define GRN_PHANTOM_HPP

#include "grn/data.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace grn::data {

/// Synthetic layered-tissue phantom. Region 0 is the background above the
/// first boundary; region k lies below boundary k.
struct PhantomConfig {
    Index height = 64;
    Index width = 64;
    int layer_count = 6;
    /// layer_count + 1 entries (background first), summing to 1.
    std::vector<double> thickness = {0.08, 0.12, 0.14, 0.07, 0.16, 0.07, 0.36};
    /// Peak boundary displacement in pixels.
    double waviness = 1.5;
    /// Mean echo level per region in [0, 1].
    std::vector<double> intensity = {0.05, 0.75, 0.3, 0.85, 0.35, 0.9, 0.5};
    /// Log-normal multiplicative speckle strength.
    double speckle = 0.35;
    double noise_sigma = 0.06;
    /// Per-scan relative perturbation of layer thicknesses and overall gain.
    double thickness_jitter = 0.1;
    double gain_jitter = 0.25;
    int scans_per_patient = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Defaults for an arbitrary layer count; the 6-layer case returns the
/// hand-tuned values above. Waviness scales with size relative to 64.
PhantomConfig default_phantom_config(int layer_count, Index size, std::uint64_t seed);

struct PhantomSlice {
    Image<std::uint8_t> image;
    LabelImage mask;
};

PhantomSlice render_phantom_slice(const PhantomConfig& config, Index scan, Index slice);

/// Writes images/, masks/ and manifest.json under out_dir.
DatasetManifest generate_phantom(const PhantomConfig& config, Index n_scans, Index slices_per_scan,
                                 const std::filesystem::path& out_dir);

}  // namespace grn::data

#endif  // GRN_PHANTOM_HPP
