#ifndef GRN_DATA_HPP
#define GRN_DATA_HPP

#include "grn/tensor.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace grn::data {

/// Background plus six tissue layers.
inline constexpr int kDefaultClassCount = 7;
inline constexpr Index kMinImageExtent = 16;

struct SampleMeta {
    std::string patient_id;
    std::string scan_id;
    Index slice_index = 0;

    /// Scans are identified by (patient, scan) jointly.
    std::string scan_key() const { return patient_id + "/" + scan_id; }
    std::string str() const { return patient_id + "/" + scan_id + "#" + std::to_string(slice_index); }
    auto operator<=>(const SampleMeta&) const = default;
};

struct ImageSample {
    SampleMeta meta;
    ImageF image;  ///< values in [-1, 1]
};

struct LabeledSample {
    SampleMeta meta;
    ImageF image;
    LabelImage mask;  ///< values in [0, class_count)
};

struct ManifestEntry {
    SampleMeta meta;
    std::filesystem::path image;                ///< absolute
    std::optional<std::filesystem::path> mask;  ///< absolute

    bool labeled() const { return mask.has_value(); }
};

struct DatasetManifest {
    std::filesystem::path root;
    int class_count = kDefaultClassCount;
    std::vector<ManifestEntry> entries;
};

/// Data errors carry the offending entry so they can be reported verbatim.
class DataError : public std::runtime_error {
public:
    DataError(const std::string& what, std::optional<SampleMeta> meta = std::nullopt)
        : std::runtime_error(meta ? what + " [entry " + meta->str() + "]" : what), meta_(std::move(meta)) {}
    const std::optional<SampleMeta>& meta() const { return meta_; }

private:
    std::optional<SampleMeta> meta_;
};

/// Accepts either a directory holding manifest.json or the file itself.
/// Labeled entries have their masks decoded and checked against the image
/// extent and class count.
DatasetManifest load_manifest(const std::filesystem::path& root_or_file);
/// Writes manifest.json into `dir` with paths relative to it.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);

enum class Role { train, validation, test };
const char* role_name(Role r);
Role parse_role(const std::string& s);

struct SplitFractions {
    double train = 0.6;
    double validation = 0.2;
    double test = 0.2;
};

struct SplitAssignment {
    std::map<std::string, Role> roles;           ///< patient_id -> role
    std::set<std::string> labeled_scan_keys;     ///< subset of train-role scans

    std::vector<ManifestEntry> entries(const DatasetManifest& manifest, Role role) const;
    std::size_t patient_count(Role role) const;
};

using SplitOverride = std::map<std::string, Role>;

/// Reads splits.json: {patient_id: "train" | "validation" | "test"}.
SplitOverride load_split_override(const std::filesystem::path& path);

/// Seeded patient-level partition. An override, when given, must cover
/// every patient in the manifest and takes precedence.
SplitAssignment split_by_patient(const DatasetManifest& manifest, SplitFractions fractions, std::uint64_t seed,
                                 const std::optional<SplitOverride>& override_roles = std::nullopt);

struct LabelSelection {
    std::vector<ManifestEntry> labeled;
    std::vector<ManifestEntry> unlabeled;
    std::vector<std::string> labeled_scans;
};

/// Scan-level selection of max(1, round(fraction * scans)) scans. Records
/// the chosen scans in `split`.
LabelSelection select_labeled_fraction(SplitAssignment& split, const std::vector<ManifestEntry>& train_entries,
                                       double fraction, std::uint64_t seed);

/// v' = 2 v / (2^bits - 1) - 1.
ImageF normalize(const Image<std::uint16_t>& raw, int bit_depth);
Image<std::uint16_t> denormalize(const ImageF& image, int bit_depth);

ImageSample load_image(const ManifestEntry& entry);
LabeledSample load_labeled(const ManifestEntry& entry, int class_count);
std::vector<ImageSample> load_images(const std::vector<ManifestEntry>& entries);
std::vector<LabeledSample> load_labeled(const std::vector<ManifestEntry>& entries, int class_count);

/// Deterministic index stream. Without cycling one pass is produced and the
/// final short batch is kept; with cycling the permuted passes are
/// concatenated indefinitely and cut into full batches.
class BatchIterator {
public:
    BatchIterator(std::size_t count, std::size_t batch_size, bool shuffle, std::uint64_t seed, bool cycle);

    std::optional<std::vector<std::size_t>> next();
    /// Restart a non-cycling pass for the given epoch.
    void reset(std::size_t epoch);

    std::size_t epoch() const { return epoch_; }
    std::size_t batches_per_epoch() const { return (count_ + batch_size_ - 1) / batch_size_; }

private:
    void refill();

    std::size_t count_;
    std::size_t batch_size_;
    bool shuffle_;
    std::uint64_t seed_;
    bool cycle_;
    std::size_t epoch_ = 0;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
};

/// Permutation used for one epoch; identity when shuffle is off.
std::vector<std::size_t> epoch_order(std::size_t count, bool shuffle, std::uint64_t seed, std::size_t epoch);

TensorF stack_images(const std::vector<const ImageF*>& images);
LabelBatch stack_masks(const std::vector<const LabelImage*>& masks);

struct Batch {
    TensorF images;
    LabelBatch masks;
};

Batch make_batch(const std::vector<LabeledSample>& samples, const std::vector<std::size_t>& index);
TensorF make_image_batch(const std::vector<ImageSample>& samples, const std::vector<std::size_t>& index);

}  // namespace grn::data

#endif  // GRN_DATA_HPP
