#include "grn/data.hpp"

#include "grn/png_io.hpp"
#include "grn/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace grn::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); })) return json::object();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

void check_extent(Index h, Index w, const SampleMeta& meta) {
    if (h < kMinImageExtent || w < kMinImageExtent)
        throw DataError("image is " + std::to_string(h) + "x" + std::to_string(w) + ", minimum extent is " +
                            std::to_string(kMinImageExtent),
                        meta);
}

LabelImage decode_mask(const ManifestEntry& entry, Index h, Index w, int class_count) {
    io::GrayPng png;
    try {
        png = io::read_gray_png(*entry.mask);
    } catch (const io::PngError& e) {
        throw DataError(std::string("mask: ") + e.what(), entry.meta);
    }
    if (png.bit_depth != 8) throw DataError("mask must be an 8-bit PNG: " + entry.mask->string(), entry.meta);
    if (png.pixels.rows() != h || png.pixels.cols() != w)
        throw DataError("mask is " + std::to_string(png.pixels.rows()) + "x" + std::to_string(png.pixels.cols()) +
                            " but image is " + std::to_string(h) + "x" + std::to_string(w),
                        entry.meta);
    const int max_value = png.pixels.size() ? png.pixels.maxCoeff() : 0;
    if (max_value >= class_count)
        throw DataError("mask value " + std::to_string(max_value) + " >= class_count " + std::to_string(class_count),
                        entry.meta);
    return png.pixels.cast<std::int32_t>();
}

io::GrayPng decode_image(const ManifestEntry& entry) {
    try {
        io::GrayPng png = io::read_gray_png(entry.image);
        check_extent(png.pixels.rows(), png.pixels.cols(), entry.meta);
        return png;
    } catch (const io::PngError& e) {
        throw DataError(std::string("image: ") + e.what(), entry.meta);
    }
}

}  // namespace

DatasetManifest load_manifest(const fs::path& root_or_file) {
    const fs::path file = fs::is_directory(root_or_file) ? root_or_file / "manifest.json" : root_or_file;
    if (!fs::exists(file)) throw DataError("manifest not found: " + file.string());
    const json doc = read_json_file(file);
    if (!doc.is_object()) throw DataError(file.string() + ": manifest must be a JSON object");

    DatasetManifest manifest;
    manifest.root = fs::absolute(file.parent_path());
    manifest.class_count = doc.value("class_count", kDefaultClassCount);
    if (manifest.class_count < 2) throw DataError("class_count must be >= 2");

    std::set<SampleMeta> seen;
    for (const json& e : doc.value("entries", json::array())) {
        ManifestEntry entry;
        try {
            entry.meta.patient_id = e.at("patient_id").get<std::string>();
            entry.meta.scan_id = e.at("scan_id").get<std::string>();
            entry.meta.slice_index = e.at("slice_index").get<Index>();
            entry.image = manifest.root / e.at("image").get<std::string>();
            if (e.contains("mask") && !e.at("mask").is_null())
                entry.mask = manifest.root / e.at("mask").get<std::string>();
        } catch (const json::exception& ex) {
            throw DataError(file.string() + ": malformed entry: " + ex.what());
        }
        if (entry.meta.slice_index < 0) throw DataError("negative slice_index", entry.meta);
        if (!seen.insert(entry.meta).second) throw DataError("duplicate entry", entry.meta);
        if (!fs::exists(entry.image)) throw DataError("missing image file " + entry.image.string(), entry.meta);
        if (entry.mask) {
            if (!fs::exists(*entry.mask)) throw DataError("missing mask file " + entry.mask->string(), entry.meta);
            const io::GrayPng img = decode_image(entry);
            decode_mask(entry, img.pixels.rows(), img.pixels.cols(), manifest.class_count);
        }
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& dir) {
    fs::create_directories(dir);
    const fs::path base = fs::absolute(dir);
    json entries = json::array();
    for (const auto& e : manifest.entries) {
        json j{{"patient_id", e.meta.patient_id},
               {"scan_id", e.meta.scan_id},
               {"slice_index", e.meta.slice_index},
               {"image", fs::relative(e.image, base).generic_string()}};
        j["mask"] = e.mask ? json(fs::relative(*e.mask, base).generic_string()) : json(nullptr);
        entries.push_back(std::move(j));
    }
    const json doc{{"class_count", manifest.class_count}, {"entries", std::move(entries)}};
    std::ofstream out(base / "manifest.json");
    if (!out) throw DataError("cannot write " + (base / "manifest.json").string());
    out << doc.dump(1) << "\n";
}

const char* role_name(Role r) {
    switch (r) {
        case Role::train: return "train";
        case Role::validation: return "validation";
        case Role::test: return "test";
    }
    return "?";
}

Role parse_role(const std::string& s) {
    if (s == "train") return Role::train;
    if (s == "validation" || s == "val") return Role::validation;
    if (s == "test") return Role::test;
    throw DataError("unknown split role '" + s + "'");
}

std::vector<ManifestEntry> SplitAssignment::entries(const DatasetManifest& manifest, Role role) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : manifest.entries) {
        auto it = roles.find(e.meta.patient_id);
        if (it != roles.end() && it->second == role) out.push_back(e);
    }
    return out;
}

std::size_t SplitAssignment::patient_count(Role role) const {
    return static_cast<std::size_t>(
        std::count_if(roles.begin(), roles.end(), [role](const auto& kv) { return kv.second == role; }));
}

SplitOverride load_split_override(const fs::path& path) {
    const json doc = read_json_file(path);
    if (!doc.is_object()) throw DataError(path.string() + ": expected an object of patient_id -> role");
    SplitOverride out;
    for (const auto& [patient, role] : doc.items()) {
        if (!role.is_string()) throw DataError(path.string() + ": role for " + patient + " is not a string");
        out[patient] = parse_role(role.get<std::string>());
    }
    return out;
}

SplitAssignment split_by_patient(const DatasetManifest& manifest, SplitFractions f, std::uint64_t seed,
                                 const std::optional<SplitOverride>& override_roles) {
    std::vector<std::string> patients;
    for (const auto& e : manifest.entries)
        if (std::find(patients.begin(), patients.end(), e.meta.patient_id) == patients.end())
            patients.push_back(e.meta.patient_id);
    std::sort(patients.begin(), patients.end());

    SplitAssignment out;
    if (override_roles) {
        for (const auto& p : patients) {
            auto it = override_roles->find(p);
            if (it == override_roles->end()) throw DataError("split override has no role for patient " + p);
            out.roles[p] = it->second;
        }
        return out;
    }

    const double fr[3] = {f.train, f.validation, f.test};
    for (double v : fr)
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("split fractions must lie in [0, 1]");
    if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-6) throw DataError("split fractions must sum to 1");
    const int nonzero = static_cast<int>(std::count_if(std::begin(fr), std::end(fr), [](double v) { return v > 0; }));
    const auto n = static_cast<long>(patients.size());
    if (n < nonzero)
        throw DataError(std::to_string(n) + " patients cannot fill " + std::to_string(nonzero) + " non-empty splits");

    long count[3];
    for (int i = 0; i < 3; ++i) count[i] = std::lround(fr[i] * static_cast<double>(n));
    // Absorb rounding drift in the largest split, then lift empty non-zero
    // splits to one patient by borrowing from the largest.
    auto largest = [&] { return static_cast<int>(std::max_element(count, count + 3) - count); };
    count[largest()] += n - (count[0] + count[1] + count[2]);
    for (int i = 0; i < 3; ++i)
        while (fr[i] > 0 && count[i] == 0) {
            --count[largest()];
            ++count[i];
        }

    std::mt19937_64 rng(derive_seed(seed, "split"));
    shuffle_in_place(patients, rng);
    const Role order[3] = {Role::train, Role::validation, Role::test};
    std::size_t k = 0;
    for (int i = 0; i < 3; ++i)
        for (long j = 0; j < count[i]; ++j) out.roles[patients[k++]] = order[i];
    return out;
}

LabelSelection select_labeled_fraction(SplitAssignment& split, const std::vector<ManifestEntry>& train_entries,
                                       double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw DataError("label fraction must be in (0, 1], got " + std::to_string(fraction));
    std::vector<std::string> scans;
    for (const auto& e : train_entries) {
        auto it = split.roles.find(e.meta.patient_id);
        if (it == split.roles.end() || it->second != Role::train)
            throw DataError("entry is not in the train split", e.meta);
        const std::string key = e.meta.scan_key();
        if (std::find(scans.begin(), scans.end(), key) == scans.end()) scans.push_back(key);
    }
    std::sort(scans.begin(), scans.end());
    LabelSelection out;
    if (scans.empty()) return out;

    const auto k = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * scans.size())));
    std::mt19937_64 rng(derive_seed(seed, "labeled"));
    shuffle_in_place(scans, rng);
    std::set<std::string> chosen(scans.begin(), scans.begin() + static_cast<std::ptrdiff_t>(std::min(k, scans.size())));
    out.labeled_scans.assign(chosen.begin(), chosen.end());
    split.labeled_scan_keys = chosen;
    for (const auto& e : train_entries) (chosen.count(e.meta.scan_key()) ? out.labeled : out.unlabeled).push_back(e);
    return out;
}

ImageF normalize(const Image<std::uint16_t>& raw, int bit_depth) {
    if (bit_depth < 1 || bit_depth > 16) throw DataError("bit depth must be in [1, 16]");
    const double top = std::ldexp(1.0, bit_depth) - 1.0;
    if (raw.size() && raw.maxCoeff() > top)
        throw DataError("raw value " + std::to_string(raw.maxCoeff()) + " exceeds " + std::to_string(bit_depth) +
                        "-bit range");
    return (raw.cast<double>() * (2.0 / top) - 1.0).cast<float>();
}

Image<std::uint16_t> denormalize(const ImageF& image, int bit_depth) {
    const double top = std::ldexp(1.0, bit_depth) - 1.0;
    return ((image.cast<double>() + 1.0) * (top / 2.0)).round().max(0.0).min(top).cast<std::uint16_t>();
}

ImageSample load_image(const ManifestEntry& entry) {
    const io::GrayPng png = decode_image(entry);
    return {entry.meta, normalize(png.pixels, png.bit_depth)};
}

LabeledSample load_labeled(const ManifestEntry& entry, int class_count) {
    if (!entry.mask) throw DataError("entry has no mask", entry.meta);
    ImageSample img = load_image(entry);
    LabelImage mask = decode_mask(entry, img.image.rows(), img.image.cols(), class_count);
    return {entry.meta, std::move(img.image), std::move(mask)};
}

std::vector<ImageSample> load_images(const std::vector<ManifestEntry>& entries) {
    std::vector<ImageSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(load_image(e));
    return out;
}

std::vector<LabeledSample> load_labeled(const std::vector<ManifestEntry>& entries, int class_count) {
    std::vector<LabeledSample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(load_labeled(e, class_count));
    return out;
}

std::vector<std::size_t> epoch_order(std::size_t count, bool shuffle, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        std::mt19937_64 rng(derive_seed(seed, "batches", {epoch}));
        shuffle_in_place(order, rng);
    }
    return order;
}

BatchIterator::BatchIterator(std::size_t count, std::size_t batch_size, bool shuffle, std::uint64_t seed, bool cycle)
    : count_(count), batch_size_(batch_size), shuffle_(shuffle), seed_(seed), cycle_(cycle) {
    if (count == 0) throw DataError("batch iterator over an empty entry list");
    if (batch_size == 0) throw DataError("batch size must be positive");
    refill();
}

void BatchIterator::refill() {
    order_ = epoch_order(count_, shuffle_, seed_, epoch_);
    cursor_ = 0;
}

void BatchIterator::reset(std::size_t epoch) {
    epoch_ = epoch;
    refill();
}

std::optional<std::vector<std::size_t>> BatchIterator::next() {
    std::vector<std::size_t> batch;
    while (batch.size() < batch_size_) {
        if (cursor_ == order_.size()) {
            if (!cycle_) break;
            ++epoch_;
            refill();
        }
        batch.push_back(order_[cursor_++]);
    }
    if (batch.empty()) return std::nullopt;
    return batch;
}

TensorF stack_images(const std::vector<const ImageF*>& images) {
    if (images.empty()) throw DataError("cannot stack an empty batch");
    const Index h = images.front()->rows(), w = images.front()->cols();
    TensorF out(static_cast<Index>(images.size()), 1, h, w);
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i]->rows() != h || images[i]->cols() != w) throw DataError("batch mixes image sizes");
        out.plane(static_cast<Index>(i), 0) = *images[i];
    }
    return out;
}

LabelBatch stack_masks(const std::vector<const LabelImage*>& masks) {
    if (masks.empty()) throw DataError("cannot stack an empty batch");
    const Index h = masks.front()->rows(), w = masks.front()->cols();
    LabelBatch out(static_cast<Index>(masks.size()), 1, h, w);
    for (std::size_t i = 0; i < masks.size(); ++i) {
        if (masks[i]->rows() != h || masks[i]->cols() != w) throw DataError("batch mixes mask sizes");
        out.plane(static_cast<Index>(i), 0) = *masks[i];
    }
    return out;
}

Batch make_batch(const std::vector<LabeledSample>& samples, const std::vector<std::size_t>& index) {
    std::vector<const ImageF*> imgs;
    std::vector<const LabelImage*> masks;
    for (auto i : index) {
        imgs.push_back(&samples.at(i).image);
        masks.push_back(&samples.at(i).mask);
    }
    return {stack_images(imgs), stack_masks(masks)};
}

TensorF make_image_batch(const std::vector<ImageSample>& samples, const std::vector<std::size_t>& index) {
    std::vector<const ImageF*> imgs;
    for (auto i : index) imgs.push_back(&samples.at(i).image);
    return stack_images(imgs);
}

}  // namespace grn::data
