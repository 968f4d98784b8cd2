#ifndef GRN_TEST_HELPERS_HPP
#define GRN_TEST_HELPERS_HPP

#include "grn/phantom.hpp"
#include "grn/tensor.hpp"

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace grn::test {

inline TensorF random_tensor(Shape4 s, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
    std::uniform_real_distribution<float> u(lo, hi);
    TensorF t(s);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
    return t;
}

inline LabelBatch random_labels(Shape4 s, int classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> u(0, classes - 1);
    LabelBatch t(s);
    for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
    return t;
}

/// Phantom slices rendered in memory, one scan per `per_scan` slices.
inline std::vector<data::LabeledSample> phantom_samples(int count, Index size, std::uint64_t seed, int per_scan = 4) {
    const data::PhantomConfig cfg = data::default_phantom_config(6, size, seed);
    std::vector<data::LabeledSample> out;
    for (int i = 0; i < count; ++i) {
        const data::PhantomSlice s = data::render_phantom_slice(cfg, i / per_scan, i % per_scan);
        data::LabeledSample x;
        x.meta = {"p" + std::to_string(i / per_scan), "s0", i % per_scan};
        x.image = data::normalize(s.image.cast<std::uint16_t>(), 8);
        x.mask = s.mask;
        out.push_back(std::move(x));
    }
    return out;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("grn-" + tag + "-" + std::to_string(rd()));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

}  // namespace grn::test

#endif  // GRN_TEST_HELPERS_HPP
