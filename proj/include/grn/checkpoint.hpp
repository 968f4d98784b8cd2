#ifndef GRN_CHECKPOINT_HPP
#define GRN_CHECKPOINT_HPP

#include "grn/models.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace grn::checkpoint {

inline constexpr int kSchemaVersion = 1;

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

nlohmann::json to_json(const models::BundleConfig& config);
models::BundleConfig bundle_config_from_json(const nlohmann::json& j);

/// Layout: 8-byte magic, u32 schema version, u64 header length, JSON
/// header (configs, tensor index, RNG state, caller metadata), then raw
/// little-endian float32 blobs in index order.
void save(const models::ModelBundle& bundle, const std::filesystem::path& path,
          const nlohmann::json& metadata = nlohmann::json::object());

struct Loaded {
    std::unique_ptr<models::ModelBundle> bundle;
    nlohmann::json metadata;
};

/// When `expected` is given, any difference in configuration is an error.
Loaded load(const std::filesystem::path& path, const std::optional<models::BundleConfig>& expected = std::nullopt);

/// Header only; no tensors are read.
nlohmann::json read_header(const std::filesystem::path& path);

/// Hex FNV-1a 64 of the file contents.
std::string file_hash(const std::filesystem::path& path);

}  // namespace grn::checkpoint

#endif  // GRN_CHECKPOINT_HPP
