#include "grn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace grn::checkpoint {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'G', 'R', 'N', 'C', 'K', 'P', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

json shape_json(const Shape4& s) { return json::array({s.n, s.c, s.h, s.w}); }

Shape4 shape_from(const json& j) { return {j.at(0).get<Index>(), j.at(1).get<Index>(), j.at(2).get<Index>(), j.at(3).get<Index>()}; }

struct Writer {
    json index = json::array();
    std::vector<const TensorF*> blobs;
    std::uint64_t offset = 0;

    void add(const std::string& key, const TensorF& t) {
        index.push_back({{"key", key}, {"shape", shape_json(t.shape())}, {"offset", offset}});
        blobs.push_back(&t);
        offset += static_cast<std::uint64_t>(t.size()) * sizeof(float);
    }
};

void add_adam(Writer& w, const std::string& prefix, const AdamState& s) {
    for (std::size_t i = 0; i < s.first_moment.size(); ++i) {
        w.add(prefix + ".m." + std::to_string(i), s.first_moment[i]);
        w.add(prefix + ".v." + std::to_string(i), s.second_moment[i]);
    }
}

struct Raw {
    json header;
    std::string blob;
};

Raw read_raw(const fs::path& path, bool with_blob) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(path.string() + " is not a GRN checkpoint");
    if (version != kSchemaVersion)
        throw CheckpointError(path.string() + ": schema version " + std::to_string(version) + ", expected " +
                              std::to_string(kSchemaVersion));
    std::string text(header_len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw CheckpointError(path.string() + ": truncated header");
    Raw raw;
    try {
        raw.header = json::parse(text);
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + ": corrupt header: " + e.what());
    }
    if (with_blob) {
        std::ostringstream rest;
        rest << in.rdbuf();
        raw.blob = rest.str();
    }
    return raw;
}

// Lists the leaf paths where two JSON documents differ.
void diff(const json& a, const json& b, const std::string& path, std::vector<std::string>& out) {
    if (a.is_object() && b.is_object()) {
        for (const auto& [k, v] : a.items())
            diff(v, b.contains(k) ? b.at(k) : json(), path.empty() ? k : path + "." + k, out);
        for (const auto& [k, v] : b.items())
            if (!a.contains(k)) out.push_back((path.empty() ? k : path + "." + k) + ": missing vs " + v.dump());
        return;
    }
    if (a != b) out.push_back(path + ": checkpoint " + a.dump() + " vs expected " + b.dump());
}

}  // namespace

json to_json(const models::BundleConfig& c) {
    return {{"segmentor",
             {{"in_channels", c.segmentor.in_channels},
              {"class_count", c.segmentor.class_count},
              {"encoder_channels", c.segmentor.encoder_channels}}},
            {"generator",
             {{"base_channels", c.generator.base_channels},
              {"downsample_stages", c.generator.downsample_stages},
              {"residual_blocks_per_stage", c.generator.residual_blocks_per_stage},
              {"skip_connections", c.generator.skip_connections},
              {"identity", c.generator.identity}}},
            {"discriminator", {{"layer_channels", c.discriminator.layer_channels}}},
            {"optimizer",
             {{"learning_rate", c.optimizer.learning_rate},
              {"beta1", c.optimizer.beta1},
              {"beta2", c.optimizer.beta2},
              {"eps", c.optimizer.eps}}},
            {"seed", c.seed}};
}

models::BundleConfig bundle_config_from_json(const json& j) {
    models::BundleConfig c;
    const json& s = j.at("segmentor");
    c.segmentor.in_channels = s.at("in_channels").get<Index>();
    c.segmentor.class_count = s.at("class_count").get<int>();
    c.segmentor.encoder_channels = s.at("encoder_channels").get<std::vector<Index>>();
    const json& g = j.at("generator");
    c.generator.base_channels = g.at("base_channels").get<Index>();
    c.generator.downsample_stages = g.at("downsample_stages").get<int>();
    c.generator.residual_blocks_per_stage = g.at("residual_blocks_per_stage").get<int>();
    c.generator.skip_connections = g.at("skip_connections").get<bool>();
    c.generator.identity = g.at("identity").get<bool>();
    c.discriminator.layer_channels = j.at("discriminator").at("layer_channels").get<std::vector<Index>>();
    const json& o = j.at("optimizer");
    c.optimizer.learning_rate = o.at("learning_rate").get<float>();
    c.optimizer.beta1 = o.at("beta1").get<float>();
    c.optimizer.beta2 = o.at("beta2").get<float>();
    c.optimizer.eps = o.at("eps").get<float>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

void save(const models::ModelBundle& bundle, const fs::path& path, const json& metadata) {
    const models::BundleState state = bundle.snapshot();
    Writer w;
    for (const auto& [name, t] : state.generator) w.add("G." + name, t);
    for (const auto& [name, t] : state.segmentor) w.add("S." + name, t);
    for (const auto& [name, t] : state.discriminator) w.add("D." + name, t);
    add_adam(w, "adam.G", state.adam_generator);
    add_adam(w, "adam.S", state.adam_segmentor);
    add_adam(w, "adam.D", state.adam_discriminator);

    const json header{
        {"schema_version", kSchemaVersion},
        {"config", to_json(bundle.config())},
        {"tensors", w.index},
        {"adam",
         {{"G", {{"steps", state.adam_generator.steps}, {"total", state.steps_generator}}},
          {"S", {{"steps", state.adam_segmentor.steps}, {"total", state.steps_segmentor}}},
          {"D", {{"steps", state.adam_discriminator.steps}, {"total", state.steps_discriminator}}}}},
        {"rng", state.rng},
        {"metadata", metadata}};
    const std::string text = header.dump();

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
        const std::uint32_t version = kSchemaVersion;
        const std::uint64_t len = text.size();
        out.write(kMagic, 8);
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        out.write(reinterpret_cast<const char*>(&len), sizeof(len));
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        for (const TensorF* t : w.blobs)
            out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
        if (!out) throw CheckpointError("write failed for " + path.string());
    }
    fs::rename(tmp, path);
}

json read_header(const fs::path& path) { return read_raw(path, false).header; }

Loaded load(const fs::path& path, const std::optional<models::BundleConfig>& expected) {
    const Raw raw = read_raw(path, true);
    const json& h = raw.header;
    models::BundleConfig config;
    try {
        config = bundle_config_from_json(h.at("config"));
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + ": bad config block: " + e.what());
    }
    if (expected && !(*expected == config)) {
        std::vector<std::string> diffs;
        diff(to_json(config), to_json(*expected), "", diffs);
        std::string msg = path.string() + ": configuration mismatch";
        for (const auto& d : diffs) msg += "; " + d;
        throw CheckpointError(msg);
    }

    std::map<std::string, TensorF> tensors;
    for (const json& e : h.at("tensors")) {
        const Shape4 shape = shape_from(e.at("shape"));
        const auto offset = e.at("offset").get<std::uint64_t>();
        const std::uint64_t bytes = static_cast<std::uint64_t>(shape.size()) * sizeof(float);
        if (offset + bytes > raw.blob.size()) throw CheckpointError(path.string() + ": truncated tensor data");
        TensorF t(shape);
        std::memcpy(t.data(), raw.blob.data() + offset, bytes);
        tensors.emplace(e.at("key").get<std::string>(), std::move(t));
    }
    auto take_group = [&](const std::string& prefix) {
        nn::StateDict out;
        for (const auto& [k, t] : tensors)
            if (k.rfind(prefix, 0) == 0) out.emplace(k.substr(prefix.size()), t);
        return out;
    };
    auto take_adam = [&](const std::string& net) {
        AdamState s;
        s.steps = h.at("adam").at(net).at("steps").get<std::vector<std::int64_t>>();
        for (std::size_t i = 0; i < s.steps.size(); ++i) {
            const std::string base = "adam." + net;
            auto m = tensors.find(base + ".m." + std::to_string(i));
            auto v = tensors.find(base + ".v." + std::to_string(i));
            if (m == tensors.end() || v == tensors.end())
                throw CheckpointError(path.string() + ": missing optimizer moments for " + net);
            s.first_moment.push_back(m->second);
            s.second_moment.push_back(v->second);
        }
        return s;
    };

    models::BundleState state;
    state.generator = take_group("G.");
    state.segmentor = take_group("S.");
    state.discriminator = take_group("D.");
    state.adam_generator = take_adam("G");
    state.adam_segmentor = take_adam("S");
    state.adam_discriminator = take_adam("D");
    state.steps_generator = h.at("adam").at("G").at("total").get<std::int64_t>();
    state.steps_segmentor = h.at("adam").at("S").at("total").get<std::int64_t>();
    state.steps_discriminator = h.at("adam").at("D").at("total").get<std::int64_t>();
    state.rng = h.at("rng").get<std::string>();

    Loaded out;
    out.bundle = std::make_unique<models::ModelBundle>(config);
    try {
        out.bundle->restore(state);
    } catch (const std::runtime_error& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
    out.metadata = h.value("metadata", json::object());
    return out;
}

std::string file_hash(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ull;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ull;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

}  // namespace grn::checkpoint
