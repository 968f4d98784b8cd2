#include "grn/harness.hpp"

#include "grn/checkpoint.hpp"
#include "grn/inference.hpp"
#include "grn/phantom.hpp"
#include "grn/plot.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#ifndef GRN_CODE_VERSION
#define GRN_CODE_VERSION "unknown"
#endif

namespace grn::harness {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Variants

const std::vector<std::string>& ablation_variants() {
    static const std::vector<std::string> v{"supervised",      "supervised_img_aug",   "gan_aug_baseline",
                                            "grn_sel",         "grn_sel+sge",          "no_seg_feedback",
                                            "negated_seg_feedback", "freeze_segmentor_for_LG"};
    return v;
}

const std::vector<double>& default_fractions() {
    static const std::vector<double> f{0.05, 0.10, 0.20, 0.30, 0.40, 0.50, 1.00};
    return f;
}

Variant parse_variant(const std::string& name) {
    Variant v;
    v.name = name;
    std::string base = name;
    const std::string suffix = "+sge";
    if (base.size() > suffix.size() && base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0) {
        v.sge = true;
        base.resize(base.size() - suffix.size());
    }
    try {
        v.ablation = trainer::parse_ablation(base);
        if (v.ablation == trainer::Ablation::none) throw ConfigError("variant 'none' is not a method");
        v.mode = trainer::Mode::grn_sel;
    } catch (const std::invalid_argument&) {
        try {
            v.mode = trainer::parse_mode(base);
        } catch (const std::invalid_argument&) {
            throw ConfigError("unknown method variant '" + name +
                              "' (expected a mode, an ablation name, or either with +sge)");
        }
    }
    if (v.sge && (v.mode == trainer::Mode::supervised || v.mode == trainer::Mode::supervised_img_aug))
        throw ConfigError("variant '" + name + "': SGE needs a trained generator");
    return v;
}

// ---------------------------------------------------------------------------
// Strict JSON reading

namespace {

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <typename T>
    void get(const std::string& key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where(key) + ": " + e.what());
        }
    }

    Reader child(const std::string& key) {
        seen_.insert(key);
        return Reader(j_.at(key), where(key));
    }

    std::string where(const std::string& key = "") const {
        if (key.empty()) return path_.empty() ? "config" : path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError("unknown key '" + where(key) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <typename F>
auto guard(const std::string& what, F&& f) {
    try {
        return f();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(what + ": " + e.what());
    }
}

const char* mix_name(losses::MixDistribution d) { return d == losses::MixDistribution::beta ? "beta" : "uniform"; }

losses::MixDistribution parse_mix(const std::string& s) {
    if (s == "uniform") return losses::MixDistribution::uniform;
    if (s == "beta") return losses::MixDistribution::beta;
    throw ConfigError("train.mix_distribution must be 'uniform' or 'beta', got '" + s + "'");
}

std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string fraction_label(double f) {
    std::ostringstream os;
    os << f * 100.0 << "%";
    return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    return json::parse(in);
}

std::string now_stamp() {
    return std::to_string(
        std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count());
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
    if (dataset.manifest.has_value() == dataset.phantom.has_value())
        throw ConfigError("dataset needs exactly one of 'manifest' or 'phantom'");
    if (dataset.phantom) {
        const PhantomSource& p = *dataset.phantom;
        if (p.scans < 1 || p.slices < 1) throw ConfigError("dataset.phantom: scans and slices must be >= 1");
        guard("dataset.phantom", [&] {
            data::default_phantom_config(p.layers, p.size, p.seed).validate();
            return 0;
        });
    }
    for (double f : {split.train, split.validation, split.test})
        if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("split fractions must lie in [0, 1]");
    if (std::abs(split.train + split.validation + split.test - 1.0) > 1e-9)
        throw ConfigError("split fractions must sum to 1");
    if (!(split.train > 0.0) || !(split.validation > 0.0) || !(split.test > 0.0))
        throw ConfigError("train, validation and test fractions must all be positive");
    guard("train", [&] {
        train.validate();
        return 0;
    });
    guard("model", [&] {
        model.segmentor.validate();
        model.generator.validate();
        model.discriminator.validate();
        return 0;
    });
    auto check_fraction = [](double f) {
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("label fractions must lie in (0, 1]");
    };
    check_fraction(label_fraction);
    if (fractions.empty()) throw ConfigError("fractions must be non-empty");
    for (double f : fractions) check_fraction(f);
    if (seeds.empty()) throw ConfigError("seeds must be non-empty");
    if (methods.empty()) throw ConfigError("methods must be non-empty");
    for (const std::string& m : methods) parse_variant(m);
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    Reader root(j, "");

    if (root.has("dataset")) {
        Reader ds = root.child("dataset");
        if (ds.has("manifest")) {
            std::string p;
            ds.get("manifest", p);
            c.dataset.manifest = p;
        }
        if (ds.has("phantom")) {
            Reader ph = ds.child("phantom");
            PhantomSource p;
            ph.get("layers", p.layers);
            ph.get("size", p.size);
            ph.get("scans", p.scans);
            ph.get("slices", p.slices);
            ph.get("seed", p.seed);
            ph.finish();
            c.dataset.phantom = p;
        }
        ds.finish();
    } else {
        c.dataset.phantom = PhantomSource{};
    }

    if (root.has("split")) {
        Reader s = root.child("split");
        s.get("train", c.split.train);
        s.get("validation", c.split.validation);
        s.get("test", c.split.test);
        s.get("seed", c.split_seed);
        if (s.has("override")) {
            json o;
            s.get("override", o);
            if (!o.is_null()) {
                if (!o.is_string()) throw ConfigError("split.override must be a path or null");
                c.split_override = o.get<std::string>();
            }
        }
        s.finish();
    }

    if (root.has("model")) {
        Reader m = root.child("model");
        if (m.has("segmentor")) {
            Reader s = m.child("segmentor");
            s.get("class_count", c.model.segmentor.class_count);
            s.get("encoder_channels", c.model.segmentor.encoder_channels);
            s.finish();
        }
        if (m.has("generator")) {
            Reader g = m.child("generator");
            g.get("base_channels", c.model.generator.base_channels);
            g.get("downsample_stages", c.model.generator.downsample_stages);
            g.get("residual_blocks_per_stage", c.model.generator.residual_blocks_per_stage);
            g.get("skip_connections", c.model.generator.skip_connections);
            g.finish();
        }
        if (m.has("discriminator")) {
            Reader d = m.child("discriminator");
            d.get("layer_channels", c.model.discriminator.layer_channels);
            d.finish();
        }
        m.finish();
    }

    if (root.has("train")) {
        Reader t = root.child("train");
        trainer::TrainConfig& tc = c.train;
        std::string mode = trainer::mode_name(tc.mode), ablation = trainer::ablation_name(tc.ablation);
        std::string mix = mix_name(tc.mix_distribution);
        t.get("mode", mode);
        t.get("ablation", ablation);
        tc.mode = guard("train.mode", [&] { return trainer::parse_mode(mode); });
        tc.ablation = guard("train.ablation", [&] { return trainer::parse_ablation(ablation); });
        t.get("batch_size", tc.batch_size);
        t.get("max_epochs", tc.max_epochs);
        t.get("patience", tc.patience);
        t.get("learning_rate", tc.learning_rate);
        t.get("beta1", tc.beta1);
        t.get("beta2", tc.beta2);
        t.get("lambda_adv", tc.weights.lambda_adv);
        t.get("lambda_seg", tc.weights.lambda_seg);
        t.get("lambda_l1", tc.weights.lambda_l1);
        t.get("lambda_cus", tc.weights.lambda_cus);
        t.get("sge_for_selection", tc.sge_for_selection);
        t.get("mix_distribution", mix);
        tc.mix_distribution = parse_mix(mix);
        t.get("mix_alpha", tc.mix_alpha);
        t.get("per_sample_lambda", tc.per_sample_lambda);
        t.get("gan_pretrain_epochs", tc.gan_pretrain_epochs);
        t.get("validation_batch_size", tc.validation_batch_size);
        if (t.has("augmentation")) {
            Reader a = t.child("augmentation");
            a.get("flip_probability", tc.augmentation.flip_probability);
            a.get("max_rotation_degrees", tc.augmentation.max_rotation_degrees);
            a.get("intensity_scale", tc.augmentation.intensity_scale);
            a.finish();
        }
        t.finish();
    }

    root.get("label_fraction", c.label_fraction);
    root.get("fractions", c.fractions);
    root.get("seeds", c.seeds);
    root.get("methods", c.methods);
    if (root.has("evaluation")) {
        Reader e = root.child("evaluation");
        e.get("sge", c.eval_sge);
        e.get("exclude_background", c.exclude_background);
        e.finish();
    }
    std::string out = c.out.string();
    root.get("out", out);
    c.out = out;
    root.finish();

    c.validate();
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

json to_json(const ExperimentConfig& c) {
    json j;
    json ds = json::object();
    if (c.dataset.manifest) ds["manifest"] = c.dataset.manifest->string();
    if (c.dataset.phantom) {
        const PhantomSource& p = *c.dataset.phantom;
        ds["phantom"] = {{"layers", p.layers}, {"size", p.size}, {"scans", p.scans}, {"slices", p.slices},
                         {"seed", p.seed}};
    }
    j["dataset"] = ds;
    j["split"] = {{"train", c.split.train},
                  {"validation", c.split.validation},
                  {"test", c.split.test},
                  {"seed", c.split_seed},
                  {"override", c.split_override ? json(c.split_override->string()) : json(nullptr)}};
    j["model"] = {{"segmentor",
                   {{"class_count", c.model.segmentor.class_count},
                    {"encoder_channels", c.model.segmentor.encoder_channels}}},
                  {"generator",
                   {{"base_channels", c.model.generator.base_channels},
                    {"downsample_stages", c.model.generator.downsample_stages},
                    {"residual_blocks_per_stage", c.model.generator.residual_blocks_per_stage},
                    {"skip_connections", c.model.generator.skip_connections}}},
                  {"discriminator", {{"layer_channels", c.model.discriminator.layer_channels}}}};
    const trainer::TrainConfig& t = c.train;
    j["train"] = {{"mode", trainer::mode_name(t.mode)},
                  {"ablation", trainer::ablation_name(t.ablation)},
                  {"batch_size", t.batch_size},
                  {"max_epochs", t.max_epochs},
                  {"patience", t.patience},
                  {"learning_rate", t.learning_rate},
                  {"beta1", t.beta1},
                  {"beta2", t.beta2},
                  {"lambda_adv", t.weights.lambda_adv},
                  {"lambda_seg", t.weights.lambda_seg},
                  {"lambda_l1", t.weights.lambda_l1},
                  {"lambda_cus", t.weights.lambda_cus},
                  {"sge_for_selection", t.sge_for_selection},
                  {"mix_distribution", mix_name(t.mix_distribution)},
                  {"mix_alpha", t.mix_alpha},
                  {"per_sample_lambda", t.per_sample_lambda},
                  {"gan_pretrain_epochs", t.gan_pretrain_epochs},
                  {"validation_batch_size", t.validation_batch_size},
                  {"augmentation",
                   {{"flip_probability", t.augmentation.flip_probability},
                    {"max_rotation_degrees", t.augmentation.max_rotation_degrees},
                    {"intensity_scale", t.augmentation.intensity_scale}}}};
    j["label_fraction"] = c.label_fraction;
    j["fractions"] = c.fractions;
    j["seeds"] = c.seeds;
    j["methods"] = c.methods;
    j["evaluation"] = {{"sge", c.eval_sge}, {"exclude_background", c.exclude_background}};
    j["out"] = c.out.string();
    return j;
}

fs::path resolve_data_path(const fs::path& path) {
    if (path.is_absolute()) return path;
    if (const char* root = std::getenv("GRN_DATA_ROOT"); root && *root) return fs::path(root) / path;
    return path;
}

std::string content_hash(const json& j) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return hex64(h);
}

std::string code_version() { return GRN_CODE_VERSION; }

// ---------------------------------------------------------------------------
// Data

data::DatasetManifest materialize_dataset(const DatasetSource& source, const fs::path& cache_dir) {
    if (source.manifest) return data::load_manifest(resolve_data_path(*source.manifest));
    if (!source.phantom) throw ConfigError("dataset source is empty");
    const PhantomSource& p = *source.phantom;
    const json key{{"layers", p.layers}, {"size", p.size}, {"scans", p.scans}, {"slices", p.slices}, {"seed", p.seed}};
    const fs::path dir = cache_dir / ("phantom-" + content_hash(key));
    if (fs::exists(dir / "manifest.json")) return data::load_manifest(dir);
    const fs::path tmp = dir.string() + ".tmp";
    fs::remove_all(tmp);
    data::generate_phantom(data::default_phantom_config(p.layers, p.size, p.seed), p.scans, p.slices, tmp);
    fs::remove_all(dir);
    fs::rename(tmp, dir);
    return data::load_manifest(dir);
}

PreparedData prepare_data(const ExperimentConfig& config, double fraction, std::uint64_t seed,
                          const fs::path& cache_dir) {
    PreparedData out;
    out.manifest = materialize_dataset(config.dataset, cache_dir);
    std::optional<data::SplitOverride> override_roles;
    if (config.split_override) override_roles = data::load_split_override(resolve_data_path(*config.split_override));
    out.split = data::split_by_patient(out.manifest, config.split, config.split_seed, override_roles);
    const auto train_entries = out.split.entries(out.manifest, data::Role::train);
    const auto val_entries = out.split.entries(out.manifest, data::Role::validation);
    out.test_entries = out.split.entries(out.manifest, data::Role::test);

    std::set<std::string> test_patients;
    for (const auto& e : out.test_entries) test_patients.insert(e.meta.patient_id);
    for (const auto* set : {&train_entries, &val_entries})
        for (const auto& e : *set)
            if (test_patients.count(e.meta.patient_id))
                throw std::logic_error("test patient " + e.meta.patient_id + " leaked into training data");

    const data::LabelSelection sel = data::select_labeled_fraction(out.split, train_entries, fraction, seed);
    out.labeled = data::load_labeled(sel.labeled, out.manifest.class_count);
    if (config.train.mode == trainer::Mode::grn_ssl) out.unlabeled = data::load_images(sel.unlabeled);
    out.validation = data::load_labeled(val_entries, out.manifest.class_count);
    return out;
}

evaluation::MetricReport evaluate_entries(models::ModelBundle& bundle, const std::vector<data::ManifestEntry>& entries,
                                          int class_count, bool use_sge, bool exclude_background) {
    for (const auto& e : entries)
        if (!e.labeled()) throw data::DataError("evaluation needs ground truth but the entry has no mask", e.meta);
    if (entries.empty()) throw data::DataError("no entries to evaluate");
    std::vector<evaluation::ImageMetrics> images;
    constexpr std::size_t kChunk = 8;
    for (std::size_t start = 0; start < entries.size(); start += kChunk) {
        const std::vector<data::ManifestEntry> chunk(entries.begin() + start,
                                                     entries.begin() + std::min(entries.size(), start + kChunk));
        const auto samples = data::load_labeled(chunk, class_count);
        std::vector<const ImageF*> ptrs;
        for (const auto& s : samples) ptrs.push_back(&s.image);
        const TensorF logits = inference::predict_logits(bundle, data::stack_images(ptrs), use_sge);
        for (std::size_t i = 0; i < samples.size(); ++i)
            images.push_back(evaluation::evaluate_image(samples[i].meta.str(),
                                                        inference::argmax_classes(logits, static_cast<Index>(i)),
                                                        samples[i].mask, class_count));
    }
    return evaluation::aggregate(images, class_count, exclude_background);
}

// ---------------------------------------------------------------------------
// Runs

namespace {

// Fields that change what is trained; evaluation options and sweep lists
// are left out so variants differing only in SGE share one cell.
json training_identity(const ExperimentConfig& config) {
    json j = to_json(config);
    for (const char* key : {"methods", "fractions", "evaluation", "out"}) j.erase(key);
    return j;
}

bool record_matches(const fs::path& dir, const std::string& hash) {
    const fs::path record = dir / "run_record.json";
    if (!fs::exists(record)) return false;
    try {
        const json r = read_json(record);
        if (r.value("config_hash", "") != hash) return false;
        for (const char* key : {"checkpoint", "history", "resolved_config"})
            if (!fs::exists(dir / r.at(key).get<std::string>())) return false;
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

std::string sge_name(const std::string& method) {
    return method.size() > 4 && method.compare(method.size() - 4, 4, "+sge") == 0 ? method : method + "+sge";
}

double overall_dsc(const fs::path& metrics_json) {
    return read_json(metrics_json).at("overall").at("dsc").at("mean").get<double>();
}

void write_report(const evaluation::MetricReport& report, const fs::path& dir, const std::string& stem) {
    evaluation::write_csv(report, dir / (stem + ".csv"));
    evaluation::write_json(report, dir / (stem + ".json"));
}

}  // namespace

ExperimentConfig cell_config(const ExperimentConfig& base, const Variant& variant, double fraction,
                             std::uint64_t seed) {
    ExperimentConfig c = base;
    c.train.mode = variant.mode;
    c.train.ablation = variant.ablation;
    c.train.seed = seed;
    c.model.seed = seed;
    c.label_fraction = fraction;
    c.fractions = {fraction};
    c.seeds = {seed};
    c.methods = {variant.name};
    c.eval_sge = variant.sge;
    return c;
}

RunOutcome run_cell(const ExperimentConfig& config_in, const fs::path& dir, bool with_sge, std::ostream& log,
                    bool reuse) {
    ExperimentConfig config = config_in;
    config.train.seed = config.seeds.front();
    config.model.seed = config.seeds.front();
    const fs::path cache_dir = config.out / "data";
    fs::create_directories(dir);
    fs::create_directories(cache_dir);

    RunOutcome outcome;
    outcome.dir = dir;
    outcome.checkpoint = dir / "checkpoint.grn";
    outcome.metrics_json = dir / "metrics.json";
    const std::string method = config.methods.size() == 1 ? config.methods.front() : trainer::mode_name(config.train.mode);

    // Data first: the class count completes the resolved configuration.
    PreparedData prepared = prepare_data(config, config.label_fraction, config.seeds.front(), cache_dir);
    const int dataset_classes = prepared.manifest.class_count;
    if (config.model.segmentor.class_count != dataset_classes) {
        if (config.model.segmentor.class_count != models::SegmentorConfig{}.class_count)
            throw ConfigError("model.segmentor.class_count " + std::to_string(config.model.segmentor.class_count) +
                              " disagrees with the dataset's " + std::to_string(dataset_classes));
        config.model.segmentor.class_count = dataset_classes;
    }
    const std::string hash = content_hash(training_identity(config));
    const int C = dataset_classes;
    const std::string labeling = fraction_label(config.label_fraction);

    json timings = json::object();
    std::unique_ptr<models::ModelBundle> bundle;
    if (reuse && record_matches(dir, hash)) {
        outcome.cached = true;
        log << "[cached] " << dir.string() << "\n";
        timings = read_json(dir / "run_record.json").value("timings", json::object());
    } else {
        write_text(dir / "resolved_config.json", to_json(config).dump(1) + "\n");
        const models::BundleConfig bundle_config = trainer::with_optimizer(config.model, config.train);
        trainer::TrainHooks hooks;
        hooks.log = [&](const std::string& line) { log << method << " " << labeling << " seed " << config.seeds.front() << ": " << line << "\n"; };
        const trainer::TrainData td{&prepared.labeled, &prepared.unlabeled, &prepared.validation};
        const auto t0 = std::chrono::steady_clock::now();
        trainer::TrainResult result = trainer::train(config.train, bundle_config, td, hooks);
        timings["train_seconds"] = seconds_since(t0);
        write_text(dir / "history.jsonl", result.history.to_jsonl());
        checkpoint::save(*result.bundle, outcome.checkpoint,
                         json{{"config_hash", hash}, {"resolved_config", to_json(config)}});
        bundle = std::move(result.bundle);
        fs::remove(dir / "metrics.json");
        fs::remove(dir / "metrics_sge.json");
    }

    auto ensure_metrics = [&](bool sge, const std::string& stem) {
        const fs::path path = dir / (stem + ".json");
        if (fs::exists(path)) return path;
        if (!bundle) bundle = std::move(checkpoint::load(outcome.checkpoint).bundle);
        const auto t0 = std::chrono::steady_clock::now();
        evaluation::MetricReport report =
            evaluate_entries(*bundle, prepared.test_entries, C, sge, config.exclude_background);
        timings[stem + "_seconds"] = seconds_since(t0);
        report.method = sge ? sge_name(method) : method;
        report.labeling = labeling;
        write_report(report, dir, stem);
        return path;
    };
    ensure_metrics(false, "metrics");
    outcome.dsc = overall_dsc(outcome.metrics_json);
    if (with_sge) {
        outcome.metrics_sge_json = ensure_metrics(true, "metrics_sge");
        outcome.dsc_sge = overall_dsc(*outcome.metrics_sge_json);
    }

    json metrics = json::array({"metrics.csv", "metrics.json"});
    if (fs::exists(dir / "metrics_sge.json")) {
        metrics.push_back("metrics_sge.csv");
        metrics.push_back("metrics_sge.json");
    }
    const json record{{"config_hash", hash},
                      {"code_version", code_version()},
                      {"resolved_config", "resolved_config.json"},
                      {"history", "history.jsonl"},
                      {"checkpoint", "checkpoint.grn"},
                      {"checkpoint_hash", checkpoint::file_hash(outcome.checkpoint)},
                      {"metrics", metrics},
                      {"timings", timings},
                      {"written_at", now_stamp()}};
    for (const auto& m : metrics)
        if (!fs::exists(dir / m.get<std::string>())) throw std::logic_error("run record references missing " + m.get<std::string>());
    write_text(dir / "run_record.json", record.dump(1) + "\n");
    return outcome;
}

// ---------------------------------------------------------------------------
// Sweeps and ablations

namespace {

fs::path cell_dir(const ExperimentConfig& base, const ExperimentConfig& cell) {
    // Hash before the class count is resolved; stable for a given config.
    return base.out / "cells" / content_hash(training_identity(cell));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

std::string fmt(double v, int precision = 4) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(precision) << v;
    return os.str();
}

}  // namespace

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, std::ostream& log) {
    fs::create_directories(config.out);
    write_text(config.out / "resolved_config.json", to_json(config).dump(1) + "\n");
    std::vector<SweepRow> rows;
    auto run_one = [&](const Variant& v, double f, std::uint64_t seed) {
        const ExperimentConfig cell = cell_config(config, v, f, seed);
        const RunOutcome o = run_cell(cell, cell_dir(config, cell), v.sge, log);
        return SweepRow{v.name, f, seed, v.sge ? *o.dsc_sge : o.dsc, o.dir, o.cached};
    };
    for (const std::string& m : config.methods) {
        const Variant v = parse_variant(m);
        for (double f : config.fractions)
            for (std::uint64_t seed : config.seeds) rows.push_back(run_one(v, f, seed));
    }

    std::ostringstream csv;
    csv << "method,fraction,seed,dsc,run_dir\n";
    for (const SweepRow& r : rows)
        csv << r.method << ',' << r.fraction << ',' << r.seed << ',' << fmt(r.dsc, 6) << ','
            << fs::relative(r.run_dir, config.out).string() << '\n';
    write_text(config.out / "sweep.csv", csv.str());

    // Reference: fully labeled supervised score, trained if the grid lacks it.
    std::vector<double> reference;
    for (const SweepRow& r : rows)
        if (r.method == "supervised" && r.fraction == 1.0) reference.push_back(r.dsc);
    if (reference.empty())
        for (std::uint64_t seed : config.seeds) reference.push_back(run_one(parse_variant("supervised"), 1.0, seed).dsc);

    plot::LinePlot p;
    p.title = "DSC vs labeled fraction";
    p.x_label = "labeled fraction";
    p.y_label = "foreground DSC (%)";
    p.reference = plot::ReferenceLine{mean(reference), "supervised 100%"};
    for (const std::string& m : config.methods) {
        plot::Series s{m, {}, {}};
        for (double f : config.fractions) {
            std::vector<double> v;
            for (const SweepRow& r : rows)
                if (r.method == m && r.fraction == f) v.push_back(r.dsc);
            s.x.push_back(f);
            s.y.push_back(mean(v));
        }
        p.series.push_back(std::move(s));
    }
    plot::write_png(p, config.out / "sweep.png");
    return rows;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, std::ostream& log) {
    fs::create_directories(config.out);
    write_text(config.out / "resolved_config.json", to_json(config).dump(1) + "\n");
    std::vector<AblationRow> rows;
    for (const std::string& name : ablation_variants()) {
        const Variant v = parse_variant(name);
        AblationRow row{name, {}, 0.0, 0.0, 0.0};
        for (std::uint64_t seed : config.seeds) {
            const ExperimentConfig cell = cell_config(config, v, config.label_fraction, seed);
            const RunOutcome o = run_cell(cell, cell_dir(config, cell), v.sge, log);
            row.dsc.push_back(v.sge ? *o.dsc_sge : o.dsc);
        }
        row.median = median(row.dsc);
        row.mean = mean(row.dsc);
        rows.push_back(std::move(row));
    }
    for (AblationRow& r : rows) r.delta = r.median - rows.front().median;

    std::ostringstream csv;
    csv << "variant,median_dsc,mean_dsc,delta_vs_supervised";
    for (std::uint64_t seed : config.seeds) csv << ",seed_" << seed;
    csv << '\n';
    json j = json::array();
    for (const AblationRow& r : rows) {
        csv << r.variant << ',' << fmt(r.median, 6) << ',' << fmt(r.mean, 6) << ',' << fmt(r.delta, 6);
        for (double d : r.dsc) csv << ',' << fmt(d, 6);
        csv << '\n';
        j.push_back({{"variant", r.variant}, {"median_dsc", r.median}, {"mean_dsc", r.mean}, {"delta", r.delta},
                     {"per_seed", r.dsc}});
    }
    write_text(config.out / "ablation.csv", csv.str());
    write_text(config.out / "ablation.json",
               json{{"labeling", fraction_label(config.label_fraction)}, {"seeds", config.seeds}, {"rows", j}}.dump(1) +
                   "\n");
    return rows;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string device = "cpu";
};

ExperimentConfig config_with_overrides(const Globals& g) {
    ExperimentConfig c = g.config.empty() ? config_from_json(json::object()) : load_config(g.config);
    if (g.seed) c.seeds = {*g.seed};
    if (!g.out.empty()) c.out = g.out;
    return c;
}

evaluation::ImageMetrics* find_or_add(std::vector<evaluation::ImageMetrics>& images, std::map<std::string, std::size_t>& index,
                                      const std::string& id, int class_count) {
    auto it = index.find(id);
    if (it == index.end()) {
        index[id] = images.size();
        evaluation::ImageMetrics im{id, {}};
        for (int k = 0; k < class_count; ++k) im.classes.push_back({k, {}, {}, {}, {}});
        images.push_back(std::move(im));
        return &images.back();
    }
    return &images[it->second];
}

// Rebuilds a report from metrics.csv plus the header fields of metrics.json.
evaluation::MetricReport load_report(const fs::path& dir, const std::string& stem) {
    const json summary = read_json(dir / (stem + ".json"));
    const int C = summary.at("class_count").get<int>();
    std::ifstream in(dir / (stem + ".csv"));
    if (!in) throw std::runtime_error("cannot read " + (dir / (stem + ".csv")).string());
    std::string line;
    std::getline(in, line);
    std::vector<evaluation::ImageMetrics> images;
    std::map<std::string, std::size_t> index;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 8) throw std::runtime_error("malformed metrics row: " + line);
        const int k = std::stoi(f[1]);
        if (k < 0 || k >= C) throw std::runtime_error("class id outside [0, C) in metrics row: " + line);
        evaluation::ClassMetrics& c = find_or_add(images, index, f[0], C)->classes[k];
        const bool defined = f[6] == "1", one_side = f[7] == "1";
        c.dsc = {std::stod(f[2]), defined, one_side};
        c.iou = {std::stod(f[3]), defined, one_side};
        c.hd95 = {std::stod(f[4]), defined, one_side};
        c.asd = {std::stod(f[5]), defined, one_side};
    }
    evaluation::MetricReport r = evaluation::aggregate(images, C, summary.at("exclude_background").get<bool>());
    r.method = summary.value("method", dir.filename().string());
    r.labeling = summary.value("labeling", "");
    return r;
}

std::string interval_text(const evaluation::Interval& iv) {
    std::string s = fmt(iv.mean, 2);
    if (iv.lower) s += " (" + fmt(*iv.lower, 2) + ", " + fmt(*iv.upper, 2) + ")";
    return s;
}

int cmd_synth(const Globals& g, int layers, Index size, Index scans, Index slices, std::ostream& out) {
    if (g.out.empty()) throw ConfigError("synth needs --out");
    data::PhantomConfig pc;
    try {
        pc = data::default_phantom_config(layers, size, g.seed.value_or(0));
        pc.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    if (scans < 1 || slices < 1) throw ConfigError("--scans and --slices must be >= 1");
    data::generate_phantom(pc, scans, slices, g.out);
    out << (fs::path(g.out) / "manifest.json").string() << "\n";
    return kOk;
}

int cmd_train(const Globals& g, const std::string& mode, const std::optional<double>& fraction, std::ostream& out,
              std::ostream& err) {
    ExperimentConfig c = config_with_overrides(g);
    if (!mode.empty()) {
        const Variant v = parse_variant(mode);
        c.train.mode = v.mode;
        c.train.ablation = v.ablation;
        c.eval_sge = c.eval_sge || v.sge;
    }
    if (fraction) c.label_fraction = *fraction;
    c.seeds = {c.seeds.front()};
    if (!mode.empty())
        c.methods = {mode};
    else
        c.methods = {c.train.ablation == trainer::Ablation::none ? trainer::mode_name(c.train.mode)
                                                                 : trainer::ablation_name(c.train.ablation)};
    c.validate();
    const RunOutcome o = run_cell(c, c.out, c.eval_sge, err, false);
    out << "checkpoint " << o.checkpoint.string() << "\n";
    out << "test DSC " << fmt(o.dsc, 4) << "\n";
    if (o.dsc_sge) out << "test DSC (SGE) " << fmt(*o.dsc_sge, 4) << "\n";
    return kOk;
}

int cmd_eval(const Globals& g, const std::string& ckpt, const std::string& manifest_path, bool sge, std::ostream& out) {
    if (ckpt.empty()) throw ConfigError("eval needs --checkpoint");
    if (g.out.empty()) throw ConfigError("eval needs --out");
    checkpoint::Loaded loaded = checkpoint::load(ckpt);
    std::vector<data::ManifestEntry> entries;
    int C = loaded.bundle->config().segmentor.class_count;
    bool exclude_background = true;
    std::string method = "checkpoint", labeling;
    if (!manifest_path.empty()) {
        const data::DatasetManifest m = data::load_manifest(resolve_data_path(manifest_path));
        if (m.class_count != C)
            throw ConfigError("manifest has " + std::to_string(m.class_count) + " classes, checkpoint " +
                              std::to_string(C));
        entries = m.entries;
    } else {
        if (!loaded.metadata.contains("resolved_config"))
            throw ConfigError("checkpoint carries no run configuration; pass --manifest");
        ExperimentConfig c = config_from_json(loaded.metadata.at("resolved_config"));
        const data::DatasetManifest m = materialize_dataset(c.dataset, c.out / "data");
        std::optional<data::SplitOverride> o;
        if (c.split_override) o = data::load_split_override(resolve_data_path(*c.split_override));
        entries = data::split_by_patient(m, c.split, c.split_seed, o).entries(m, data::Role::test);
        exclude_background = c.exclude_background;
        method = c.methods.front();
        labeling = fraction_label(c.label_fraction);
    }
    evaluation::MetricReport report = evaluate_entries(*loaded.bundle, entries, C, sge, exclude_background);
    report.method = sge ? sge_name(method) : method;
    report.labeling = labeling;
    fs::create_directories(g.out);
    write_report(report, g.out, "metrics");
    out << "overall DSC " << interval_text(report.overall.at(evaluation::MetricKind::dsc)) << "\n";
    return kOk;
}

int cmd_report(const Globals& g, const std::vector<std::string>& dirs, const std::string& reference,
               const std::string& stem, std::ostream& out) {
    if (dirs.empty()) throw ConfigError("report needs at least one run directory");
    std::optional<evaluation::MetricReport> ref;
    if (!reference.empty()) ref = load_report(reference, stem);
    json all = json::array();
    std::ostringstream csv;
    csv << "run,method,labeling,dsc,dsc_lower,dsc_upper,iou,hd95,asd,p_overall\n";
    out << std::left << std::setw(28) << "method" << std::setw(10) << "labels" << std::setw(28) << "DSC (95% CI)"
        << std::setw(10) << "IoU" << std::setw(10) << "HD95" << std::setw(10) << "ASD"
        << "p\n";
    for (const std::string& d : dirs) {
        evaluation::MetricReport r = load_report(d, stem);
        if (ref) evaluation::attach_tests(r, *ref, reference);
        const auto& ov = r.overall;
        std::string p = "-";
        if (r.tests.count("overall")) p = fmt(r.tests.at("overall").p, 4);
        out << std::left << std::setw(28) << r.method << std::setw(10) << r.labeling << std::setw(28)
            << interval_text(ov.at(evaluation::MetricKind::dsc)) << std::setw(10)
            << fmt(ov.at(evaluation::MetricKind::iou).mean, 2) << std::setw(10)
            << fmt(ov.at(evaluation::MetricKind::hd95).mean, 2) << std::setw(10)
            << fmt(ov.at(evaluation::MetricKind::asd).mean, 2) << p << "\n";
        const auto& dsc = ov.at(evaluation::MetricKind::dsc);
        csv << d << ',' << r.method << ',' << r.labeling << ',' << fmt(dsc.mean, 6) << ','
            << (dsc.lower ? fmt(*dsc.lower, 6) : "") << ',' << (dsc.upper ? fmt(*dsc.upper, 6) : "") << ','
            << fmt(ov.at(evaluation::MetricKind::iou).mean, 6) << ',' << fmt(ov.at(evaluation::MetricKind::hd95).mean, 6)
            << ',' << fmt(ov.at(evaluation::MetricKind::asd).mean, 6) << ',' << (p == "-" ? "" : p) << '\n';
        json j = evaluation::to_json(r);
        j["run"] = d;
        all.push_back(std::move(j));
    }
    if (!g.out.empty()) {
        fs::create_directories(g.out);
        write_text(fs::path(g.out) / "report.csv", csv.str());
        write_text(fs::path(g.out) / "report.json", all.dump(1) + "\n");
    }
    return kOk;
}

int cmd_predict(const Globals& g, const std::string& ckpt, const std::string& input, bool sge, bool overlay,
                std::ostream& out) {
    if (ckpt.empty() || input.empty()) throw ConfigError("predict needs --checkpoint and --input");
    if (g.out.empty()) throw ConfigError("predict needs --out");
    checkpoint::Loaded loaded = checkpoint::load(ckpt);
    const std::string hash = checkpoint::file_hash(ckpt);
    const int C = loaded.bundle->config().segmentor.class_count;
    std::vector<fs::path> files;
    if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.path().extension() == ".png") files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(input);
    }
    if (files.empty()) throw data::DataError("no PNG images under " + input);
    fs::create_directories(g.out);
    for (const fs::path& f : files) {
        const io::GrayPng png = io::read_gray_png(f);
        const ImageF image = data::normalize(png.pixels, png.bit_depth);
        const auto t0 = std::chrono::steady_clock::now();
        const LabelImage mask = inference::predict(*loaded.bundle, image, sge);
        const double secs = seconds_since(t0);
        const fs::path target = inference::prediction_path(f, g.out);
        inference::write_prediction(mask, target, hash, sge, secs);
        if (overlay)
            inference::export_overlay(image, mask, inference::default_palette(), C,
                                      fs::path(g.out) / (f.stem().string() + "_overlay.png"));
        out << target.string() << "\n";
    }
    return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Generative reinforcement network training and evaluation", "grn"};
    app.require_subcommand(1);
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "Experiment config (JSON)");
    auto* seed_opt = app.add_option("--seed", seed, "Run seed (overrides the config's seeds)");
    app.add_option("--out", g.out, "Output directory");
    app.add_option("--device", g.device, "Compute device (cpu only)");

    int layers = 6;
    Index size = 64, scans = 4, slices = 50;
    auto* synth = app.add_subcommand("synth", "Generate a layered-tissue phantom dataset");
    synth->add_option("--layers", layers, "Tissue layers (classes = layers + 1)");
    synth->add_option("--size", size, "Image height and width");
    synth->add_option("--scans", scans, "Scans, one patient each");
    synth->add_option("--slices", slices, "Slices per scan");

    std::string mode;
    std::optional<double> fraction;
    auto* train = app.add_subcommand("train", "Train one configuration and evaluate on the test split");
    train->add_option("--mode", mode, "Method variant overriding train.mode");
    train->add_option("--fraction", fraction, "Labeled fraction overriding label_fraction");

    std::string ckpt, manifest;
    bool sge = false;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split or a test manifest");
    eval->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    eval->add_option("--manifest", manifest, "Labeled test manifest");
    eval->add_flag("--sge", sge, "Predict with S(G(x))");

    auto* sweep = app.add_subcommand("sweep", "Label-fraction sweep over methods and seeds");
    auto* ablate = app.add_subcommand("ablate", "Ablation table at the configured label fraction");
    ablate->add_option("--fraction", fraction, "Labeled fraction overriding label_fraction");

    std::vector<std::string> dirs;
    std::string reference, stem = "metrics";
    auto* report = app.add_subcommand("report", "Summarise run directories, with paired tests against a reference");
    report->add_option("runs", dirs, "Run directories holding metrics.csv/json")->required();
    report->add_option("--reference", reference, "Reference run directory for paired t-tests");
    report->add_option("--metrics", stem, "Metrics file stem (metrics or metrics_sge)");

    std::string input;
    bool overlay = false;
    auto* predict = app.add_subcommand("predict", "Segment PNG images with a checkpoint");
    predict->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
    predict->add_option("--input", input, "PNG file or directory")->required();
    predict->add_flag("--sge", sge, "Predict with S(G(x))");
    predict->add_flag("--overlay", overlay, "Also write colour overlays");

    for (CLI::App* sub : {synth, train, eval, sweep, ablate, report, predict}) sub->fallthrough();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kUsage;
    }
    if (seed_opt->count()) g.seed = seed;

    try {
        if (g.device != "cpu") throw ConfigError("device '" + g.device + "' is not available; only cpu is supported");
        if (synth->parsed()) return cmd_synth(g, layers, size, scans, slices, out);
        if (train->parsed()) return cmd_train(g, mode, fraction, out, err);
        if (eval->parsed()) return cmd_eval(g, ckpt, manifest, sge, out);
        if (sweep->parsed()) {
            const auto rows = run_sweep(config_with_overrides(g), err);
            for (const SweepRow& r : rows)
                out << r.method << " " << r.fraction << " seed " << r.seed << " DSC " << fmt(r.dsc, 4)
                    << (r.cached ? " (cached)" : "") << "\n";
            return kOk;
        }
        if (ablate->parsed()) {
            ExperimentConfig c = config_with_overrides(g);
            if (fraction) c.label_fraction = *fraction;
            c.validate();
            for (const AblationRow& r : run_ablation(c, err))
                out << std::left << std::setw(26) << r.variant << " DSC " << fmt(r.median, 2) << "  delta "
                    << (r.delta >= 0 ? "+" : "") << fmt(r.delta, 2) << "\n";
            return kOk;
        }
        if (report->parsed()) return cmd_report(g, dirs, reference, stem, out);
        if (predict->parsed()) return cmd_predict(g, ckpt, input, sge, overlay, out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (const trainer::TrainingDiverged& e) {
        err << "training diverged: " << e.what() << "\n";
        return kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntime;
    }
    err << "error: no command\n";
    return kUsage;
}

}  // namespace grn::harness
