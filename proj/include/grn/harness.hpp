#ifndef GRN_HARNESS_HPP
#define GRN_HARNESS_HPP

#include "grn/data.hpp"
#include "grn/evaluation.hpp"
#include "grn/models.hpp"
#include "grn/trainer.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace grn::harness {

/// Exit codes of the command-line front end.
enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

/// Bad flags, malformed or invalid configuration. Maps to exit code 1.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PhantomSource {
    int layers = 6;
    Index size = 64;
    Index scans = 4;
    Index slices = 50;
    std::uint64_t seed = 0;
    bool operator==(const PhantomSource&) const = default;
};

/// Exactly one of the two is set.
struct DatasetSource {
    std::optional<std::filesystem::path> manifest;
    std::optional<PhantomSource> phantom;
};

/// A method variant as named in sweeps and ablation tables, e.g.
/// "grn_sel", "grn_sel+sge", "negated_seg_feedback".
struct Variant {
    trainer::Mode mode = trainer::Mode::supervised;
    trainer::Ablation ablation = trainer::Ablation::none;
    bool sge = false;
    std::string name;
};

Variant parse_variant(const std::string& name);
/// The eight rows of the ablation table, supervised first.
const std::vector<std::string>& ablation_variants();
const std::vector<double>& default_fractions();

struct ExperimentConfig {
    DatasetSource dataset;
    data::SplitFractions split;
    std::uint64_t split_seed = 0;
    std::optional<std::filesystem::path> split_override;
    trainer::TrainConfig train;
    /// class_count is taken from the dataset at run time.
    models::BundleConfig model;
    /// Label fraction of a single run and of the ablation grid.
    double label_fraction = 1.0;
    std::vector<double> fractions = default_fractions();
    /// Each run seed drives label selection, data order and initialisation.
    std::vector<std::uint64_t> seeds = {0};
    std::vector<std::string> methods = {"supervised", "grn_sel"};
    bool eval_sge = false;
    bool exclude_background = true;
    std::filesystem::path out = "runs";

    void validate() const;
};

/// Strict parse: unknown keys, wrong types and invalid values raise
/// ConfigError. Missing keys keep their defaults.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Every field materialised.
nlohmann::json to_json(const ExperimentConfig& config);

/// Relative manifest paths resolve against GRN_DATA_ROOT when it is set.
std::filesystem::path resolve_data_path(const std::filesystem::path& path);

/// FNV-1a 64 over the compact dump, as 16 hex digits.
std::string content_hash(const nlohmann::json& j);
std::string code_version();

/// Loaded data for one run. The test entries never reach the trainer.
struct PreparedData {
    data::DatasetManifest manifest;
    data::SplitAssignment split;
    trainer::LabeledSet labeled;
    trainer::UnlabeledSet unlabeled;
    trainer::LabeledSet validation;
    std::vector<data::ManifestEntry> test_entries;
};

/// Materialises (or reuses) the dataset under `cache_dir` when it is a
/// phantom, splits by patient, selects the labeled fraction and asserts
/// that no test patient appears in training or validation.
PreparedData prepare_data(const ExperimentConfig& config, double fraction, std::uint64_t seed,
                          const std::filesystem::path& cache_dir);
data::DatasetManifest materialize_dataset(const DatasetSource& source, const std::filesystem::path& cache_dir);

/// Predicts and scores labeled entries.
evaluation::MetricReport evaluate_entries(models::ModelBundle& bundle, const std::vector<data::ManifestEntry>& entries,
                                          int class_count, bool use_sge, bool exclude_background);

struct RunOutcome {
    std::filesystem::path dir;
    std::filesystem::path checkpoint;
    std::filesystem::path metrics_json;
    std::optional<std::filesystem::path> metrics_sge_json;
    double dsc = 0.0;
    std::optional<double> dsc_sge;
    bool cached = false;
};

/// Trains one (variant, fraction, seed) cell into `dir` and evaluates on the
/// test split. Writes resolved_config.json, history.jsonl, checkpoint.grn,
/// metrics.{csv,json} (plus metrics_sge.* when `with_sge`) and
/// run_record.json last. A directory whose run record matches the config
/// hash is reused when `reuse` is set; otherwise the cell is retrained.
RunOutcome run_cell(const ExperimentConfig& config, const std::filesystem::path& dir, bool with_sge,
                    std::ostream& log, bool reuse = true);

/// Per-cell config with method, fraction and seed fixed.
ExperimentConfig cell_config(const ExperimentConfig& base, const Variant& variant, double fraction,
                             std::uint64_t seed);

struct SweepRow {
    std::string method;
    double fraction = 0.0;
    std::uint64_t seed = 0;
    double dsc = 0.0;
    std::filesystem::path run_dir;
    bool cached = false;
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& config, std::ostream& log);

struct AblationRow {
    std::string variant;
    std::vector<double> dsc;  ///< per seed
    double median = 0.0;
    double mean = 0.0;
    double delta = 0.0;  ///< median minus the supervised median
};

std::vector<AblationRow> run_ablation(const ExperimentConfig& config, std::ostream& log);

/// In-process entry point of the `grn` executable. args excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace grn::harness

#endif  // GRN_HARNESS_HPP
