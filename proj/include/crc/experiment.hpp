#pragma once

// End-to-end active semi-supervised learning (ASSL) runs: configuration,
// the acquire/retrain loop, persisted run records, summary reports, model
// checkpoints and decision-boundary export.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crc/acquisition.hpp"
#include "crc/data.hpp"
#include "crc/training.hpp"

namespace crc {

inline constexpr int kSchemaVersion = 1;

enum class StrategyKind { random, entropy, confidence, egl, crc, crc_balanced };

[[nodiscard]] std::string to_string(StrategyKind kind);
[[nodiscard]] StrategyKind strategy_from_string(const std::string& name);
[[nodiscard]] std::string to_string(GradientScope scope);
[[nodiscard]] GradientScope scope_from_string(const std::string& name);
[[nodiscard]] std::string to_string(Reduction reduction);
[[nodiscard]] Reduction reduction_from_string(const std::string& name);
[[nodiscard]] std::string to_string(SslMode mode);
[[nodiscard]] SslMode ssl_mode_from_string(const std::string& name);

struct StrategyConfig {
    StrategyKind kind = StrategyKind::crc;
    std::size_t query_size = 4;
    std::size_t group_size = 1;
    /// R for crc_balanced.
    std::size_t per_class = 1;
    GradientScope scope = GradientScope::last_layer;
    Reduction reduction = Reduction::traced;
    double positivity_threshold = kDefaultPositivityThreshold;
};

[[nodiscard]] AcquisitionResult acquire(const StrategyConfig& strategy, const Pool& pool, const ParamVector& params,
                                        const NetworkSpec& spec, std::uint64_t seed);

struct DatasetConfig {
    /// moons | blobs | csv
    std::string generator = "moons";
    std::size_t n = 1000;
    double noise = 0.1;
    std::size_t arms = 4;
    bool binarize = false;
    std::size_t classes = 2;
    double sigma = 0.5;
    Matrix centers;
    std::string path;
    std::string test_path;
    std::string label_column = "label";
    /// Shift and scale features to zero mean, unit variance using training
    /// statistics.
    bool standardize = false;
    std::uint64_t seed = 0;
};

/// Generators draw the test split from an independent seed stream with the
/// same size as the training split.
[[nodiscard]] DatasetSplit make_datasets(const DatasetConfig& cfg);

struct ExperimentConfig {
    int schema_version = kSchemaVersion;
    DatasetConfig dataset;
    NetworkSpec network;
    TrainConfig train;
    StrategyConfig strategy;
    std::size_t initial_per_class = 1;
    /// Explicit initial labeled indices; overrides initial_per_class.
    std::vector<std::size_t> pivots;
    std::size_t num_acquisitions = 0;
    std::vector<std::uint64_t> seeds{0};
    bool transfer_reseed = false;
    std::string output_dir;
};

/// Flat `key = value` text, one key per line, `#` comments.
[[nodiscard]] ExperimentConfig parse_config(std::istream& in);
[[nodiscard]] ExperimentConfig load_config(const std::filesystem::path& path);
[[nodiscard]] std::string serialize_config(const ExperimentConfig& cfg);
/// FNV-1a over the serialized config, as 16 hex digits.
[[nodiscard]] std::string config_hash(const ExperimentConfig& cfg);

struct RoundRecord {
    std::size_t round = 0;
    std::size_t labeled_size = 0;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    std::size_t train_steps = 0;
    std::size_t epochs_to_convergence = 0;
    /// lambda_min^+ of the labeled set under the trained model.
    std::optional<double> labeled_lambda_min_plus;
    /// Indices acquired after this round's training (empty on the last round).
    std::vector<std::size_t> selected;
    std::vector<GroupScore> scores;
    /// lambda_min^+ of labeled + selected under the acquisition model.
    std::optional<double> chosen_lambda_min_plus;
    double train_seconds = 0.0;
    double acquire_seconds = 0.0;
};

struct RunRecord {
    int schema_version = kSchemaVersion;
    std::string config_hash;
    std::string strategy;
    std::string scope;
    std::uint64_t seed = 0;
    std::vector<RoundRecord> rounds;
    std::size_t hidden_label_reads = 0;
};

struct RunArtifacts {
    RunRecord record;
    std::vector<TrainingTrace> traces;
    ParamVector final_params;
};

/// One seed of the loop: train from scratch, record, acquire Q labels, repeat.
[[nodiscard]] RunArtifacts run_assl(const ExperimentConfig& cfg, std::uint64_t seed,
                                    const DatasetSplit* data = nullptr);
/// Every configured seed; persists artifacts when cfg.output_dir is set.
[[nodiscard]] std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg);
void persist_run(const RunArtifacts& run, const NetworkSpec& spec, const std::filesystem::path& dir);

[[nodiscard]] nlohmann::json to_json(const RunRecord& record);
[[nodiscard]] RunRecord run_record_from_json(const nlohmann::json& j);
/// Every `*.json` file under `dir` that holds a run record.
[[nodiscard]] std::vector<RunRecord> load_records(const std::filesystem::path& dir);

struct SummaryRow {
    std::string strategy;
    std::size_t labeled_size = 0;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;  // population std over seeds
    std::size_t count = 0;
};

[[nodiscard]] std::vector<SummaryRow> emit_report(const std::vector<RunRecord>& records);
void write_report_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

struct GridBounds {
    double x_min = -1.0;
    double x_max = 1.0;
    double y_min = -1.0;
    double y_max = 1.0;
};

struct GridRow {
    double x = 0.0;
    double y = 0.0;
    int label = 0;
    double confidence = 0.0;
};

/// resolution^2 rows, y-major (each row of the grid sweeps x).
[[nodiscard]] std::vector<GridRow> decision_boundary_grid(const ParamVector& params, const NetworkSpec& spec,
                                                          const GridBounds& bounds, std::size_t resolution);
void write_grid_csv(std::ostream& out, const std::vector<GridRow>& rows);

[[nodiscard]] nlohmann::json checkpoint_to_json(const NetworkSpec& spec, const ParamVector& params);
[[nodiscard]] std::pair<NetworkSpec, ParamVector> checkpoint_from_json(const nlohmann::json& j);
[[nodiscard]] std::pair<NetworkSpec, ParamVector> load_checkpoint(const std::filesystem::path& path);

}  // namespace crc
