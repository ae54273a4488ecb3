#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bnnib/datasets.hpp"
#include "bnnib/infoplane.hpp"
#include "bnnib/nn.hpp"

namespace bnnib {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct DatasetConfig {
    /// synthetic | tictactoe | tictactoe_csv | mnist | cache
    std::string kind = "synthetic";
    /// MNIST directory, tic-tac-toe CSV or dataset cache, depending on kind.
    std::string path;
    std::uint64_t label_seed = 0;
    std::uint64_t split_seed = 0;
    /// Seeded subset sizes; 0 keeps the whole split.
    std::size_t train_subset = 0;
    std::size_t val_subset = 0;
    std::uint64_t subset_seed = 0;

    friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct MiScheduleConfig {
    /// Explicit epochs; when non-empty the rule below is ignored.
    std::vector<std::size_t> epochs;
    /// Every epoch below dense_until, then log-spaced up to the final epoch.
    std::size_t dense_until = 100;
    std::size_t total_points = 120;

    friend bool operator==(const MiScheduleConfig&, const MiScheduleConfig&) = default;
};

struct ExperimentConfig {
    std::string name = "experiment";
    DatasetConfig dataset;
    std::vector<std::size_t> hidden_widths;
    ActivationKind activation{Activation::SteSign};
    bool binary = true;
    bool batchnorm = true;
    std::size_t batch_size = 64;
    double learning_rate = 1e-4;
    std::size_t epochs = 1;
    std::vector<std::uint64_t> seeds{1};
    std::size_t bins = BinningPolicy::kDefaultBins;
    double post_bn_half_width = BinningPolicy::kDefaultPostBnHalfWidth;
    MiScheduleConfig mi_schedule;
    bool label_shuffle = false;
    std::uint64_t label_shuffle_seed = 0;
    /// Not part of the config hash.
    std::string output_dir;

    /// Throws ConfigError on the first violated constraint.
    void validate() const;
    BinningPolicy binning() const { return {bins, post_bn_half_width}; }

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Strict JSON reader: unknown keys and wrong types are ConfigErrors. The
/// schema is documented in docs/config.md.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON (sorted keys, two-space indent).
std::string config_to_json(const ExperimentConfig& config);
/// 16 hex digits of FNV-1a over the canonical JSON with output_dir removed.
std::string config_hash(const ExperimentConfig& config);

/// Scheduled MI epochs in ascending order. The rule-based schedule always includes
/// 0 and the final epoch; an explicit list is taken as given.
std::vector<std::size_t> mi_epochs(const ExperimentConfig& config);

/// Dataset described by the config, label shuffle and subsetting applied.
Dataset build_dataset(const ExperimentConfig& config);
NetworkSpec network_spec(const ExperimentConfig& config, const Dataset& ds);

/// Minibatches per epoch: ceil(train / batch), the last partial batch kept.
std::size_t updates_per_epoch(std::size_t train_samples, std::size_t batch_size);

// ---------------------------------------------------------------------------
// Run records
// ---------------------------------------------------------------------------

struct LayerGradientStats {
    double mean_norm = 0.0;
    double std_norm = 0.0;

    friend bool operator==(const LayerGradientStats&, const LayerGradientStats&) = default;
};

/// mean_norm = || mean_b g_b ||_2 and std_norm = sqrt(mean_b || g_b - mean ||_2^2)
/// over the flattened whole-network gradient of each minibatch b.
struct GradientStats {
    double mean_norm = 0.0;
    double std_norm = 0.0;
    std::size_t batches = 0;
    std::vector<LayerGradientStats> layers;

    friend bool operator==(const GradientStats&, const GradientStats&) = default;
};

/// Streaming form of GradientStats (Welford per coordinate) so an epoch's
/// batch gradients never need to be held at once.
class GradientAccumulator {
public:
    void add(std::span<const Matrix> layer_grads);
    GradientStats finish() const;

private:
    std::vector<std::vector<double>> mean_;
    std::vector<double> m2_;
    std::size_t count_ = 0;
};

GradientStats gradient_stats(std::span<const std::vector<double>> batch_grads);

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t updates = 0;
    /// Epoch 0: eval mode over the training split. Later epochs: mean over the
    /// epoch's minibatches as they were trained. Validation is always eval mode.
    double train_loss = 0.0;
    double val_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    /// Absent for epoch 0, which precedes any update.
    std::optional<GradientStats> grad;

    friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct DatasetSummary {
    std::string name;
    std::size_t samples = 0;
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t classes = 0;

    friend bool operator==(const DatasetSummary&, const DatasetSummary&) = default;
};

inline constexpr int kRunLogSchemaVersion = 1;

/// One training run. Record e holds the state after e epochs of training.
struct RunLog {
    int schema_version = kRunLogSchemaVersion;
    std::string config_hash;
    std::uint64_t seed = 0;
    ExperimentConfig config;
    DatasetSummary dataset;
    /// Largest attainable I(T;X) and I(T;Y): log2 of the sample and class counts.
    double ceiling_tx_bits = 0.0;
    double ceiling_ty_bits = 0.0;
    std::vector<EpochRecord> epochs;
    std::vector<MISnapshot> snapshots;
    /// Kept out of the JSONL file so that identical runs produce identical bytes.
    double wall_clock_seconds = 0.0;

    friend bool operator==(const RunLog& a, const RunLog& b) {
        return a.schema_version == b.schema_version && a.config_hash == b.config_hash && a.seed == b.seed &&
               a.config == b.config && a.dataset == b.dataset && a.ceiling_tx_bits == b.ceiling_tx_bits &&
               a.ceiling_ty_bits == b.ceiling_ty_bits && a.epochs == b.epochs && a.snapshots == b.snapshots;
    }
};

/// Called after every finished epoch; handy for progress output.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains one network for config.epochs epochs with the given seed. The
/// dataset is built from the config unless one is supplied.
RunLog run_training(const ExperimentConfig& config, std::uint64_t seed, const EpochCallback& on_epoch = {});
RunLog run_training(const ExperimentConfig& config, const Dataset& ds, std::uint64_t seed,
                    const EpochCallback& on_epoch = {});

/// JSONL: a header line, then per epoch one "epoch" line followed by its "mi" lines.
void persist(const RunLog& log, const std::filesystem::path& path);
std::string serialize_run_log(const RunLog& log);
RunLog load_run_log(const std::filesystem::path& path);
RunLog parse_run_log(std::string_view text, const std::string& source = "<memory>");
/// run_seed<N>.jsonl
std::filesystem::path run_log_filename(std::uint64_t seed);
/// Every run_*.jsonl in a directory, sorted by file name.
std::vector<RunLog> load_run_directory(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Mean and population variance across seeds.
struct MeanVar {
    double mean = 0.0;
    double var = 0.0;

    friend bool operator==(const MeanVar&, const MeanVar&) = default;
};
MeanVar mean_var(std::span<const double> values);

struct AveragedEpoch {
    std::size_t epoch = 0;
    MeanVar train_loss, val_loss, train_acc, val_acc;
    std::optional<MeanVar> grad_mean_norm, grad_std_norm;

    friend bool operator==(const AveragedEpoch&, const AveragedEpoch&) = default;
};

struct AveragedSnapshot {
    std::size_t epoch = 0;
    TapId tap;
    Split split = Split::Train;
    MeanVar i_tx_bits, i_ty_bits;

    friend bool operator==(const AveragedSnapshot&, const AveragedSnapshot&) = default;
};

struct AveragedLog {
    std::string config_hash;
    ExperimentConfig config;
    std::vector<std::uint64_t> seeds;
    double ceiling_tx_bits = 0.0;
    double ceiling_ty_bits = 0.0;
    std::vector<AveragedEpoch> epochs;
    std::vector<AveragedSnapshot> snapshots;

    friend bool operator==(const AveragedLog&, const AveragedLog&) = default;
};

/// Logs are folded in seed order, so the result does not depend on the order given.
AveragedLog aggregate_runs(std::span<const RunLog> logs);
std::string serialize_averaged_log(const AveragedLog& avg);

// ---------------------------------------------------------------------------
// Checks shared by tests and the acceptance suite
// ---------------------------------------------------------------------------

struct InvariantViolation {
    std::string what;
};

/// Cap, estimator identity and binary-layer DPI for every snapshot of a run.
std::vector<InvariantViolation> check_snapshot_invariants(const RunLog& log, double tol = 1e-9);

/// Trailing moving average with the given window (shorter at the start).
std::vector<double> moving_average(std::span<const double> values, std::size_t window);

}  // namespace bnnib
