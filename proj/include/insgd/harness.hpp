#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "insgd/adaptive_filter.hpp"
#include "insgd/data.hpp"
#include "insgd/nn.hpp"
#include "insgd/optim.hpp"

namespace insgd::harness {

// Invalid or unparsable run configuration (exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dataset files missing or unreadable (exit code 3).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum ExitCode : int { kOk = 0, kConfigError = 2, kDataMissing = 3, kNumericalAbort = 4 };

struct Schedule {
    std::vector<std::size_t> milestones;  // strictly increasing epochs
    double factor = 0.1;                  // in (0, 1]
};

// base_lr * factor^(number of milestones <= epoch); epochs count from 0.
double apply_schedule(std::size_t epoch, const Schedule& schedule, double base_lr);

struct ModelSpec {
    std::string kind = "linear";  // linear | mlp | custom_cnn
    std::vector<std::size_t> hidden;
    std::string activation = "relu";
};

struct DatasetSpec {
    std::string kind = "blobs";  // blobs | mnist | cifar10
    std::string path;            // directory for mnist / cifar10
    std::size_t classes = 2;     // blobs only
    std::size_t dim = 2;         // blobs only
    std::vector<std::size_t> sample_shape;  // blobs only, optional [C,H,W]
    double separation = 8.0;     // blobs only
    std::size_t train_per_class = 100;  // 0 keeps every training sample (files)
    std::size_t test_per_class = 20;    // 0 keeps every test sample (files)
    std::uint64_t subset_seed = 0;
};

struct GridSpec {
    std::vector<HyperParams> optimizers;
    std::vector<double> lrs;
    std::vector<std::uint64_t> seeds;
};

struct RunConfig {
    std::string task = "train";
    ModelSpec model;
    DatasetSpec dataset;
    HyperParams optimizer;
    LossKind loss = LossKind::cross_entropy;
    Schedule schedule;
    std::size_t batch_size = 100;
    std::size_t epochs = 10;
    std::uint64_t seed = 0;
    std::optional<data::AugmentSpec> augment;
    std::string out_dir = "runs/out";
    GridSpec grid;  // compare only
    std::size_t jobs = 1;

    // The parsed source, kept for the manifest.
    nlohmann::json source;
};

// Parses and validates; every failure is a ConfigError.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

struct MetricsRecord {
    std::size_t epoch = 0;
    std::size_t step = 0;
    std::string split;
    double loss = 0.0;
    double accuracy = 0.0;
    double lr = 0.0;
    std::optional<double> normalizer_mean;
};

// Header plus one line per record; shortest round-trip decimal formatting.
std::string format_metrics_csv(const std::vector<MetricsRecord>& records);

struct Splits {
    data::Dataset train;
    data::Dataset test;
};

// Loads or synthesizes the configured data. Missing files raise DataError.
Splits load_datasets(const DatasetSpec& spec);

Model build_model(const RunConfig& config, const Shape& sample_shape, std::size_t classes, Rng& rng);

struct RunResult {
    std::vector<MetricsRecord> metrics;
    std::vector<double> epoch_wall_ms;
    double best_test_accuracy = 0.0;
    std::size_t best_epoch = 0;
    double final_train_accuracy = 0.0;
    std::optional<std::string> abort_cause;
    std::size_t steps = 0;
};

struct RunOptions {
    std::filesystem::path out_dir;  // empty: write nothing
    bool quiet = true;
};

// Seeded training run: per epoch, scheduled lr, shuffled mini-batches,
// evaluation on the test split, best checkpoint by test accuracy. A
// NumericalError ends the run; no metrics are recorded after it.
RunResult run_training(const RunConfig& config, const Splits& data, const RunOptions& options);

int cmd_train(const std::filesystem::path& config_path, const std::optional<std::string>& out_dir, bool quiet);
int cmd_compare(const std::filesystem::path& config_path, const std::optional<std::string>& out_dir, bool quiet,
                std::optional<std::size_t> jobs);

struct SysIdArgs {
    filter::Algo algo = filter::Algo::nlms;
    double mu = 1.0;
    double rho = 0.5;
    double noise = 1e-4;
    std::size_t taps = 8;
    std::size_t steps = 20000;
    std::uint64_t seed = 0;
    std::string out_dir = "runs/sysid";
    bool quiet = false;
};

int cmd_sysid(const SysIdArgs& args);

// Label used in summaries, e.g. "sgd", "insgd-l2".
std::string optimizer_label(const HyperParams& hp);
// FNV-1a of the canonical JSON dump, hex.
std::string config_hash(const nlohmann::json& j);
std::string build_version();

}  // namespace insgd::harness
