#pragma once

// Experiment configuration (plain-text `key = value` files) and the
// orchestration behind the train / ablate / sweep commands.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "frematch/data.hpp"
#include "frematch/trainer.hpp"

namespace frematch {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct DatasetConfig {
    std::string kind = "two_moons";  // two_moons | blobs | digits | file
    std::size_t n = 1000;
    double noise = 0.1;              // two_moons noise, blobs sigma
    std::size_t blobs_k = 3;
    double blobs_radius = 3.0;       // centers evenly spaced on a circle
    std::string path;                // kind = file
    std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct SplitConfig {
    std::size_t labels_per_class = 2;
    double test_frac = 0.3;
    std::optional<std::uint64_t> seed;  // defaults to the run seed
};

struct ExperimentConfig {
    TrainConfig train;
    DatasetConfig dataset;
    SplitConfig split;
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::vector<TrainMode> modes{TrainMode::frematch, TrainMode::fsr_only, TrainMode::pl_only,
                                 TrainMode::supervised};
};

// Known keys in snapshot order.
std::vector<std::string> config_keys();

// Throws ConfigError naming the key for unknown keys or unparsable values.
void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value);
// "key=value"
void apply_override(ExperimentConfig& cfg, std::string_view assignment);

ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key, one per line; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const ExperimentConfig& cfg);
std::string get_setting(const ExperimentConfig& cfg, std::string_view key);

std::vector<double> parse_number_list(std::string_view text);
std::vector<std::uint64_t> parse_seed_list(std::string_view text);

struct PreparedData {
    Dataset dataset;
    SslSplit split;
};

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed);

// One training run with train.seed = seed.
RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed);

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool failed = false;
    double error = 0.0;  // final empirical-model test error
    std::string message;
};

struct ModeSummary {
    TrainMode mode = TrainMode::frematch;
    std::vector<SeedOutcome> runs;
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
};

double median(std::vector<double> values);

// Runs every (mode, seed); a failed seed is recorded, not fatal.
std::vector<ModeSummary> run_ablation(const ExperimentConfig& cfg, const std::vector<TrainMode>& modes,
                                      const std::vector<std::uint64_t>& seeds, std::size_t parallel = 1);
std::string ablation_csv(const std::vector<ModeSummary>& rows);

struct SweepRow {
    double value = 0.0;
    std::vector<SeedOutcome> runs;
    double median = 0.0;
};

// Sweepable: lambda, eta, m, beta, lr0, mu.
void set_sweep_param(ExperimentConfig& cfg, std::string_view param, double value);
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, std::string_view param, const std::vector<double>& values,
                                const std::vector<std::uint64_t>& seeds, std::size_t parallel = 1);
std::string sweep_csv(std::string_view param, const std::vector<SweepRow>& rows);

}  // namespace frematch
