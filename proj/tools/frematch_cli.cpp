// frematch: train, ablate, sweep, evaluate and property-check from the shell.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 run aborted on a
// non-finite value, 3 property failure.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "frematch/experiment.hpp"
#include "frematch/fsr.hpp"
#include "frematch/propcheck.hpp"
#include "frematch/trainer.hpp"

namespace fs = std::filesystem;
using namespace frematch;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kAborted = 2;
constexpr int kPropertyFailure = 3;

struct CommonOptions {
    std::string config;
    std::vector<std::string> sets;
    std::string out = "runs";
};

ExperimentConfig load(const CommonOptions& opt) {
    ExperimentConfig cfg = opt.config.empty() ? ExperimentConfig{} : load_config(opt.config);
    for (const auto& s : opt.sets) apply_override(cfg, s);
    cfg.train.validate();
    return cfg;
}

std::string timestamp(const char* format) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[64];
    std::strftime(buf, sizeof buf, format, &tm);
    return buf;
}

std::string iso_now() { return timestamp("%Y-%m-%dT%H:%M:%SZ"); }

// A fresh directory; never reuses one that exists.
fs::path make_run_dir(const fs::path& root, const std::string& stem) {
    fs::create_directories(root);
    fs::path dir = root / stem;
    for (int k = 2; fs::exists(dir); ++k) dir = root / (stem + "_" + std::to_string(k));
    fs::create_directory(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

nlohmann::json config_snapshot(const ExperimentConfig& cfg) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& key : config_keys()) j[key] = get_setting(cfg, key);
    return j;
}

std::string dataset_id(const ExperimentConfig& cfg) {
    const auto& d = cfg.dataset;
    if (d.kind == "two_moons") return "two_moons(n=" + std::to_string(d.n) + ",noise=" + get_setting(cfg, "dataset.noise") + ")";
    if (d.kind == "blobs") return "blobs(n=" + std::to_string(d.n) + ",k=" + std::to_string(d.blobs_k) + ")";
    if (d.kind == "digits") return "digits8x8";
    return "file:" + d.path;
}

int cmd_train(const CommonOptions& opt, std::optional<std::uint64_t> seed_flag) {
    ExperimentConfig cfg = load(opt);
    if (seed_flag) cfg.train.seed = *seed_flag;
    const std::uint64_t seed = cfg.train.seed;
    const fs::path dir = make_run_dir(opt.out, timestamp("%Y%m%d-%H%M%S") + "_seed" + std::to_string(seed));

    nlohmann::json manifest;
    manifest["version"] = FREMATCH_VERSION;
    manifest["config"] = config_snapshot(cfg);
    manifest["dataset"] = dataset_id(cfg);
    manifest["dataset_seed"] = cfg.dataset.seed.value_or(seed);
    manifest["split_seed"] = cfg.split.seed.value_or(seed);
    manifest["started"] = iso_now();
    manifest["outputs"] = {{"config", "config.txt"}, {"metrics", "metrics.csv"},
                           {"split", "split.json"}, {"checkpoint", "checkpoint.fmc"}};
    manifest["status"] = "running";
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    write_text(dir / "config.txt", to_config_text(cfg));

    const PreparedData data = prepare_data(cfg, seed);
    save_split(dir / "split.json", data.split);
    std::cout << "run " << dir.string() << ": " << dataset_id(cfg) << ", " << data.split.labelled.size()
              << " labelled / " << data.split.unlabelled.size() << " unlabelled / " << data.split.test.size()
              << " test, mode " << to_string(cfg.train.mode) << "\n";
    const RunResult result = run(cfg.train, data.dataset, data.split);

    write_metrics_csv(dir / "metrics.csv", result.epochs);
    save_checkpoint(dir / "checkpoint.fmc", result.state);
    manifest["finished"] = iso_now();
    manifest["iterations"] = result.state.iteration;
    if (result.aborted) {
        manifest["status"] = "aborted";
        manifest["abort"] = result.abort_message;
    } else {
        manifest["status"] = "completed";
        manifest["final_err_emp"] = result.epochs.back().err_emp;
        manifest["final_err_basic"] = result.epochs.back().err_basic;
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");

    if (result.aborted) {
        std::cerr << "aborted: " << result.abort_message << "\n";
        return kAborted;
    }
    const auto& last = result.epochs.back();
    std::printf("finished %zu epochs: test error %.4f (empirical), %.4f (basic)\n", last.epoch, last.err_emp,
                last.err_basic);
    return kOk;
}

std::vector<std::uint64_t> seeds_or(const std::string& flag, const ExperimentConfig& cfg) {
    return flag.empty() ? cfg.seeds : parse_seed_list(flag);
}

int cmd_ablate(const CommonOptions& opt, const std::string& seeds_flag, const std::string& modes_flag,
               std::size_t parallel) {
    ExperimentConfig cfg = load(opt);
    if (!modes_flag.empty()) apply_setting(cfg, "modes", modes_flag);
    const auto seeds = seeds_or(seeds_flag, cfg);
    if (seeds.size() < 3) throw ConfigError("ablate needs at least 3 seeds, got " + std::to_string(seeds.size()));
    const auto rows = run_ablation(cfg, cfg.modes, seeds, parallel);
    const fs::path dir = make_run_dir(opt.out, timestamp("%Y%m%d-%H%M%S") + "_ablate");
    write_text(dir / "config.txt", to_config_text(cfg));
    const std::string csv = ablation_csv(rows);
    write_text(dir / "ablation.csv", csv);
    for (const auto& row : rows)
        for (const auto& r : row.runs)
            if (r.failed) std::cerr << to_string(row.mode) << " seed " << r.seed << " failed: " << r.message << "\n";
    std::cout << csv << "written to " << (dir / "ablation.csv").string() << "\n";
    return kOk;
}

int cmd_sweep(const CommonOptions& opt, const std::string& param, const std::string& values_flag,
              const std::string& seeds_flag, std::size_t parallel) {
    ExperimentConfig cfg = load(opt);
    const auto values = parse_number_list(values_flag);
    const auto seeds = seeds_or(seeds_flag, cfg);
    const auto rows = run_sweep(cfg, param, values, seeds, parallel);
    const fs::path dir = make_run_dir(opt.out, timestamp("%Y%m%d-%H%M%S") + "_sweep_" + param);
    write_text(dir / "config.txt", to_config_text(cfg));
    const std::string csv = sweep_csv(param, rows);
    write_text(dir / "sweep.csv", csv);
    std::cout << csv << "written to " << (dir / "sweep.csv").string() << "\n";
    return kOk;
}

int cmd_eval(const CommonOptions& opt, const std::string& checkpoint, std::optional<std::uint64_t> seed_flag) {
    ExperimentConfig cfg = load(opt);
    const std::uint64_t seed = seed_flag.value_or(cfg.train.seed);
    const TrainState state = load_checkpoint(checkpoint);
    const PreparedData data = prepare_data(cfg, seed);
    if (state.dual.spec.input_dim != data.dataset.geometry.dim ||
        state.dual.spec.num_classes != data.dataset.num_classes) {
        throw ConfigError("checkpoint " + checkpoint + " does not match dataset " + dataset_id(cfg));
    }
    const auto& idx = data.split.test.empty() ? data.split.unlabelled : data.split.test;
    const double emp = evaluate(state.dual.layout, state.dual.empirical, data.dataset, idx);
    const double basic = evaluate(state.dual.layout, state.dual.basic, data.dataset, idx);
    std::printf("err_emp,err_basic,samples\n%.9g,%.9g,%zu\n", emp, basic, idx.size());
    return kOk;
}

int cmd_propcheck(std::uint64_t seed, const std::string& fault) {
    std::optional<testing::ScopedFault> guard;
    if (fault == "fsr-sign") guard.emplace(testing::Fault::fsr_residual_gradient_sign);
    else if (!fault.empty()) throw ConfigError("unknown fault '" + fault + "'");
    const auto start = std::chrono::steady_clock::now();
    const PropertyReport report = run_property_suite(seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << report.text();
    const auto failed = report.failed_names();
    std::fprintf(stderr, "%zu properties, %zu failed, %.1f s\n", report.results.size(), failed.size(), secs);
    return failed.empty() ? kOk : kPropertyFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"FreMatch semi-supervised learning lab"};
    app.require_subcommand(1);

    CommonOptions common;
    std::optional<std::uint64_t> seed;
    std::string seeds, modes, param, values, checkpoint, fault;
    std::size_t parallel = 1;
    std::uint64_t prop_seed = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config, "Config file (key = value lines)");
        sub->add_option("--set", common.sets, "Override one config key, key=value (repeatable)");
        sub->add_option("--out", common.out, "Directory for run outputs")->capture_default_str();
    };

    auto* train = app.add_subcommand("train", "Train one model and write a run directory");
    add_common(train);
    train->add_option("--seed", seed, "Run seed (overrides the config)");

    auto* ablate = app.add_subcommand("ablate", "Median test error per mode over a seed list");
    add_common(ablate);
    ablate->add_option("--seeds", seeds, "Comma-separated seeds");
    ablate->add_option("--modes", modes, "Comma-separated modes");
    ablate->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);

    auto* sweep = app.add_subcommand("sweep", "Median test error per value of one hyperparameter");
    add_common(sweep);
    sweep->add_option("--param", param, "lambda, eta, m, beta, lr0 or mu")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    sweep->add_option("--seeds", seeds, "Comma-separated seeds");
    sweep->add_option("--parallel", parallel, "Concurrent runs")->check(CLI::PositiveNumber);

    auto* eval = app.add_subcommand("eval", "Test error of a checkpoint");
    add_common(eval);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--seed", seed, "Seed of the data split");

    auto* prop = app.add_subcommand("propcheck", "Run the property suite");
    prop->add_option("--seed", prop_seed, "Suite seed")->capture_default_str();
    prop->add_option("--inject-fault", fault)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*train) return cmd_train(common, seed);
        if (*ablate) return cmd_ablate(common, seeds, modes, parallel);
        if (*sweep) return cmd_sweep(common, param, values, seeds, parallel);
        if (*eval) return cmd_eval(common, checkpoint, seed);
        if (*prop) return cmd_propcheck(prop_seed, fault);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericalError& e) {
        std::cerr << "aborted: " << e.what() << "\n";
        return kAborted;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
