#include "frematch/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <thread>

namespace frematch {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (start <= s.size()) {
        const auto comma = s.find(',', start);
        const auto end = comma == std::string_view::npos ? s.size() : comma;
        const auto item = trim(s.substr(start, end - start));
        if (!item.empty()) out.push_back(item);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

double parse_double(std::string_view key, std::string_view v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("config key '" + std::string(key) + "': '" + std::string(v) + "' is not a number");
    }
    return out;
}

std::uint64_t parse_uint(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + std::string(key) + "': '" + std::string(v) +
                          "' is not a non-negative integer");
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + std::string(key) + "': '" + std::string(v) + "' is not a boolean");
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

template <class T>
std::string join(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ",";
        out += f(xs[i]);
    }
    return out;
}

struct Setting {
    std::string key;
    std::function<void(ExperimentConfig&, std::string_view)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

template <class Member>
Setting real(std::string key, Member member) {
    return {key, [key, member](ExperimentConfig& c, std::string_view v) { member(c) = parse_double(key, v); },
            [member](const ExperimentConfig& c) { return fmt_double(member(const_cast<ExperimentConfig&>(c))); }};
}

template <class Member>
Setting count(std::string key, Member member) {
    return {key,
            [key, member](ExperimentConfig& c, std::string_view v) {
                member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(key, v));
            },
            [member](const ExperimentConfig& c) {
                return std::to_string(member(const_cast<ExperimentConfig&>(c)));
            }};
}

template <class Member>
Setting optional_seed(std::string key, Member member) {
    return {key,
            [key, member](ExperimentConfig& c, std::string_view v) {
                if (v == "run") member(c).reset();
                else member(c) = parse_uint(key, v);
            },
            [member](const ExperimentConfig& c) {
                const auto& o = member(const_cast<ExperimentConfig&>(c));
                return o ? std::to_string(*o) : std::string("run");
            }};
}

const std::vector<Setting>& settings() {
    static const std::vector<Setting> table = [] {
        std::vector<Setting> t;
        t.push_back({"mode", [](ExperimentConfig& c, std::string_view v) { c.train.mode = train_mode_from_string(std::string(v)); },
                     [](const ExperimentConfig& c) { return to_string(c.train.mode); }});
        t.push_back(real("lambda", [](ExperimentConfig& c) -> double& { return c.train.lambda; }));
        t.push_back(real("eta", [](ExperimentConfig& c) -> double& { return c.train.eta; }));
        t.push_back(real("beta", [](ExperimentConfig& c) -> double& { return c.train.beta; }));
        t.push_back(real("m", [](ExperimentConfig& c) -> double& { return c.train.m; }));
        t.push_back(real("m0", [](ExperimentConfig& c) -> double& { return c.train.m0; }));
        t.push_back({"momentum_schedule",
                     [](ExperimentConfig& c, std::string_view v) {
                         if (v == "fixed") c.train.scheduled_momentum = false;
                         else if (v == "scheduled") c.train.scheduled_momentum = true;
                         else throw ConfigError("config key 'momentum_schedule': expected fixed or scheduled, got '" + std::string(v) + "'");
                     },
                     [](const ExperimentConfig& c) { return std::string(c.train.scheduled_momentum ? "scheduled" : "fixed"); }});
        t.push_back(count("d", [](ExperimentConfig& c) -> std::size_t& { return c.train.feature_dim; }));
        t.push_back({"hidden_dims",
                     [](ExperimentConfig& c, std::string_view v) {
                         c.train.hidden_dims.clear();
                         for (auto item : split_list(v)) c.train.hidden_dims.push_back(parse_uint("hidden_dims", item));
                     },
                     [](const ExperimentConfig& c) {
                         return join<std::size_t>(c.train.hidden_dims, [](const std::size_t& h) { return std::to_string(h); });
                     }});
        t.push_back(real("fsr.rho0", [](ExperimentConfig& c) -> double& { return c.train.fsr_rho0; }));
        t.push_back({"optimizer", [](ExperimentConfig& c, std::string_view v) { c.train.optimizer = optimizer_from_string(std::string(v)); },
                     [](const ExperimentConfig& c) { return to_string(c.train.optimizer); }});
        t.push_back(real("lr0", [](ExperimentConfig& c) -> double& { return c.train.lr0; }));
        t.push_back(real("min_lr", [](ExperimentConfig& c) -> double& { return c.train.min_lr; }));
        t.push_back(real("weight_decay", [](ExperimentConfig& c) -> double& { return c.train.weight_decay; }));
        t.push_back(real("sgd_momentum", [](ExperimentConfig& c) -> double& { return c.train.sgd_momentum; }));
        t.push_back({"nesterov", [](ExperimentConfig& c, std::string_view v) { c.train.nesterov = parse_bool("nesterov", v); },
                     [](const ExperimentConfig& c) { return std::string(c.train.nesterov ? "true" : "false"); }});
        t.push_back(count("epochs", [](ExperimentConfig& c) -> std::size_t& { return c.train.epochs; }));
        t.push_back(count("labelled_bs", [](ExperimentConfig& c) -> std::size_t& { return c.train.labelled_bs; }));
        t.push_back(real("mu", [](ExperimentConfig& c) -> double& { return c.train.mu; }));
        t.push_back(count("seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.train.seed; }));
        t.push_back(real("augment.weak_jitter_sigma", [](ExperimentConfig& c) -> double& { return c.train.augment.weak_jitter_sigma; }));
        t.push_back(real("augment.strong_jitter_sigma", [](ExperimentConfig& c) -> double& { return c.train.augment.strong_jitter_sigma; }));
        t.push_back(real("augment.translate_frac", [](ExperimentConfig& c) -> double& { return c.train.augment.translate_frac; }));
        t.push_back(real("augment.flip_prob", [](ExperimentConfig& c) -> double& { return c.train.augment.flip_prob; }));
        t.push_back(real("augment.cutout_frac", [](ExperimentConfig& c) -> double& { return c.train.augment.cutout_frac; }));
        t.push_back({"augment.strong_ops_per_sample",
                     [](ExperimentConfig& c, std::string_view v) {
                         c.train.augment.strong_ops_per_sample = static_cast<int>(parse_uint("augment.strong_ops_per_sample", v));
                     },
                     [](const ExperimentConfig& c) { return std::to_string(c.train.augment.strong_ops_per_sample); }});
        t.push_back(real("augment.coordinate_drop_prob", [](ExperimentConfig& c) -> double& { return c.train.augment.coordinate_drop_prob; }));
        t.push_back({"dataset", [](ExperimentConfig& c, std::string_view v) {
                         if (v != "two_moons" && v != "blobs" && v != "digits" && v != "file")
                             throw ConfigError("config key 'dataset': unknown dataset '" + std::string(v) + "'");
                         c.dataset.kind = v;
                     },
                     [](const ExperimentConfig& c) { return c.dataset.kind; }});
        t.push_back(count("dataset.n", [](ExperimentConfig& c) -> std::size_t& { return c.dataset.n; }));
        t.push_back(real("dataset.noise", [](ExperimentConfig& c) -> double& { return c.dataset.noise; }));
        t.push_back(count("dataset.blobs_k", [](ExperimentConfig& c) -> std::size_t& { return c.dataset.blobs_k; }));
        t.push_back(real("dataset.blobs_radius", [](ExperimentConfig& c) -> double& { return c.dataset.blobs_radius; }));
        t.push_back({"dataset.path", [](ExperimentConfig& c, std::string_view v) { c.dataset.path = v; },
                     [](const ExperimentConfig& c) { return c.dataset.path; }});
        t.push_back(optional_seed("dataset.seed", [](ExperimentConfig& c) -> std::optional<std::uint64_t>& { return c.dataset.seed; }));
        t.push_back(count("split.labels_per_class", [](ExperimentConfig& c) -> std::size_t& { return c.split.labels_per_class; }));
        t.push_back(real("split.test_frac", [](ExperimentConfig& c) -> double& { return c.split.test_frac; }));
        t.push_back(optional_seed("split.seed", [](ExperimentConfig& c) -> std::optional<std::uint64_t>& { return c.split.seed; }));
        t.push_back({"seeds", [](ExperimentConfig& c, std::string_view v) { c.seeds = parse_seed_list(v); },
                     [](const ExperimentConfig& c) {
                         return join<std::uint64_t>(c.seeds, [](const std::uint64_t& s) { return std::to_string(s); });
                     }});
        t.push_back({"modes",
                     [](ExperimentConfig& c, std::string_view v) {
                         c.modes.clear();
                         for (auto item : split_list(v)) c.modes.push_back(train_mode_from_string(std::string(item)));
                     },
                     [](const ExperimentConfig& c) {
                         return join<TrainMode>(c.modes, [](const TrainMode& m) { return to_string(m); });
                     }});
        return t;
    }();
    return table;
}

const Setting& find_setting(std::string_view key) {
    for (const auto& s : settings())
        if (s.key == key) return s;
    throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& s : settings()) keys.push_back(s.key);
    return keys;
}

void apply_setting(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
    const auto& s = find_setting(trim(key));
    try {
        s.set(cfg, trim(value));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config key '" + s.key + "': " + e.what());
    }
}

void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos) {
        throw ConfigError("override '" + std::string(assignment) + "' is not of the form key=value");
    }
    apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

ExperimentConfig parse_config(std::string_view text) {
    ExperimentConfig cfg;
    std::size_t lineno = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto nl = text.find('\n', pos);
        std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (!line.empty()) {
            const auto eq = line.find('=');
            if (eq == std::string_view::npos) {
                throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
            }
            apply_setting(cfg, line.substr(0, eq), line.substr(eq + 1));
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string get_setting(const ExperimentConfig& cfg, std::string_view key) { return find_setting(key).get(cfg); }

std::string to_config_text(const ExperimentConfig& cfg) {
    std::string out;
    for (const auto& s : settings()) out += s.key + " = " + s.get(cfg) + "\n";
    return out;
}

std::vector<double> parse_number_list(std::string_view text) {
    std::vector<double> out;
    for (auto item : split_list(text)) {
        double v = 0.0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc{} || res.ptr != item.data() + item.size() || !std::isfinite(v)) {
            throw ConfigError("value list entry '" + std::string(item) + "' is not a number");
        }
        out.push_back(v);
    }
    return out;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view text) {
    std::vector<std::uint64_t> out;
    for (auto item : split_list(text)) out.push_back(parse_uint("seeds", item));
    return out;
}

// --- running -----------------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
    const auto ds_seed = cfg.dataset.seed.value_or(seed);
    PreparedData out;
    const auto& dc = cfg.dataset;
    if (dc.kind == "two_moons") {
        out.dataset = make_two_moons(dc.n, dc.noise, ds_seed);
    } else if (dc.kind == "blobs") {
        std::vector<std::vector<double>> centers;
        for (std::size_t k = 0; k < dc.blobs_k; ++k) {
            const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(dc.blobs_k);
            centers.push_back({dc.blobs_radius * std::cos(a), dc.blobs_radius * std::sin(a)});
        }
        out.dataset = make_blobs(dc.n, centers, dc.noise, ds_seed);
    } else if (dc.kind == "digits") {
        out.dataset = load_dataset(bundled_digits_path());
    } else {
        out.dataset = load_dataset(dc.path);
    }
    out.split = split_ssl(out.dataset, cfg.split.labels_per_class, cfg.split.test_frac, cfg.split.seed.value_or(seed));
    return out;
}

RunResult run_experiment(const ExperimentConfig& cfg, std::uint64_t seed) {
    TrainConfig train = cfg.train;
    train.seed = seed;
    const PreparedData data = prepare_data(cfg, seed);
    return run(train, data.dataset, data.split);
}

double median(std::vector<double> values) {
    if (values.empty()) return std::nan("");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

void for_each_parallel(std::size_t jobs, std::size_t parallel, const std::function<void(std::size_t)>& work) {
    if (parallel <= 1 || jobs <= 1) {
        for (std::size_t i = 0; i < jobs; ++i) work(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < std::min(parallel, jobs); ++t) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < jobs; i = next++) work(i);
        });
    }
    for (auto& th : pool) th.join();
}

SeedOutcome run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
    SeedOutcome out;
    out.seed = seed;
    try {
        const RunResult r = run_experiment(cfg, seed);
        if (r.aborted) {
            out.failed = true;
            out.message = r.abort_message;
        } else {
            out.error = r.final_error();
        }
    } catch (const std::exception& e) {
        out.failed = true;
        out.message = e.what();
    }
    return out;
}

std::vector<double> successful_errors(const std::vector<SeedOutcome>& runs) {
    std::vector<double> errs;
    for (const auto& r : runs)
        if (!r.failed) errs.push_back(r.error);
    return errs;
}

}  // namespace

std::vector<ModeSummary> run_ablation(const ExperimentConfig& cfg, const std::vector<TrainMode>& modes,
                                      const std::vector<std::uint64_t>& seeds, std::size_t parallel) {
    if (seeds.empty()) throw ConfigError("ablation: empty seed list");
    if (modes.empty()) throw ConfigError("ablation: empty mode list");
    std::vector<ModeSummary> rows(modes.size());
    for (std::size_t i = 0; i < modes.size(); ++i) {
        rows[i].mode = modes[i];
        rows[i].runs.resize(seeds.size());
    }
    for_each_parallel(modes.size() * seeds.size(), parallel, [&](std::size_t job) {
        const std::size_t mi = job / seeds.size(), si = job % seeds.size();
        ExperimentConfig c = cfg;
        c.train.mode = modes[mi];
        rows[mi].runs[si] = run_seed(c, seeds[si]);
    });
    for (auto& row : rows) {
        const auto errs = successful_errors(row.runs);
        row.median = median(errs);
        row.min = errs.empty() ? std::nan("") : *std::min_element(errs.begin(), errs.end());
        row.max = errs.empty() ? std::nan("") : *std::max_element(errs.begin(), errs.end());
    }
    return rows;
}

std::string ablation_csv(const std::vector<ModeSummary>& rows) {
    std::string out = "mode,median_err,min_err,max_err,runs,failed\n";
    char buf[256];
    for (const auto& r : rows) {
        const auto failed = std::count_if(r.runs.begin(), r.runs.end(), [](const SeedOutcome& s) { return s.failed; });
        std::snprintf(buf, sizeof buf, "%s,%.9g,%.9g,%.9g,%zu,%zu\n", to_string(r.mode).c_str(), r.median, r.min, r.max,
                      r.runs.size(), static_cast<std::size_t>(failed));
        out += buf;
    }
    return out;
}

void set_sweep_param(ExperimentConfig& cfg, std::string_view param, double value) {
    auto& t = cfg.train;
    if (param == "lambda") t.lambda = value;
    else if (param == "eta") t.eta = value;
    else if (param == "m") t.m = value;
    else if (param == "beta") t.beta = value;
    else if (param == "lr0") t.lr0 = value;
    else if (param == "mu") t.mu = value;
    else throw ConfigError("unknown sweep parameter '" + std::string(param) + "' (expected lambda, eta, m, beta, lr0 or mu)");
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, std::string_view param, const std::vector<double>& values,
                                const std::vector<std::uint64_t>& seeds, std::size_t parallel) {
    if (values.empty()) throw ConfigError("sweep: empty value list");
    if (seeds.empty()) throw ConfigError("sweep: empty seed list");
    std::vector<ExperimentConfig> configs;
    for (double v : values) {
        ExperimentConfig c = cfg;
        set_sweep_param(c, param, v);
        c.train.validate();
        configs.push_back(std::move(c));
    }
    std::vector<SweepRow> rows(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        rows[i].value = values[i];
        rows[i].runs.resize(seeds.size());
    }
    for_each_parallel(values.size() * seeds.size(), parallel, [&](std::size_t job) {
        const std::size_t vi = job / seeds.size(), si = job % seeds.size();
        rows[vi].runs[si] = run_seed(configs[vi], seeds[si]);
    });
    for (auto& row : rows) row.median = median(successful_errors(row.runs));
    return rows;
}

std::string sweep_csv(std::string_view param, const std::vector<SweepRow>& rows) {
    std::string out = std::string(param) + ",median_err\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", r.value, r.median);
        out += buf;
    }
    return out;
}

}  // namespace frematch
