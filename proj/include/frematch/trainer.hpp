#pragma once

// The training iteration, optimizer, schedules and evaluation.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frematch/augment.hpp"
#include "frematch/data.hpp"
#include "frematch/fsr.hpp"
#include "frematch/nets.hpp"

namespace frematch {

enum class TrainMode { frematch, fsr_only, pl_only, supervised, fully_supervised };
enum class OptimizerKind { sgd, adam };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);
std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& s);

bool uses_unlabelled(TrainMode mode);
bool uses_fsr(TrainMode mode);
bool uses_pseudo_labels(TrainMode mode);

struct TrainConfig {
    TrainMode mode = TrainMode::frematch;
    double lambda = 20.0;
    double eta = 0.95;
    double beta = 1.0;
    double m = 0.9;
    double m0 = 0.97;
    bool scheduled_momentum = false;  // use min(1 - 1/(t+1), m0) instead of m

    std::size_t feature_dim = 16;
    std::vector<std::size_t> hidden_dims{64, 64};
    double fsr_rho0 = 4.0;

    OptimizerKind optimizer = OptimizerKind::sgd;
    double lr0 = 0.01;
    double min_lr = 1e-4;
    double weight_decay = 1e-3;
    double sgd_momentum = 0.9;
    bool nesterov = false;

    std::size_t epochs = 30;
    std::size_t labelled_bs = 8;
    double mu = 1.0;
    std::uint64_t seed = 0;

    AugPolicy augment;  // magnitudes; kind and modality are set per use

    void validate() const;
};

struct Gradients {
    std::vector<double> theta;
    std::vector<double> mapping;
    std::vector<double> eps_logits;
};

struct OptimizerState {
    // SGD velocity, or Adam first moment
    std::vector<double> theta;
    std::vector<double> mapping;
    std::vector<double> eps_logits;
    // Adam second moment (empty for SGD)
    std::vector<double> theta_sq;
    std::vector<double> mapping_sq;
    std::vector<double> eps_logits_sq;
    std::int64_t steps = 0;
};

struct TrainState {
    DualModel dual;
    FsrParams fsr;
    OptimizerState opt;
    std::int64_t iteration = 0;
    std::size_t epoch = 0;
};

TrainState init_state(const NetSpec& spec, const TrainConfig& cfg);

struct LossComponents {
    double l_sup = 0.0;
    double l_fre = 0.0;
    double l_pl = 0.0;
    double total = 0.0;
    double mask_rate = 0.0;
};

// The recorded loss graph of one iteration, before backward.
struct LossGraph {
    Tensor l_sup;
    Tensor l_fre;
    Tensor l_pl;
    Tensor total;
    double mask_rate = 0.0;

    [[nodiscard]] LossComponents values() const;
};

// Inputs to the unlabelled branch: the same samples, weakly and strongly augmented.
struct UnlabelledViews {
    Tensor weak;
    Tensor strong;
};

// Builds every loss term for already-augmented inputs. `unlabelled` is
// ignored in supervised and fully_supervised modes.
LossGraph build_losses(const BoundParams& basic, const BoundParams& empirical, const BoundFsr& fsr,
                       const Tensor& x_labelled, std::span<const int> labels,
                       const std::optional<UnlabelledViews>& unlabelled, const TrainConfig& cfg);

double cosine_lr(std::int64_t t, std::int64_t total_iters, double lr0, double min_lr);

// v <- momentum * v + g + decay * p (decay on theta only); p <- p - lr * v.
// Nesterov: p <- p - lr * (g + decay * p + momentum * v).
void sgd_step(TrainState& state, const Gradients& grads, double lr, const TrainConfig& cfg);

struct IterationOutput {
    LossComponents losses;
    Gradients grads;
};

// Steps (1)-(5) of an iteration without the parameter update: labelled
// forward, EMA update of the empirical model, unlabelled forwards, losses,
// one backward.
IterationOutput compute_iteration(TrainState& state, const LabelledBatch& labelled,
                                  const UnlabelledBatch& unlabelled, const SampleGeometry& geom,
                                  const TrainConfig& cfg, Rng& aug_rng);

// compute_iteration followed by the optimizer step; advances state.iteration.
LossComponents train_iteration(TrainState& state, const LabelledBatch& labelled, const UnlabelledBatch& unlabelled,
                               const SampleGeometry& geom, const TrainConfig& cfg, double lr, Rng& aug_rng);

// Fraction of argmax-misclassified samples; no augmentation.
double evaluate(const ParamLayout& layout, std::span<const double> params, const Dataset& ds,
                std::span<const std::size_t> indices);

struct IterationRecord {
    std::int64_t iter = 0;
    double lr = 0.0;
    double m = 0.0;
    LossComponents losses;
};

struct EpochRecord {
    std::size_t epoch = 0;
    std::int64_t iter = 0;
    LossComponents losses;  // means over the epoch's iterations
    double lr = 0.0;
    double err_basic = 0.0;
    double err_emp = 0.0;
    double train_err_basic = 0.0;
    double train_err_emp = 0.0;
};

struct RunResult {
    std::vector<EpochRecord> epochs;
    std::vector<IterationRecord> iterations;
    TrainState state;
    std::int64_t total_iterations = 0;
    bool aborted = false;
    std::string abort_message;

    [[nodiscard]] double final_error() const;  // empirical-model test error
};

RunResult run(const TrainConfig& cfg, const Dataset& ds, const SslSplit& split);

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochRecord> epochs);
std::string metrics_csv(std::span<const EpochRecord> epochs);

// JSON header (NetSpec, layout) then theta, theta', C, rho as little-endian fp64.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace frematch
