#include "frematch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "frematch/binio.hpp"
#include "frematch/pseudolabel.hpp"

namespace frematch {

std::string to_string(TrainMode mode) {
    switch (mode) {
        case TrainMode::frematch: return "frematch";
        case TrainMode::fsr_only: return "fsr_only";
        case TrainMode::pl_only: return "pl_only";
        case TrainMode::supervised: return "supervised";
        case TrainMode::fully_supervised: return "fully_supervised";
    }
    return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
    for (auto m : {TrainMode::frematch, TrainMode::fsr_only, TrainMode::pl_only, TrainMode::supervised,
                   TrainMode::fully_supervised})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown mode '" + s + "'");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw std::invalid_argument("unknown optimizer '" + s + "'");
}

bool uses_unlabelled(TrainMode mode) {
    return mode == TrainMode::frematch || mode == TrainMode::fsr_only || mode == TrainMode::pl_only;
}
bool uses_fsr(TrainMode mode) { return mode == TrainMode::frematch || mode == TrainMode::fsr_only; }
bool uses_pseudo_labels(TrainMode mode) { return mode == TrainMode::frematch || mode == TrainMode::pl_only; }

void TrainConfig::validate() const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("config: lambda must be >= 0");
    if (!(eta > 0.0 && eta < 1.0)) throw std::invalid_argument("config: eta must lie in (0, 1)");
    if (!(beta >= 0.0)) throw std::invalid_argument("config: beta must be >= 0");
    if (!(m >= 0.0 && m < 1.0)) throw std::invalid_argument("config: m must lie in [0, 1)");
    if (!(m0 >= 0.0 && m0 < 1.0)) throw std::invalid_argument("config: m0 must lie in [0, 1)");
    if (!(min_lr >= 0.0 && lr0 > min_lr)) throw std::invalid_argument("config: need lr0 > min_lr >= 0");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("config: weight_decay must be >= 0");
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0))
        throw std::invalid_argument("config: sgd_momentum must lie in [0, 1)");
    if (labelled_bs == 0) throw std::invalid_argument("config: labelled_bs must be >= 1");
    if (!(mu >= 1.0)) throw std::invalid_argument("config: mu must be >= 1");
    if (feature_dim < 2) throw std::invalid_argument("config: d must be >= 2");
    AugPolicy weak = augment, strong = augment;
    weak.kind = AugKind::weak;
    strong.kind = AugKind::strong;
    weak.validate();
    strong.validate();
}

TrainState init_state(const NetSpec& spec, const TrainConfig& cfg) {
    TrainState st;
    st.dual = init_pair(spec, cfg.seed);
    st.fsr = FsrParams::identity(spec.feature_dim, cfg.fsr_rho0);
    st.opt.theta.assign(st.dual.basic.size(), 0.0);
    st.opt.mapping.assign(st.fsr.mapping.size(), 0.0);
    st.opt.eps_logits.assign(st.fsr.eps_logits.size(), 0.0);
    if (cfg.optimizer == OptimizerKind::adam) {
        st.opt.theta_sq = st.opt.theta;
        st.opt.mapping_sq = st.opt.mapping;
        st.opt.eps_logits_sq = st.opt.eps_logits;
    }
    return st;
}

LossComponents LossGraph::values() const {
    return {l_sup.item(), l_fre.item(), l_pl.item(), total.item(), mask_rate};
}

LossGraph build_losses(const BoundParams& basic, const BoundParams& empirical, const BoundFsr& fsr,
                       const Tensor& x_labelled, std::span<const int> labels,
                       const std::optional<UnlabelledViews>& unlabelled, const TrainConfig& cfg) {
    LossGraph g;
    const Tensor logits_l = forward_logits(basic, forward_features(basic, x_labelled));
    g.l_sup = cfg.mode == TrainMode::fully_supervised ? full_sup_loss(logits_l, labels) : sup_loss(logits_l, labels);
    g.l_fre = Tensor::scalar(0.0);
    g.l_pl = Tensor::scalar(0.0);

    if (uses_unlabelled(cfg.mode)) {
        if (!unlabelled) throw std::invalid_argument("build_losses: mode " + to_string(cfg.mode) + " needs unlabelled data");
        const Tensor feat_emp = forward_features(empirical, unlabelled->weak);
        const PseudoBatch pb = make_pseudo_labels(forward_logits(empirical, feat_emp), cfg.eta);
        const Tensor feat_basic = forward_features(basic, unlabelled->strong);
        g.mask_rate = pb.mask_rate();
        if (uses_fsr(cfg.mode)) g.l_fre = fsr_loss(FeaturePair::from_raw(feat_basic, feat_emp), fsr, cfg.beta);
        if (uses_pseudo_labels(cfg.mode)) g.l_pl = pl_loss(pb, forward_logits(basic, feat_basic));
    }
    g.total = total_loss(g.l_sup, g.l_fre, g.l_pl, cfg.lambda);
    return g;
}

double cosine_lr(std::int64_t t, std::int64_t total_iters, double lr0, double min_lr) {
    if (t < 0) throw std::invalid_argument("cosine_lr: negative iteration");
    if (total_iters <= 0) return t == 0 ? lr0 : min_lr;
    if (t >= total_iters) return min_lr;
    const double frac = static_cast<double>(t) / static_cast<double>(total_iters);
    return min_lr + 0.5 * (lr0 - min_lr) * (1.0 + std::cos(std::numbers::pi * frac));
}

namespace {

void require_finite(std::span<const double> g, const std::string& block) {
    for (double v : g)
        if (!std::isfinite(v)) throw NumericalError("non-finite gradient in parameter block '" + block + "'");
}

void check_gradients(const TrainState& state, const Gradients& grads) {
    for (const auto& blk : state.dual.layout.blocks()) {
        require_finite(std::span<const double>(grads.theta).subspan(blk.offset, blk.shape.size()), blk.name);
    }
    require_finite(grads.mapping, "fsr.C");
    require_finite(grads.eps_logits, "fsr.rho");
}

void sgd_update(std::vector<double>& p, std::vector<double>& v, const std::vector<double>& g, double lr,
                double decay, const TrainConfig& cfg) {
    const double mom = cfg.sgd_momentum;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = g[i] + decay * p[i];
        v[i] = mom * v[i] + d;
        p[i] -= lr * (cfg.nesterov ? d + mom * v[i] : v[i]);
    }
}

void adam_update(std::vector<double>& p, std::vector<double>& m1, std::vector<double>& m2,
                 const std::vector<double>& g, double lr, double decay, std::int64_t step) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = g[i] + decay * p[i];
        m1[i] = b1 * m1[i] + (1.0 - b1) * d;
        m2[i] = b2 * m2[i] + (1.0 - b2) * d * d;
        p[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + eps);
    }
}

}  // namespace

void sgd_step(TrainState& state, const Gradients& grads, double lr, const TrainConfig& cfg) {
    if (grads.theta.size() != state.dual.basic.size() || grads.mapping.size() != state.fsr.mapping.size() ||
        grads.eps_logits.size() != state.fsr.eps_logits.size()) {
        throw ShapeError("sgd_step: gradient layout does not match the trainable parameters");
    }
    check_gradients(state, grads);
    auto& o = state.opt;
    if (cfg.optimizer == OptimizerKind::adam) {
        if (o.theta_sq.size() != o.theta.size()) {
            o.theta_sq.assign(o.theta.size(), 0.0);
            o.mapping_sq.assign(o.mapping.size(), 0.0);
            o.eps_logits_sq.assign(o.eps_logits.size(), 0.0);
        }
        ++o.steps;
        adam_update(state.dual.basic, o.theta, o.theta_sq, grads.theta, lr, cfg.weight_decay, o.steps);
        adam_update(state.fsr.mapping, o.mapping, o.mapping_sq, grads.mapping, lr, 0.0, o.steps);
        adam_update(state.fsr.eps_logits, o.eps_logits, o.eps_logits_sq, grads.eps_logits, lr, 0.0, o.steps);
        return;
    }
    ++o.steps;
    sgd_update(state.dual.basic, o.theta, grads.theta, lr, cfg.weight_decay, cfg);
    sgd_update(state.fsr.mapping, o.mapping, grads.mapping, lr, 0.0, cfg);
    sgd_update(state.fsr.eps_logits, o.eps_logits, grads.eps_logits, lr, 0.0, cfg);
}

namespace {

Tensor augment_batch(std::span<const double> samples, std::size_t n, const SampleGeometry& geom,
                     const AugPolicy& policy, Rng& rng) {
    std::vector<double> out;
    out.reserve(n * geom.dim);
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = augment(samples.subspan(i * geom.dim, geom.dim), geom, policy, rng);
        out.insert(out.end(), x.begin(), x.end());
    }
    return Tensor::from_values({n, geom.dim}, std::move(out));
}

AugPolicy policy_for(const TrainConfig& cfg, AugKind kind, Modality modality) {
    AugPolicy p = cfg.augment;
    p.kind = kind;
    p.modality = modality;
    return p;
}

double momentum_for(const TrainConfig& cfg, std::int64_t iteration) {
    return cfg.scheduled_momentum ? momentum_schedule(iteration, cfg.m0) : cfg.m;
}

}  // namespace

IterationOutput compute_iteration(TrainState& state, const LabelledBatch& labelled,
                                  const UnlabelledBatch& unlabelled, const SampleGeometry& geom,
                                  const TrainConfig& cfg, Rng& aug_rng) {
    const AugPolicy weak = policy_for(cfg, AugKind::weak, geom.modality);
    const AugPolicy strong = policy_for(cfg, AugKind::strong, geom.modality);

    // (1) labelled batch, weak augmentation, through the basic model
    const Tensor x_lab = augment_batch(labelled.samples, labelled.size(), geom, weak, aug_rng);
    BoundParams basic(state.dual.layout, state.dual.basic, true);

    // (2) the empirical model follows the basic model before seeing unlabelled data
    ema_update(state.dual, momentum_for(cfg, state.iteration));

    // (3) weak view for the empirical model, strong view of the same samples for the basic model
    std::optional<UnlabelledViews> views;
    if (uses_unlabelled(cfg.mode)) {
        if (unlabelled.size() == 0) throw std::invalid_argument("compute_iteration: empty unlabelled batch");
        Tensor uw = augment_batch(unlabelled.samples, unlabelled.size(), geom, weak, aug_rng);
        Tensor us = augment_batch(unlabelled.samples, unlabelled.size(), geom, strong, aug_rng);
        views = UnlabelledViews{std::move(uw), std::move(us)};
    }
    const BoundParams empirical(state.dual.layout, state.dual.empirical, false);
    BoundFsr fsr(state.fsr, true);

    // (4)-(5) losses, one backward over the combined loss
    const LossGraph graph = build_losses(basic, empirical, fsr, x_lab, labelled.labels, views, cfg);
    backward(graph.total);

    IterationOutput out;
    out.losses = graph.values();
    out.grads.theta = basic.gather_grad();
    auto grab = [](const Tensor& t) {
        auto g = t.grad();
        return g ? std::vector<double>(g->begin(), g->end()) : std::vector<double>(t.size(), 0.0);
    };
    out.grads.mapping = grab(fsr.mapping);
    out.grads.eps_logits = grab(fsr.eps_logits);
    return out;
}

LossComponents train_iteration(TrainState& state, const LabelledBatch& labelled, const UnlabelledBatch& unlabelled,
                               const SampleGeometry& geom, const TrainConfig& cfg, double lr, Rng& aug_rng) {
    IterationOutput out = compute_iteration(state, labelled, unlabelled, geom, cfg, aug_rng);
    const auto& l = out.losses;
    for (double v : {l.l_sup, l.l_fre, l.l_pl, l.total})
        if (!std::isfinite(v)) throw NumericalError("non-finite loss");
    sgd_step(state, out.grads, lr, cfg);
    ++state.iteration;
    return out.losses;
}

double evaluate(const ParamLayout& layout, std::span<const double> params, const Dataset& ds,
                std::span<const std::size_t> indices) {
    if (indices.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
    const std::size_t d = ds.geometry.dim;
    std::vector<double> x;
    x.reserve(indices.size() * d);
    for (auto i : indices) {
        auto s = ds.sample(i);
        x.insert(x.end(), s.begin(), s.end());
    }
    const BoundParams bound(layout, params, false);
    const Tensor logits = forward_logits(bound, forward_features(bound, Tensor::from_values({indices.size(), d}, std::move(x))));
    const auto pred = argmax_rows(logits);
    std::size_t wrong = 0;
    for (std::size_t k = 0; k < indices.size(); ++k)
        if (pred[k] != ds.labels[indices[k]]) ++wrong;
    return static_cast<double>(wrong) / static_cast<double>(indices.size());
}

double RunResult::final_error() const {
    if (epochs.empty()) throw std::logic_error("RunResult: no evaluation recorded");
    return epochs.back().err_emp;
}

RunResult run(const TrainConfig& cfg, const Dataset& ds, const SslSplit& split) {
    cfg.validate();
    ds.validate();
    const NetSpec spec{ds.geometry.dim, cfg.hidden_dims, cfg.feature_dim, ds.num_classes};

    RunResult result;
    result.state = init_state(spec, cfg);
    TrainState& state = result.state;

    SslSplit train_split = split;
    if (cfg.mode == TrainMode::fully_supervised) {
        train_split.labelled.insert(train_split.labelled.end(), split.unlabelled.begin(), split.unlabelled.end());
        train_split.unlabelled.clear();
    }
    const Batcher batcher = cfg.mode == TrainMode::fully_supervised
                                ? Batcher::labelled_only(ds, train_split, cfg.labelled_bs, cfg.seed)
                                : Batcher(ds, train_split, cfg.labelled_bs, cfg.mu, cfg.seed);
    const auto per_epoch = static_cast<std::int64_t>(batcher.iterations_per_epoch());
    result.total_iterations = per_epoch * static_cast<std::int64_t>(cfg.epochs);
    Rng aug_rng(derive_seed(cfg.seed, 0xA06));

    std::vector<std::size_t> train_idx = split.labelled;
    train_idx.insert(train_idx.end(), split.unlabelled.begin(), split.unlabelled.end());
    auto evaluate_into = [&](EpochRecord& rec) {
        const auto& layout = state.dual.layout;
        if (!split.test.empty()) {
            rec.err_basic = evaluate(layout, state.dual.basic, ds, split.test);
            rec.err_emp = evaluate(layout, state.dual.empirical, ds, split.test);
        }
        rec.train_err_basic = evaluate(layout, state.dual.basic, ds, train_idx);
        rec.train_err_emp = evaluate(layout, state.dual.empirical, ds, train_idx);
    };

    EpochRecord initial;
    initial.lr = cosine_lr(0, result.total_iterations, cfg.lr0, cfg.min_lr);
    evaluate_into(initial);
    result.epochs.push_back(initial);

    for (std::size_t e = 1; e <= cfg.epochs; ++e) {
        const auto batches = batcher.epoch(e - 1);
        EpochRecord rec;
        rec.epoch = e;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            IterationRecord it;
            it.iter = state.iteration;
            it.lr = cosine_lr(state.iteration, result.total_iterations, cfg.lr0, cfg.min_lr);
            it.m = momentum_for(cfg, state.iteration);
            try {
                it.losses = train_iteration(state, batches[b].labelled, batches[b].unlabelled, ds.geometry, cfg, it.lr,
                                            aug_rng);
            } catch (const NumericalError& err) {
                result.aborted = true;
                result.abort_message = std::string(err.what()) + " at epoch " + std::to_string(e) + ", iteration " +
                                       std::to_string(it.iter);
                return result;
            }
            result.iterations.push_back(it);
            rec.losses.l_sup += it.losses.l_sup;
            rec.losses.l_fre += it.losses.l_fre;
            rec.losses.l_pl += it.losses.l_pl;
            rec.losses.total += it.losses.total;
            rec.losses.mask_rate += it.losses.mask_rate;
            rec.lr = it.lr;
        }
        const double k = batches.empty() ? 1.0 : static_cast<double>(batches.size());
        rec.losses.l_sup /= k;
        rec.losses.l_fre /= k;
        rec.losses.l_pl /= k;
        rec.losses.total /= k;
        rec.losses.mask_rate /= k;
        rec.iter = state.iteration;
        state.epoch = e;
        evaluate_into(rec);
        result.epochs.push_back(rec);
    }
    return result;
}

std::string metrics_csv(std::span<const EpochRecord> epochs) {
    std::string out = "epoch,iter,l_sup,l_fre,l_pl,total,mask_rate,lr,err_basic,err_emp\n";
    char buf[512];
    for (const auto& r : epochs) {
        std::snprintf(buf, sizeof buf, "%zu,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.epoch,
                      static_cast<long long>(r.iter), r.losses.l_sup, r.losses.l_fre, r.losses.l_pl, r.losses.total,
                      r.losses.mask_rate, r.lr, r.err_basic, r.err_emp);
        out += buf;
    }
    return out;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochRecord> epochs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write metrics file " + path.string());
    out << metrics_csv(epochs);
}

void save_checkpoint(const std::filesystem::path& path, const TrainState& state) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
    const auto& spec = state.dual.spec;
    nlohmann::json header;
    header["format"] = "frematch-checkpoint";
    header["version"] = 1;
    header["spec"] = {{"input_dim", spec.input_dim},
                      {"hidden_dims", spec.hidden_dims},
                      {"feature_dim", spec.feature_dim},
                      {"num_classes", spec.num_classes}};
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& b : state.dual.layout.blocks())
        layout.push_back({{"name", b.name}, {"rows", b.shape.rows}, {"cols", b.shape.cols}, {"offset", b.offset}});
    header["layout"] = layout;
    header["num_params"] = state.dual.layout.total_size();
    header["blocks"] = {"theta", "theta_prime", "C", "rho"};
    header["iteration"] = state.iteration;
    header["epoch"] = state.epoch;
    binio::write_header(out, header);
    binio::write_f64(out, state.dual.basic);
    binio::write_f64(out, state.dual.empirical);
    binio::write_f64(out, state.fsr.mapping);
    binio::write_f64(out, state.fsr.eps_logits);
}

TrainState load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    const auto header = binio::read_header(in);
    if (header.value("format", "") != "frematch-checkpoint") {
        throw std::runtime_error(path.string() + " is not a checkpoint file");
    }
    NetSpec spec;
    const auto& js = header.at("spec");
    spec.input_dim = js.at("input_dim").get<std::size_t>();
    spec.hidden_dims = js.at("hidden_dims").get<std::vector<std::size_t>>();
    spec.feature_dim = js.at("feature_dim").get<std::size_t>();
    spec.num_classes = js.at("num_classes").get<std::size_t>();

    TrainState st;
    st.dual.spec = spec;
    st.dual.layout = ParamLayout::for_spec(spec);
    if (header.at("num_params").get<std::size_t>() != st.dual.layout.total_size()) {
        throw std::runtime_error("checkpoint layout does not match its spec");
    }
    const std::size_t n = st.dual.layout.total_size(), d = spec.feature_dim;
    st.dual.basic = binio::read_f64(in, n);
    st.dual.empirical = binio::read_f64(in, n);
    st.fsr.dim = d;
    st.fsr.mapping = binio::read_f64(in, d * d);
    st.fsr.eps_logits = binio::read_f64(in, d);
    st.opt.theta.assign(n, 0.0);
    st.opt.mapping.assign(d * d, 0.0);
    st.opt.eps_logits.assign(d, 0.0);
    st.iteration = header.value("iteration", std::int64_t{0});
    st.epoch = header.value("epoch", std::size_t{0});
    return st;
}

}  // namespace frematch
