#pragma once

// Adversarial training under four paradigms with optional activation and
// output regularizers, per-epoch probing, collapse detection and early
// stopping. Training runs in float; everything is single-threaded and seeded.

#include <chrono>
#include <functional>

#include "fatlab/evaluation.hpp"
#include "fatlab/regularizers.hpp"

namespace fatlab {

enum class Paradigm { minmax, regression, noise_aug, superposed };

inline std::string to_string(Paradigm p) {
    switch (p) {
        case Paradigm::minmax: return "minmax";
        case Paradigm::regression: return "regression";
        case Paradigm::noise_aug: return "noise_aug";
        case Paradigm::superposed: return "superposed";
    }
    return "?";
}
inline Paradigm paradigm_from_string(const std::string& s) {
    if (s == "minmax") return Paradigm::minmax;
    if (s == "regression") return Paradigm::regression;
    if (s == "noise_aug") return Paradigm::noise_aug;
    if (s == "superposed") return Paradigm::superposed;
    throw ConfigError("unknown paradigm: " + s);
}

enum class RegressionNorm { squared_l2, l1 };

inline std::string to_string(RegressionNorm n) { return n == RegressionNorm::squared_l2 ? "squared_l2" : "l1"; }
inline RegressionNorm regression_norm_from_string(const std::string& s) {
    if (s == "squared_l2") return RegressionNorm::squared_l2;
    if (s == "l1") return RegressionNorm::l1;
    throw ConfigError("unknown regression norm: " + s);
}

struct ProbeConfig {
    int samples = 512;  // held-out slice drawn from the test split
    int steps = 10;
    std::uint64_t seed = 0x9e0be;
    friend bool operator==(const ProbeConfig&, const ProbeConfig&) = default;
};

struct TrainConfig {
    ModelSpec model;
    Paradigm paradigm = Paradigm::minmax;
    AttackConfig attack{.budget = 8.0 / 255.0, .step_size = 8.0 / 255.0};  // budget is the training radius
    double prior_momentum = 1.0;
    RegularizerConfig regularizers;
    RegressionNorm regression_norm = RegressionNorm::squared_l2;
    double regression_weight = 1.0;
    int epochs = 20;
    int batch_size = 64;
    double learning_rate = 0.05;
    std::vector<int> decay_epochs;  // empty: 50% and 75% of the run
    double decay_factor = 0.1;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    bool early_stop = false;
    double co_drop = kDefaultCoDrop;
    int co_window = kDefaultCoWindow;
    ProbeConfig probe;
    int stats_samples = 512;  // training slice used to rank channels for the inducing loss

    void validate() const {
        model.validate();
        attack.validate();
        regularizers.validate();
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
        if (!(prior_momentum >= 0.0 && prior_momentum <= 1.0)) throw ConfigError("prior momentum must lie in [0, 1]");
        if (!(co_drop > 0.0) || co_window < 1) throw ConfigError("invalid collapse detector settings");
        if (probe.samples < 1 || probe.steps < 1) throw ConfigError("invalid probe settings");
        if (stats_samples < 1) throw ConfigError("stats samples must be >= 1");
        for (int e : decay_epochs)
            if (e < 0) throw ConfigError("decay epochs must be >= 0");
        if (std::find(model.node_names.begin(), model.node_names.end(), regularizers.node) == model.node_names.end())
            throw ConfigError("unknown regularizer node: " + regularizers.node);
    }

    std::vector<int> effective_decay_epochs() const {
        if (!decay_epochs.empty()) return decay_epochs;
        return {epochs / 2, (epochs * 3) / 4};
    }

    double learning_rate_at(int epoch) const {
        double lr = learning_rate;
        for (int e : effective_decay_epochs())
            if (epoch >= e) lr *= decay_factor;
        return lr;
    }
};

/// One optimizer step's loss split into its additive parts.
struct StepMetrics {
    double total = 0.0;
    double ce = 0.0;
    double regression = 0.0;
    double stable = 0.0;
    double co = 0.0;
    double align = 0.0;
    int correct = 0;  // on the training input of the CE term
    int samples = 0;
};

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double train_ce = 0.0;
    double train_regression = 0.0;
    double l_stable = 0.0;
    double l_co = 0.0;
    double l_align = 0.0;
    double train_accuracy = 0.0;
    double clean_accuracy = 0.0;  // full test split
    double probe_clean_accuracy = 0.0;
    double probe_fgsm_accuracy = 0.0;
    double probe_robust_accuracy = 0.0;
    std::vector<double> v_act;  // per node, probe clean vs probe PGD inputs
    std::vector<int> co_channels;  // C_p used this epoch, when the inducing loss is on
    double wall_seconds = 0.0;     // excluded from deterministic logs
    friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
        auto key = [](const EpochRecord& r) {
            return std::tie(r.epoch, r.learning_rate, r.train_loss, r.train_ce, r.train_regression, r.l_stable, r.l_co,
                            r.l_align, r.train_accuracy, r.clean_accuracy, r.probe_clean_accuracy,
                            r.probe_fgsm_accuracy, r.probe_robust_accuracy, r.v_act, r.co_channels);
        };
        return key(a) == key(b);
    }
};

/// Resumable optimizer state.
struct TrainState {
    Model<float> model;
    ParameterSet<float> velocity;
    std::optional<PerturbationPrior<float>> prior;
    int next_epoch = 0;
    std::vector<EpochRecord> records;
    std::vector<CoEvent> events;
    std::optional<Model<float>> best;
    int best_epoch = -1;
    double best_robust = -1.0;
};

struct RunArtifacts {
    Model<float> model;  // last
    std::vector<EpochRecord> records;
    std::vector<CoEvent> events;
    Model<float> best;
    int best_epoch = -1;
    std::optional<PerturbationPrior<float>> prior;
    bool stopped_early = false;
    TrainState state;  // for checkpoint / resume
};

class DivergenceError : public NonFiniteError {
public:
    DivergenceError(int epoch, int batch)
        : NonFiniteError("training loss diverged at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch),
                         std::size_t(batch)),
          epoch_(epoch), batch_(batch) {}
    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int epoch_;
    int batch_;
};

/// Everything a step needs besides the model and batch.
struct StepContext {
    std::uint64_t seed = 0;  // per-step stream (attack init, delta_0)
    double learning_rate = 0.0;
    std::optional<ChannelSet> co_channels;
    PerturbationPrior<float>* prior = nullptr;
    Tensor<float>* adversarial_out = nullptr;  // receives the training delta
};

namespace detail {

inline void sgd_update(ParameterSet<float>& params, ParameterSet<float>& velocity, const ParameterSet<float>& grads,
                       double lr, double momentum, double weight_decay) {
    const float mu = float(momentum), wd = float(weight_decay), eta = float(lr);
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto p = params.values(t);
        auto v = velocity.values(t);
        auto g = grads.values(t);
        for (std::size_t i = 0; i < p.size(); ++i) {
            v[i] = mu * v[i] + (g[i] + wd * p[i]);
            p[i] -= eta * v[i];
        }
    }
}

inline Tensor<float> training_attack(const Model<float>& model, const Batch<float>& batch, const TrainConfig& cfg,
                                     std::uint64_t seed, PerturbationPrior<float>* prior) {
    AttackConfig ac = cfg.attack;
    ac.seed = derive_seed(seed, 0xa11);
    if (ac.init == InitKind::prior) {
        if (prior == nullptr) throw ConfigError("prior-initialised attack needs a perturbation store");
        return prior_fgsm(model, batch, ac, *prior).delta;
    }
    return run_attack(model, batch, ac).delta;
}

inline Tensor<float> random_start(const Batch<float>& batch, double budget, std::uint64_t seed) {
    Tensor<float> d = uniform_tensor<float>(batch.images.shape(), budget, derive_seed(seed, 0xd0));
    project(batch.images, d, budget, true);
    return d;
}

inline int correct_of(const RowMatrix<float>& logits, std::span<const int> labels) {
    auto p = predict(logits);
    int c = 0;
    for (std::size_t i = 0; i < p.size(); ++i) c += p[i] == labels[i];
    return c;
}

}  // namespace detail

/// Paradigm loss and its parameter gradient at the current parameters.
/// Returns the decomposition; gradients are written to `grads` (zeroed
/// first).
inline StepMetrics paradigm_gradient(const Model<float>& model, const Batch<float>& batch, const TrainConfig& cfg,
                                     const StepContext& ctx, ParameterSet<float>& grads) {
    for (auto& t : grads)
        std::fill(t.values.begin(), t.values.end(), 0.0f);
    const auto& reg = cfg.regularizers;
    const std::size_t ni = model.node_index(reg.node);
    StepMetrics m;
    m.samples = batch.size();

    const bool need_adv = cfg.paradigm != Paradigm::noise_aug;
    Tensor<float> delta = need_adv ? detail::training_attack(model, batch, cfg, ctx.seed, ctx.prior)
                                   : Tensor<float>::like(batch.images);
    if (ctx.adversarial_out != nullptr) *ctx.adversarial_out = delta;
    const bool want_rand = cfg.paradigm == Paradigm::noise_aug || cfg.paradigm == Paradigm::superposed ||
                           reg.alpha_3 > 0.0 || reg.gamma > 0.0 || reg.co_enabled;
    Tensor<float> delta0;
    if (want_rand) delta0 = detail::random_start(batch, cfg.attack.budget, ctx.seed);

    // Main input of the cross-entropy term.
    Tensor<float> x_main;
    switch (cfg.paradigm) {
        case Paradigm::minmax: x_main = add(batch.images, delta); break;
        case Paradigm::regression: x_main = batch.images; break;
        case Paradigm::noise_aug: x_main = add(batch.images, delta0); break;
        case Paradigm::superposed: x_main = add_clamped(add(batch.images, delta), delta0); break;
    }
    auto fp_main = forward_pass(model, x_main);
    auto ce = loss_and_grad(fp_main.logits, batch.labels, LossKind::cross_entropy);
    m.ce = ce.mean;
    m.correct = detail::correct_of(fp_main.logits, batch.labels);
    RowMatrix<float> g_main = ce.grad;
    NodeGradients<float> n_main(model.node_count());

    // x + delta pass (shared by regression, stability, alignment, inducing).
    const bool main_is_adv = cfg.paradigm == Paradigm::minmax;
    std::optional<ForwardPass<float>> fp_adv_own;
    RowMatrix<float> g_adv;
    NodeGradients<float> n_adv(model.node_count());
    const bool need_adv_pass =
        cfg.paradigm == Paradigm::regression || reg.alpha_3 > 0.0 || reg.gamma > 0.0 || reg.co_enabled;
    if (need_adv_pass && !main_is_adv) {
        fp_adv_own = forward_pass(model, add(batch.images, delta));
        g_adv = RowMatrix<float>::Zero(fp_main.logits.rows(), fp_main.logits.cols());
    }
    ForwardPass<float>& fp_adv = main_is_adv ? fp_main : *fp_adv_own;
    RowMatrix<float>& ga = main_is_adv ? g_main : g_adv;
    NodeGradients<float>& na = main_is_adv ? n_main : n_adv;

    if (cfg.paradigm == Paradigm::regression) {
        const double n = double(batch.size());
        double sum = 0.0;
        for (Eigen::Index i = 0; i < fp_adv.logits.rows(); ++i)
            for (Eigen::Index j = 0; j < fp_adv.logits.cols(); ++j) {
                const double d = double(fp_adv.logits(i, j)) - double(fp_main.logits(i, j));
                double gd;
                if (cfg.regression_norm == RegressionNorm::squared_l2) {
                    sum += d * d;
                    gd = 2.0 * d;
                } else {
                    sum += std::abs(d);
                    gd = double(sign(d));
                }
                ga(i, j) += float(cfg.regression_weight * gd / n);
                g_main(i, j) -= float(cfg.regression_weight * gd / n);
            }
        m.regression = cfg.regression_weight * sum / n;
    }

    std::optional<ForwardPass<float>> fp_rand;
    RowMatrix<float> g_rand;
    NodeGradients<float> n_rand(model.node_count());
    if (reg.alpha_3 > 0.0 || reg.gamma > 0.0 || reg.co_enabled) {
        fp_rand = forward_pass(model, add(batch.images, delta0));
        g_rand = RowMatrix<float>::Zero(fp_rand->logits.rows(), fp_rand->logits.cols());
    }
    if (reg.alpha_3 > 0.0) {
        auto st = l_stable(fp_adv.capture.features[ni], fp_rand->capture.features[ni], reg.alpha_3);
        m.stable = st.value;
        detail::accumulate(na[ni], st.grad_a);
        detail::accumulate(n_rand[ni], st.grad_b);
    }
    if (reg.gamma > 0.0) {
        auto al = l_align(fp_adv.logits, fp_rand->logits, reg.gamma);
        m.align = al.value;
        ga += al.grad_a;
        g_rand += al.grad_b;
    }
    std::optional<ForwardPass<float>> fp_masked;
    RowMatrix<float> g_masked;
    if (reg.co_enabled) {
        if (!ctx.co_channels || ctx.co_channels->empty()) throw ConfigError("inducing loss needs a channel set");
        const ChannelMask mask = ctx.co_channels->as_mask();
        const std::size_t ci = model.node_index(ctx.co_channels->node);
        fp_masked = forward_pass(model, add(batch.images, delta), &mask);
        auto mce = loss_and_grad(fp_masked->logits, batch.labels, LossKind::cross_entropy);
        g_masked = mce.grad;
        auto st = l_stable(fp_adv.capture.features[ci], fp_rand->capture.features[ci], reg.co_alpha,
                           &ctx.co_channels->channels, reg.co_normalization);
        m.co = double(mce.mean) - reg.co_weight * st.value;
        const float w = float(-reg.co_weight);
        for (auto& v : st.grad_a.values()) v *= w;
        for (auto& v : st.grad_b.values()) v *= w;
        detail::accumulate(na[ci], st.grad_a);
        detail::accumulate(n_rand[ci], st.grad_b);
    }
    m.total = m.ce + m.regression + m.stable + m.co + m.align;
    if (!std::isfinite(m.total)) throw NonFiniteError("non-finite training loss", 0);

    backward(model, fp_main, g_main, &n_main, &grads, false);
    if (fp_adv_own) backward(model, *fp_adv_own, g_adv, &n_adv, &grads, false);
    if (fp_rand) backward(model, *fp_rand, g_rand, &n_rand, &grads, false);
    if (fp_masked) backward<float>(model, *fp_masked, g_masked, nullptr, &grads, false);
    return m;
}

/// One optimizer update of the paradigm loss.
inline StepMetrics train_step(Model<float>& model, ParameterSet<float>& velocity, const Batch<float>& batch,
                              const TrainConfig& cfg, const StepContext& ctx) {
    ParameterSet<float> grads = model.parameters().zeros_like();
    StepMetrics m = paradigm_gradient(model, batch, cfg, ctx, grads);
    if (!grads.all_finite()) throw NonFiniteError("non-finite parameter gradient", 0);
    detail::sgd_update(model.parameters(), velocity, grads, ctx.learning_rate, cfg.momentum, cfg.weight_decay);
    return m;
}

/// Fixed held-out slice of the test split used by the per-epoch probe.
inline Dataset probe_slice(const Dataset& test, const ProbeConfig& probe) {
    std::vector<int> order(std::size_t(test.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(probe.seed, 0x51ce));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::size_t(std::min(probe.samples, test.size())));
    Dataset d;
    d.images = test.images.gather(order);
    for (int i : order) d.labels.push_back(test.labels[std::size_t(i)]);
    d.tag = DatasetTag::test;
    return d;
}

/// Fixed training slice used to rank channels for the inducing loss.
inline Dataset stats_slice(const Dataset& train, int samples, std::uint64_t seed) {
    std::vector<int> order(std::size_t(train.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x57a7));
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(std::size_t(std::min(samples, train.size())));
    Dataset d;
    d.images = train.images.gather(order);
    for (int i : order) d.labels.push_back(train.labels[std::size_t(i)]);
    d.tag = DatasetTag::train;
    return d;
}

struct ProbeResult {
    double clean = 0.0;
    double fgsm = 0.0;
    double robust = 0.0;
    std::vector<double> v_act;
};

/// PGD-k (stride budget/4, zero start) and FGSM accuracy on the probe slice,
/// plus V_act at every node between clean and PGD inputs.
inline ProbeResult run_probe(const Model<float>& model, const Dataset& probe, double budget, int steps) {
    ProbeResult r;
    r.v_act.assign(model.node_count(), 0.0);
    const NamedAttack pgd_cfg = pgd_attack(budget, steps);
    const NamedAttack fgsm_cfg = fgsm_attack(budget);
    long clean = 0, fg = 0, rob = 0;
    for (int first = 0; first < probe.size(); first += kDiagnosticBatch) {
        const int n = std::min(kDiagnosticBatch, probe.size() - first);
        auto b = probe.batch<float>(first, n);
        auto fc = forward(model, b.images);
        clean += detail::correct_of(fc.logits, b.labels);
        fg += count_correct(model, add(b.images, fgsm(model, b, fgsm_cfg.config).delta), b.labels);
        auto d = pgd(model, b, pgd_cfg.config, false).perturbation.delta;
        auto fa = forward(model, add(b.images, d));
        rob += detail::correct_of(fa.logits, b.labels);
        for (std::size_t k = 0; k < model.node_count(); ++k)
            r.v_act[k] += v_act_node(fc.capture.features[k], fa.capture.features[k]) * n;
    }
    const double N = probe.size();
    r.clean = 100.0 * clean / N;
    r.fgsm = 100.0 * fg / N;
    r.robust = 100.0 * rob / N;
    for (auto& v : r.v_act) v /= N;
    return r;
}

/// Fresh state for a run.
inline TrainState initial_state(const TrainConfig& cfg, const Dataset& train) {
    TrainState s{build_model<float>(cfg.model), {}, std::nullopt, 0, {}, {}, std::nullopt, -1, -1.0};
    s.velocity = s.model.parameters().zeros_like();
    if (cfg.attack.init == InitKind::prior)
        s.prior.emplace(train.size(), cfg.model.in_channels, cfg.model.height, cfg.model.width, 0.0);
    return s;
}

using EpochCallback = std::function<void(const EpochRecord&, const TrainState&)>;

/// Trains from `state` (use initial_state for a fresh run) up to cfg.epochs
/// or until early stopping.
inline RunArtifacts train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& test_data,
                          TrainState state, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    train_data.validate();
    if (train_data.size() == 0) throw ConfigError("training set is empty");
    const Dataset probe = probe_slice(test_data, cfg.probe);
    const Dataset stats_data = stats_slice(train_data, cfg.stats_samples, cfg.seed);
    bool stopped = false;

    for (int epoch = state.next_epoch; epoch < cfg.epochs && !stopped; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cfg.learning_rate_at(epoch);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = lr;

        StepContext ctx;
        ctx.learning_rate = lr;
        if (state.prior) {
            // The first epoch has nothing stored yet: draw a uniform start.
            state.prior->set_momentum(epoch == 0 ? 0.0 : cfg.prior_momentum);
            ctx.prior = &*state.prior;
        }
        if (cfg.regularizers.co_enabled) {
            AttackConfig ac = cfg.attack;
            if (ac.init == InitKind::prior) ac.init = InitKind::zero;
            ac.seed = derive_seed(cfg.seed, 0xc057, std::uint64_t(epoch));
            auto st = t_act(state.model, stats_data, attack_source(state.model, ac), cfg.regularizers.node);
            ctx.co_channels = select_top_channels(st, cfg.regularizers.p);
            rec.co_channels = ctx.co_channels->channels;
        }

        std::vector<int> order(std::size_t(train_data.size()));
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(derive_seed(cfg.seed, 0x5f1e, std::uint64_t(epoch)));
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double sum_total = 0, sum_ce = 0, sum_reg = 0, sum_st = 0, sum_co = 0, sum_al = 0;
        long correct = 0, seen = 0;
        int batch_index = 0;
        for (int first = 0; first < train_data.size(); first += cfg.batch_size, ++batch_index) {
            const int n = std::min(cfg.batch_size, train_data.size() - first);
            auto b = train_data.gather<float>(std::span<const int>(order).subspan(std::size_t(first), std::size_t(n)));
            ctx.seed = derive_seed(cfg.seed, std::uint64_t(epoch), std::uint64_t(batch_index));
            Tensor<float> delta;
            ctx.adversarial_out = batch_index == 0 ? &delta : nullptr;
            StepMetrics m;
            try {
                m = train_step(state.model, state.velocity, b, cfg, ctx);
            } catch (const NonFiniteError&) {
                throw DivergenceError(epoch, batch_index);
            }
            if (batch_index == 0 && cfg.paradigm != Paradigm::noise_aug) {
                const float xi = float(cfg.attack.budget);
                for (std::size_t i = 0; i < delta.size(); ++i) {
                    const float v = b.images[i] + delta[i];
                    if (std::abs(delta[i]) > xi || v < 0.0f || v > 1.0f)
                        throw Error("training perturbation left the budget box at epoch " + std::to_string(epoch));
                }
            }
            sum_total += m.total * n;
            sum_ce += m.ce * n;
            sum_reg += m.regression * n;
            sum_st += m.stable * n;
            sum_co += m.co * n;
            sum_al += m.align * n;
            correct += m.correct;
            seen += n;
        }
        rec.train_loss = sum_total / seen;
        rec.train_ce = sum_ce / seen;
        rec.train_regression = sum_reg / seen;
        rec.l_stable = sum_st / seen;
        rec.l_co = sum_co / seen;
        rec.l_align = sum_al / seen;
        rec.train_accuracy = 100.0 * correct / seen;

        rec.clean_accuracy = accuracy(state.model, test_data);
        auto pr = run_probe(state.model, probe, cfg.attack.budget, cfg.probe.steps);
        rec.probe_clean_accuracy = pr.clean;
        rec.probe_fgsm_accuracy = pr.fgsm;
        rec.probe_robust_accuracy = pr.robust;
        rec.v_act = pr.v_act;
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        state.records.push_back(rec);
        std::vector<double> history;
        for (const auto& r : state.records) history.push_back(r.probe_robust_accuracy);
        auto events = detect_co(history, cfg.co_drop, cfg.co_window);
        const bool new_event = events.size() > state.events.size();
        state.events = std::move(events);
        if (!new_event && rec.probe_robust_accuracy > state.best_robust) {
            state.best_robust = rec.probe_robust_accuracy;
            state.best_epoch = epoch;
            state.best = state.model;
        }
        state.next_epoch = epoch + 1;
        if (new_event && cfg.early_stop) stopped = true;
        if (on_epoch) on_epoch(rec, state);
    }

    RunArtifacts art{state.model, state.records, state.events, state.best ? *state.best : state.model,
                     state.best_epoch, state.prior, stopped, state};
    if (stopped && state.best) art.model = *state.best;
    return art;
}

inline RunArtifacts train(const TrainConfig& cfg, const Dataset& train_data, const Dataset& test_data,
                          const EpochCallback& on_epoch = {}) {
    return train(cfg, train_data, test_data, initial_state(cfg, train_data), on_epoch);
}

}  // namespace fatlab
