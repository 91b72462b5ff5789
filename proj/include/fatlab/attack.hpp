#pragma once

// Perturbation generators: FGSM, projected multi-step attacks, a
// prior-initialised FGSM variant and the random noises used for training
// initialisation and inference-time defence.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "fatlab/model.hpp"

namespace fatlab {

enum class InitKind { zero, uniform_random, prior };
enum class PerturbationRole { adversarial, random_init, inference_noise };

inline std::string to_string(InitKind k) {
    switch (k) {
        case InitKind::zero: return "zero";
        case InitKind::uniform_random: return "uniform_random";
        case InitKind::prior: return "prior";
    }
    return "?";
}
inline InitKind init_kind_from_string(const std::string& s) {
    if (s == "zero") return InitKind::zero;
    if (s == "uniform_random" || s == "uniform") return InitKind::uniform_random;
    if (s == "prior") return InitKind::prior;
    throw ConfigError("unknown attack init: " + s);
}
inline std::string to_string(PerturbationRole r) {
    switch (r) {
        case PerturbationRole::adversarial: return "adversarial";
        case PerturbationRole::random_init: return "random_init";
        case PerturbationRole::inference_noise: return "inference_noise";
    }
    return "?";
}

struct AttackConfig {
    double budget = 8.0 / 255.0;     // l-inf radius
    double step_size = 2.0 / 255.0;  // per-step stride of the multi-step attack
    int steps = 1;
    InitKind init = InitKind::zero;
    LossKind loss_kind = LossKind::cross_entropy;
    bool clip_to_image_range = true;
    std::uint64_t seed = 0;  // random initialisation stream

    void validate() const {
        if (!(budget > 0.0) || budget > 1.0) throw ConfigError("attack budget must lie in (0, 1]");
        if (!(step_size > 0.0)) throw ConfigError("attack step size must be positive");
        if (steps < 1) throw ConfigError("attack steps must be >= 1");
    }
};

template <typename T>
struct PerturbationBatch {
    Tensor<T> delta;
    PerturbationRole role = PerturbationRole::adversarial;
    double budget = 0.0;
    std::optional<double> scale;
};

/// Clamp to the budget box, then (optionally) keep x + d inside [0, 1]. The
/// final nudge loop makes both bounds hold under the scalar type's own
/// rounding, not just in exact arithmetic.
template <typename T>
T project_component(T x, T d, T budget, bool clip_to_image) {
    d = std::clamp(d, -budget, budget);
    if (clip_to_image) {
        const T v = x + d;
        if (v > T(1)) d = T(1) - x;
        if (v < T(0)) d = -x;
        d = std::clamp(d, -budget, budget);
        while (x + d > T(1)) d = std::nextafter(d, T(0));
        while (x + d < T(0)) d = std::nextafter(d, T(0));
    }
    return d;
}

template <typename T>
void project(const Tensor<T>& x, Tensor<T>& delta, double budget, bool clip_to_image) {
    const T b = T(budget);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = project_component(x[i], delta[i], b, clip_to_image);
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& delta) {
    if (!x.same_shape(delta)) throw ShapeError("perturbation shape does not match images");
    Tensor<T> out = Tensor<T>::like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + delta[i];
    return out;
}

/// x + delta clamped to the valid image range.
template <typename T>
Tensor<T> add_clamped(const Tensor<T>& x, const Tensor<T>& delta) {
    if (!x.same_shape(delta)) throw ShapeError("perturbation shape does not match images");
    Tensor<T> out = Tensor<T>::like(x);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + delta[i], T(0), T(1));
    return out;
}

/// U(-a, a) draws in storage order from one seeded stream.
template <typename T>
Tensor<T> uniform_tensor(const std::array<int, 4>& shape, double a, std::uint64_t seed) {
    Tensor<T> out(shape[0], shape[1], shape[2], shape[3]);
    Rng rng(seed);
    std::uniform_real_distribution<double> d(-a, a);
    for (auto& v : out.values()) v = T(d(rng));
    return out;
}

template <typename T>
PerturbationBatch<T> uniform_noise(const std::array<int, 4>& shape, double a, std::uint64_t seed,
                                   PerturbationRole role = PerturbationRole::inference_noise) {
    if (!(a > 0.0)) throw ConfigError("uniform noise bound must be positive");
    return {uniform_tensor<T>(shape, a, seed), role, a, std::nullopt};
}

/// Zero-mean Gaussian noise. Components are unbounded; callers clamp the
/// noisy image to [0, 1]. `budget` records sigma.
template <typename T>
PerturbationBatch<T> gaussian_noise(const std::array<int, 4>& shape, double sigma, std::uint64_t seed,
                                    PerturbationRole role = PerturbationRole::inference_noise) {
    if (!(sigma > 0.0)) throw ConfigError("gaussian noise sigma must be positive");
    Tensor<T> out(shape[0], shape[1], shape[2], shape[3]);
    Rng rng(seed);
    std::normal_distribution<double> d(0.0, sigma);
    for (auto& v : out.values()) v = T(d(rng));
    return {std::move(out), role, sigma, std::nullopt};
}

/// zeta = ||sign(delta)||_2 / ||delta||_2.
template <typename T>
double fgnm_scale(const PerturbationBatch<T>& p) {
    double nonzero = 0.0, sq = 0.0;
    for (T v : p.delta.values()) {
        if (v != T(0)) nonzero += 1.0;
        sq += double(v) * double(v);
    }
    if (!(sq > 0.0)) throw Error("fgnm_scale: perturbation has zero norm");
    return std::sqrt(nonzero) / std::sqrt(sq);
}

namespace detail {

template <typename T>
std::size_t first_nonfinite_sample(const Tensor<T>& g) {
    for (int s = 0; s < g.n(); ++s)
        if (!all_finite<T>(g.sample(s))) return std::size_t(s);
    return std::size_t(g.n());
}

/// One signed-gradient ascent step from `delta`, projected. Throws
/// NonFiniteError carrying `index` when the gradient is not finite.
template <typename T>
void signed_step(const Model<T>& model, const Batch<T>& batch, Tensor<T>& delta, double step,
                 const AttackConfig& config, std::size_t index, const ChannelMask* mask = nullptr) {
    Tensor<T> probe = add(batch.images, delta);
    Tensor<T> g = input_gradient(model, probe, batch.labels, config.loss_kind, mask);
    if (first_nonfinite_sample(g) < std::size_t(g.n())) throw NonFiniteError("non-finite input gradient", index);
    const T s = T(step);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += s * sign(g[i]);
    project(batch.images, delta, config.budget, config.clip_to_image_range);
}

template <typename T>
Tensor<T> initial_delta(const Batch<T>& batch, const AttackConfig& config) {
    if (config.init == InitKind::uniform_random) {
        Tensor<T> d = uniform_tensor<T>(batch.images.shape(), config.budget, config.seed);
        project(batch.images, d, config.budget, config.clip_to_image_range);
        return d;
    }
    return Tensor<T>::like(batch.images);
}

}  // namespace detail

/// Single-step attack: delta = project(init + budget * sign(grad)).
/// `init = prior` is handled by prior_fgsm and treated as zero here.
template <typename T>
PerturbationBatch<T> fgsm(const Model<T>& model, const Batch<T>& batch, const AttackConfig& config,
                          const ChannelMask* mask = nullptr) {
    config.validate();
    Tensor<T> delta = detail::initial_delta(batch, config);
    detail::signed_step(model, batch, delta, config.budget, config, 0, mask);
    return {std::move(delta), PerturbationRole::adversarial, config.budget, std::nullopt};
}

template <typename T>
struct PgdResult {
    PerturbationBatch<T> perturbation;
    std::vector<Tensor<T>> trace;  // delta after each step
};

/// Projected multi-step attack. Each step takes a signed stride of
/// `step_size` and projects back onto the budget box (and image range).
template <typename T>
PgdResult<T> pgd(const Model<T>& model, const Batch<T>& batch, const AttackConfig& config, bool keep_trace = true,
                 const ChannelMask* mask = nullptr) {
    config.validate();
    PgdResult<T> r;
    Tensor<T> delta = detail::initial_delta(batch, config);
    for (int t = 0; t < config.steps; ++t) {
        detail::signed_step(model, batch, delta, config.step_size, config, std::size_t(t), mask);
        if (keep_trace) r.trace.push_back(delta);
    }
    r.perturbation = {std::move(delta), PerturbationRole::adversarial, config.budget, std::nullopt};
    return r;
}

/// Dispatches to fgsm for single-step configs whose step equals the budget,
/// otherwise to pgd.
template <typename T>
PerturbationBatch<T> run_attack(const Model<T>& model, const Batch<T>& batch, const AttackConfig& config,
                                const ChannelMask* mask = nullptr) {
    if (config.steps == 1 && config.step_size == config.budget) return fgsm(model, batch, config, mask);
    return pgd(model, batch, config, false, mask).perturbation;
}

/// Per-training-sample store of the last perturbation, used to initialise
/// the next epoch's single-step attack.
template <typename T>
class PerturbationPrior {
public:
    PerturbationPrior() = default;
    PerturbationPrior(int samples, int c, int h, int w, double momentum)
        : store_(samples, c, h, w), budgets_(std::size_t(samples), 0.0), momentum_(momentum) {}

    int sample_count() const noexcept { return store_.n(); }
    double momentum() const noexcept { return momentum_; }
    void set_momentum(double m) { momentum_ = m; }
    const Tensor<T>& deltas() const noexcept { return store_; }
    Tensor<T>& deltas() noexcept { return store_; }
    const std::vector<double>& budgets() const noexcept { return budgets_; }
    std::vector<double>& budgets() noexcept { return budgets_; }

    bool has(int index) const noexcept { return index >= 0 && index < store_.n(); }

    std::span<const T> entry(int index) const {
        if (!has(index)) throw Error("perturbation prior has no entry for sample " + std::to_string(index));
        return store_.sample(index);
    }
    void write(int index, std::span<const T> delta, double budget) {
        if (!has(index)) throw Error("perturbation prior has no entry for sample " + std::to_string(index));
        std::copy(delta.begin(), delta.end(), store_.sample(index).begin());
        budgets_[std::size_t(index)] = budget;
    }

    friend bool operator==(const PerturbationPrior&, const PerturbationPrior&) = default;

private:
    Tensor<T> store_;
    std::vector<double> budgets_;
    double momentum_ = 1.0;
};

/// Prior-initialised FGSM: init = project(m * stored + (1 - m) * U(-b, b)),
/// one signed step of size b, then the result is written back to the store.
/// The uniform draw uses `config.seed`, matching fgsm's uniform init.
template <typename T>
PerturbationBatch<T> prior_fgsm(const Model<T>& model, const Batch<T>& batch, const AttackConfig& config,
                                PerturbationPrior<T>& prior) {
    config.validate();
    if (batch.indices.size() != std::size_t(batch.size())) throw Error("prior_fgsm needs dataset indices");
    const T m = T(prior.momentum());
    Tensor<T> u = uniform_tensor<T>(batch.images.shape(), config.budget, config.seed);
    Tensor<T> delta = Tensor<T>::like(batch.images);
    for (int s = 0; s < batch.size(); ++s) {
        auto stored = prior.entry(batch.indices[std::size_t(s)]);
        auto us = u.sample(s);
        auto ds = delta.sample(s);
        for (std::size_t i = 0; i < ds.size(); ++i) ds[i] = m * stored[i] + (T(1) - m) * us[i];
    }
    project(batch.images, delta, config.budget, config.clip_to_image_range);
    detail::signed_step(model, batch, delta, config.budget, config, 0);
    for (int s = 0; s < batch.size(); ++s) prior.write(batch.indices[std::size_t(s)], delta.sample(s), config.budget);
    return {std::move(delta), PerturbationRole::adversarial, config.budget, std::nullopt};
}

}  // namespace fatlab
