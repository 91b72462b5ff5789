#pragma once

// Clean and robust accuracy under optional inference-time input noise,
// channel masks, and attacks crafted on a (possibly different) source model.

#include <charconv>
#include <optional>
#include <string_view>

#include "fatlab/diagnostics.hpp"

namespace fatlab {

enum class NoiseKind { none, uniform, gaussian };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::none: return "none";
        case NoiseKind::uniform: return "uniform";
        case NoiseKind::gaussian: return "gaussian";
    }
    return "?";
}

struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double level = 0.0;  // uniform bound a, or gaussian sigma

    void validate() const {
        if (kind != NoiseKind::none && !(level > 0.0)) throw ConfigError("noise level must be positive");
    }
    friend bool operator==(const NoiseSpec&, const NoiseSpec&) = default;
};

/// Parses "none", "uniform:<a>" or "gaussian:<sigma>"; levels may be written
/// as fractions such as 16/255.
inline double parse_level(const std::string& s) {
    auto number = [&s](std::string_view t) {
        double v = 0.0;
        auto r = std::from_chars(t.data(), t.data() + t.size(), v);
        if (t.empty() || r.ec != std::errc() || r.ptr != t.data() + t.size())
            throw ConfigError("cannot parse numeric value: " + s);
        return v;
    };
    const std::string_view all(s);
    const auto slash = all.find('/');
    if (slash == std::string_view::npos) return number(all);
    return number(all.substr(0, slash)) / number(all.substr(slash + 1));
}

inline NoiseSpec parse_noise(const std::string& s) {
    if (s.empty() || s == "none") return {};
    auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("noise must be none, uniform:<a> or gaussian:<sigma>");
    const std::string kind = s.substr(0, colon);
    NoiseSpec n;
    if (kind == "uniform")
        n.kind = NoiseKind::uniform;
    else if (kind == "gaussian")
        n.kind = NoiseKind::gaussian;
    else
        throw ConfigError("unknown noise kind: " + kind);
    n.level = parse_level(s.substr(colon + 1));
    n.validate();
    return n;
}

inline std::string format_noise(const NoiseSpec& n) {
    if (n.kind == NoiseKind::none) return "none";
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, n.level);
    return to_string(n.kind) + ":" + std::string(buf, r.ptr);
}

struct NamedAttack {
    std::string name;
    AttackConfig config;
    friend bool operator==(const NamedAttack&, const NamedAttack&) = default;
};

struct EvalConfig {
    std::vector<NamedAttack> attacks;
    NoiseSpec noise;
    std::uint64_t noise_seed = 0;
    std::optional<ChannelMask> mask;
    int trials = 1;
    bool adaptive = false;  // expectation over noise draws inside the attack
    int adaptive_samples = 8;
    int batch_size = 256;

    void validate() const {
        noise.validate();
        if (trials < 1) throw ConfigError("trials must be >= 1");
        if (adaptive_samples < 1) throw ConfigError("adaptive samples must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        for (const auto& a : attacks) a.config.validate();
    }
};

struct AttackOutcome {
    std::string name;
    double accuracy = 0.0;
    std::string adversarial_hash;  // git blob id of the concatenated deltas
};

struct EvalReport {
    std::size_t samples = 0;
    double clean_accuracy = 0.0;
    std::vector<AttackOutcome> attacks;
    std::string noise = "none";
    std::uint64_t noise_seed = 0;
    std::size_t masked_channels = 0;
    int trials = 1;
    bool adaptive = false;

    const AttackOutcome& attack(const std::string& name) const {
        for (const auto& a : attacks)
            if (a.name == name) return a;
        throw Error("report has no attack named " + name);
    }
};

/// Fresh delta_R for one sample, seeded by (noise_seed, trial, sample).
template <typename T>
void sample_noise(std::span<T> out, const NoiseSpec& noise, std::uint64_t noise_seed, int trial, int sample) {
    if (noise.kind == NoiseKind::none) {
        std::fill(out.begin(), out.end(), T(0));
        return;
    }
    Rng rng(derive_seed(noise_seed, std::uint64_t(trial), std::uint64_t(sample)));
    if (noise.kind == NoiseKind::uniform) {
        std::uniform_real_distribution<double> d(-noise.level, noise.level);
        for (auto& v : out) v = T(d(rng));
    } else {
        std::normal_distribution<double> d(0.0, noise.level);
        for (auto& v : out) v = T(d(rng));
    }
}

/// clamp(x + delta_R) for each sample of a batch.
template <typename T>
Tensor<T> apply_noise(const Tensor<T>& x, std::span<const int> indices, const NoiseSpec& noise,
                      std::uint64_t noise_seed, int trial) {
    if (noise.kind == NoiseKind::none) return x;
    Tensor<T> out = x;
    std::vector<T> buf(x.sample_size());
    for (int s = 0; s < x.n(); ++s) {
        sample_noise<T>(buf, noise, noise_seed, trial, indices[std::size_t(s)]);
        auto o = out.sample(s);
        for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(o[i] + buf[i], T(0), T(1));
    }
    return out;
}

template <typename T>
int count_correct(const Model<T>& model, const Tensor<T>& x, std::span<const int> labels,
                  const ChannelMask* mask = nullptr) {
    auto pred = predict(forward(model, x, mask).logits);
    int c = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) c += pred[i] == labels[i];
    return c;
}

/// Plain accuracy in percent.
template <typename T>
double accuracy(const Model<T>& model, const Dataset& data, const ChannelMask* mask = nullptr,
                int batch_size = kDiagnosticBatch) {
    if (data.size() == 0) return 0.0;
    long correct = 0;
    for (int first = 0; first < data.size(); first += batch_size) {
        const int n = std::min(batch_size, data.size() - first);
        auto b = data.batch<T>(first, n);
        correct += count_correct(model, b.images, b.labels, mask);
    }
    return 100.0 * double(correct) / data.size();
}

namespace detail {

/// Projected attack whose gradient is averaged over noise draws at the
/// model input.
template <typename T>
Tensor<T> noise_aware_attack(const Model<T>& model, const Batch<T>& batch, const AttackConfig& config,
                             const NoiseSpec& noise, std::uint64_t seed, int samples, const ChannelMask* mask) {
    Tensor<T> delta = initial_delta(batch, config);
    const double step = config.steps == 1 ? config.budget : config.step_size;
    for (int t = 0; t < config.steps; ++t) {
        Tensor<T> g = Tensor<T>::like(delta);
        for (int k = 0; k < samples; ++k) {
            Tensor<T> x = apply_noise(add(batch.images, delta), batch.indices, noise,
                                      derive_seed(seed, std::uint64_t(t), 0xe07), k);
            auto gk = input_gradient(model, x, batch.labels, config.loss_kind, mask);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += gk[i];
        }
        if (first_nonfinite_sample(g) < std::size_t(g.n())) throw NonFiniteError("non-finite input gradient", t);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += T(step) * sign(g[i]);
        project(batch.images, delta, config.budget, config.clip_to_image_range);
    }
    return delta;
}

inline AttackConfig batch_attack(const AttackConfig& base, int first) {
    AttackConfig c = base;
    c.seed = derive_seed(base.seed, 0xe7a1, std::uint64_t(first));
    return c;
}

}  // namespace detail

/// Accuracy of `target` on inputs x + delta (+ delta_R), with delta crafted
/// against `source` (unnoised and unmasked unless adaptive). Passing the same
/// model twice gives ordinary evaluation.
template <typename T>
EvalReport evaluate_transfer(const Model<T>& source, const Model<T>& target, const Dataset& data,
                             const EvalConfig& config) {
    config.validate();
    const auto& ss = source.spec();
    const auto& ts = target.spec();
    if (ss.in_channels != ts.in_channels || ss.height != ts.height || ss.width != ts.width ||
        ss.num_classes != ts.num_classes)
        throw ShapeError("source and target models differ in input or output shape");
    const ChannelMask* mask = config.mask ? &*config.mask : nullptr;
    if (mask != nullptr) target.validate_mask(*mask);

    EvalReport r;
    r.samples = std::size_t(data.size());
    r.noise = format_noise(config.noise);
    r.noise_seed = config.noise_seed;
    r.masked_channels = mask ? mask->count() : 0;
    r.trials = config.trials;
    r.adaptive = config.adaptive;

    long clean_correct = 0;
    std::vector<long> adv_correct(config.attacks.size(), 0);
    std::vector<std::vector<unsigned char>> adv_bytes(config.attacks.size());
    for (int first = 0; first < data.size(); first += config.batch_size) {
        const int n = std::min(config.batch_size, data.size() - first);
        auto b = data.batch<T>(first, n);
        for (int t = 0; t < config.trials; ++t)
            clean_correct +=
                count_correct(target, apply_noise(b.images, b.indices, config.noise, config.noise_seed, t), b.labels,
                              mask);
        for (std::size_t a = 0; a < config.attacks.size(); ++a) {
            const AttackConfig ac = detail::batch_attack(config.attacks[a].config, first);
            Tensor<T> delta = config.adaptive && config.noise.kind != NoiseKind::none
                                  ? detail::noise_aware_attack(source, b, ac, config.noise, ac.seed,
                                                               config.adaptive_samples, nullptr)
                                  : run_attack(source, b, ac).delta;
            const auto* p = reinterpret_cast<const unsigned char*>(delta.data());
            adv_bytes[a].insert(adv_bytes[a].end(), p, p + delta.size() * sizeof(T));
            const Tensor<T> x_adv = add(b.images, delta);
            for (int t = 0; t < config.trials; ++t)
                adv_correct[a] += count_correct(
                    target, apply_noise(x_adv, b.indices, config.noise, config.noise_seed, t), b.labels, mask);
        }
    }
    const double denom = double(data.size()) * config.trials;
    r.clean_accuracy = data.size() ? 100.0 * double(clean_correct) / denom : 0.0;
    for (std::size_t a = 0; a < config.attacks.size(); ++a)
        r.attacks.push_back({config.attacks[a].name, data.size() ? 100.0 * double(adv_correct[a]) / denom : 0.0,
                             git_blob_hash(adv_bytes[a])});
    return r;
}

template <typename T>
EvalReport evaluate(const Model<T>& model, const Dataset& data, const EvalConfig& config) {
    return evaluate_transfer(model, model, data, config);
}

/// Masks channels with T_act above alpha_2 and evaluates; attacks are
/// crafted against the unmasked model.
template <typename T>
EvalReport masked_evaluate(const Model<T>& model, const Dataset& data, const ChannelStats& stats, double alpha_2,
                           std::vector<NamedAttack> attacks, int batch_size = kDiagnosticBatch) {
    EvalConfig cfg;
    cfg.attacks = std::move(attacks);
    cfg.batch_size = batch_size;
    ChannelMask m = mask_from_threshold(stats, alpha_2);
    if (!m.empty()) cfg.mask = std::move(m);
    return evaluate(model, data, cfg);
}

template <typename T>
EvalReport transfer_evaluate(const Model<T>& source, const Model<T>& target, const Dataset& data,
                             const NamedAttack& attack, const NoiseSpec& noise = {}, std::uint64_t noise_seed = 0) {
    EvalConfig cfg;
    cfg.attacks = {attack};
    cfg.noise = noise;
    cfg.noise_seed = noise_seed;
    return evaluate_transfer(source, target, data, cfg);
}

/// PGD-k with stride budget/4 from a zero start: the standard probe attack.
inline NamedAttack pgd_attack(double budget, int steps, std::uint64_t seed = 0) {
    AttackConfig c;
    c.budget = budget;
    c.step_size = budget / 4.0;
    c.steps = steps;
    c.seed = seed;
    return {"PGD-" + std::to_string(steps), c};
}

inline NamedAttack fgsm_attack(double budget) {
    AttackConfig c;
    c.budget = budget;
    c.step_size = budget;
    c.steps = 1;
    return {"FGSM", c};
}

inline NamedAttack cw_attack(double budget, int steps) {
    auto a = pgd_attack(budget, steps);
    a.config.loss_kind = LossKind::cw_margin;
    a.name = "CW-" + std::to_string(steps);
    return a;
}

}  // namespace fatlab
