#pragma once

// Activation-difference statistics between clean and perturbed inputs,
// channel rankings and masks derived from them, and collapse detection on a
// robust-accuracy history.

#include <functional>
#include <limits>
#include <numeric>

#include "fatlab/attack.hpp"
#include "fatlab/dataset.hpp"

namespace fatlab {

enum class Aggregation { sum_over_dataset, mean_over_dataset };

inline std::string to_string(Aggregation a) {
    return a == Aggregation::sum_over_dataset ? "sum_over_dataset" : "mean_over_dataset";
}
inline Aggregation aggregation_from_string(const std::string& s) {
    if (s == "sum_over_dataset" || s == "sum") return Aggregation::sum_over_dataset;
    if (s == "mean_over_dataset" || s == "mean") return Aggregation::mean_over_dataset;
    throw ConfigError("unknown aggregation: " + s);
}

inline constexpr double kDefaultTactAlpha = 100.0;

struct ChannelStats {
    std::string node;
    std::vector<double> raw;       // aggregated sum_x V^{k} / (N*H*W)
    std::vector<double> t_values;  // tanh(alpha * raw), strictly below 1
    double alpha = kDefaultTactAlpha;
    Aggregation aggregation = Aggregation::mean_over_dataset;
    DatasetTag dataset_tag = DatasetTag::test;
    std::size_t samples = 0;

    std::size_t channels() const noexcept { return t_values.size(); }
    friend bool operator==(const ChannelStats&, const ChannelStats&) = default;
};

struct ChannelSet {
    std::string node;
    std::vector<int> channels;

    bool empty() const noexcept { return channels.empty(); }
    ChannelMask as_mask() const {
        ChannelMask m;
        m.channels[node] = channels;
        return m;
    }
    friend bool operator==(const ChannelSet&, const ChannelSet&) = default;
};

struct CoEvent {
    int epoch = 0;
    double robust_before = 0.0;  // window maximum
    double robust_after = 0.0;
    double drop = 0.0;
    friend bool operator==(const CoEvent&, const CoEvent&) = default;
};

namespace detail {

template <typename T>
void check_pair(const Tensor<T>& a, const Tensor<T>& b) {
    if (!a.same_shape(b)) throw ShapeError("activation captures differ in shape");
}

}  // namespace detail

/// Mean over samples of the 2-norm of the flattened per-sample difference.
template <typename T>
double v_act_node(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_pair(a, b);
    if (a.n() == 0) return 0.0;
    double total = 0.0;
    for (int s = 0; s < a.n(); ++s) {
        auto x = a.sample(s), y = b.sample(s);
        double sq = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = double(x[i]) - double(y[i]);
            sq += d * d;
        }
        total += std::sqrt(sq);
    }
    return total / a.n();
}

template <typename T>
double v_act_node(const ActivationCapture<T>& a, const ActivationCapture<T>& b, const std::string& node) {
    return v_act_node(a.at(node), b.at(node));
}

/// Squared 2-norm of the channel-k difference for one sample.
template <typename T>
double v_act_channel(const Tensor<T>& a, const Tensor<T>& b, int k, int sample = 0) {
    detail::check_pair(a, b);
    if (k < 0 || k >= a.c()) throw ShapeError("channel index " + std::to_string(k) + " out of range");
    if (sample < 0 || sample >= a.n()) throw ShapeError("sample index out of range");
    auto x = a.channel(sample, k), y = b.channel(sample, k);
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = double(x[i]) - double(y[i]);
        sq += d * d;
    }
    return sq;
}

template <typename T>
double v_act_channel(const ActivationCapture<T>& a, const ActivationCapture<T>& b, const std::string& node, int k,
                     int sample = 0) {
    return v_act_channel(a.at(node), b.at(node), k, sample);
}

/// Per channel, the squared difference summed over every sample.
template <typename T>
std::vector<double> channel_difference_sums(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_pair(a, b);
    std::vector<double> out(std::size_t(a.c()), 0.0);
    for (int s = 0; s < a.n(); ++s)
        for (int k = 0; k < a.c(); ++k) out[std::size_t(k)] += v_act_channel(a, b, k, s);
    return out;
}

/// tanh(alpha * raw), pulled just below 1 where tanh rounds to 1.
inline double t_act_value(double raw, double alpha) {
    if (!(alpha > 0.0)) throw ConfigError("t_act alpha must be positive");
    return std::min(std::tanh(alpha * raw), std::nextafter(1.0, 0.0));
}

/// Builds ChannelStats from per-channel squared-difference sums over
/// `samples` inputs of a node with shape (N, H, W).
inline ChannelStats channel_stats_from_sums(const std::string& node, const std::vector<double>& sums,
                                            std::size_t samples, std::size_t plane, double alpha,
                                            Aggregation aggregation, DatasetTag tag) {
    if (samples == 0) throw Error("channel statistics need a non-empty dataset");
    ChannelStats st;
    st.node = node;
    st.alpha = alpha;
    st.aggregation = aggregation;
    st.dataset_tag = tag;
    st.samples = samples;
    const double nhw = double(sums.size()) * double(plane);
    for (double s : sums) {
        double r = s / nhw;
        if (aggregation == Aggregation::mean_over_dataset) r /= double(samples);
        st.raw.push_back(r);
        st.t_values.push_back(t_act_value(r, alpha));
    }
    return st;
}

/// Produces the perturbation to compare against for one batch.
template <typename T>
using PerturbationSource = std::function<Tensor<T>(const Batch<T>&)>;

inline constexpr int kDiagnosticBatch = 256;

/// V_act of `node` over a dataset, comparing x and x + delta for one delta
/// per sample.
template <typename T>
double v_act_node(const Model<T>& model, const Dataset& data, const Tensor<T>& deltas, const std::string& node,
                  const ChannelMask* mask = nullptr) {
    if (deltas.n() != data.size()) throw ShapeError("perturbation count does not match dataset size");
    if (data.size() == 0) return 0.0;
    const std::size_t ni = model.node_index(node);
    double total = 0.0;
    for (int first = 0; first < data.size(); first += kDiagnosticBatch) {
        const int count = std::min(kDiagnosticBatch, data.size() - first);
        auto b = data.batch<T>(first, count);
        auto clean = forward(model, b.images, mask);
        auto pert = forward(model, add(b.images, deltas.slice(first, count)), mask);
        total += v_act_node(clean.capture.features[ni], pert.capture.features[ni]) * count;
    }
    return total / data.size();
}

/// Per-channel T_act of `node` over a dataset.
template <typename T>
ChannelStats t_act(const Model<T>& model, const Dataset& data, const PerturbationSource<T>& source,
                   const std::string& node, double alpha = kDefaultTactAlpha,
                   Aggregation aggregation = Aggregation::mean_over_dataset) {
    if (data.size() == 0) throw Error("t_act needs a non-empty dataset");
    const std::size_t ni = model.node_index(node);
    std::vector<double> sums(std::size_t(model.node_channels(ni)), 0.0);
    std::size_t plane = 0;
    for (int first = 0; first < data.size(); first += kDiagnosticBatch) {
        const int count = std::min(kDiagnosticBatch, data.size() - first);
        auto b = data.batch<T>(first, count);
        Tensor<T> delta = source(b);
        auto clean = forward(model, b.images);
        auto pert = forward(model, add(b.images, delta));
        const auto& fa = clean.capture.features[ni];
        plane = fa.plane();
        auto part = channel_difference_sums(fa, pert.capture.features[ni]);
        for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += part[k];
    }
    return channel_stats_from_sums(node, sums, std::size_t(data.size()), plane, alpha, aggregation, data.tag);
}

/// Precomputed-perturbation overload.
template <typename T>
ChannelStats t_act(const Model<T>& model, const Dataset& data, const Tensor<T>& deltas, const std::string& node,
                   double alpha = kDefaultTactAlpha, Aggregation aggregation = Aggregation::mean_over_dataset) {
    if (deltas.n() != data.size()) throw ShapeError("perturbation count does not match dataset size");
    PerturbationSource<T> src = [&](const Batch<T>& b) {
        return deltas.gather(std::span<const int>(b.indices));
    };
    return t_act(model, data, src, node, alpha, aggregation);
}

/// Attack-driven perturbation source; each batch gets its own derived seed.
template <typename T>
PerturbationSource<T> attack_source(const Model<T>& model, AttackConfig config) {
    return [&model, config](const Batch<T>& b) {
        AttackConfig c = config;
        c.seed = derive_seed(config.seed, 0xa77c, std::uint64_t(b.indices.empty() ? 0 : b.indices.front()));
        return run_attack(model, b, c).delta;
    };
}

/// Channels whose T_act is strictly above alpha_2.
inline ChannelMask mask_from_threshold(const ChannelStats& stats, double alpha_2) {
    if (!(alpha_2 >= 0.0 && alpha_2 <= 1.0)) throw ConfigError("masking threshold must lie in [0, 1]");
    ChannelMask m;
    std::vector<int> ks;
    for (std::size_t k = 0; k < stats.t_values.size(); ++k)
        if (stats.t_values[k] > alpha_2) ks.push_back(int(k));
    if (!ks.empty()) m.channels[stats.node] = std::move(ks);
    return m;
}

/// Indices of the `count` largest values; ties go to the lower index. The
/// result is in rank order.
inline std::vector<int> top_indices(const std::vector<double>& values, std::size_t count) {
    std::vector<int> idx(values.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](int a, int b) { return values[std::size_t(a)] > values[std::size_t(b)]; });
    idx.resize(std::min(count, idx.size()));
    return idx;
}

inline std::size_t top_channel_count(double p, std::size_t n) {
    if (!(p > 0.0 && p <= 100.0)) throw ConfigError("channel percentage must lie in (0, 100]");
    // Guard against p*n/100 landing a hair above an integer.
    const double exact = p * double(n) / 100.0;
    const double r = std::round(exact);
    const std::size_t c = std::abs(exact - r) < 1e-9 ? std::size_t(r) : std::size_t(std::ceil(exact));
    return std::min(c, n);
}

/// The ceil(p * N / 100) channels with the largest T_act, in rank order.
inline ChannelSet select_top_channels(const ChannelStats& stats, double p) {
    return {stats.node, top_indices(stats.t_values, top_channel_count(p, stats.t_values.size()))};
}

/// Per-channel variance over samples and spatial positions.
template <typename T>
std::vector<double> channel_variance(const Tensor<T>& x) {
    if (x.n() == 0) throw Error("channel_variance needs a non-empty capture");
    std::vector<double> out(std::size_t(x.c()));
    const double count = double(x.n()) * double(x.plane());
    for (int k = 0; k < x.c(); ++k) {
        double mean = 0.0;
        for (int s = 0; s < x.n(); ++s)
            for (T v : x.channel(s, k)) mean += double(v);
        mean /= count;
        double var = 0.0;
        for (int s = 0; s < x.n(); ++s)
            for (T v : x.channel(s, k)) var += (double(v) - mean) * (double(v) - mean);
        out[std::size_t(k)] = var / count;
    }
    return out;
}

/// Variance of each node channel over a whole dataset (clean inputs).
template <typename T>
std::vector<double> channel_variance(const Model<T>& model, const Dataset& data, const std::string& node) {
    if (data.size() == 0) throw Error("channel_variance needs a non-empty dataset");
    const std::size_t ni = model.node_index(node);
    const int c = model.node_channels(ni);
    std::vector<double> sum(std::size_t(c), 0.0), sq(std::size_t(c), 0.0);
    double count = 0.0;
    for (int first = 0; first < data.size(); first += kDiagnosticBatch) {
        const int n = std::min(kDiagnosticBatch, data.size() - first);
        auto f = forward(model, data.batch<T>(first, n).images);
        const auto& x = f.capture.features[ni];
        count += double(n) * double(x.plane());
        for (int s = 0; s < n; ++s)
            for (int k = 0; k < c; ++k)
                for (T v : x.channel(s, k)) {
                    sum[std::size_t(k)] += double(v);
                    sq[std::size_t(k)] += double(v) * double(v);
                }
    }
    std::vector<double> out(static_cast<std::size_t>(c));
    for (int k = 0; k < c; ++k) {
        const double m = sum[std::size_t(k)] / count;
        out[std::size_t(k)] = std::max(0.0, sq[std::size_t(k)] / count - m * m);
    }
    return out;
}

/// Mask of the `count` highest-variance channels of one node.
inline ChannelMask variance_mask(const std::string& node, const std::vector<double>& variance, std::size_t count) {
    ChannelMask m;
    auto ks = top_indices(variance, count);
    std::sort(ks.begin(), ks.end());
    if (!ks.empty()) m.channels[node] = std::move(ks);
    return m;
}

/// steps x channels matrix of aggregated squared channel differences between
/// clean features and the features at each step of a multi-step attack.
struct IncrementMatrix {
    std::string node;
    Aggregation aggregation = Aggregation::sum_over_dataset;
    std::vector<std::vector<double>> rows;

    std::size_t steps() const noexcept { return rows.size(); }
    std::size_t channels() const noexcept { return rows.empty() ? 0 : rows.front().size(); }
};

template <typename T>
IncrementMatrix activation_increments(const Model<T>& model, const Dataset& data, const AttackConfig& attack,
                                      const std::string& node,
                                      Aggregation aggregation = Aggregation::sum_over_dataset) {
    attack.validate();
    if (data.size() == 0) throw Error("activation_increments needs a non-empty dataset");
    const std::size_t ni = model.node_index(node);
    const int c = model.node_channels(ni);
    IncrementMatrix m;
    m.node = node;
    m.aggregation = aggregation;
    m.rows.assign(std::size_t(attack.steps), std::vector<double>(std::size_t(c), 0.0));
    std::size_t plane = 1;
    for (int first = 0; first < data.size(); first += kDiagnosticBatch) {
        const int n = std::min(kDiagnosticBatch, data.size() - first);
        auto b = data.batch<T>(first, n);
        AttackConfig cfg = attack;
        cfg.seed = derive_seed(attack.seed, 0x1ac, std::uint64_t(first));
        auto r = pgd(model, b, cfg, true);
        auto clean = forward(model, b.images);
        const auto& fa = clean.capture.features[ni];
        plane = fa.plane();
        for (std::size_t j = 0; j < r.trace.size(); ++j) {
            auto pert = forward(model, add(b.images, r.trace[j]));
            auto part = channel_difference_sums(fa, pert.capture.features[ni]);
            for (int k = 0; k < c; ++k) m.rows[j][std::size_t(k)] += part[std::size_t(k)];
        }
    }
    const double nhw = double(c) * double(plane);
    for (auto& row : m.rows)
        for (double& v : row) {
            v /= nhw;
            if (aggregation == Aggregation::mean_over_dataset) v /= double(data.size());
        }
    return m;
}

inline constexpr double kDefaultCoDrop = 20.0;
inline constexpr int kDefaultCoWindow = 3;

/// Flags epoch e when its robust accuracy sits more than `drop_threshold`
/// below the maximum of the preceding `window` epochs. The look-back never
/// reaches before the most recent event, so one collapse yields one event.
inline std::vector<CoEvent> detect_co(const std::vector<double>& history, double drop_threshold = kDefaultCoDrop,
                                      int window = kDefaultCoWindow) {
    if (!(drop_threshold > 0.0)) throw ConfigError("collapse drop threshold must be positive");
    if (window < 1) throw ConfigError("collapse window must be >= 1");
    std::vector<CoEvent> events;
    int floor = 0;
    for (int e = 1; e < int(history.size()); ++e) {
        const int lo = std::max(floor, e - window);
        if (lo >= e) continue;
        const double ref = *std::max_element(history.begin() + lo, history.begin() + e);
        const double drop = ref - history[std::size_t(e)];
        if (drop > drop_threshold) {
            events.push_back({e, ref, history[std::size_t(e)], drop});
            floor = e;
        }
    }
    return events;
}

}  // namespace fatlab
