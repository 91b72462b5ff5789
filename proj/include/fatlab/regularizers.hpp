#pragma once

// Training-time penalty terms on activation and output differences between
// an adversarial input x + delta and a randomly perturbed one x + delta_0.
// Each term returns its value together with the gradients with respect to
// both of its inputs, so callers can inject them into backward().

#include "fatlab/diagnostics.hpp"

namespace fatlab {

/// Divisor of the restricted stability term inside the inducing loss.
enum class CoNormalization { node, subset };

inline std::string to_string(CoNormalization n) { return n == CoNormalization::node ? "node" : "subset"; }
inline CoNormalization co_normalization_from_string(const std::string& s) {
    if (s == "node") return CoNormalization::node;
    if (s == "subset") return CoNormalization::subset;
    throw ConfigError("unknown co normalization: " + s);
}

struct RegularizerConfig {
    double alpha_3 = 0.0;   // stability weight; 0 disables the term
    double gamma = 0.0;     // logit alignment weight; 0 disables the term
    std::string node = "B";
    double p = 10.0;        // percent of channels for the inducing loss
    bool co_enabled = false;
    double co_weight = 1.0;   // multiplier on the subtracted stability part
    double co_alpha = 200.0;  // stability scale used inside the inducing loss
    CoNormalization co_normalization = CoNormalization::node;

    void validate() const {
        if (!(alpha_3 >= 0.0)) throw ConfigError("alpha_3 must be >= 0");
        if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
        if (co_enabled && !(p > 0.0 && p <= 100.0)) throw ConfigError("p must lie in (0, 100]");
        if (!(co_weight >= 0.0) || !(co_alpha >= 0.0)) throw ConfigError("co weights must be >= 0");
        if (node.empty()) throw ConfigError("regularizer node not set");
    }
    friend bool operator==(const RegularizerConfig&, const RegularizerConfig&) = default;
};

template <typename T>
struct PairLoss {
    double value = 0.0;
    Tensor<T> grad_a;
    Tensor<T> grad_b;
};

template <typename T>
struct LogitPairLoss {
    double value = 0.0;
    RowMatrix<T> grad_a;
    RowMatrix<T> grad_b;
};

/// alpha_3 / (N*H*W) * sum_k ||a_k - b_k||^2, averaged over the batch. With
/// `channels` the sum runs over those channels only; `normalization` picks
/// the divisor N*H*W (node) or |channels|*H*W (subset).
template <typename T>
PairLoss<T> l_stable(const Tensor<T>& a, const Tensor<T>& b, double alpha_3,
                     const std::vector<int>* channels = nullptr,
                     CoNormalization normalization = CoNormalization::node) {
    if (!a.same_shape(b)) throw ShapeError("l_stable captures differ in shape");
    if (a.n() == 0) throw ShapeError("l_stable needs a non-empty batch");
    std::vector<int> all;
    if (channels == nullptr) {
        all.resize(std::size_t(a.c()));
        std::iota(all.begin(), all.end(), 0);
        channels = &all;
    }
    for (int k : *channels)
        if (k < 0 || k >= a.c()) throw ShapeError("l_stable channel out of range");
    const double width =
        normalization == CoNormalization::subset ? double(channels->size()) : double(a.c());
    const double scale = alpha_3 / (width * double(a.plane()) * double(a.n()));
    PairLoss<T> r;
    r.grad_a = Tensor<T>::like(a);
    r.grad_b = Tensor<T>::like(b);
    double sum = 0.0;
    for (int s = 0; s < a.n(); ++s)
        for (int k : *channels) {
            auto x = a.channel(s, k), y = b.channel(s, k);
            auto gx = r.grad_a.channel(s, k), gy = r.grad_b.channel(s, k);
            for (std::size_t i = 0; i < x.size(); ++i) {
                const double d = double(x[i]) - double(y[i]);
                sum += d * d;
                gx[i] = T(2.0 * scale * d);
                gy[i] = T(-2.0 * scale * d);
            }
        }
    r.value = scale * sum;
    return r;
}

template <typename T>
PairLoss<T> l_stable(const ActivationCapture<T>& adv, const ActivationCapture<T>& rand, const std::string& node,
                     double alpha_3) {
    if (adv.names != rand.names) throw ShapeError("l_stable captures come from different node layouts");
    return l_stable(adv.at(node), rand.at(node), alpha_3);
}

/// gamma * mean over the batch of ||z_a - z_b||^2.
template <typename T>
LogitPairLoss<T> l_align(const RowMatrix<T>& za, const RowMatrix<T>& zb, double gamma) {
    if (za.rows() != zb.rows() || za.cols() != zb.cols()) throw ShapeError("l_align outputs differ in shape");
    if (za.rows() == 0) throw ShapeError("l_align needs a non-empty batch");
    LogitPairLoss<T> r;
    const double n = double(za.rows());
    double sum = 0.0;
    r.grad_a.resize(za.rows(), za.cols());
    for (Eigen::Index i = 0; i < za.rows(); ++i)
        for (Eigen::Index j = 0; j < za.cols(); ++j) {
            const double d = double(za(i, j)) - double(zb(i, j));
            sum += d * d;
            r.grad_a(i, j) = T(2.0 * gamma * d / n);
        }
    r.grad_b = -r.grad_a;
    r.value = gamma * sum / n;
    return r;
}

namespace detail {

template <typename T>
void accumulate(std::optional<Tensor<T>>& slot, const Tensor<T>& g) {
    if (!slot) {
        slot = g;
        return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
}

}  // namespace detail

/// Parameter gradient of the stability term for one batch pair. Returns the
/// loss value; gradients are accumulated into `grads` when given.
template <typename T>
double l_stable_with_gradient(const Model<T>& model, const Tensor<T>& x_adv, const Tensor<T>& x_rand,
                              const std::string& node, double alpha_3, ParameterSet<T>* grads) {
    const std::size_t ni = model.node_index(node);
    auto fa = forward_pass(model, x_adv);
    auto fb = forward_pass(model, x_rand);
    auto l = l_stable(fa.capture.features[ni], fb.capture.features[ni], alpha_3);
    if (grads != nullptr) {
        const RowMatrix<T> zero = RowMatrix<T>::Zero(fa.logits.rows(), fa.logits.cols());
        NodeGradients<T> ga(model.node_count()), gb(model.node_count());
        ga[ni] = std::move(l.grad_a);
        gb[ni] = std::move(l.grad_b);
        backward(model, fa, zero, &ga, grads, false);
        backward(model, fb, zero, &gb, grads, false);
    }
    return l.value;
}

struct CoLoss {
    double total = 0.0;
    double masked_ce = 0.0;
    double stable = 0.0;  // restricted stability part before co_weight
};

/// Inducing loss: cross-entropy of the model with `channels` masked on
/// x + delta_adv, minus co_weight times the stability term restricted to
/// those channels on the unmasked model for the pair (x + delta_adv,
/// x + delta_rand). Parameter gradients accumulate into `grads` when given.
template <typename T>
CoLoss l_co(const Model<T>& model, const Batch<T>& batch, const Tensor<T>& delta_adv, const Tensor<T>& delta_rand,
            const ChannelSet& channels, const RegularizerConfig& config, ParameterSet<T>* grads = nullptr) {
    if (channels.empty()) throw ConfigError("l_co needs a non-empty channel set");
    const std::size_t ni = model.node_index(channels.node);
    const Tensor<T> x_adv = add(batch.images, delta_adv);
    const ChannelMask mask = channels.as_mask();
    auto fm = forward_pass(model, x_adv, &mask);
    auto ce = loss_and_grad(fm.logits, batch.labels, LossKind::cross_entropy);
    auto fa = forward_pass(model, x_adv);
    auto fb = forward_pass(model, add(batch.images, delta_rand));
    auto st = l_stable(fa.capture.features[ni], fb.capture.features[ni], config.co_alpha, &channels.channels,
                       config.co_normalization);
    CoLoss r{double(ce.mean) - config.co_weight * st.value, double(ce.mean), st.value};
    if (grads != nullptr) {
        backward<T>(model, fm, ce.grad, nullptr, grads, false);
        const RowMatrix<T> zero = RowMatrix<T>::Zero(fa.logits.rows(), fa.logits.cols());
        const T w = T(-config.co_weight);
        for (auto& v : st.grad_a.values()) v *= w;
        for (auto& v : st.grad_b.values()) v *= w;
        NodeGradients<T> ga(model.node_count()), gb(model.node_count());
        ga[ni] = std::move(st.grad_a);
        gb[ni] = std::move(st.grad_b);
        backward(model, fa, zero, &ga, grads, false);
        backward(model, fb, zero, &gb, grads, false);
    }
    return r;
}

}  // namespace fatlab
