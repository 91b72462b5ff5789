#pragma once

// Reference classifier with named activation nodes.
//
// Topology (one node per stage, each directly after a rectifier):
//   A: 3x3 stem conv -> affine -> relu
//   B: residual block, stride 2
//   C: residual block, stride 2
//   D: residual block, stride 1
//   E: 1x1 conv -> affine -> relu
//   head: global average pool -> linear
//
// Per-channel affine layers stand in for batch norm; there are no running
// statistics, so forward is a pure function of (parameters, input, mask).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fatlab/layers.hpp"
#include "fatlab/tensor.hpp"

namespace fatlab {

using layers::RowMatrix;

inline constexpr int kStageCount = 5;
/// Fixed input standardisation: the stem sees (x - 0.5) * kInputScale.
inline constexpr double kInputScale = 2.0;

struct ModelSpec {
    int in_channels = 3;
    int height = 16;
    int width = 16;
    int num_classes = 10;
    std::vector<int> stage_widths{8, 16, 16, 32, 32};
    std::vector<std::string> node_names{"A", "B", "C", "D", "E"};
    std::uint64_t seed = 0;

    void validate() const {
        if (in_channels <= 0 || height <= 0 || width <= 0) throw ConfigError("model input shape must be positive");
        if (num_classes <= 0) throw ConfigError("num_classes must be positive");
        if (stage_widths.size() != std::size_t(kStageCount))
            throw ConfigError("stage_widths must list exactly " + std::to_string(kStageCount) + " widths");
        if (node_names.size() != std::size_t(kStageCount))
            throw ConfigError("node_names must list exactly " + std::to_string(kStageCount) + " nodes");
        for (int w : stage_widths)
            if (w <= 0) throw ConfigError("stage widths must be positive");
        std::set<std::string> unique(node_names.begin(), node_names.end());
        if (unique.size() != node_names.size()) throw ConfigError("node names must be unique");
        for (const auto& n : node_names)
            if (n.empty()) throw ConfigError("node names must be non-empty");
    }

    friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

enum class LossKind { cross_entropy, cw_margin };

inline std::string to_string(LossKind k) { return k == LossKind::cross_entropy ? "cross_entropy" : "cw_margin"; }
inline LossKind loss_kind_from_string(const std::string& s) {
    if (s == "cross_entropy" || s == "ce") return LossKind::cross_entropy;
    if (s == "cw_margin" || s == "cw") return LossKind::cw_margin;
    throw ConfigError("unknown loss kind: " + s);
}

template <typename T>
struct NamedTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<T> values;
};

/// Ordered list of named parameter tensors.
template <typename T>
class ParameterSet {
public:
    std::size_t add(std::string name, std::vector<int> shape) {
        std::size_t count = 1;
        for (int d : shape) count *= std::size_t(d);
        tensors_.push_back({std::move(name), std::move(shape), std::vector<T>(count, T(0))});
        return tensors_.size() - 1;
    }

    std::size_t size() const noexcept { return tensors_.size(); }
    NamedTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
    const NamedTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }
    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

    std::span<T> values(std::size_t i) { return tensors_[i].values; }
    std::span<const T> values(std::size_t i) const { return tensors_[i].values; }

    const NamedTensor<T>* find(const std::string& name) const {
        for (const auto& t : tensors_)
            if (t.name == name) return &t;
        return nullptr;
    }

    ParameterSet zeros_like() const {
        ParameterSet out;
        for (const auto& t : tensors_) out.add(t.name, t.shape);
        return out;
    }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += t.values.size();
        return n;
    }

    bool all_finite() const {
        for (const auto& t : tensors_)
            if (!fatlab::all_finite<T>(t.values)) return false;
        return true;
    }

    template <typename U>
    ParameterSet<U> cast() const {
        ParameterSet<U> out;
        for (const auto& t : tensors_) {
            auto idx = out.add(t.name, t.shape);
            std::transform(t.values.begin(), t.values.end(), out[idx].values.begin(),
                           [](T v) { return static_cast<U>(v); });
        }
        return out;
    }

    friend bool operator==(const ParameterSet& a, const ParameterSet& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (a[i].name != b[i].name || a[i].shape != b[i].shape || a[i].values != b[i].values) return false;
        return true;
    }

private:
    std::vector<NamedTensor<T>> tensors_;
};

/// Channels to zero, keyed by node name. An empty mask is allowed.
struct ChannelMask {
    std::map<std::string, std::vector<int>> channels;

    bool empty() const {
        return std::all_of(channels.begin(), channels.end(), [](const auto& kv) { return kv.second.empty(); });
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& [_, v] : channels) n += v.size();
        return n;
    }

    /// Union of two masks.
    ChannelMask compose(const ChannelMask& other) const {
        ChannelMask out = *this;
        for (const auto& [node, ks] : other.channels) {
            auto& dst = out.channels[node];
            std::set<int> merged(dst.begin(), dst.end());
            merged.insert(ks.begin(), ks.end());
            dst.assign(merged.begin(), merged.end());
        }
        return out;
    }
};

/// Post-rectifier features at every node, in node order.
template <typename T>
struct ActivationCapture {
    std::vector<std::string> names;
    std::vector<Tensor<T>> features;

    std::size_t index_of(const std::string& node) const {
        auto it = std::find(names.begin(), names.end(), node);
        if (it == names.end()) throw ConfigError("unknown activation node: " + node);
        return std::size_t(it - names.begin());
    }
    const Tensor<T>& at(const std::string& node) const { return features[index_of(node)]; }
    Tensor<T>& at(const std::string& node) { return features[index_of(node)]; }
};

namespace detail {

struct ConvRef {
    layers::ConvGeometry geom;
    std::size_t weight = 0;
};
struct AffineRef {
    std::size_t scale = 0;
    std::size_t shift = 0;
};
// Stages 0 and 4 use only conv/aff; stages 1..3 are residual blocks.
struct StageRef {
    bool residual = false;
    ConvRef conv1;
    AffineRef aff1;
    ConvRef conv2;
    AffineRef aff2;
    std::optional<ConvRef> proj;
    std::optional<AffineRef> proj_aff;
};
struct Architecture {
    std::vector<StageRef> stages;
    std::size_t fc_weight = 0;
    std::size_t fc_bias = 0;
};

template <typename T>
struct StageTape {
    layers::RowMatrix<T> cols1, cols2, cols_proj;
    Tensor<T> conv1_out, pre1, hidden, conv2_out, proj_out, pre_out;
};

}  // namespace detail

template <typename T>
class Model;

template <typename T = float>
Model<T> build_model(const ModelSpec& spec);

template <typename T>
class Model {
public:
    using scalar_type = T;

    Model() = default;

    const ModelSpec& spec() const noexcept { return spec_; }
    const ParameterSet<T>& parameters() const noexcept { return params_; }
    ParameterSet<T>& parameters() noexcept { return params_; }
    const detail::Architecture& architecture() const noexcept { return arch_; }

    std::size_t node_count() const noexcept { return spec_.node_names.size(); }
    std::size_t node_index(const std::string& node) const {
        auto it = std::find(spec_.node_names.begin(), spec_.node_names.end(), node);
        if (it == spec_.node_names.end()) throw ConfigError("unknown activation node: " + node);
        return std::size_t(it - spec_.node_names.begin());
    }
    int node_channels(std::size_t i) const { return spec_.stage_widths.at(i); }

    /// Checks that every mask entry names a node and an in-range channel.
    void validate_mask(const ChannelMask& mask) const {
        for (const auto& [node, ks] : mask.channels) {
            const int n = node_channels(node_index(node));
            for (int k : ks)
                if (k < 0 || k >= n)
                    throw ShapeError("mask channel " + std::to_string(k) + " out of range for node " + node);
        }
    }

    template <typename U>
    Model<U> cast() const {
        Model<U> out;
        out.spec_ = spec_;
        out.arch_ = arch_;
        out.params_ = params_.template cast<U>();
        return out;
    }

    /// Parameter tensors' shapes must match a freshly built model of the same spec.
    void replace_parameters(ParameterSet<T> params) {
        if (params.size() != params_.size()) throw ShapeError("parameter count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i)
            if (params[i].name != params_[i].name || params[i].shape != params_[i].shape)
                throw ShapeError("parameter layout mismatch at " + params_[i].name);
        if (!params.all_finite()) throw Error("parameters must be finite");
        params_ = std::move(params);
    }

    template <typename U>
    friend Model<U> build_model(const ModelSpec& spec);
    template <typename U>
    friend class Model;

private:
    ModelSpec spec_;
    ParameterSet<T> params_;
    detail::Architecture arch_;
};

/// Builds the reference network. Weights are fan-in-scaled uniform draws from
/// a generator seeded by `spec.seed`, so equal specs give identical parameters.
template <typename T>
Model<T> build_model(const ModelSpec& spec) {
    spec.validate();
    Model<T> m;
    m.spec_ = spec;
    auto& p = m.params_;
    auto conv = [&](const std::string& name, int in, int out, int k, int stride) {
        detail::ConvRef r;
        r.geom = {in, out, k, stride, k / 2};
        r.weight = p.add(name + ".weight", {out, in, k, k});
        return r;
    };
    auto affine = [&](const std::string& name, int c) {
        detail::AffineRef r;
        r.scale = p.add(name + ".scale", {c});
        r.shift = p.add(name + ".shift", {c});
        std::fill(p[r.scale].values.begin(), p[r.scale].values.end(), T(1));
        return r;
    };

    const auto& w = spec.stage_widths;
    const auto& names = spec.node_names;
    detail::StageRef stem;
    stem.conv1 = conv("stage0_" + names[0] + ".conv", spec.in_channels, w[0], 3, 1);
    stem.aff1 = affine("stage0_" + names[0] + ".affine", w[0]);
    m.arch_.stages.push_back(stem);

    const int strides[3] = {2, 2, 1};
    for (int s = 1; s <= 3; ++s) {
        const std::string base = "stage" + std::to_string(s) + "_" + names[s];
        detail::StageRef b;
        b.residual = true;
        b.conv1 = conv(base + ".conv1", w[s - 1], w[s], 3, strides[s - 1]);
        b.aff1 = affine(base + ".affine1", w[s]);
        b.conv2 = conv(base + ".conv2", w[s], w[s], 3, 1);
        b.aff2 = affine(base + ".affine2", w[s]);
        if (strides[s - 1] != 1 || w[s - 1] != w[s]) {
            b.proj = conv(base + ".shortcut", w[s - 1], w[s], 1, strides[s - 1]);
            b.proj_aff = affine(base + ".shortcut_affine", w[s]);
        }
        m.arch_.stages.push_back(b);
    }

    detail::StageRef pre_head;
    pre_head.conv1 = conv("stage4_" + names[4] + ".conv", w[3], w[4], 1, 1);
    pre_head.aff1 = affine("stage4_" + names[4] + ".affine", w[4]);
    m.arch_.stages.push_back(pre_head);

    m.arch_.fc_weight = p.add("head.weight", {spec.num_classes, w[4]});
    m.arch_.fc_bias = p.add("head.bias", {spec.num_classes});

    Rng rng(spec.seed);
    for (auto& t : p) {
        const bool is_conv = t.shape.size() == 4;
        const bool is_fc = t.name == "head.weight";
        if (!is_conv && !is_fc) continue;
        const int fan_in = t.shape[1] * (is_conv ? t.shape[2] * t.shape[3] : 1);
        const double bound = is_conv ? std::sqrt(6.0 / fan_in) : std::sqrt(1.0 / fan_in);
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : t.values) v = static_cast<T>(dist(rng));
    }
    return m;
}

/// Everything backward needs from one forward pass.
template <typename T>
struct ForwardPass {
    RowMatrix<T> logits;
    ActivationCapture<T> capture;
    RowMatrix<T> pooled;
    std::vector<detail::StageTape<T>> tapes;
    ChannelMask mask;
    std::array<int, 4> input_shape{};
};

template <typename T>
ForwardPass<T> forward_pass(const Model<T>& model, const Tensor<T>& images, const ChannelMask* mask = nullptr) {
    const auto& spec = model.spec();
    if (images.c() != spec.in_channels || images.h() != spec.height || images.w() != spec.width)
        throw ShapeError("batch image shape does not match the model input shape");
    if (mask != nullptr) model.validate_mask(*mask);

    const auto& P = model.parameters();
    const auto& arch = model.architecture();
    ForwardPass<T> fp;
    fp.input_shape = images.shape();
    if (mask != nullptr) fp.mask = *mask;
    fp.capture.names = spec.node_names;
    fp.tapes.resize(arch.stages.size());

    Tensor<T> centered = Tensor<T>::like(images);
    for (std::size_t i = 0; i < images.size(); ++i) centered[i] = (images[i] - T(0.5)) * T(kInputScale);

    const Tensor<T>* input = &centered;
    for (std::size_t s = 0; s < arch.stages.size(); ++s) {
        const auto& st = arch.stages[s];
        auto& tp = fp.tapes[s];
        tp.conv1_out = layers::conv_forward(*input, P.values(st.conv1.weight), st.conv1.geom, tp.cols1);
        tp.pre1 = layers::affine_forward(tp.conv1_out, P.values(st.aff1.scale), P.values(st.aff1.shift));
        Tensor<T> out;
        if (!st.residual) {
            out = layers::relu_forward(tp.pre1);
        } else {
            tp.hidden = layers::relu_forward(tp.pre1);
            tp.conv2_out = layers::conv_forward(tp.hidden, P.values(st.conv2.weight), st.conv2.geom, tp.cols2);
            tp.pre_out = layers::affine_forward(tp.conv2_out, P.values(st.aff2.scale), P.values(st.aff2.shift));
            if (st.proj) {
                tp.proj_out = layers::conv_forward(*input, P.values(st.proj->weight), st.proj->geom, tp.cols_proj);
                Tensor<T> sc =
                    layers::affine_forward(tp.proj_out, P.values(st.proj_aff->scale), P.values(st.proj_aff->shift));
                for (std::size_t i = 0; i < sc.size(); ++i) tp.pre_out[i] += sc[i];
            } else {
                for (std::size_t i = 0; i < input->size(); ++i) tp.pre_out[i] += (*input)[i];
            }
            out = layers::relu_forward(tp.pre_out);
        }
        if (mask != nullptr) {
            auto it = mask->channels.find(spec.node_names[s]);
            if (it != mask->channels.end()) layers::zero_channels(out, std::span<const int>(it->second));
        }
        fp.capture.features.push_back(std::move(out));
        input = &fp.capture.features.back();
    }

    fp.pooled = layers::gap_forward(*input);
    Eigen::Map<const RowMatrix<T>> fc(P.values(arch.fc_weight).data(), spec.num_classes, spec.stage_widths.back());
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(P.values(arch.fc_bias).data(), spec.num_classes);
    fp.logits = fp.pooled * fc.transpose();
    fp.logits.rowwise() += bias;
    return fp;
}

/// Extra gradient injected directly at activation nodes (d loss / d capture).
/// Entries may be left empty.
template <typename T>
using NodeGradients = std::vector<std::optional<Tensor<T>>>;

/// Back-propagates `grad_logits` (plus optional node gradients) through a
/// recorded pass. Parameter gradients are accumulated into `param_grads` when
/// given; the input-pixel gradient is returned when `want_input_grad`.
template <typename T>
std::optional<Tensor<T>> backward(const Model<T>& model, const ForwardPass<T>& fp, const RowMatrix<T>& grad_logits,
                                  const NodeGradients<T>* node_grads, ParameterSet<T>* param_grads,
                                  bool want_input_grad) {
    const auto& spec = model.spec();
    const auto& P = model.parameters();
    const auto& arch = model.architecture();
    auto grad_span = [&](std::size_t idx) -> std::span<T> {
        return param_grads != nullptr ? param_grads->values(idx) : std::span<T>{};
    };

    Eigen::Map<const RowMatrix<T>> fc(P.values(arch.fc_weight).data(), spec.num_classes, spec.stage_widths.back());
    if (param_grads != nullptr) {
        Eigen::Map<RowMatrix<T>> dfc(param_grads->values(arch.fc_weight).data(), spec.num_classes,
                                     spec.stage_widths.back());
        dfc.noalias() += grad_logits.transpose() * fp.pooled;
        auto db = param_grads->values(arch.fc_bias);
        for (Eigen::Index j = 0; j < grad_logits.cols(); ++j) db[std::size_t(j)] += grad_logits.col(j).sum();
    }
    RowMatrix<T> dpooled = grad_logits * fc;
    const Tensor<T>& last = fp.capture.features.back();
    Tensor<T> g = layers::gap_backward<T>(dpooled, last.h(), last.w());

    for (std::size_t si = arch.stages.size(); si-- > 0;) {
        const auto& st = arch.stages[si];
        const auto& tp = fp.tapes[si];
        if (node_grads != nullptr && si < node_grads->size() && (*node_grads)[si]) {
            const auto& extra = *(*node_grads)[si];
            if (!extra.same_shape(g)) throw ShapeError("node gradient shape mismatch");
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += extra[i];
        }
        auto it = fp.mask.channels.find(spec.node_names[si]);
        if (it != fp.mask.channels.end()) layers::zero_channels(g, std::span<const int>(it->second));

        const bool need_dx = si > 0 || want_input_grad;
        Tensor<T> dx;
        if (need_dx) {
            if (si > 0) {
                dx = Tensor<T>::like(fp.capture.features[si - 1]);
            } else {
                dx = Tensor<T>(fp.input_shape[0], fp.input_shape[1], fp.input_shape[2], fp.input_shape[3]);
            }
        }

        if (!st.residual) {
            layers::relu_backward_inplace(g, tp.pre1);
            Tensor<T> dconv = layers::affine_backward(g, tp.conv1_out, P.values(st.aff1.scale),
                                                      grad_span(st.aff1.scale), grad_span(st.aff1.shift));
            layers::conv_backward(dconv, tp.cols1, P.values(st.conv1.weight), st.conv1.geom,
                                  grad_span(st.conv1.weight), need_dx ? &dx : nullptr);
        } else {
            layers::relu_backward_inplace(g, tp.pre_out);
            Tensor<T> dconv2 = layers::affine_backward(g, tp.conv2_out, P.values(st.aff2.scale),
                                                       grad_span(st.aff2.scale), grad_span(st.aff2.shift));
            Tensor<T> dhidden = Tensor<T>::like(tp.hidden);
            layers::conv_backward(dconv2, tp.cols2, P.values(st.conv2.weight), st.conv2.geom,
                                  grad_span(st.conv2.weight), &dhidden);
            layers::relu_backward_inplace(dhidden, tp.pre1);
            Tensor<T> dconv1 = layers::affine_backward(dhidden, tp.conv1_out, P.values(st.aff1.scale),
                                                       grad_span(st.aff1.scale), grad_span(st.aff1.shift));
            layers::conv_backward(dconv1, tp.cols1, P.values(st.conv1.weight), st.conv1.geom,
                                  grad_span(st.conv1.weight), need_dx ? &dx : nullptr);
            if (st.proj) {
                Tensor<T> dproj = layers::affine_backward(g, tp.proj_out, P.values(st.proj_aff->scale),
                                                          grad_span(st.proj_aff->scale), grad_span(st.proj_aff->shift));
                layers::conv_backward(dproj, tp.cols_proj, P.values(st.proj->weight), st.proj->geom,
                                      grad_span(st.proj->weight), need_dx ? &dx : nullptr);
            } else if (need_dx) {
                for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
            }
        }
        if (si == 0) {
            if (!want_input_grad) return std::nullopt;
            for (auto& v : dx.values()) v *= T(kInputScale);
            return dx;
        }
        g = std::move(dx);
    }
    return std::nullopt;
}

template <typename T>
struct LossResult {
    std::vector<T> per_sample;
    T mean = T(0);
    RowMatrix<T> grad;  // d(mean)/d(logits)
};

/// Mean loss over the batch and its logit gradient. Throws NonFiniteError
/// naming the first sample whose loss is not finite.
template <typename T>
LossResult<T> loss_and_grad(const RowMatrix<T>& logits, std::span<const int> labels, LossKind kind) {
    const Eigen::Index n = logits.rows(), k = logits.cols();
    if (std::size_t(n) != labels.size()) throw ShapeError("label count does not match logits");
    LossResult<T> r;
    r.per_sample.resize(std::size_t(n));
    r.grad = RowMatrix<T>::Zero(n, k);
    const T inv_n = T(1) / T(n);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[std::size_t(i)];
        if (y < 0 || y >= k) throw ShapeError("label out of range");
        T loss;
        if (kind == LossKind::cross_entropy) {
            const T mx = logits.row(i).maxCoeff();
            T z = T(0);
            for (Eigen::Index j = 0; j < k; ++j) z += std::exp(logits(i, j) - mx);
            const T lse = mx + std::log(z);
            loss = lse - logits(i, y);
            for (Eigen::Index j = 0; j < k; ++j) r.grad(i, j) = std::exp(logits(i, j) - lse) * inv_n;
            r.grad(i, y) -= inv_n;
        } else {
            Eigen::Index best = -1;
            for (Eigen::Index j = 0; j < k; ++j)
                if (j != y && (best < 0 || logits(i, j) > logits(i, best))) best = j;
            if (best < 0) throw ShapeError("cw_margin needs at least two classes");
            loss = logits(i, best) - logits(i, y);
            r.grad(i, best) += inv_n;
            r.grad(i, y) -= inv_n;
        }
        if (!std::isfinite(loss)) throw NonFiniteError("non-finite loss", std::size_t(i));
        r.per_sample[std::size_t(i)] = loss;
        total += double(loss);
    }
    r.mean = T(total / double(n));
    return r;
}

template <typename T>
struct ForwardResult {
    RowMatrix<T> logits;
    ActivationCapture<T> capture;
};

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& images, const ChannelMask* mask = nullptr) {
    auto fp = forward_pass(model, images, mask);
    return {std::move(fp.logits), std::move(fp.capture)};
}

/// Gradient of the batch-mean loss with respect to the input pixels.
template <typename T>
Tensor<T> input_gradient(const Model<T>& model, const Tensor<T>& images, std::span<const int> labels, LossKind kind,
                         const ChannelMask* mask = nullptr, T* mean_loss = nullptr) {
    auto fp = forward_pass(model, images, mask);
    auto loss = loss_and_grad(fp.logits, labels, kind);
    if (mean_loss != nullptr) *mean_loss = loss.mean;
    return *backward<T>(model, fp, loss.grad, nullptr, nullptr, true);
}

template <typename T>
std::vector<int> predict(const RowMatrix<T>& logits) {
    std::vector<int> out(std::size_t(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best;
        logits.row(i).maxCoeff(&best);
        out[std::size_t(i)] = int(best);
    }
    return out;
}

/// Labelled batch; `indices` are dataset positions (used by the prior store).
template <typename T>
struct Batch {
    Tensor<T> images;
    std::vector<int> labels;
    std::vector<int> indices;

    int size() const noexcept { return images.n(); }
};

template <typename T>
void validate_batch(const Model<T>& model, const Batch<T>& batch) {
    const auto& spec = model.spec();
    if (batch.images.c() != spec.in_channels || batch.images.h() != spec.height || batch.images.w() != spec.width)
        throw ShapeError("batch image shape does not match the model input shape");
    if (batch.labels.size() != std::size_t(batch.images.n())) throw ShapeError("label count does not match images");
    for (int y : batch.labels)
        if (y < 0 || y >= spec.num_classes) throw ShapeError("label out of range");
    for (T v : batch.images.values())
        if (!(v >= T(0) && v <= T(1))) throw ShapeError("image values must lie in [0, 1]");
}

}  // namespace fatlab
