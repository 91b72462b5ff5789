#pragma once

// Checkpoint container. Layout, all integers little-endian:
//
//   "FATLABCK"                      8-byte magic
//   u32 version
//   u64 n, n bytes                  JSON metadata (model spec, epoch counters,
//                                   records, prior budgets, config echo)
//   u32 tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u32 dims[rank],
//               float32 payload (product of dims values)
//
// Tensor names are prefixed by role: "param/", "velocity/", "best/", and
// "prior/deltas" for the perturbation store.

#include <bit>

#include "fatlab/metrics_log.hpp"

namespace fatlab {

inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'T', 'L', 'A', 'B', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    ModelSpec spec;
    ParameterSet<float> parameters;
    std::optional<ParameterSet<float>> velocity;
    std::optional<ParameterSet<float>> best;
    std::optional<PerturbationPrior<float>> prior;
    int next_epoch = 0;
    int best_epoch = -1;
    double best_robust = -1.0;
    std::vector<EpochRecord> records;
    std::vector<CoEvent> events;
    std::string config_echo;
};

inline void to_json(Json& j, const ModelSpec& s) {
    j = Json{{"in_channels", s.in_channels}, {"height", s.height},
             {"width", s.width},             {"num_classes", s.num_classes},
             {"stage_widths", s.stage_widths}, {"node_names", s.node_names},
             {"seed", s.seed}};
}

inline void from_json(const Json& j, ModelSpec& s) {
    s.in_channels = j.at("in_channels").get<int>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.num_classes = j.at("num_classes").get<int>();
    s.stage_widths = j.at("stage_widths").get<std::vector<int>>();
    s.node_names = j.at("node_names").get<std::vector<std::string>>();
    s.seed = j.at("seed").get<std::uint64_t>();
}

namespace detail {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(char((v >> (8 * i)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(char((v >> (8 * i)) & 0xff));
    }
    void raw(std::string_view s) { bytes.append(s); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    std::string bytes;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view b) : b_(b) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(b_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(b_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    std::string_view raw(std::size_t n) {
        need(n);
        auto s = b_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    bool done() const noexcept { return pos_ == b_.size(); }

private:
    void need(std::size_t n) const {
        if (b_.size() - pos_ < n) throw FormatError("checkpoint payload is truncated");
    }
    std::string_view b_;
    std::size_t pos_ = 0;
};

struct RawTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

inline void write_tensor(ByteWriter& w, const std::string& name, const std::vector<int>& shape,
                         std::span<const float> values) {
    w.u32(std::uint32_t(name.size()));
    w.raw(name);
    w.u32(std::uint32_t(shape.size()));
    for (int d : shape) w.u32(std::uint32_t(d));
    for (float v : values) w.f32(v);
}

inline RawTensor read_tensor(ByteReader& r) {
    RawTensor t;
    t.name = std::string(r.raw(r.u32()));
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("checkpoint tensor rank too large: " + t.name);
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = r.u32();
        t.shape.push_back(int(d));
        count *= d;
        if (count > (std::uint64_t(1) << 32)) throw FormatError("checkpoint tensor too large: " + t.name);
    }
    t.values.resize(std::size_t(count));
    for (auto& v : t.values) v = r.f32();
    return t;
}

inline void write_set(ByteWriter& w, const std::string& prefix, const ParameterSet<float>& set) {
    for (const auto& t : set) write_tensor(w, prefix + t.name, t.shape, t.values);
}

/// Fills `set` (already laid out for the model spec) from tensors carrying
/// `prefix`; every slot must be matched exactly once.
inline void fill_set(ParameterSet<float>& set, const std::string& prefix, const std::vector<RawTensor>& tensors) {
    std::size_t matched = 0;
    for (const auto& raw : tensors) {
        if (raw.name.rfind(prefix, 0) != 0) continue;
        const std::string name = raw.name.substr(prefix.size());
        bool found = false;
        for (auto& t : set) {
            if (t.name != name) continue;
            if (t.shape != raw.shape) throw FormatError("checkpoint tensor shape mismatch: " + raw.name);
            t.values = raw.values;
            found = true;
        }
        if (!found) throw FormatError("checkpoint tensor not in the model layout: " + raw.name);
        ++matched;
    }
    if (matched != set.size()) throw FormatError("checkpoint is missing tensors with prefix " + prefix);
}

inline bool has_prefix(const std::vector<RawTensor>& tensors, const std::string& prefix) {
    return std::any_of(tensors.begin(), tensors.end(),
                       [&](const RawTensor& t) { return t.name.rfind(prefix, 0) == 0; });
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
    Json meta{{"spec", c.spec},
              {"next_epoch", c.next_epoch},
              {"best_epoch", c.best_epoch},
              {"best_robust", c.best_robust},
              {"records", c.records},
              {"events", c.events},
              {"config", c.config_echo}};
    if (c.prior) meta["prior"] = Json{{"momentum", c.prior->momentum()}, {"budgets", c.prior->budgets()}};
    const std::string m = meta.dump();

    detail::ByteWriter w;
    w.raw(std::string_view(kCheckpointMagic, sizeof kCheckpointMagic));
    w.u32(c.version);
    w.u64(m.size());
    w.raw(m);
    std::uint32_t count = std::uint32_t(c.parameters.size());
    if (c.velocity) count += std::uint32_t(c.velocity->size());
    if (c.best) count += std::uint32_t(c.best->size());
    if (c.prior) count += 1;
    w.u32(count);
    detail::write_set(w, "param/", c.parameters);
    if (c.velocity) detail::write_set(w, "velocity/", *c.velocity);
    if (c.best) detail::write_set(w, "best/", *c.best);
    if (c.prior) {
        const auto& d = c.prior->deltas();
        detail::write_tensor(w, "prior/deltas", {d.n(), d.c(), d.h(), d.w()}, d.values());
    }
    return std::move(w.bytes);
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes);
    if (bytes.size() < sizeof kCheckpointMagic ||
        r.raw(sizeof kCheckpointMagic) != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic))
        throw FormatError("not a checkpoint: magic mismatch");
    Checkpoint c;
    c.version = r.u32();
    if (c.version != kCheckpointVersion) throw FormatError("unknown checkpoint version " + std::to_string(c.version));
    const std::uint64_t meta_size = r.u64();
    if (meta_size > bytes.size()) throw FormatError("checkpoint payload is truncated");
    Json meta;
    try {
        meta = Json::parse(r.raw(std::size_t(meta_size)));
        c.spec = meta.at("spec").get<ModelSpec>();
        c.next_epoch = meta.at("next_epoch").get<int>();
        c.best_epoch = meta.at("best_epoch").get<int>();
        c.best_robust = meta.at("best_robust").get<double>();
        c.records = meta.at("records").get<std::vector<EpochRecord>>();
        c.events = meta.at("events").get<std::vector<CoEvent>>();
        c.config_echo = meta.at("config").get<std::string>();
    } catch (const Json::exception& e) {
        throw FormatError(std::string("bad checkpoint metadata: ") + e.what());
    }
    c.spec.validate();

    std::vector<detail::RawTensor> tensors;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) tensors.push_back(detail::read_tensor(r));
    if (!r.done()) throw FormatError("trailing bytes after checkpoint tensors");

    const auto layout = build_model<float>(c.spec).parameters();
    c.parameters = layout;
    detail::fill_set(c.parameters, "param/", tensors);
    if (detail::has_prefix(tensors, "velocity/")) {
        c.velocity = layout;
        detail::fill_set(*c.velocity, "velocity/", tensors);
    }
    if (detail::has_prefix(tensors, "best/")) {
        c.best = layout;
        detail::fill_set(*c.best, "best/", tensors);
    }
    if (meta.contains("prior")) {
        auto it = std::find_if(tensors.begin(), tensors.end(),
                               [](const detail::RawTensor& t) { return t.name == "prior/deltas"; });
        if (it == tensors.end() || it->shape.size() != 4) throw FormatError("checkpoint prior store is missing");
        const auto& s = it->shape;
        PerturbationPrior<float> p(s[0], s[1], s[2], s[3], meta["prior"].at("momentum").get<double>());
        std::copy(it->values.begin(), it->values.end(), p.deltas().data());
        p.budgets() = meta["prior"].at("budgets").get<std::vector<double>>();
        if (p.budgets().size() != std::size_t(s[0])) throw FormatError("checkpoint prior budgets do not match store");
        c.prior = std::move(p);
    }
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    const std::string bytes = encode_checkpoint(c);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write checkpoint " + tmp);
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw Error("write failed for checkpoint " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

/// Model with parameters copied from a checkpoint; `best` selects the best
/// snapshot when one is stored.
inline Model<float> checkpoint_model(const Checkpoint& c, bool best = false) {
    auto m = build_model<float>(c.spec);
    const auto& src = best && c.best ? *c.best : c.parameters;
    for (std::size_t i = 0; i < src.size(); ++i) m.parameters()[i].values = src[i].values;
    return m;
}

inline Checkpoint make_checkpoint(const TrainState& s, const std::string& config_echo) {
    Checkpoint c;
    c.spec = s.model.spec();
    c.parameters = s.model.parameters();
    c.velocity = s.velocity;
    if (s.best) c.best = s.best->parameters();
    c.prior = s.prior;
    c.next_epoch = s.next_epoch;
    c.best_epoch = s.best_epoch;
    c.best_robust = s.best_robust;
    c.records = s.records;
    c.events = s.events;
    c.config_echo = config_echo;
    return c;
}

/// Rebuilds the resumable training state; fails when the checkpoint was
/// written without optimizer state.
inline TrainState restore_state(const Checkpoint& c) {
    if (!c.velocity) throw FormatError("checkpoint has no optimizer state to resume from");
    TrainState s;
    s.model = checkpoint_model(c);
    s.velocity = *c.velocity;
    s.prior = c.prior;
    s.next_epoch = c.next_epoch;
    s.records = c.records;
    s.events = c.events;
    if (c.best) s.best = checkpoint_model(c, true);
    s.best_epoch = c.best_epoch;
    s.best_robust = c.best_robust;
    return s;
}

}  // namespace fatlab
