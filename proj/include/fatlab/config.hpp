#pragma once

// Flat INI configuration for every CLI subcommand. Sections map onto the
// library config structs; unknown keys are rejected so typos do not silently
// fall back to defaults. write_ini() emits a canonical echo that load_ini()
// reads back to an equal config (doubles use the shortest round-trip form).

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <set>

#include "fatlab/training.hpp"

namespace fatlab {

inline std::string to_string(DatasetSource s) { return s == DatasetSource::synthetic ? "synthetic" : "binary_dir"; }
inline DatasetSource dataset_source_from_string(const std::string& s) {
    if (s == "synthetic") return DatasetSource::synthetic;
    if (s == "binary_dir") return DatasetSource::binary_dir;
    throw ConfigError("unknown dataset source: " + s);
}

/// Evaluation-side settings shared by eval, mask-eval and transfer-eval.
struct EvalSettings {
    double xi_e = 8.0 / 255.0;
    std::vector<std::string> attacks{"FGSM", "PGD-10", "PGD-50", "CW-30"};
    NoiseSpec noise;
    std::uint64_t noise_seed = 0;
    int trials = 1;
    bool adaptive = false;
    int adaptive_samples = 8;
    int batch_size = 256;
    std::uint64_t attack_seed = 0;

    friend bool operator==(const EvalSettings&, const EvalSettings&) = default;
};

struct MaskSettings {
    std::vector<double> alpha_2{1.0};
    std::string node = "B";
    double tact_alpha = kDefaultTactAlpha;
    Aggregation aggregation = Aggregation::mean_over_dataset;
    DatasetTag stats_split = DatasetTag::test;
    int stats_samples = 1000;
    bool variance_baseline = true;

    friend bool operator==(const MaskSettings&, const MaskSettings&) = default;
};

struct DiagnoseSettings {
    std::vector<std::string> nodes{"A", "B", "C", "D", "E"};
    std::string increment_node = "B";
    int increment_steps = 10;
    int samples = 512;
    DatasetTag split = DatasetTag::test;

    friend bool operator==(const DiagnoseSettings&, const DiagnoseSettings&) = default;
};

struct ExperimentConfig {
    DatasetSpec data;
    TrainConfig train;
    EvalSettings eval;
    MaskSettings mask;
    DiagnoseSettings diagnose;

    void validate() const {
        data.validate();
        train.validate();
        if (!(eval.xi_e > 0.0 && eval.xi_e <= 1.0)) throw ConfigError("xi_e must lie in (0, 1]");
        eval.noise.validate();
        if (eval.trials < 1 || eval.adaptive_samples < 1 || eval.batch_size < 1)
            throw ConfigError("eval counts must be >= 1");
        for (double a : mask.alpha_2)
            if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("alpha_2 must lie in [0, 1]");
        if (!(mask.tact_alpha > 0.0)) throw ConfigError("tact alpha must be positive");
        if (mask.stats_samples < 1 || diagnose.samples < 1 || diagnose.increment_steps < 1)
            throw ConfigError("sample and step counts must be >= 1");
        if (data.source == DatasetSource::synthetic &&
            (data.channels != train.model.in_channels || data.height != train.model.height ||
             data.width != train.model.width || data.num_classes != train.model.num_classes))
            throw ConfigError("dataset shape does not match the model input shape");
    }
    friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
        return a.data.source == b.data.source && a.data.num_classes == b.data.num_classes &&
               a.data.train_per_class == b.data.train_per_class && a.data.test_per_class == b.data.test_per_class &&
               a.data.channels == b.data.channels && a.data.height == b.data.height && a.data.width == b.data.width &&
               a.data.blobs == b.data.blobs && a.data.amplitude == b.data.amplitude &&
               a.data.texture == b.data.texture && a.data.texture_block == b.data.texture_block &&
               a.data.white_noise == b.data.white_noise && a.data.pattern == b.data.pattern &&
               a.data.seed == b.data.seed && a.data.binary_dir == b.data.binary_dir && same_train(a.train, b.train) &&
               a.eval == b.eval && a.mask == b.mask && a.diagnose == b.diagnose;
    }

private:
    static bool same_train(const TrainConfig& a, const TrainConfig& b) {
        auto attack = [](const AttackConfig& c) {
            return std::tie(c.budget, c.step_size, c.steps, c.init, c.loss_kind, c.clip_to_image_range, c.seed);
        };
        auto probe = [](const ProbeConfig& p) { return std::tie(p.samples, p.steps, p.seed); };
        return a.model == b.model && a.paradigm == b.paradigm && attack(a.attack) == attack(b.attack) &&
               a.prior_momentum == b.prior_momentum && a.regularizers == b.regularizers &&
               a.regression_norm == b.regression_norm && a.regression_weight == b.regression_weight &&
               a.epochs == b.epochs && a.batch_size == b.batch_size && a.learning_rate == b.learning_rate &&
               a.decay_epochs == b.decay_epochs && a.decay_factor == b.decay_factor && a.momentum == b.momentum &&
               a.weight_decay == b.weight_decay && a.seed == b.seed && a.early_stop == b.early_stop &&
               a.co_drop == b.co_drop && a.co_window == b.co_window && probe(a.probe) == probe(b.probe) &&
               a.stats_samples == b.stats_samples;
    }
};

/// Builds the named attack list of an evaluation: "FGSM", "PGD-<k>" or
/// "CW-<k>", all at radius xi_e.
inline std::vector<NamedAttack> build_attacks(const EvalSettings& e) {
    std::vector<NamedAttack> out;
    for (const auto& name : e.attacks) {
        auto steps_of = [&](std::size_t prefix) {
            int k = 0;
            auto r = std::from_chars(name.data() + prefix, name.data() + name.size(), k);
            if (r.ec != std::errc() || r.ptr != name.data() + name.size() || k < 1)
                throw ConfigError("bad attack name: " + name);
            return k;
        };
        if (name == "FGSM") {
            out.push_back(fgsm_attack(e.xi_e));
        } else if (name.rfind("PGD-", 0) == 0) {
            out.push_back(pgd_attack(e.xi_e, steps_of(4), e.attack_seed));
        } else if (name.rfind("CW-", 0) == 0) {
            auto a = cw_attack(e.xi_e, steps_of(3));
            a.config.seed = e.attack_seed;
            out.push_back(a);
        } else {
            throw ConfigError("unknown attack: " + name);
        }
    }
    return out;
}

inline EvalConfig make_eval_config(const EvalSettings& e) {
    EvalConfig c;
    c.attacks = build_attacks(e);
    c.noise = e.noise;
    c.noise_seed = e.noise_seed;
    c.trials = e.trials;
    c.adaptive = e.adaptive;
    c.adaptive_samples = e.adaptive_samples;
    c.batch_size = e.batch_size;
    return c;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(const std::string& key, const std::string& s) {
    try {
        return parse_level(s);
    } catch (const ConfigError&) {
        throw ConfigError("bad number for " + key + ": " + s);
    }
}

template <typename I>
I parse_int(const std::string& key, const std::string& s) {
    I v{};
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("bad integer for " + key + ": " + s);
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("bad boolean for " + key + ": " + s);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != ' ' && ch != '\t') {
            cur += ch;
        }
    }
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    return out;
}

template <typename V, typename F>
std::string join(const std::vector<V>& v, F f) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += f(v[i]);
    }
    return out;
}

/// One key binding: how to read it from a string and how to print it.
struct Field {
    std::string key;  // "section.name"
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

inline std::vector<Field> fields(ExperimentConfig& c) {
    std::vector<Field> f;
    auto dbl = [&f](std::string key, double& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_double(key, s); },
                     [&v] { return format_double(v); }});
    };
    auto int_ = [&f](std::string key, int& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_int<int>(key, s); },
                     [&v] { return std::to_string(v); }});
    };
    auto u64 = [&f](std::string key, std::uint64_t& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_int<std::uint64_t>(key, s); },
                     [&v] { return std::to_string(v); }});
    };
    auto boolean = [&f](std::string key, bool& v) {
        f.push_back({key, [&v, key](const std::string& s) { v = parse_bool(key, s); },
                     [&v] { return std::string(v ? "true" : "false"); }});
    };
    auto str = [&f](std::string key, std::string& v) {
        f.push_back({key, [&v](const std::string& s) { v = s; }, [&v] { return v; }});
    };
    auto str_list = [&f](std::string key, std::vector<std::string>& v) {
        f.push_back({key, [&v](const std::string& s) { v = split_list(s); },
                     [&v] { return join(v, [](const std::string& x) { return x; }); }});
    };
    auto int_list = [&f](std::string key, std::vector<int>& v) {
        f.push_back({key,
                     [&v, key](const std::string& s) {
                         v.clear();
                         for (const auto& x : split_list(s)) v.push_back(parse_int<int>(key, x));
                     },
                     [&v] { return join(v, [](int x) { return std::to_string(x); }); }});
    };
    auto dbl_list = [&f](std::string key, std::vector<double>& v) {
        f.push_back({key,
                     [&v, key](const std::string& s) {
                         v.clear();
                         for (const auto& x : split_list(s)) v.push_back(parse_double(key, x));
                     },
                     [&v] { return join(v, format_double); }});
    };
    auto enum_ = [&f]<typename E>(std::string key, E& v, E (*from)(const std::string&)) {
        f.push_back({key, [&v, from](const std::string& s) { v = from(s); }, [&v] { return to_string(v); }});
    };

    auto& d = c.data;
    enum_("data.source", d.source, &dataset_source_from_string);
    str("data.binary_dir", d.binary_dir);
    // The model input and output shape always follows the data.
    auto shape = [&f](std::string key, int& v, int& model_v) {
        f.push_back({key, [&v, &model_v, key](const std::string& s) { v = model_v = parse_int<int>(key, s); },
                     [&v] { return std::to_string(v); }});
    };
    shape("data.num_classes", d.num_classes, c.train.model.num_classes);
    int_("data.train_per_class", d.train_per_class);
    int_("data.test_per_class", d.test_per_class);
    shape("data.channels", d.channels, c.train.model.in_channels);
    shape("data.height", d.height, c.train.model.height);
    shape("data.width", d.width, c.train.model.width);
    int_("data.blobs", d.blobs);
    dbl("data.amplitude", d.amplitude);
    dbl("data.texture", d.texture);
    int_("data.texture_block", d.texture_block);
    dbl("data.white_noise", d.white_noise);
    dbl("data.pattern", d.pattern);
    u64("data.seed", d.seed);

    auto& t = c.train;
    int_list("model.widths", t.model.stage_widths);
    str_list("model.nodes", t.model.node_names);
    u64("model.seed", t.model.seed);

    enum_("train.paradigm", t.paradigm, &paradigm_from_string);
    int_("train.epochs", t.epochs);
    int_("train.batch_size", t.batch_size);
    dbl("train.learning_rate", t.learning_rate);
    int_list("train.decay_epochs", t.decay_epochs);
    dbl("train.decay_factor", t.decay_factor);
    dbl("train.momentum", t.momentum);
    dbl("train.weight_decay", t.weight_decay);
    u64("train.seed", t.seed);
    boolean("train.early_stop", t.early_stop);
    enum_("train.regression_norm", t.regression_norm, &regression_norm_from_string);
    dbl("train.regression_weight", t.regression_weight);
    dbl("train.prior_momentum", t.prior_momentum);
    int_("train.stats_samples", t.stats_samples);

    dbl("attack.xi_t", t.attack.budget);
    dbl("attack.step_size", t.attack.step_size);
    int_("attack.steps", t.attack.steps);
    enum_("attack.init", t.attack.init, &init_kind_from_string);
    enum_("attack.loss", t.attack.loss_kind, &loss_kind_from_string);
    u64("attack.seed", t.attack.seed);

    auto& r = t.regularizers;
    dbl("regularizers.alpha_3", r.alpha_3);
    dbl("regularizers.gamma", r.gamma);
    str("regularizers.node", r.node);
    boolean("regularizers.co_enabled", r.co_enabled);
    dbl("regularizers.p", r.p);
    dbl("regularizers.co_weight", r.co_weight);
    dbl("regularizers.co_alpha", r.co_alpha);
    enum_("regularizers.co_normalization", r.co_normalization, &co_normalization_from_string);

    int_("probe.samples", t.probe.samples);
    int_("probe.steps", t.probe.steps);
    u64("probe.seed", t.probe.seed);
    dbl("co.drop", t.co_drop);
    int_("co.window", t.co_window);

    auto& e = c.eval;
    dbl("eval.xi_e", e.xi_e);
    str_list("eval.attacks", e.attacks);
    f.push_back({"eval.noise", [&e](const std::string& s) { e.noise = parse_noise(s); },
                 [&e] { return format_noise(e.noise); }});
    u64("eval.noise_seed", e.noise_seed);
    int_("eval.trials", e.trials);
    boolean("eval.adaptive", e.adaptive);
    int_("eval.adaptive_samples", e.adaptive_samples);
    int_("eval.batch_size", e.batch_size);
    u64("eval.attack_seed", e.attack_seed);

    auto& m = c.mask;
    dbl_list("mask.alpha_2", m.alpha_2);
    str("mask.node", m.node);
    dbl("mask.tact_alpha", m.tact_alpha);
    enum_("mask.aggregation", m.aggregation, &aggregation_from_string);
    enum_("mask.stats_split", m.stats_split, &dataset_tag_from_string);
    int_("mask.stats_samples", m.stats_samples);
    boolean("mask.variance_baseline", m.variance_baseline);

    auto& g = c.diagnose;
    str_list("diagnose.nodes", g.nodes);
    str("diagnose.increment_node", g.increment_node);
    int_("diagnose.increment_steps", g.increment_steps);
    int_("diagnose.samples", g.samples);
    enum_("diagnose.split", g.split, &dataset_tag_from_string);
    return f;
}

}  // namespace detail

/// Sets one "section.key" entry from its string form.
inline void set_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
    for (auto& f : detail::fields(c))
        if (f.key == key) {
            f.set(value);
            return;
        }
    throw ConfigError("unknown config key: " + key);
}

inline std::string get_config_value(ExperimentConfig& c, const std::string& key) {
    for (auto& f : detail::fields(c))
        if (f.key == key) return f.get();
    throw ConfigError("unknown config key: " + key);
}

inline ExperimentConfig parse_ini(std::istream& in, ExperimentConfig base = {}) {
    boost::property_tree::ptree tree;
    try {
        boost::property_tree::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("config key outside a section: " + section);
        for (const auto& [key, value] : body) set_config_value(base, section + "." + key, value.data());
    }
    return base;
}

inline ExperimentConfig load_ini(const std::filesystem::path& path, ExperimentConfig base = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse_ini(in, std::move(base));
}

/// Canonical echo: every key, grouped by section in a fixed order.
inline std::string write_ini(const ExperimentConfig& config) {
    ExperimentConfig c = config;
    std::ostringstream out;
    std::string section;
    for (auto& f : detail::fields(c)) {
        const auto dot = f.key.find('.');
        const std::string s = f.key.substr(0, dot);
        if (s != section) {
            if (!section.empty()) out << "\n";
            out << "[" << s << "]\n";
            section = s;
        }
        out << f.key.substr(dot + 1) << " = " << f.get() << "\n";
    }
    return out.str();
}

}  // namespace fatlab
