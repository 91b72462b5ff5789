#pragma once

// Command implementations behind the fatlab CLI. Each command owns one run
// directory <root>/<run id>/ holding config.ini (echo), metrics.jsonl and,
// for training, checkpoint files. Existing run ids are refused.

#include <cstdlib>
#include <iomanip>
#include <iostream>

#include "fatlab/checkpoint.hpp"
#include "fatlab/config.hpp"
#include "fatlab/plots.hpp"

namespace fatlab {

inline constexpr const char* kRunRootVariable = "FATLAB_RUN_ROOT";

inline std::filesystem::path default_run_root() {
    if (const char* v = std::getenv(kRunRootVariable); v != nullptr && *v != '\0') return v;
    return "runs";
}

class RunDir {
public:
    RunDir(const std::filesystem::path& root, const std::string& run_id)
        : dir_(create(root, run_id)), lock_(dir_), log_(dir_ / "metrics.jsonl", run_id) {}

    const std::filesystem::path& path() const noexcept { return dir_; }
    MetricsLog& log() noexcept { return log_; }

private:
    static std::filesystem::path create(const std::filesystem::path& root, const std::string& run_id) {
        if (run_id.empty() || run_id.find('/') != std::string::npos || run_id == "." || run_id == "..")
            throw ConfigError("invalid run id: '" + run_id + "'");
        std::filesystem::create_directories(root);
        const auto dir = root / run_id;
        if (!std::filesystem::create_directory(dir))
            throw Error("run id already exists, refusing to overwrite: " + dir.string());
        return dir;
    }

    std::filesystem::path dir_;
    RunLock lock_;
    MetricsLog log_;
};

struct DataPair {
    Dataset train;
    Dataset test;
};

inline DataPair load_data(const DatasetSpec& spec) {
    spec.validate();
    if (spec.source == DatasetSource::synthetic) {
        auto [tr, te] = generate_synthetic(spec);
        return {std::move(tr), std::move(te)};
    }
    return {load_binary_dataset(spec.binary_dir, spec.num_classes, DatasetTag::train, "data_batch"),
            load_binary_dataset(spec.binary_dir, spec.num_classes, DatasetTag::test, "test_batch")};
}

/// Canonical config plus the content hashes of the data it resolved to, as
/// comment lines so the echo still loads as a config file.
inline std::string config_echo(const ExperimentConfig& cfg, const DataPair& data) {
    std::ostringstream o;
    o << "; dataset train " << dataset_hash(data.train) << " (" << data.train.size() << " samples)\n";
    o << "; dataset test " << dataset_hash(data.test) << " (" << data.test.size() << " samples)\n";
    o << write_ini(cfg);
    return o.str();
}

inline void write_echo(RunDir& run, const ExperimentConfig& cfg, const DataPair& data, const std::string& command,
                       const Json& extra = Json::object()) {
    const std::string echo = config_echo(cfg, data);
    std::ofstream(run.path() / "config.ini") << echo;
    Json j{{"command", command},
           {"config", echo},
           {"train_hash", dataset_hash(data.train)},
           {"test_hash", dataset_hash(data.test)}};
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
    run.log().append(RecordKind::config, j);
}

/// Fixed-column table: Clean, then one column per attack.
inline void print_report(std::ostream& out, const EvalReport& r, const std::string& label = {}) {
    out << (label.empty() ? std::string("model") : label) << "  noise " << r.noise;
    if (r.masked_channels) out << "  masked " << r.masked_channels;
    out << "\n" << std::right << std::setw(9) << "Clean";
    for (const auto& a : r.attacks) out << std::setw(10) << a.name;
    out << "\n" << std::fixed << std::setprecision(2) << std::setw(9) << r.clean_accuracy;
    for (const auto& a : r.attacks) out << std::setw(10) << a.accuracy;
    out << "\n";
    out.unsetf(std::ios::fixed);
}

// ---- train -------------------------------------------------------------

inline RunArtifacts train_command(const ExperimentConfig& cfg, RunDir& run, std::ostream& out,
                                  const std::optional<std::filesystem::path>& resume = std::nullopt) {
    cfg.validate();
    const DataPair data = load_data(cfg.data);
    write_echo(run, cfg, data, "train", resume ? Json{{"resume", resume->string()}} : Json::object());
    const std::string echo = config_echo(cfg, data);

    TrainState state = resume ? restore_state(load_checkpoint(*resume)) : initial_state(cfg.train, data.train);
    if (state.model.spec() != cfg.train.model) throw ConfigError("resume checkpoint was trained with another model");
    std::size_t logged_events = state.events.size();
    auto on_epoch = [&](const EpochRecord& r, const TrainState& s) {
        run.log().append(RecordKind::epoch, r);
        for (; logged_events < s.events.size(); ++logged_events)
            run.log().append(RecordKind::co_event, s.events[logged_events]);
        save_checkpoint(run.path() / "last.fck", make_checkpoint(s, echo));
        out << "epoch " << r.epoch << "  lr " << r.learning_rate << "  loss " << r.train_loss << "  clean "
            << r.clean_accuracy << "  fgsm " << r.probe_fgsm_accuracy << "  pgd " << r.probe_robust_accuracy
            << (s.events.size() > 0 && s.events.back().epoch == r.epoch ? "  [CO event]" : "") << "\n";
    };
    auto art = train(cfg.train, data.train, data.test, std::move(state), on_epoch);
    // The best snapshot, stored as the primary parameters for evaluation.
    Checkpoint best = make_checkpoint(art.state, echo);
    best.parameters = art.best.parameters();
    save_checkpoint(run.path() / "best.fck", best);
    out << "events " << art.events.size() << "  best epoch " << art.best_epoch
        << (art.stopped_early ? "  (stopped early)" : "") << "\n";
    return art;
}

// ---- eval ---------------------------------------------------------------

/// Robust evaluation; with `noise_levels`, one report per uniform level (0
/// meaning no noise), each tagged for the noise_sweep plot.
inline std::vector<EvalReport> eval_command(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                                            RunDir& run, std::ostream& out,
                                            const std::vector<double>& noise_levels = {}) {
    cfg.validate();
    const DataPair data = load_data(cfg.data);
    write_echo(run, cfg, data, "eval", Json{{"checkpoint", checkpoint.string()}});
    const auto model = checkpoint_model(load_checkpoint(checkpoint));
    std::vector<EvalReport> reports;
    if (noise_levels.empty()) {
        auto r = evaluate(model, data.test, make_eval_config(cfg.eval));
        run.log().append(RecordKind::eval, r);
        print_report(out, r);
        reports.push_back(std::move(r));
        return reports;
    }
    for (double level : noise_levels) {
        EvalSettings e = cfg.eval;
        e.noise = level > 0.0 ? NoiseSpec{NoiseKind::uniform, level} : NoiseSpec{};
        auto r = evaluate(model, data.test, make_eval_config(e));
        run.log().append(RecordKind::eval, r, Json{{"noise_level", level}});
        print_report(out, r);
        reports.push_back(std::move(r));
    }
    return reports;
}

// ---- mask-eval ----------------------------------------------------------

/// Perturbation used for channel statistics: the first multi-step attack of
/// the eval list, else the first attack.
inline AttackConfig stats_attack(const ExperimentConfig& cfg) {
    const auto attacks = build_attacks(cfg.eval);
    if (attacks.empty()) throw ConfigError("mask statistics need at least one eval attack");
    for (const auto& a : attacks)
        if (a.config.steps > 1) return a.config;
    return attacks.front().config;
}

struct MaskSweep {
    ChannelStats stats;
    std::vector<std::pair<double, EvalReport>> threshold;  // alpha_2 -> report
    std::vector<std::pair<double, EvalReport>> variance;   // matched-size variance masks
};

inline MaskSweep mask_sweep(const Model<float>& model, const DataPair& data, const ExperimentConfig& cfg) {
    const Dataset& split = cfg.mask.stats_split == DatasetTag::train ? data.train : data.test;
    const Dataset stats_data = split.head(std::min(cfg.mask.stats_samples, split.size()));
    MaskSweep s;
    s.stats = t_act(model, stats_data, attack_source(model, stats_attack(cfg)), cfg.mask.node, cfg.mask.tact_alpha,
                    cfg.mask.aggregation);
    const EvalConfig base = make_eval_config(cfg.eval);
    const std::vector<double> variance =
        cfg.mask.variance_baseline ? channel_variance(model, stats_data, cfg.mask.node) : std::vector<double>{};
    for (double a2 : cfg.mask.alpha_2) {
        EvalConfig ec = base;
        ChannelMask m = mask_from_threshold(s.stats, a2);
        const std::size_t count = m.count();
        if (!m.empty()) ec.mask = std::move(m);
        s.threshold.emplace_back(a2, evaluate(model, data.test, ec));
        if (cfg.mask.variance_baseline) {
            EvalConfig vc = base;
            ChannelMask vm = variance_mask(cfg.mask.node, variance, count);
            if (!vm.empty()) vc.mask = std::move(vm);
            s.variance.emplace_back(a2, evaluate(model, data.test, vc));
        }
    }
    return s;
}

inline MaskSweep mask_eval_command(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint, RunDir& run,
                                   std::ostream& out) {
    cfg.validate();
    const DataPair data = load_data(cfg.data);
    write_echo(run, cfg, data, "mask-eval", Json{{"checkpoint", checkpoint.string()}});
    const auto model = checkpoint_model(load_checkpoint(checkpoint));
    auto s = mask_sweep(model, data, cfg);
    run.log().append(RecordKind::channel_stats, s.stats);
    for (const auto& [a2, r] : s.threshold) {
        run.log().append(RecordKind::eval, r, Json{{"alpha_2", a2}, {"series", 0}, {"mask", "t_act"}});
        std::ostringstream label;
        label << "a2=" << a2;
        print_report(out, r, label.str());
    }
    for (const auto& [a2, r] : s.variance) {
        run.log().append(RecordKind::eval, r, Json{{"alpha_2", a2}, {"series", 1}, {"mask", "variance"}});
        std::ostringstream label;
        label << "var@" << a2;
        print_report(out, r, label.str());
    }
    return s;
}

// ---- transfer-eval ------------------------------------------------------

inline EvalReport transfer_eval_command(const ExperimentConfig& cfg, const std::filesystem::path& source,
                                        const std::filesystem::path& target, RunDir& run, std::ostream& out) {
    cfg.validate();
    const DataPair data = load_data(cfg.data);
    write_echo(run, cfg, data, "transfer-eval", Json{{"source", source.string()}, {"target", target.string()}});
    const auto src = checkpoint_model(load_checkpoint(source));
    const auto tgt = checkpoint_model(load_checkpoint(target));
    auto r = evaluate_transfer(src, tgt, data.test, make_eval_config(cfg.eval));
    run.log().append(RecordKind::eval, r, Json{{"source", source.string()}, {"target", target.string()}});
    print_report(out, r, "transfer");
    return r;
}

// ---- diagnose -----------------------------------------------------------

struct Diagnosis {
    std::vector<ChannelStats> stats;
    std::vector<double> v_act;  // per diagnosed node
    IncrementMatrix increments;
};

inline Diagnosis diagnose_command(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint, RunDir& run,
                                  std::ostream& out) {
    cfg.validate();
    const DataPair data = load_data(cfg.data);
    write_echo(run, cfg, data, "diagnose", Json{{"checkpoint", checkpoint.string()}});
    const auto model = checkpoint_model(load_checkpoint(checkpoint));
    const Dataset& split = cfg.diagnose.split == DatasetTag::train ? data.train : data.test;
    const Dataset d = split.head(std::min(cfg.diagnose.samples, split.size()));

    AttackConfig attack = stats_attack(cfg);
    Tensor<float> deltas(d.size(), d.images.c(), d.images.h(), d.images.w());
    auto source = attack_source(model, attack);
    for (int first = 0; first < d.size(); first += kDiagnosticBatch) {
        auto b = d.batch<float>(first, std::min(kDiagnosticBatch, d.size() - first));
        auto delta = source(b);
        std::copy(delta.values().begin(), delta.values().end(), deltas.sample(first).data());
    }
    Diagnosis g;
    for (const auto& node : cfg.diagnose.nodes) {
        auto st = t_act(model, d, deltas, node, cfg.mask.tact_alpha, cfg.mask.aggregation);
        run.log().append(RecordKind::channel_stats, st);
        const double v = v_act_node(model, d, deltas, node);
        g.v_act.push_back(v);
        out << "node " << node << "  V_act " << v << "  max T_act "
            << (st.t_values.empty() ? 0.0 : *std::max_element(st.t_values.begin(), st.t_values.end())) << "\n";
        g.stats.push_back(std::move(st));
    }
    AttackConfig inc = attack;
    inc.steps = cfg.diagnose.increment_steps;
    g.increments = activation_increments(model, d, inc, cfg.diagnose.increment_node);
    run.log().append(RecordKind::increments, g.increments);
    return g;
}

}  // namespace fatlab
