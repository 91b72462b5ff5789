#include <CLI11.hpp>

#include "fatlab/experiment.hpp"

namespace {

using namespace fatlab;

struct Common {
    std::string config;
    std::string run_id;
    std::string run_root;
    std::vector<std::string> sets;
    std::optional<std::string> xi_t, xi_e, alpha3, p, alpha2, noise;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "INI config file (defaults when omitted)");
    cmd->add_option("--run-id", c.run_id, "run directory name (default: <command>-<UTC time>)");
    cmd->add_option("--run-root", c.run_root, std::string("run directory root (default: $") + kRunRootVariable +
                                                  " or ./runs)");
    cmd->add_option("--set", c.sets, "override one key, section.key=value (repeatable)");
    cmd->add_option("--xi-t", c.xi_t, "training budget, e.g. 16/255");
    cmd->add_option("--xi-e", c.xi_e, "evaluation budget");
    cmd->add_option("--alpha3", c.alpha3, "stability weight");
    cmd->add_option("--p", c.p, "percent of channels for the inducing loss (enables it)");
    cmd->add_option("--alpha2", c.alpha2, "masking threshold(s), comma separated");
    cmd->add_option("--noise", c.noise, "inference noise: none | uniform:<a> | gaussian:<sigma>");
    cmd->add_option("--seed", c.seed, "training and model seed");
}

ExperimentConfig resolve(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_ini(c.config);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got " + s);
        set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.xi_t) {
        set_config_value(cfg, "attack.xi_t", *c.xi_t);
        set_config_value(cfg, "attack.step_size", *c.xi_t);
    }
    if (c.xi_e) set_config_value(cfg, "eval.xi_e", *c.xi_e);
    if (c.alpha3) set_config_value(cfg, "regularizers.alpha_3", *c.alpha3);
    if (c.p) {
        set_config_value(cfg, "regularizers.p", *c.p);
        cfg.train.regularizers.co_enabled = true;
    }
    if (c.alpha2) set_config_value(cfg, "mask.alpha_2", *c.alpha2);
    if (c.noise) set_config_value(cfg, "eval.noise", *c.noise);
    if (c.seed) {
        cfg.train.seed = *c.seed;
        cfg.train.model.seed = *c.seed;
    }
    cfg.validate();
    return cfg;
}

std::unique_ptr<RunDir> open_run(const Common& c, const std::string& command) {
    const std::string id = c.run_id.empty() ? command + "-" + utc_timestamp() : c.run_id;
    auto run = std::make_unique<RunDir>(c.run_root.empty() ? default_run_root() : std::filesystem::path(c.run_root), id);
    std::cout << "run directory " << run->path().string() << "\n";
    return run;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fatlab: single-step adversarial training experiments"};
    app.require_subcommand(1);

    Common show_c;
    auto* show = app.add_subcommand("show-config", "print the resolved configuration as INI");
    add_common(show, show_c);

    Common gen_c, train_c, eval_c, mask_c, transfer_c, diag_c;
    std::string gen_out;
    auto* gen = app.add_subcommand("gen-data", "materialise the configured dataset and print its content hashes");
    add_common(gen, gen_c);
    gen->add_option("--out", gen_out, "write binary records here (3x32x32 specs only)");

    std::string resume;
    auto* tr = app.add_subcommand("train", "train a model and log every epoch");
    add_common(tr, train_c);
    tr->add_option("--resume", resume, "continue from a last.fck checkpoint");

    std::string ckpt;
    std::vector<std::string> noise_sweep;
    auto* ev = app.add_subcommand("eval", "robust evaluation of a checkpoint");
    add_common(ev, eval_c);
    ev->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    ev->add_option("--noise-sweep", noise_sweep, "uniform noise levels to sweep (0 = none)")->delimiter(',');

    std::string mask_ckpt;
    auto* me = app.add_subcommand("mask-eval", "evaluate with high-T_act channels masked");
    add_common(me, mask_c);
    me->add_option("--checkpoint", mask_ckpt, "checkpoint file")->required();

    std::string source, target;
    auto* te = app.add_subcommand("transfer-eval", "attack one checkpoint, evaluate another");
    add_common(te, transfer_c);
    te->add_option("--source", source, "checkpoint the attack is crafted on")->required();
    te->add_option("--target", target, "checkpoint that is evaluated")->required();

    std::string diag_ckpt;
    auto* dg = app.add_subcommand("diagnose", "channel statistics and activation increments of a checkpoint");
    add_common(dg, diag_c);
    dg->add_option("--checkpoint", diag_ckpt, "checkpoint file")->required();

    std::string plot_log, plot_kind, plot_out, plot_run;
    auto* pl = app.add_subcommand("plot", "CSV and SVG output from a metrics log");
    pl->add_option("--log", plot_log, "metrics.jsonl file or run directory")->required();
    pl->add_option("--kind", plot_kind, "co_trace | channel_hist | increment_heat | mask_sweep | noise_sweep")
        ->required();
    pl->add_option("--out", plot_out, "output path without extension")->required();
    pl->add_option("--run", plot_run, "run id inside the log (default: latest)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (show->parsed()) {
            std::cout << write_ini(resolve(show_c));
        } else if (gen->parsed()) {
            const auto cfg = resolve(gen_c);
            auto run = open_run(gen_c, "gen-data");
            const auto data = load_data(cfg.data);
            write_echo(*run, cfg, data, "gen-data");
            std::cout << "train " << data.train.size() << " samples, hash " << dataset_hash(data.train) << "\n"
                      << "test  " << data.test.size() << " samples, hash " << dataset_hash(data.test) << "\n";
            if (!gen_out.empty()) {
                std::filesystem::create_directories(gen_out);
                write_binary_dataset(data.train, std::filesystem::path(gen_out) / "data_batch_1.bin");
                write_binary_dataset(data.test, std::filesystem::path(gen_out) / "test_batch.bin");
                std::cout << "wrote binary records to " << gen_out << "\n";
            }
        } else if (tr->parsed()) {
            const auto cfg = resolve(train_c);
            auto run = open_run(train_c, "train");
            train_command(cfg, *run, std::cout,
                          resume.empty() ? std::nullopt : std::optional<std::filesystem::path>(resume));
        } else if (ev->parsed()) {
            const auto cfg = resolve(eval_c);
            auto run = open_run(eval_c, "eval");
            std::vector<double> levels;
            for (const auto& s : noise_sweep) levels.push_back(parse_level(s));
            eval_command(cfg, ckpt, *run, std::cout, levels);
        } else if (me->parsed()) {
            const auto cfg = resolve(mask_c);
            auto run = open_run(mask_c, "mask-eval");
            mask_eval_command(cfg, mask_ckpt, *run, std::cout);
        } else if (te->parsed()) {
            const auto cfg = resolve(transfer_c);
            auto run = open_run(transfer_c, "transfer-eval");
            transfer_eval_command(cfg, source, target, *run, std::cout);
        } else if (dg->parsed()) {
            const auto cfg = resolve(diag_c);
            auto run = open_run(diag_c, "diagnose");
            diagnose_command(cfg, diag_ckpt, *run, std::cout);
        } else if (pl->parsed()) {
            std::filesystem::path log = plot_log;
            if (std::filesystem::is_directory(log)) log /= "metrics.jsonl";
            auto files = emit_plots(MetricsLog::read_all(log), plot_kind_from_string(plot_kind), plot_out, plot_run);
            std::cout << "wrote " << files.csv.string();
            if (files.svg) std::cout << " and " << files.svg->string();
            std::cout << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
