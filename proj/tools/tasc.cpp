#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "tasc/cli.hpp"

namespace {

struct CommonFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string variant;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config, "TOML config file")->check(CLI::ExistingFile);
    cmd->add_option("--out", f.out, "Output directory");
    cmd->add_option("--seed", f.seed, "Global seed");
    cmd->add_option("--threads", f.threads, "Worker threads (1 is bitwise reproducible)");
    cmd->add_option("--variant", f.variant, "Score variant: unims, ms-s, ms-t, ms-s-weighted, ms-t-weighted");
}

tasc::RunConfig resolve(const CommonFlags& f, const std::string& synth_file = {}) {
    tasc::RunConfig cfg;
    if (!synth_file.empty()) {
        cfg = tasc::load_config(synth_file);
        cfg.use_synth = true;
    } else if (!f.config.empty()) {
        cfg = tasc::load_config(f.config);
    } else {
        cfg.use_synth = true;
    }
    if (!f.out.empty()) cfg.out_dir = f.out;
    if (f.seed) cfg.seed = *f.seed;
    if (f.threads) cfg.threads = *f.threads;
    if (!f.variant.empty()) cfg.variant = tasc::parse_variant(f.variant);
    cfg.propagate_seed();
    return cfg;
}

void configure_logging() {
    auto logger = spdlog::stderr_color_mt("tasc");
    spdlog::set_default_logger(logger);
    spdlog::set_pattern("[%l] %v");
    spdlog::set_level(spdlog::level::warn);
    if (const char* env = std::getenv("TASC_LOG")) spdlog::set_level(spdlog::level::from_str(env));
}

}  // namespace

int main(int argc, char** argv) {
    configure_logging();

    CLI::App app{"TASC + UniMS universal domain adaptation on precomputed embeddings"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string synth_file;
    std::vector<std::string> validate_paths;
    std::string init_out;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic input bundle into --out");
    auto* search = app.add_subcommand("search", "Stage 1: discrete search for target centers");
    auto* refine = app.add_subcommand("refine", "Stage 2: train the linear adapter");
    auto* score = app.add_subcommand("score", "Per-sample known-ness scores");
    auto* threshold = app.add_subcommand("threshold", "Fit the score mixture and pick a threshold");
    auto* eval = app.add_subcommand("eval", "Evaluate predictions against target labels");
    auto* pipeline = app.add_subcommand("pipeline", "Run every stage and write all reports");
    for (auto* cmd : {synth, search, refine, score, threshold, eval, pipeline}) add_common(cmd, flags);
    pipeline->add_option("--synth", synth_file, "Config file whose [synth] section generates the inputs")
        ->check(CLI::ExistingFile);

    auto* init = app.add_subcommand("init-config", "Print a config file with every default");
    init->add_option("--out", init_out, "Write to this file instead of stdout");

    auto* validate = app.add_subcommand("validate", "Check EMBX files and their manifests");
    validate->add_option("files", validate_paths, "EMBX files");
    validate->add_option("--config", flags.config, "Also cross-check the inputs named in this config")
        ->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (init->parsed()) {
            const auto text = tasc::default_config_toml();
            if (init_out.empty())
                std::cout << text;
            else
                tasc::write_text_file(init_out, text);
            return 0;
        }
        if (validate->parsed()) {
            bool ok = true;
            for (const auto& c : tasc::validate_files({validate_paths.begin(), validate_paths.end()})) {
                std::cout << fmt::format("{} {}: {}\n", c.ok ? "OK  " : "FAIL", c.path.string(), c.message);
                ok = ok && c.ok;
            }
            if (!flags.config.empty()) {
                auto cfg = tasc::load_config(flags.config);
                if (cfg.use_synth) throw tasc::ConfigError("config names no [inputs] to validate");
                tasc::load_inputs(cfg.inputs);
                std::cout << "OK   inputs are consistent\n";
            }
            return ok ? 0 : 1;
        }

        if (synth->parsed()) {
            tasc::run_synth_command(resolve(flags));
        } else if (search->parsed()) {
            tasc::run_search_command(resolve(flags));
        } else if (refine->parsed()) {
            tasc::run_refine_command(resolve(flags));
        } else if (score->parsed()) {
            tasc::run_score_command(resolve(flags));
        } else if (threshold->parsed()) {
            tasc::run_threshold_command(resolve(flags));
        } else if (eval->parsed()) {
            const auto report = tasc::run_eval_command(resolve(flags));
            std::cout << tasc::eval_report_json(report).dump(2) << "\n";
        } else if (pipeline->parsed()) {
            const auto result = tasc::run_pipeline(resolve(flags, synth_file));
            if (result.eval) std::cout << tasc::eval_report_json(*result.eval).dump(2) << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
