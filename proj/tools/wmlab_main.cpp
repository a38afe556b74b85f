#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "wmlab/harness.hpp"

namespace {

void apply_overrides(wmlab::harness::ExperimentConfig& cfg,
                     const std::optional<std::uint64_t>& seed,
                     const std::optional<std::string>& out,
                     const std::optional<long>& trials, bool trace, bool fixed_key, bool timing,
                     const std::optional<int>& threads) {
    if (seed) cfg.seed = *seed;
    if (out) cfg.out_dir = *out;
    if (trials) cfg.trials = *trials;
    if (trace) cfg.trace = true;
    if (fixed_key) cfg.fixed_key = true;
    if (timing) cfg.timing = true;
    if (threads) cfg.threads = *threads;
    cfg.validate();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Watermark erasure laboratory: toy generative models, watermarking "
                 "schemes, the random-walk erasure attack, and its Markov-chain analysis"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<long> trials;
    std::optional<int> threads;
    bool trace = false;
    bool fixed_key = false;
    bool timing = false;
    std::string records_path;

    app.add_option("--config", config_path, "Path to the experiment config file")->required();
    app.add_option("--seed", seed, "Master seed override");
    app.add_option("--out", out_dir, "Output directory override");
    app.add_option("--trials", trials, "Trial count override");
    app.add_option("--threads", threads, "Worker thread count");
    app.add_flag("--trace", trace, "Record per-step attack traces");
    app.add_flag("--timing", timing, "Include wall-clock timing in records "
                                     "(breaks byte-identical reproducibility)");

    auto* generate = app.add_subcommand("generate", "Watermarked samples plus detection stats");
    generate->add_flag("--fixed-key", fixed_key, "Reuse one key across trials");
    auto* attack = app.add_subcommand("attack", "Generate, attack, and re-detect per trial");
    auto* theory = app.add_subcommand("theory", "Spectral analysis of the perturbation graphs");
    auto* validate = app.add_subcommand("validate", "Check the attack-success lower bound");
    auto* plotdata = app.add_subcommand("plotdata", "Tidy CSVs from recorded traces");
    plotdata->add_option("--records", records_path, "records.json produced by a traced attack run");

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = wmlab::harness::load_config_file(config_path);
        apply_overrides(cfg, seed, out_dir, trials, trace, fixed_key, timing, threads);
        if (generate->parsed()) return wmlab::harness::cmd_generate(cfg);
        if (attack->parsed()) return wmlab::harness::cmd_attack(cfg);
        if (theory->parsed()) return wmlab::harness::cmd_theory(cfg);
        if (validate->parsed()) return wmlab::harness::cmd_validate(cfg);
        if (plotdata->parsed()) {
            const std::string records =
                records_path.empty() ? cfg.out_dir + "/records.json" : records_path;
            return wmlab::harness::cmd_plotdata(cfg, records);
        }
        std::cerr << "no subcommand\n";
        return 2;
    } catch (const wmlab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
