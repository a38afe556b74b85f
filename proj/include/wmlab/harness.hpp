#pragma once

#include <memory>
#include <string>

#include "wmlab/config.hpp"
#include "wmlab/oracles.hpp"
#include "wmlab/schemes.hpp"

namespace wmlab::harness {

// Everything a command needs, materialized from a config: the generator, the
// calibrated quality oracle, the perturber, the scheme, and the prompt.
struct Experiment {
    MarkovModel model;
    ReferenceQuality quality;
    SpanPerturber perturber;
    std::unique_ptr<schemes::WatermarkScheme> scheme;
    Prompt prompt;
    double calibration_mean_loglik = 0.0;
};

Experiment assemble(const ExperimentConfig& cfg);

// Exit codes: 0 success/PASS, 1 validation FAIL, 2 usage or config error.
// Commands write their CSV/JSON artifacts into cfg.out_dir.
int cmd_generate(const ExperimentConfig& cfg);
int cmd_attack(const ExperimentConfig& cfg);
int cmd_theory(const ExperimentConfig& cfg);
int cmd_validate(const ExperimentConfig& cfg);
int cmd_plotdata(const ExperimentConfig& cfg, const std::string& records_path);

int run_command(const std::string& command, const ExperimentConfig& cfg);

}  // namespace wmlab::harness
