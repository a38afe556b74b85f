#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wmlab/attack.hpp"
#include "wmlab/core.hpp"
#include "wmlab/markov.hpp"
#include "wmlab/oracles.hpp"
#include "wmlab/schemes.hpp"

namespace wmlab::harness {

// How a Markov chain is specified in a config: a named builder or a file.
struct ModelSpec {
    std::string kind = "uniform";  // uniform | iid | random | file | generator
    int vocab = 3;
    int order = 1;
    long length = 4;
    std::vector<double> probs;  // iid
    double concentration = 3.0;  // random
    std::uint64_t build_seed = 1;
    std::string path;  // file
};

// Parsed and validated experiment configuration. The on-disk format is a
// flat `key = value` file ('#' comments); unknown keys, duplicate keys and
// cross-field violations are hard errors.
struct ExperimentConfig {
    ModelSpec model;
    ModelSpec reference;   // quality reference chain
    ModelSpec proposal;    // perturber proposal ("generator" aliases the model)

    std::vector<Token> prompt_tokens;
    std::string prompt_id = "prompt";

    double quality_floor_nats = -20.0;
    double quality_target_mean = 0.75;
    long quality_calibration_samples = 10000;

    long span_length = 1;
    double top_p = 1.0;

    std::string scheme = "synthetic";
    schemes::KgwParams kgw;
    schemes::UnigramParams unigram;
    schemes::ExpParams exp;
    schemes::SyntheticParams synthetic;

    long attack_steps = 200;
    long attack_t_err = 0;
    double attack_delta = 0.02;
    bool attack_backtrack = false;
    long attack_patience = 10;
    std::string attack_stop = "fixed_steps";
    double attack_alpha = 0.7;
    double attack_z_stop = 1.645;
    bool attack_oblivious = true;

    double theory_eps_dist = 0.01;
    double theory_v = 50.0;
    long theory_percentile_samples = 2000;

    double validate_eps_dist = 0.01;
    double validate_v = 50.0;
    long validate_runs = 2000;
    long validate_pert_samples = 5000;
    double validate_tail_target = 1e-3;
    long validate_percentile_samples = 2000;

    long trials = 100;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    bool trace = false;
    bool fixed_key = false;
    bool timing = false;
    int threads = 1;

    // Raw file bytes and their FNV-1a 64 hash, echoed into every record.
    std::string raw_text;
    std::string config_hash;
    std::map<std::string, std::string> raw_pairs;

    void validate() const;
};

// Parses the flat key/value grammar; unknown or duplicate keys are errors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

std::string fnv1a64_hex(const std::string& bytes);

// Materializes a ModelSpec. `generator` resolves the "generator" alias.
MarkovModel build_model(const ModelSpec& spec, const MarkovModel* generator);

}  // namespace wmlab::harness
