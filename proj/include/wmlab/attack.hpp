#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/oracles.hpp"
#include "wmlab/rng.hpp"

namespace wmlab::attack {

enum class StopKind { fixed_steps, replacement_fraction, known_detector_z };

struct StopRule {
    StopKind kind = StopKind::fixed_steps;
    double alpha = 0.7;        // replacement_fraction: stop once this fraction of positions differ
    double z_threshold = 1.645;  // known_detector_z: stop once z drops below this
};

struct AttackConfig {
    long max_steps = 200;  // T
    long t_err = 0;        // abort margin for the extended adversary
    double delta = 0.02;   // quality tie band
    bool backtrack = false;
    long patience = 10;    // consecutive rejections before reverting one step
    StopRule stop{};
    // An oblivious attacker has no detector access; requesting the
    // known_detector_z stop rule in oblivious mode is a configuration error.
    bool oblivious = true;
    std::function<double(const Prompt&, const TokenSequence&)> detector_z;
    bool record_trace = false;

    void validate() const;
};

struct TraceStep {
    long step = 0;
    bool accepted = false;
    double quality = 0.0;              // quality of the current walk state
    double replacement_fraction = 0.0;  // positions differing from the initial y
    std::optional<double> z;            // detector z, when a detector is wired in
};

struct AttackRun {
    TokenSequence initial;
    TokenSequence final_output;
    long accepted_steps = 0;   // ctr
    long proposals_made = 0;
    long steps_executed = 0;   // proposals before a stop rule fired
    bool aborted = false;      // extended adversary only
    QualityScore quality_before;
    QualityScore quality_after;
    std::vector<TraceStep> trace;
};

// View of a run in progress for stop-rule evaluation.
struct AttackProgress {
    const TokenSequence& initial;
    const TokenSequence& current;
    std::optional<double> current_z;
};

// True when the rule says to stop. fixed_steps never stops early.
bool apply_stop_rule(const StopRule& rule, const AttackProgress& progress);

double replacement_fraction(const TokenSequence& initial, const TokenSequence& current);

// The random-walk erasure attack: repeatedly perturb and keep the proposal
// whenever its quality does not lose against the ORIGINAL y's quality (tie
// band delta). Optional patience backtracking reverts one accepted step after
// `patience` consecutive rejections. Never aborts.
AttackRun random_walk_attack(const Prompt& x, const TokenSequence& y, const QualityOracle& quality,
                             const PerturbationOracle& perturb, const AttackConfig& config,
                             RngStream& rng);

// The counting adversary: fixes q0 = Q(x, y) once, makes exactly max_steps
// proposals, counts accepted ones, and aborts unless
// accepted >= max_steps - t_err. No backtracking, no early stop.
AttackRun extended_attack(const Prompt& x, const TokenSequence& y, const QualityOracle& quality,
                          const PerturbationOracle& perturb, const AttackConfig& config,
                          RngStream& rng);

}  // namespace wmlab::attack
