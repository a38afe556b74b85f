#include "wmlab/attack.hpp"

#include <stdexcept>

namespace wmlab::attack {

void AttackConfig::validate() const {
    if (max_steps < 0) throw ConfigError("attack: max_steps must be >= 0");
    if (t_err < 0 || t_err > max_steps) throw ConfigError("attack: t_err outside [0, max_steps]");
    if (!(delta >= 0.0)) throw ConfigError("attack: delta must be >= 0");
    if (patience < 1) throw ConfigError("attack: patience must be >= 1");
    if (stop.kind == StopKind::replacement_fraction && !(stop.alpha > 0.0 && stop.alpha <= 1.0))
        throw ConfigError("attack: replacement_fraction alpha outside (0,1]");
    if (stop.kind == StopKind::known_detector_z) {
        if (oblivious)
            throw ConfigError("attack: known_detector_z stop rule requires detector access, "
                              "but the attacker is configured as oblivious");
        if (!detector_z) throw ConfigError("attack: known_detector_z stop rule without a detector");
    }
}

double replacement_fraction(const TokenSequence& initial, const TokenSequence& current) {
    if (initial.tokens.size() != current.tokens.size())
        throw std::invalid_argument("replacement_fraction: length mismatch");
    if (initial.tokens.empty()) return 0.0;
    std::size_t differ = 0;
    for (std::size_t i = 0; i < initial.tokens.size(); ++i)
        if (initial.tokens[i] != current.tokens[i]) ++differ;
    return double(differ) / double(initial.tokens.size());
}

bool apply_stop_rule(const StopRule& rule, const AttackProgress& progress) {
    switch (rule.kind) {
        case StopKind::fixed_steps:
            return false;
        case StopKind::replacement_fraction:
            return replacement_fraction(progress.initial, progress.current) >= rule.alpha;
        case StopKind::known_detector_z:
            return progress.current_z.has_value() && *progress.current_z < rule.z_threshold;
    }
    return false;
}

AttackRun random_walk_attack(const Prompt& x, const TokenSequence& y, const QualityOracle& quality,
                             const PerturbationOracle& perturb, const AttackConfig& config,
                             RngStream& rng) {
    config.validate();
    if (y.tokens.empty()) throw std::invalid_argument("random_walk_attack: empty input");

    AttackRun run;
    run.initial = y;
    run.quality_before = quality(x, y);
    const QualityScore q0 = run.quality_before;

    TokenSequence current = y;
    QualityScore current_quality = q0;
    // Accepted predecessors with their qualities, for backtracking.
    std::vector<std::pair<TokenSequence, QualityScore>> history;
    long consecutive_rejects = 0;
    std::optional<double> current_z;
    if (config.detector_z) current_z = config.detector_z(x, current);

    const auto stopped = [&] {
        return apply_stop_rule(config.stop, AttackProgress{run.initial, current, current_z});
    };

    if (!stopped()) {
        for (long step = 1; step <= config.max_steps; ++step) {
            TokenSequence proposal;
            QualityScore q_prop;
            try {
                proposal = perturb(x, current, rng);
                q_prop = quality(x, proposal);
            } catch (const std::exception& e) {
                throw std::runtime_error("attack step " + std::to_string(step) +
                                         ": oracle failure: " + e.what());
            }
            ++run.proposals_made;
            ++run.steps_executed;

            const bool accept = non_lose(q_prop, q0, config.delta);
            if (accept) {
                history.emplace_back(std::move(current), current_quality);
                current = std::move(proposal);
                current_quality = q_prop;
                ++run.accepted_steps;
                consecutive_rejects = 0;
                if (config.detector_z) current_z = config.detector_z(x, current);
            } else {
                ++consecutive_rejects;
                if (config.backtrack && consecutive_rejects >= config.patience &&
                    !history.empty()) {
                    current = std::move(history.back().first);
                    current_quality = history.back().second;
                    history.pop_back();
                    consecutive_rejects = 0;
                    if (config.detector_z) current_z = config.detector_z(x, current);
                }
            }

            if (config.record_trace)
                run.trace.push_back({step, accept, current_quality.value,
                                     replacement_fraction(run.initial, current), current_z});
            if (stopped()) break;
        }
    }

    run.final_output = current;
    run.quality_after = quality(x, run.final_output);
    return run;
}

AttackRun extended_attack(const Prompt& x, const TokenSequence& y, const QualityOracle& quality,
                          const PerturbationOracle& perturb, const AttackConfig& config,
                          RngStream& rng) {
    config.validate();
    if (y.tokens.empty()) throw std::invalid_argument("extended_attack: empty input");

    AttackRun run;
    run.initial = y;
    run.quality_before = quality(x, y);
    const QualityScore q0 = run.quality_before;

    TokenSequence current = y;
    QualityScore current_quality = q0;
    for (long step = 1; step <= config.max_steps; ++step) {
        TokenSequence proposal;
        QualityScore q_prop;
        try {
            proposal = perturb(x, current, rng);
            q_prop = quality(x, proposal);
        } catch (const std::exception& e) {
            throw std::runtime_error("attack step " + std::to_string(step) +
                                     ": oracle failure: " + e.what());
        }
        ++run.proposals_made;
        ++run.steps_executed;

        const bool accept = non_lose(q_prop, q0, config.delta);
        if (accept) {
            current = std::move(proposal);
            current_quality = q_prop;
            ++run.accepted_steps;
        }
        if (config.record_trace)
            run.trace.push_back({step, accept, current_quality.value,
                                 replacement_fraction(run.initial, current), std::nullopt});
    }

    run.aborted = run.accepted_steps < config.max_steps - config.t_err;
    run.final_output = current;
    run.quality_after = quality(x, run.final_output);
    return run;
}

}  // namespace wmlab::attack
