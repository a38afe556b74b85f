#include "wmlab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <thread>

#include "json.hpp"
#include "wmlab/attack.hpp"
#include "wmlab/stats.hpp"
#include "wmlab/theory.hpp"

namespace wmlab::harness {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void ensure_dir(const std::string& dir) { std::filesystem::create_directories(dir); }

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

json base_record(const ExperimentConfig& cfg, const std::string& command) {
    json j;
    j["schema"] = "wmlab-run-v1";
    j["command"] = command;
    j["config_hash"] = cfg.config_hash;
    j["seed"] = cfg.seed;
    j["config"] = cfg.raw_pairs;
    return j;
}

// Runs fn(i) for i in [0, n), fanning out across cfg.threads workers. Work is
// pure per index, so scheduling cannot change results.
void parallel_for(int threads, long n, const std::function<void(long)>& fn) {
    if (threads <= 1 || n < 2) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<long> next{0};
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&] {
            for (;;) {
                const long i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

attack::AttackConfig attack_config_from(const ExperimentConfig& cfg) {
    attack::AttackConfig a;
    a.max_steps = cfg.attack_steps;
    a.t_err = cfg.attack_t_err;
    a.delta = cfg.attack_delta;
    a.backtrack = cfg.attack_backtrack;
    a.patience = cfg.attack_patience;
    a.oblivious = cfg.attack_oblivious;
    a.record_trace = cfg.trace;
    if (cfg.attack_stop == "fixed_steps") a.stop.kind = attack::StopKind::fixed_steps;
    else if (cfg.attack_stop == "replacement_fraction")
        a.stop.kind = attack::StopKind::replacement_fraction;
    else a.stop.kind = attack::StopKind::known_detector_z;
    a.stop.alpha = cfg.attack_alpha;
    a.stop.z_threshold = cfg.attack_z_stop;
    return a;
}

json trace_to_json(const std::vector<attack::TraceStep>& trace) {
    json arr = json::array();
    for (const auto& s : trace) {
        json row;
        row["step"] = s.step;
        row["accepted"] = s.accepted;
        row["quality"] = s.quality;
        row["replacement_fraction"] = s.replacement_fraction;
        if (s.z) row["z"] = *s.z;
        arr.push_back(row);
    }
    return arr;
}

}  // namespace

Experiment assemble(const ExperimentConfig& cfg) {
    MarkovModel model = build_model(cfg.model, nullptr);

    Prompt prompt;
    prompt.tokens = cfg.prompt_tokens;
    prompt.identifier = cfg.prompt_id;
    for (Token t : prompt.tokens)
        if (!model.vocabulary.contains(t))
            throw ConfigError("prompt.tokens: token out of the model's vocabulary");

    ReferenceQuality quality{build_model(cfg.reference, &model), cfg.quality_floor_nats, 0.0};
    RngStream calib_rng(cfg.seed, "quality-calibration");
    const double mean_loglik = calibrate_quality(
        quality, prompt, cfg.quality_calibration_samples, cfg.quality_target_mean, calib_rng);

    SpanPerturber perturber{build_model(cfg.proposal, &model), cfg.span_length, cfg.top_p};
    perturber.validate();

    std::unique_ptr<schemes::WatermarkScheme> scheme;
    if (cfg.scheme == "kgw")
        scheme = std::make_unique<schemes::KgwScheme>(model, cfg.kgw);
    else if (cfg.scheme == "unigram")
        scheme = std::make_unique<schemes::UnigramScheme>(model, cfg.unigram);
    else if (cfg.scheme == "exp")
        scheme = std::make_unique<schemes::ExpScheme>(model, cfg.exp);
    else
        scheme = std::make_unique<schemes::SyntheticScheme>(model, cfg.synthetic);

    return Experiment{std::move(model), std::move(quality), std::move(perturber),
                      std::move(scheme), std::move(prompt), mean_loglik};
}

int cmd_generate(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    Experiment e = assemble(cfg);
    ensure_dir(cfg.out_dir);
    RngStream root(cfg.seed, "generate");

    std::optional<schemes::KeyedSampler> fixed;
    if (cfg.fixed_key) {
        RngStream key_rng = root.substream("fixed-key");
        fixed = e.scheme->watermark(key_rng);
    }

    struct Row {
        double statistic = 0.0;
        std::optional<double> p;
        int decision = 0;
        double quality = 0.0;
    };
    std::vector<Row> rows(std::size_t(cfg.trials));
    parallel_for(cfg.threads, cfg.trials, [&](long i) {
        RngStream trial = root.substream("trial/" + std::to_string(i));
        RngStream key_rng = trial.substream("key");
        RngStream gen_rng = trial.substream("gen");
        const schemes::KeyedSampler keyed = fixed ? *fixed : e.scheme->watermark(key_rng);
        const TokenSequence y = keyed.sampler(e.prompt, e.model.generation_length, gen_rng);
        const DetectionResult det = e.scheme->detect(keyed.key, e.prompt, y);
        rows[std::size_t(i)] = {det.statistic, det.p_value, det.decision,
                                e.quality(e.prompt, y).value};
    });

    std::string csv = "trial,statistic,p_value,decision,quality\n";
    double stat_sum = 0.0, quality_sum = 0.0;
    long detected = 0;
    json trials = json::array();
    for (long i = 0; i < cfg.trials; ++i) {
        const Row& r = rows[std::size_t(i)];
        csv += std::to_string(i) + "," + fmt(r.statistic) + "," +
               (r.p ? fmt(*r.p) : std::string{}) + "," + std::to_string(r.decision) + "," +
               fmt(r.quality) + "\n";
        stat_sum += r.statistic;
        quality_sum += r.quality;
        detected += r.decision;
        json t;
        t["trial"] = i;
        t["statistic"] = r.statistic;
        if (r.p) t["p_value"] = *r.p;
        t["decision"] = r.decision;
        t["quality"] = r.quality;
        trials.push_back(t);
    }
    write_text(cfg.out_dir + "/generate.csv", csv);

    json rec = base_record(cfg, "generate");
    rec["trials"] = trials;
    rec["aggregates"] = {{"mean_statistic", stat_sum / double(cfg.trials)},
                         {"detection_rate", double(detected) / double(cfg.trials)},
                         {"mean_quality", quality_sum / double(cfg.trials)},
                         {"calibration_mean_loglik", e.calibration_mean_loglik}};
    if (cfg.timing)
        rec["wall_clock_ms"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
                .count();
    write_text(cfg.out_dir + "/records.json", rec.dump(2) + "\n");
    std::cout << "generate: " << cfg.trials << " trials, detection rate "
              << double(detected) / double(cfg.trials) << "\n";
    return 0;
}

int cmd_attack(const ExperimentConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    Experiment e = assemble(cfg);
    ensure_dir(cfg.out_dir);
    RngStream root(cfg.seed, "attack");

    const QualityOracle quality = [&e](const Prompt& x, const TokenSequence& y) {
        return e.quality(x, y);
    };
    const PerturbationOracle perturb_oracle = [&e](const Prompt& x, const TokenSequence& y,
                                                   RngStream& rng) {
        return perturb(e.perturber, x, y, rng);
    };

    struct Row {
        DetectionResult before, after;
        double q_before = 0.0, q_after = 0.0;
        long ctr = 0;
        bool aborted = false;
        long steps = 0;
        std::vector<attack::TraceStep> trace;
    };
    std::vector<Row> rows(std::size_t(cfg.trials));
    parallel_for(cfg.threads, cfg.trials, [&](long i) {
        RngStream trial = root.substream("trial/" + std::to_string(i));
        RngStream key_rng = trial.substream("key");
        RngStream gen_rng = trial.substream("gen");
        RngStream walk_rng = trial.substream("walk");
        const schemes::KeyedSampler keyed = e.scheme->watermark(key_rng);
        const TokenSequence y0 = keyed.sampler(e.prompt, e.model.generation_length, gen_rng);

        attack::AttackConfig acfg = attack_config_from(cfg);
        if (acfg.stop.kind == attack::StopKind::known_detector_z)
            acfg.detector_z = [&e, key = keyed.key](const Prompt& x, const TokenSequence& y) {
                return e.scheme->detect(key, x, y).statistic;
            };

        const attack::AttackRun run =
            attack::random_walk_attack(e.prompt, y0, quality, perturb_oracle, acfg, walk_rng);
        Row& r = rows[std::size_t(i)];
        r.before = e.scheme->detect(keyed.key, e.prompt, y0);
        r.after = e.scheme->detect(keyed.key, e.prompt, run.final_output);
        r.q_before = run.quality_before.value;
        r.q_after = run.quality_after.value;
        r.ctr = run.accepted_steps;
        r.aborted = run.aborted;
        r.steps = run.steps_executed;
        r.trace = run.trace;
    });

    std::string csv =
        "trial,z_before,z_after,p_before,p_after,quality_before,quality_after,ctr,aborted,steps\n";
    json trials = json::array();
    long evaded = 0;
    for (long i = 0; i < cfg.trials; ++i) {
        const Row& r = rows[std::size_t(i)];
        csv += std::to_string(i) + "," + fmt(r.before.statistic) + "," + fmt(r.after.statistic) +
               "," + (r.before.p_value ? fmt(*r.before.p_value) : std::string{}) + "," +
               (r.after.p_value ? fmt(*r.after.p_value) : std::string{}) + "," + fmt(r.q_before) +
               "," + fmt(r.q_after) + "," + std::to_string(r.ctr) + "," +
               std::to_string(r.aborted ? 1 : 0) + "," + std::to_string(r.steps) + "\n";
        if (r.after.decision == 0) ++evaded;
        json t;
        t["trial"] = i;
        t["z_before"] = r.before.statistic;
        t["z_after"] = r.after.statistic;
        if (r.before.p_value) t["p_before"] = *r.before.p_value;
        if (r.after.p_value) t["p_after"] = *r.after.p_value;
        t["quality_before"] = r.q_before;
        t["quality_after"] = r.q_after;
        t["ctr"] = r.ctr;
        t["aborted"] = r.aborted;
        t["steps"] = r.steps;
        if (cfg.trace) t["trace"] = trace_to_json(r.trace);
        trials.push_back(t);
    }
    write_text(cfg.out_dir + "/attack.csv", csv);

    json rec = base_record(cfg, "attack");
    rec["trials"] = trials;
    rec["aggregates"] = {{"evasion_rate", double(evaded) / double(cfg.trials)}};
    if (cfg.timing)
        rec["wall_clock_ms"] =
            std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
                .count();
    write_text(cfg.out_dir + "/records.json", rec.dump(2) + "\n");
    std::cout << "attack: " << cfg.trials << " trials, evasion rate "
              << double(evaded) / double(cfg.trials) << "\n";
    return 0;
}

int cmd_theory(const ExperimentConfig& cfg) {
    Experiment e = assemble(cfg);
    ensure_dir(cfg.out_dir);
    const EnumeratedSpace space = enumerate_outputs(e.model.vocabulary, e.model.generation_length);

    std::vector<double> qualities(space.size());
    for (std::size_t i = 0; i < space.size(); ++i)
        qualities[i] = e.quality(e.prompt, space.outputs[i]).value;

    const QualityOracle quality = [&e](const Prompt& x, const TokenSequence& y) {
        return e.quality(x, y);
    };

    // q grid: every distinct quality level, plus the percentile values.
    std::set<double> grid(qualities.begin(), qualities.end());
    RngStream pct_rng(cfg.seed, "theory-percentile");
    json percentiles = json::array();
    for (double v : {0.0, 25.0, 50.0, 75.0, 100.0}) {
        RngStream sub = pct_rng.substream("v/" + fmt(v));
        const double q = theory::quality_percentile(*e.scheme, e.prompt, e.model.generation_length,
                                                    quality, v, cfg.theory_percentile_samples, sub);
        percentiles.push_back({{"v", v}, {"q", q}});
        grid.insert(q);
    }
    RngStream qmin_rng(cfg.seed, "theory-qmin");
    const double q_min = theory::quality_percentile(*e.scheme, e.prompt, e.model.generation_length,
                                                    quality, cfg.theory_v,
                                                    cfg.theory_percentile_samples, qmin_rng);
    grid.insert(q_min);
    // The sweep ends above the maximum quality so the final row is a flagged
    // empty one.
    grid.insert(std::nextafter(*grid.rbegin(), 2.0));

    std::string csv = "q,n_vertices,irreducible,aperiodic,g,pi_min,bound,empirical_t,empty\n";
    json rows = json::array();
    for (double q : grid) {
        json row;
        row["q"] = q;
        const long n_at_q =
            std::count_if(qualities.begin(), qualities.end(), [q](double v) { return v >= q; });
        if (n_at_q == 0) {
            row["empty"] = true;
            csv += fmt(q) + ",0,,,,,,,1\n";
            rows.push_back(row);
            continue;
        }
        const theory::PerturbationGraph g =
            theory::build_quality_graph(e.perturber, e.quality, e.prompt, q, space);
        const theory::SpectralReport rep = theory::spectral_report(g, cfg.theory_eps_dist);
        row["empty"] = false;
        row["n_vertices"] = g.n();
        row["irreducible"] = rep.irreducible;
        row["aperiodic"] = rep.aperiodic;
        if (rep.irreducible && rep.aperiodic) {
            row["g"] = rep.gap;
            row["pi_min"] = rep.pi_min;
            row["bound"] = rep.mixing_bound;
            row["empirical_t"] = rep.empirical_mixing;
            csv += fmt(q) + "," + std::to_string(g.n()) + ",1,1," + fmt(rep.gap) + "," +
                   fmt(rep.pi_min) + "," + fmt(rep.mixing_bound) + "," +
                   std::to_string(rep.empirical_mixing) + ",0\n";
        } else {
            csv += fmt(q) + "," + std::to_string(g.n()) + "," + (rep.irreducible ? "1," : "0,") +
                   (rep.aperiodic ? "1," : "0,") + ",,,,0\n";
        }
        rows.push_back(row);
    }

    json rec = base_record(cfg, "theory");
    rec["q_min"] = q_min;
    rec["v"] = cfg.theory_v;
    rec["eps_dist"] = cfg.theory_eps_dist;
    rec["percentiles"] = percentiles;
    rec["rows"] = rows;
    write_text(cfg.out_dir + "/theory.csv", csv);
    write_text(cfg.out_dir + "/theory.json", rec.dump(2) + "\n");
    std::cout << "theory: " << grid.size() << " quality levels analysed, q_min " << q_min << "\n";
    return 0;
}

int cmd_validate(const ExperimentConfig& cfg) {
    Experiment e = assemble(cfg);
    ensure_dir(cfg.out_dir);
    const auto* synthetic = dynamic_cast<const schemes::SyntheticScheme*>(e.scheme.get());
    if (!synthetic)
        throw ConfigError("validate: requires scheme.name = synthetic "
                          "(the only scheme with an exact false-positive rate)");
    const double eps_pos = synthetic->params().target_fp_rate;
    const double eps_dist = cfg.validate_eps_dist;
    const double v = cfg.validate_v;
    json rec = base_record(cfg, "validate");

    // Stage 1: exact quality landscape on the enumerable space.
    const EnumeratedSpace space = enumerate_outputs(e.model.vocabulary, e.model.generation_length);
    std::vector<double> qualities(space.size());
    for (std::size_t i = 0; i < space.size(); ++i)
        qualities[i] = e.quality(e.prompt, space.outputs[i]).value;

    // Stage 2: measured eps_pert of the calibrated perturber.
    RngStream pert_rng(cfg.seed, "validate-pert");
    long preserved = 0;
    for (long i = 0; i < cfg.validate_pert_samples; ++i) {
        RngStream trial = pert_rng.substream(std::to_string(i));
        const TokenSequence y = sample(e.model, e.prompt, e.model.generation_length, trial);
        const TokenSequence y2 = perturb(e.perturber, e.prompt, y, trial);
        if (non_lose(e.quality(e.prompt, y2), e.quality(e.prompt, y), cfg.attack_delta)) ++preserved;
    }
    const double eps_pert_hat = double(preserved) / double(cfg.validate_pert_samples);
    auto [pert_lo, pert_hi] = stats::binomial_ci(preserved, cfg.validate_pert_samples);
    std::cout << "validate: eps_pert measured " << eps_pert_hat << " [" << pert_lo << ", "
              << pert_hi << "]\n";
    rec["eps_pert"] = {{"point", eps_pert_hat}, {"ci_low", pert_lo}, {"ci_high", pert_hi}};

    // Stage 3: q_min as the v-th percentile of watermarked-output quality.
    const QualityOracle quality = [&e](const Prompt& x, const TokenSequence& y) {
        return e.quality(x, y);
    };
    RngStream pct_rng(cfg.seed, "validate-percentile");
    const double q_min = theory::quality_percentile(*e.scheme, e.prompt, e.model.generation_length,
                                                    quality, v, cfg.validate_percentile_samples,
                                                    pct_rng);
    std::cout << "validate: q_min (v=" << v << ") = " << q_min << "\n";
    rec["q_min"] = q_min;

    // Stage 4: every quality level >= q_min must be irreducible and aperiodic;
    // collect mixing times and the worst-case per-step acceptance probability.
    std::set<double> levels;
    for (double q : qualities)
        if (q >= q_min) levels.insert(q);
    levels.insert(q_min);
    long t_mix = 0;
    double accept_min = 1.0;
    json level_rows = json::array();
    for (double q : levels) {
        const theory::PerturbationGraph g =
            theory::build_quality_graph(e.perturber, e.quality, e.prompt, q, space);
        const bool irr = theory::is_irreducible(g);
        const bool aper = irr && theory::is_aperiodic(g);
        if (!irr || !aper) {
            std::cout << "validate: PRECONDITION FAIL at q = " << q << " (n = " << g.n()
                      << "): graph is " << (irr ? "periodic" : "reducible") << "\n";
            rec["precondition_failure"] = {{"q", q}, {"irreducible", irr}, {"aperiodic", aper}};
            write_text(cfg.out_dir + "/validate.json", rec.dump(2) + "\n");
            std::cout << "validate: FAIL (theorem precondition, not the bound)\n";
            return 1;
        }
        const theory::TransitionMatrix P = theory::transition_matrix(g);
        const std::vector<double> pi = theory::stationary_distribution(P);
        const long t_q = theory::empirical_mixing_time(P, pi, eps_dist);
        t_mix = std::max(t_mix, t_q);
        for (std::size_t i = 0; i < g.n(); ++i) accept_min = std::min(accept_min, g.out_weight(i));
        level_rows.push_back({{"q", q}, {"n", g.n()}, {"empirical_t", t_q}});
    }
    rec["levels"] = level_rows;
    rec["t_mix"] = t_mix;
    rec["accept_min"] = accept_min;
    std::cout << "validate: max empirical mixing time " << t_mix
              << ", worst-case accept probability " << accept_min << "\n";

    // Stage 5: choose t_err so the abort tail is negligible even under the
    // worst-case acceptance probability; the tail is monotone in t_err.
    long t_err = -1;
    for (long cand = 0; cand <= 2000000; ++cand) {
        if (stats::binomial_tail(t_mix + cand, cand, accept_min) <= cfg.validate_tail_target) {
            t_err = cand;
            break;
        }
    }
    if (t_err < 0) throw std::runtime_error("validate: no t_err satisfies the tail target");
    const long t = t_mix + t_err;
    const double tail_reported = stats::binomial_tail(t, t_err, eps_pert_hat);
    std::cout << "validate: t = " << t << " (t_err = " << t_err << "), binomial tail at measured"
              << " eps_pert = " << tail_reported << "\n";
    rec["t"] = t;
    rec["t_err"] = t_err;
    rec["binomial_tail"] = tail_reported;

    // Stage 6: the extended adversary, fresh key per run.
    attack::AttackConfig acfg;
    acfg.max_steps = t;
    acfg.t_err = t_err;
    acfg.delta = cfg.attack_delta;
    const PerturbationOracle perturb_oracle = [&e](const Prompt& x, const TokenSequence& y,
                                                   RngStream& rng) {
        return perturb(e.perturber, x, y, rng);
    };
    RngStream run_rng(cfg.seed, "validate-runs");
    std::vector<int> success(std::size_t(cfg.validate_runs), 0);
    std::vector<int> aborted(std::size_t(cfg.validate_runs), 0);
    std::vector<int> gen_error(std::size_t(cfg.validate_runs), 0);
    parallel_for(cfg.threads, cfg.validate_runs, [&](long i) {
        RngStream trial = run_rng.substream(std::to_string(i));
        RngStream key_rng = trial.substream("key");
        RngStream gen_rng = trial.substream("gen");
        RngStream walk_rng = trial.substream("walk");
        const schemes::KeyedSampler keyed = e.scheme->watermark(key_rng);
        TokenSequence y0;
        try {
            y0 = keyed.sampler(e.prompt, e.model.generation_length, gen_rng);
        } catch (const std::exception&) {
            // A key can mark nothing on a small space; the erasure game
            // presumes a watermarked y0 exists, so such runs are excluded.
            gen_error[std::size_t(i)] = 1;
            return;
        }
        const attack::AttackRun run =
            attack::extended_attack(e.prompt, y0, quality, perturb_oracle, acfg, walk_rng);
        aborted[std::size_t(i)] = run.aborted ? 1 : 0;
        if (run.aborted) return;
        const bool evaded = e.scheme->detect(keyed.key, e.prompt, run.final_output).decision == 0;
        const bool kept_quality = non_lose(run.quality_after, run.quality_before, cfg.attack_delta);
        success[std::size_t(i)] = (evaded && kept_quality) ? 1 : 0;
    });
    long n_success = 0, n_aborted = 0, n_errors = 0;
    for (long i = 0; i < cfg.validate_runs; ++i) {
        n_success += success[std::size_t(i)];
        n_aborted += aborted[std::size_t(i)];
        n_errors += gen_error[std::size_t(i)];
    }
    const long n_runs = cfg.validate_runs - n_errors;
    if (n_runs < 100) throw std::runtime_error("validate: too many generation failures");
    if (n_errors > 0)
        std::cout << "validate: " << n_errors << " generation failures excluded from the rate\n";
    const double rate = double(n_success) / double(n_runs);
    auto [rate_lo, rate_hi] = stats::binomial_ci(n_success, n_runs);
    const double half_width = 0.5 * (rate_hi - rate_lo);

    // Stage 7: the closed-form guarantee with the measured eps_pert.
    const double bound = theory::success_lower_bound(v, eps_pos, eps_dist, eps_pert_hat, t, t_err);
    const bool pass = rate >= bound - half_width;
    std::cout << "validate: success " << n_success << "/" << n_runs << " = " << rate
              << " (CI [" << rate_lo << ", " << rate_hi << "], aborted " << n_aborted << ")\n";
    std::cout << "validate: lower bound " << bound << ", margin " << rate - bound
              << " (threshold bound - half-width = " << bound - half_width << ")\n";
    std::cout << "validate: " << (pass ? "PASS" : "FAIL") << "\n";

    rec["success_rate"] = rate;
    rec["success_ci"] = {rate_lo, rate_hi};
    rec["aborted_runs"] = n_aborted;
    rec["generation_failures"] = n_errors;
    rec["bound"] = bound;
    rec["pass"] = pass;
    write_text(cfg.out_dir + "/validate.json", rec.dump(2) + "\n");
    return pass ? 0 : 1;
}

int cmd_plotdata(const ExperimentConfig& cfg, const std::string& records_path) {
    ensure_dir(cfg.out_dir);
    std::ifstream in(records_path);
    if (!in) throw ConfigError("plotdata: cannot open records file " + records_path);
    json rec;
    try {
        in >> rec;
    } catch (const std::exception& ex) {
        throw ConfigError("plotdata: malformed records file: " + std::string(ex.what()));
    }
    if (!rec.contains("trials")) throw ConfigError("plotdata: records file has no trials");

    std::string csv = "trial,step,metric,value\n";
    // step -> metric -> (sum, count) for the mean file.
    std::map<long, std::map<std::string, std::pair<double, long>>> agg;
    bool any_trace = false;
    for (const auto& t : rec["trials"]) {
        if (!t.contains("trace")) continue;
        any_trace = true;
        const long trial = t["trial"].get<long>();
        for (const auto& s : t["trace"]) {
            const long step = s["step"].get<long>();
            const auto emit = [&](const std::string& metric, double value) {
                csv += std::to_string(trial) + "," + std::to_string(step) + "," + metric + "," +
                       fmt(value) + "\n";
                auto& cell = agg[step][metric];
                cell.first += value;
                cell.second += 1;
            };
            if (s.contains("z")) emit("z", s["z"].get<double>());
            emit("quality", s["quality"].get<double>());
            emit("replacement_fraction", s["replacement_fraction"].get<double>());
        }
    }
    if (!any_trace && !rec["trials"].empty())
        throw ConfigError("plotdata: records carry no traces; re-run the attack with --trace");

    std::string mean_csv = "step,metric,mean,n\n";
    for (const auto& [step, metrics] : agg)
        for (const auto& [metric, cell] : metrics)
            mean_csv += std::to_string(step) + "," + metric + "," + fmt(cell.first / double(cell.second)) +
                        "," + std::to_string(cell.second) + "\n";

    write_text(cfg.out_dir + "/plotdata.csv", csv);
    write_text(cfg.out_dir + "/plotdata_mean.csv", mean_csv);
    std::cout << "plotdata: wrote " << cfg.out_dir << "/plotdata.csv and plotdata_mean.csv\n";
    return 0;
}

int run_command(const std::string& command, const ExperimentConfig& cfg) {
    if (command == "generate") return cmd_generate(cfg);
    if (command == "attack") return cmd_attack(cfg);
    if (command == "theory") return cmd_theory(cfg);
    if (command == "validate") return cmd_validate(cfg);
    if (command == "plotdata") return cmd_plotdata(cfg, cfg.out_dir + "/records.json");
    throw ConfigError("unknown command '" + command + "'");
}

}  // namespace wmlab::harness
