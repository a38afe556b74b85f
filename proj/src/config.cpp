#include "wmlab/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace wmlab::harness {

namespace {

const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "model.kind", "model.vocab", "model.order", "model.length", "model.probs",
        "model.concentration", "model.build_seed", "model.path",
        "reference.kind", "reference.vocab", "reference.order", "reference.length",
        "reference.probs", "reference.concentration", "reference.build_seed", "reference.path",
        "proposal.kind", "proposal.vocab", "proposal.order", "proposal.length",
        "proposal.probs", "proposal.concentration", "proposal.build_seed", "proposal.path",
        "prompt.tokens", "prompt.id",
        "quality.floor", "quality.target_mean", "quality.calibration_samples",
        "perturber.span_length", "perturber.top_p",
        "scheme.name",
        "kgw.gamma", "kgw.delta", "kgw.context_width", "kgw.z_threshold",
        "unigram.gamma", "unigram.delta", "unigram.z_threshold",
        "exp.key_sequence_length", "exp.block_length", "exp.resamples", "exp.p_threshold",
        "synthetic.target_fp_rate", "synthetic.rejection_cap",
        "attack.steps", "attack.t_err", "attack.delta", "attack.backtrack", "attack.patience",
        "attack.stop_rule", "attack.alpha", "attack.z_stop", "attack.oblivious",
        "theory.eps_dist", "theory.v", "theory.percentile_samples",
        "validate.eps_dist", "validate.v", "validate.runs", "validate.pert_samples",
        "validate.tail_target", "validate.percentile_samples",
        "trials", "seed", "out_dir", "trace", "fixed_key", "timing", "threads",
    };
    return keys;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

long parse_long(const std::string& key, const std::string& value) {
    long out = 0;
    const auto* begin = value.data();
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError(key + ": expected an integer, got '" + value + "'");
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const auto* begin = value.data();
    const auto* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError(key + ": expected an unsigned integer, got '" + value + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& value) {
    try {
        std::size_t used = 0;
        const double out = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing garbage");
        return out;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a real number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& value) {
    std::vector<double> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(key + ": empty list element");
        out.push_back(parse_double(key, item));
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

std::vector<Token> parse_token_list(const std::string& key, const std::string& value) {
    std::vector<Token> out;
    if (trim(value).empty()) return out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(key + ": empty list element");
        out.push_back(Token(parse_long(key, item)));
    }
    return out;
}

void apply_model_key(ModelSpec& spec, const std::string& field, const std::string& key,
                     const std::string& value) {
    if (field == "kind") spec.kind = value;
    else if (field == "vocab") spec.vocab = int(parse_long(key, value));
    else if (field == "order") spec.order = int(parse_long(key, value));
    else if (field == "length") spec.length = parse_long(key, value);
    else if (field == "probs") spec.probs = parse_double_list(key, value);
    else if (field == "concentration") spec.concentration = parse_double(key, value);
    else if (field == "build_seed") spec.build_seed = parse_u64(key, value);
    else if (field == "path") spec.path = value;
}

}  // namespace

std::string fnv1a64_hex(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

ExperimentConfig parse_config(const std::string& text) {
    ExperimentConfig cfg;
    cfg.raw_text = text;
    cfg.config_hash = fnv1a64_hex(text);

    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (!known_keys().count(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
        if (cfg.raw_pairs.count(key))
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        if (value.empty() && key != "prompt.tokens")
            throw ConfigError("config line " + std::to_string(lineno) + ": empty value for '" + key + "'");
        cfg.raw_pairs[key] = value;
    }

    for (const auto& [key, value] : cfg.raw_pairs) {
        const std::size_t dot = key.find('.');
        const std::string group = dot == std::string::npos ? key : key.substr(0, dot);
        const std::string field = dot == std::string::npos ? "" : key.substr(dot + 1);
        if (group == "model") apply_model_key(cfg.model, field, key, value);
        else if (group == "reference") apply_model_key(cfg.reference, field, key, value);
        else if (group == "proposal") apply_model_key(cfg.proposal, field, key, value);
        else if (key == "prompt.tokens") cfg.prompt_tokens = parse_token_list(key, value);
        else if (key == "prompt.id") cfg.prompt_id = value;
        else if (key == "quality.floor") cfg.quality_floor_nats = parse_double(key, value);
        else if (key == "quality.target_mean") cfg.quality_target_mean = parse_double(key, value);
        else if (key == "quality.calibration_samples")
            cfg.quality_calibration_samples = parse_long(key, value);
        else if (key == "perturber.span_length") cfg.span_length = parse_long(key, value);
        else if (key == "perturber.top_p") cfg.top_p = parse_double(key, value);
        else if (key == "scheme.name") cfg.scheme = value;
        else if (key == "kgw.gamma") cfg.kgw.gamma = parse_double(key, value);
        else if (key == "kgw.delta") cfg.kgw.delta = parse_double(key, value);
        else if (key == "kgw.context_width") cfg.kgw.context_width = int(parse_long(key, value));
        else if (key == "kgw.z_threshold") cfg.kgw.z_threshold = parse_double(key, value);
        else if (key == "unigram.gamma") cfg.unigram.gamma = parse_double(key, value);
        else if (key == "unigram.delta") cfg.unigram.delta = parse_double(key, value);
        else if (key == "unigram.z_threshold") cfg.unigram.z_threshold = parse_double(key, value);
        else if (key == "exp.key_sequence_length")
            cfg.exp.key_sequence_length = parse_long(key, value);
        else if (key == "exp.block_length") cfg.exp.block_length = parse_long(key, value);
        else if (key == "exp.resamples") cfg.exp.resamples = parse_long(key, value);
        else if (key == "exp.p_threshold") cfg.exp.p_threshold = parse_double(key, value);
        else if (key == "synthetic.target_fp_rate")
            cfg.synthetic.target_fp_rate = parse_double(key, value);
        else if (key == "synthetic.rejection_cap")
            cfg.synthetic.rejection_cap = parse_long(key, value);
        else if (key == "attack.steps") cfg.attack_steps = parse_long(key, value);
        else if (key == "attack.t_err") cfg.attack_t_err = parse_long(key, value);
        else if (key == "attack.delta") cfg.attack_delta = parse_double(key, value);
        else if (key == "attack.backtrack") cfg.attack_backtrack = parse_bool(key, value);
        else if (key == "attack.patience") cfg.attack_patience = parse_long(key, value);
        else if (key == "attack.stop_rule") cfg.attack_stop = value;
        else if (key == "attack.alpha") cfg.attack_alpha = parse_double(key, value);
        else if (key == "attack.z_stop") cfg.attack_z_stop = parse_double(key, value);
        else if (key == "attack.oblivious") cfg.attack_oblivious = parse_bool(key, value);
        else if (key == "theory.eps_dist") cfg.theory_eps_dist = parse_double(key, value);
        else if (key == "theory.v") cfg.theory_v = parse_double(key, value);
        else if (key == "theory.percentile_samples")
            cfg.theory_percentile_samples = parse_long(key, value);
        else if (key == "validate.eps_dist") cfg.validate_eps_dist = parse_double(key, value);
        else if (key == "validate.v") cfg.validate_v = parse_double(key, value);
        else if (key == "validate.runs") cfg.validate_runs = parse_long(key, value);
        else if (key == "validate.pert_samples") cfg.validate_pert_samples = parse_long(key, value);
        else if (key == "validate.tail_target") cfg.validate_tail_target = parse_double(key, value);
        else if (key == "validate.percentile_samples")
            cfg.validate_percentile_samples = parse_long(key, value);
        else if (key == "trials") cfg.trials = parse_long(key, value);
        else if (key == "seed") cfg.seed = parse_u64(key, value);
        else if (key == "out_dir") cfg.out_dir = value;
        else if (key == "trace") cfg.trace = parse_bool(key, value);
        else if (key == "fixed_key") cfg.fixed_key = parse_bool(key, value);
        else if (key == "timing") cfg.timing = parse_bool(key, value);
        else if (key == "threads") cfg.threads = int(parse_long(key, value));
        else throw ConfigError("unhandled config key '" + key + "'");
    }

    cfg.validate();
    return cfg;
}

void ExperimentConfig::validate() const {
    const auto check_model = [](const std::string& name, const ModelSpec& m, bool allow_generator) {
        static const std::set<std::string> kinds = {"uniform", "iid", "random", "file", "generator"};
        if (!kinds.count(m.kind)) throw ConfigError(name + ".kind: unknown kind '" + m.kind + "'");
        if (m.kind == "generator" && !allow_generator)
            throw ConfigError(name + ".kind: 'generator' alias is not allowed here");
        if (m.kind != "file" && m.kind != "generator") {
            if (m.vocab < 2) throw ConfigError(name + ".vocab: must be >= 2");
            if (m.order < 1) throw ConfigError(name + ".order: must be >= 1");
            if (m.length < 1) throw ConfigError(name + ".length: must be >= 1");
        }
        if (m.kind == "iid" && m.probs.empty())
            throw ConfigError(name + ".probs: required for kind iid");
        if (m.kind == "file" && m.path.empty())
            throw ConfigError(name + ".path: required for kind file");
        if (m.kind == "random" && !(m.concentration > 0.0))
            throw ConfigError(name + ".concentration: must be > 0");
    };
    check_model("model", model, false);
    check_model("reference", reference, true);
    check_model("proposal", proposal, true);

    for (Token t : prompt_tokens)
        if (t < 0) throw ConfigError("prompt.tokens: negative token index");

    if (!(quality_floor_nats < 0.0)) throw ConfigError("quality.floor: must be < 0");
    if (!(quality_target_mean > 0.0 && quality_target_mean < 1.0))
        throw ConfigError("quality.target_mean: outside (0,1)");
    if (quality_calibration_samples < 100)
        throw ConfigError("quality.calibration_samples: must be >= 100");

    if (span_length < 1) throw ConfigError("perturber.span_length: must be >= 1");
    if (span_length > model.length && model.kind != "file")
        throw ConfigError("perturber.span_length: exceeds model.length");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("perturber.top_p: outside (0,1]");

    static const std::set<std::string> scheme_names = {"kgw", "unigram", "exp", "synthetic"};
    if (!scheme_names.count(scheme)) throw ConfigError("scheme.name: unknown scheme '" + scheme + "'");

    static const std::set<std::string> stops = {"fixed_steps", "replacement_fraction",
                                                "known_detector_z"};
    if (!stops.count(attack_stop)) throw ConfigError("attack.stop_rule: unknown rule '" + attack_stop + "'");
    if (attack_steps < 0) throw ConfigError("attack.steps: must be >= 0");
    if (attack_t_err < 0 || attack_t_err > attack_steps)
        throw ConfigError("attack.t_err: outside [0, attack.steps]");
    if (!(attack_delta >= 0.0)) throw ConfigError("attack.delta: must be >= 0");
    if (attack_patience < 1) throw ConfigError("attack.patience: must be >= 1");
    if (!(attack_alpha > 0.0 && attack_alpha <= 1.0)) throw ConfigError("attack.alpha: outside (0,1]");
    if (attack_stop == "known_detector_z" && attack_oblivious)
        throw ConfigError("attack.stop_rule: known_detector_z requires attack.oblivious = false");

    for (auto [name, v] : {std::pair<const char*, double>{"theory.eps_dist", theory_eps_dist},
                           {"validate.eps_dist", validate_eps_dist}})
        if (!(v > 0.0 && v <= 1.0)) throw ConfigError(std::string(name) + ": outside (0,1]");
    for (auto [name, v] : {std::pair<const char*, double>{"theory.v", theory_v},
                           {"validate.v", validate_v}})
        if (!(v >= 0.0 && v <= 100.0)) throw ConfigError(std::string(name) + ": outside [0,100]");
    if (validate_runs < 100) throw ConfigError("validate.runs: must be >= 100");
    if (validate_pert_samples < 100) throw ConfigError("validate.pert_samples: must be >= 100");
    if (!(validate_tail_target > 0.0 && validate_tail_target < 1.0))
        throw ConfigError("validate.tail_target: outside (0,1)");
    if (theory_percentile_samples < 100) throw ConfigError("theory.percentile_samples: must be >= 100");
    if (validate_percentile_samples < 100)
        throw ConfigError("validate.percentile_samples: must be >= 100");

    if (trials < 1) throw ConfigError("trials: must be >= 1");
    if (threads < 1) throw ConfigError("threads: must be >= 1");
    if (out_dir.empty()) throw ConfigError("out_dir: must not be empty");

    if (scheme == "kgw") kgw.validate();
    if (scheme == "unigram") unigram.validate();
    if (scheme == "exp") {
        exp.validate();
        if (model.kind != "file" && exp.key_sequence_length < model.length)
            throw ConfigError("exp.key_sequence_length: must be >= model.length");
    }
    if (scheme == "synthetic") synthetic.validate();
}

ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

MarkovModel build_model(const ModelSpec& spec, const MarkovModel* generator) {
    if (spec.kind == "generator") {
        if (!generator) throw ConfigError("model kind 'generator' has no generator to alias");
        return *generator;
    }
    if (spec.kind == "uniform") return uniform_model(Vocabulary(spec.vocab), spec.order, spec.length);
    if (spec.kind == "iid") return iid_model(Vocabulary(spec.vocab), spec.length, spec.probs);
    if (spec.kind == "random") {
        RngStream rng(spec.build_seed, "model-build");
        return random_model(Vocabulary(spec.vocab), spec.order, spec.length, spec.concentration, rng);
    }
    if (spec.kind == "file") return load_model_file(spec.path);
    throw ConfigError("unknown model kind '" + spec.kind + "'");
}

}  // namespace wmlab::harness
