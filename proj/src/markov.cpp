#include "wmlab/markov.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace wmlab {

namespace {

std::size_t pow_size(int base, int exp) {
    std::size_t r = 1;
    for (int i = 0; i < exp; ++i) {
        if (r > std::size_t(1) << 40) throw std::invalid_argument("MarkovModel: context space too large");
        r *= std::size_t(base);
    }
    return r;
}

std::string context_name(int context_len, std::size_t code, int vocab) {
    std::vector<Token> ctx(context_len);
    for (int i = context_len - 1; i >= 0; --i) {
        ctx[i] = Token(code % vocab);
        code /= vocab;
    }
    std::string s = "(";
    for (int i = 0; i < context_len; ++i) s += (i ? "," : "") + std::to_string(ctx[i]);
    return s + ")";
}

}  // namespace

MarkovModel::MarkovModel(Vocabulary vocab, int order_, long generation_length_)
    : vocabulary(vocab), order(order_), generation_length(generation_length_) {
    if (order < 1) throw std::invalid_argument("MarkovModel: order must be >= 1");
    if (generation_length < 1) throw std::invalid_argument("MarkovModel: generation_length must be >= 1");
    tables.resize(std::size_t(order) + 1);
    row_defined.resize(std::size_t(order) + 1);
    for (int len = 0; len <= order; ++len) {
        const std::size_t rows = pow_size(vocabulary.size, len);
        tables[len].assign(rows * std::size_t(vocabulary.size), 0.0);
        row_defined[len].assign(rows, false);
    }
}

std::size_t MarkovModel::rows_for_length(int context_len) const {
    return row_defined.at(std::size_t(context_len)).size();
}

void MarkovModel::set_row(int context_len, std::size_t context_code, std::vector<double> probs) {
    if (context_len < 0 || context_len > order)
        throw std::invalid_argument("set_row: context length outside [0, order]");
    if (context_code >= rows_for_length(context_len))
        throw std::invalid_argument("set_row: context code out of range");
    if (probs.size() != std::size_t(vocabulary.size))
        throw std::invalid_argument("set_row: row size != vocabulary size");
    double sum = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) throw std::invalid_argument("set_row: negative probability");
        sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-12)
        throw std::invalid_argument("set_row: row sums to " + std::to_string(sum) + ", not 1");
    const std::size_t base = context_code * std::size_t(vocabulary.size);
    for (int v = 0; v < vocabulary.size; ++v) tables[context_len][base + v] = probs[v];
    row_defined[context_len][context_code] = true;
}

void MarkovModel::set_row(const std::vector<Token>& context, std::vector<double> probs) {
    set_row(int(context.size()), context_code(context, vocabulary.size), std::move(probs));
}

bool MarkovModel::has_row(int context_len, std::size_t context_code) const {
    return row_defined.at(std::size_t(context_len)).at(context_code);
}

const double* MarkovModel::row(int context_len, std::size_t context_code) const {
    if (!has_row(context_len, context_code))
        throw std::runtime_error("MarkovModel: no transition row for context " +
                                 context_name(context_len, context_code, vocabulary.size));
    return tables[context_len].data() + context_code * std::size_t(vocabulary.size);
}

const double* MarkovModel::row_for(const std::vector<Token>& context) const {
    return row(int(context.size()), context_code(context, vocabulary.size));
}

std::size_t MarkovModel::context_code(const std::vector<Token>& context, int vocab) {
    std::size_t code = 0;
    for (Token t : context) {
        if (t < 0 || t >= vocab) throw std::invalid_argument("context_code: token out of range");
        code = code * std::size_t(vocab) + std::size_t(t);
    }
    return code;
}

void MarkovModel::validate() const {
    for (int len = 0; len <= order; ++len)
        for (std::size_t c = 0; c < rows_for_length(len); ++c)
            row(len, c);
}

MarkovModel uniform_model(Vocabulary vocab, int order, long generation_length) {
    MarkovModel m(vocab, order, generation_length);
    const std::vector<double> uniform(std::size_t(vocab.size), 1.0 / double(vocab.size));
    for (int len = 0; len <= order; ++len)
        for (std::size_t c = 0; c < m.rows_for_length(len); ++c) m.set_row(len, c, uniform);
    return m;
}

MarkovModel iid_model(Vocabulary vocab, long generation_length, const std::vector<double>& probs) {
    MarkovModel m(vocab, 1, generation_length);
    for (int len = 0; len <= 1; ++len)
        for (std::size_t c = 0; c < m.rows_for_length(len); ++c) m.set_row(len, c, probs);
    return m;
}

MarkovModel random_model(Vocabulary vocab, int order, long generation_length,
                         double concentration, RngStream& rng) {
    MarkovModel m(vocab, order, generation_length);
    for (int len = 0; len <= order; ++len) {
        for (std::size_t c = 0; c < m.rows_for_length(len); ++c) {
            std::vector<double> row(static_cast<std::size_t>(vocab.size));
            double sum = 0.0;
            for (auto& p : row) {
                p = rng.gamma(concentration);
                sum += p;
            }
            for (auto& p : row) p /= sum;
            // Renormalize exactly enough for the 1e-12 gate.
            double s2 = 0.0;
            for (double p : row) s2 += p;
            for (auto& p : row) p /= s2;
            m.set_row(len, c, row);
        }
    }
    return m;
}

std::string save_model(const MarkovModel& model) {
    std::ostringstream out;
    out.precision(17);
    out << "wmlab-markov 1\n";
    out << "vocab " << model.vocab_size() << "\n";
    out << "order " << model.order << "\n";
    out << "length " << model.generation_length << "\n";
    for (int len = 0; len <= model.order; ++len) {
        for (std::size_t c = 0; c < model.rows_for_length(len); ++c) {
            out << "row " << len << " " << c;
            const double* r = model.row(len, c);
            for (int v = 0; v < model.vocab_size(); ++v) out << " " << r[v];
            out << "\n";
        }
    }
    return out.str();
}

MarkovModel load_model(const std::string& text) {
    std::istringstream in(text);
    std::string magic;
    int version = 0;
    if (!(in >> magic >> version) || magic != "wmlab-markov" || version != 1)
        throw std::runtime_error("load_model: not a wmlab-markov v1 file");
    std::string key;
    int vocab = 0, order = 0;
    long length = 0;
    if (!(in >> key >> vocab) || key != "vocab") throw std::runtime_error("load_model: missing vocab");
    if (!(in >> key >> order) || key != "order") throw std::runtime_error("load_model: missing order");
    if (!(in >> key >> length) || key != "length") throw std::runtime_error("load_model: missing length");
    MarkovModel m(Vocabulary(vocab), order, length);
    while (in >> key) {
        if (key != "row") throw std::runtime_error("load_model: unexpected token '" + key + "'");
        int len = 0;
        std::size_t code = 0;
        if (!(in >> len >> code)) throw std::runtime_error("load_model: bad row header");
        std::vector<double> probs(static_cast<std::size_t>(vocab));
        for (auto& p : probs)
            if (!(in >> p)) throw std::runtime_error("load_model: truncated row");
        m.set_row(len, code, std::move(probs));
    }
    m.validate();
    return m;
}

void save_model_file(const MarkovModel& model, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_model_file: cannot open " + path);
    out << save_model(model);
}

MarkovModel load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_model_file: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return load_model(buf.str());
}

namespace {

// Context for position `pos` of the generated suffix: the last
// min(order, available) tokens of prompt || generated-so-far.
std::vector<Token> running_context(const MarkovModel& model, const std::vector<Token>& prompt,
                                   const std::vector<Token>& generated, std::size_t pos) {
    std::vector<Token> ctx;
    const std::size_t have = prompt.size() + pos;
    const std::size_t want = std::min<std::size_t>(std::size_t(model.order), have);
    ctx.reserve(want);
    for (std::size_t i = have - want; i < have; ++i)
        ctx.push_back(i < prompt.size() ? prompt[i] : generated[i - prompt.size()]);
    return ctx;
}

}  // namespace

TokenSequence sample(const MarkovModel& model, const Prompt& prompt, long length, RngStream& rng) {
    if (length < 1) throw std::invalid_argument("sample: length must be >= 1");
    for (Token t : prompt.tokens)
        if (!model.vocabulary.contains(t)) throw std::invalid_argument("sample: prompt token out of range");
    std::vector<Token> out;
    out.reserve(std::size_t(length));
    std::vector<double> weights(std::size_t(model.vocab_size()));
    for (long pos = 0; pos < length; ++pos) {
        const auto ctx = running_context(model, prompt.tokens, out, std::size_t(pos));
        const double* r = model.row_for(ctx);
        for (int v = 0; v < model.vocab_size(); ++v) weights[std::size_t(v)] = r[v];
        out.push_back(Token(rng.categorical(weights)));
    }
    return TokenSequence(std::move(out));
}

double log_likelihood(const MarkovModel& model, const Prompt& prompt, const TokenSequence& y,
                      double floor_log_prob) {
    if (y.tokens.empty()) throw std::invalid_argument("log_likelihood: empty sequence");
    double total = 0.0;
    for (std::size_t pos = 0; pos < y.tokens.size(); ++pos) {
        const Token t = y.tokens[pos];
        if (!model.vocabulary.contains(t))
            throw std::invalid_argument("log_likelihood: token out of range");
        const auto ctx = running_context(model, prompt.tokens, y.tokens, pos);
        const double p = model.row_for(ctx)[t];
        const double lp = p > 0.0 ? std::log(p) : floor_log_prob;
        total += std::max(lp, floor_log_prob);
    }
    return total;
}

}  // namespace wmlab
