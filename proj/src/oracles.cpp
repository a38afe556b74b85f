#include "wmlab/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace wmlab {

QualityScore ReferenceQuality::operator()(const Prompt& x, const TokenSequence& y) const {
    if (y.tokens.empty()) throw std::invalid_argument("ReferenceQuality: empty sequence");
    if (!(scale > 0.0)) throw std::runtime_error("ReferenceQuality: scale not calibrated");
    const double total = log_likelihood(reference_model, x, y, floor_log_prob);
    const double mean = total / double(y.tokens.size());
    return QualityScore(clamp01(scale * (mean - floor_log_prob)));
}

double calibrate_quality(ReferenceQuality& q, const Prompt& x, long samples, double target_mean,
                         RngStream& rng) {
    if (samples < 1) throw std::invalid_argument("calibrate_quality: samples must be >= 1");
    if (!(target_mean > 0.0 && target_mean < 1.0))
        throw std::invalid_argument("calibrate_quality: target_mean outside (0,1)");
    double acc = 0.0;
    const long T = q.reference_model.generation_length;
    for (long i = 0; i < samples; ++i) {
        RngStream s = rng.substream("calib/" + std::to_string(i));
        const TokenSequence y = sample(q.reference_model, x, T, s);
        acc += log_likelihood(q.reference_model, x, y, q.floor_log_prob) / double(T);
    }
    const double mean_loglik = acc / double(samples);
    if (!(mean_loglik > q.floor_log_prob))
        throw std::runtime_error("calibrate_quality: mean log-likelihood at or below the floor");
    q.scale = target_mean / (mean_loglik - q.floor_log_prob);
    return mean_loglik;
}

void SpanPerturber::validate() const {
    if (span_length < 1) throw std::invalid_argument("SpanPerturber: span_length must be >= 1");
    if (span_length > proposal_model.generation_length)
        throw std::invalid_argument("SpanPerturber: span_length exceeds generation length");
    if (!(top_p > 0.0 && top_p <= 1.0))
        throw std::invalid_argument("SpanPerturber: top_p outside (0,1]");
}

std::vector<double> top_p_truncate(const double* row, int vocab, double top_p) {
    std::vector<int> order(static_cast<std::size_t>(vocab));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return row[a] > row[b]; });
    std::vector<double> kept(std::size_t(vocab), 0.0);
    double cum = 0.0;
    for (int v : order) {
        if (row[v] <= 0.0) break;
        kept[std::size_t(v)] = row[v];
        cum += row[v];
        if (cum >= top_p - 1e-15) break;
    }
    if (!(cum > 0.0)) throw std::runtime_error("top_p_truncate: empty support row");
    for (auto& p : kept) p /= cum;
    return kept;
}

namespace {

std::vector<Token> left_context(const MarkovModel& model, const std::vector<Token>& prompt,
                                const std::vector<Token>& y, std::size_t pos) {
    std::vector<Token> ctx;
    const std::size_t have = prompt.size() + pos;
    const std::size_t want = std::min<std::size_t>(std::size_t(model.order), have);
    ctx.reserve(want);
    for (std::size_t i = have - want; i < have; ++i)
        ctx.push_back(i < prompt.size() ? prompt[i] : y[i - prompt.size()]);
    return ctx;
}

}  // namespace

TokenSequence perturb(const SpanPerturber& p, const Prompt& x, const TokenSequence& y, RngStream& rng) {
    p.validate();
    const long T = long(y.tokens.size());
    if (T < p.span_length) throw std::invalid_argument("perturb: sequence shorter than span");
    const long starts = T - p.span_length + 1;
    const long start = long(rng.uniform_below(std::uint64_t(starts)));
    TokenSequence out = y;
    for (long i = start; i < start + p.span_length; ++i) {
        const auto ctx = left_context(p.proposal_model, x.tokens, out.tokens, std::size_t(i));
        const double* row = p.proposal_model.row_for(ctx);
        const auto kept = top_p_truncate(row, p.proposal_model.vocab_size(), p.top_p);
        out.tokens[std::size_t(i)] = Token(rng.categorical(kept));
    }
    return out;
}

std::size_t EnumeratedSpace::index_of(const TokenSequence& y) const {
    if (long(y.tokens.size()) != length) throw std::invalid_argument("index_of: wrong length");
    std::size_t code = 0;
    for (Token t : y.tokens) {
        if (!vocab.contains(t)) throw std::invalid_argument("index_of: token out of range");
        code = code * std::size_t(vocab.size) + std::size_t(t);
    }
    return code;
}

EnumeratedSpace enumerate_outputs(Vocabulary vocab, long length, std::size_t cap) {
    if (length < 1) throw std::invalid_argument("enumerate_outputs: length must be >= 1");
    double approx = 1.0;
    for (long i = 0; i < length; ++i) approx *= double(vocab.size);
    if (approx > double(cap))
        throw std::runtime_error("enumerate_outputs: state space " + std::to_string(approx) +
                                 " exceeds cap " + std::to_string(cap));
    const auto total = std::size_t(approx + 0.5);
    EnumeratedSpace space{vocab, length, {}};
    space.outputs.reserve(total);
    std::vector<Token> cur(std::size_t(length), 0);
    for (std::size_t i = 0; i < total; ++i) {
        space.outputs.emplace_back(cur);
        for (long pos = length - 1; pos >= 0; --pos) {
            if (++cur[std::size_t(pos)] < vocab.size) break;
            cur[std::size_t(pos)] = 0;
        }
    }
    return space;
}

namespace {

// Depth-first enumeration over span fills; probability mass accumulates on
// the fully filled sequences.
void kernel_fill(const SpanPerturber& p, const Prompt& x, std::vector<Token>& work, long start,
                 long offset, double prob, const EnumeratedSpace& space, std::vector<double>& out) {
    if (offset == p.span_length) {
        out[space.index_of(TokenSequence(work))] += prob;
        return;
    }
    const std::size_t pos = std::size_t(start + offset);
    const auto ctx = left_context(p.proposal_model, x.tokens, work, pos);
    const double* row = p.proposal_model.row_for(ctx);
    const auto kept = top_p_truncate(row, p.proposal_model.vocab_size(), p.top_p);
    const Token saved = work[pos];
    for (int v = 0; v < p.proposal_model.vocab_size(); ++v) {
        if (kept[std::size_t(v)] <= 0.0) continue;
        work[pos] = Token(v);
        kernel_fill(p, x, work, start, offset + 1, prob * kept[std::size_t(v)], space, out);
    }
    work[pos] = saved;
}

}  // namespace

std::vector<double> perturbation_kernel(const SpanPerturber& p, const Prompt& x,
                                        const TokenSequence& y, const EnumeratedSpace& space) {
    p.validate();
    if (long(y.tokens.size()) != space.length)
        throw std::invalid_argument("perturbation_kernel: sequence length != space length");
    if (space.size() > kEnumerationCap)
        throw std::runtime_error("perturbation_kernel: space exceeds enumeration cap");
    const long T = space.length;
    const long starts = T - p.span_length + 1;
    std::vector<double> out(space.size(), 0.0);
    std::vector<Token> work = y.tokens;
    for (long s = 0; s < starts; ++s)
        kernel_fill(p, x, work, s, 0, 1.0 / double(starts), space, out);
    return out;
}

}  // namespace wmlab
