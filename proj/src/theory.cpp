#include "wmlab/theory.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <stdexcept>

#include "wmlab/schemes.hpp"
#include "wmlab/stats.hpp"

namespace wmlab::theory {

double PerturbationGraph::out_weight(std::size_t i) const {
    const std::size_t N = n();
    double s = 0.0;
    for (std::size_t j = 0; j < N; ++j) s += weights[i * N + j];
    return s;
}

TransitionMatrix transition_matrix(const PerturbationGraph& g) {
    const std::size_t N = g.n();
    TransitionMatrix P{N, std::vector<double>(N * N, 0.0)};
    for (std::size_t i = 0; i < N; ++i) {
        const double out = g.out_weight(i);
        if (!(out > 0.0))
            throw std::runtime_error("transition_matrix: vertex " + std::to_string(i) +
                                     " has zero out-weight");
        for (std::size_t j = 0; j < N; ++j) P.p[i * N + j] = g.weights[i * N + j] / out;
    }
    return P;
}

PerturbationGraph build_quality_graph(const std::function<std::vector<double>(std::size_t)>& kernel_row,
                                      const std::vector<double>& qualities, double quality_floor,
                                      const std::vector<TokenSequence>& states,
                                      const std::string& prompt_id) {
    if (qualities.size() != states.size())
        throw std::invalid_argument("build_quality_graph: qualities/states size mismatch");
    std::vector<std::size_t> retained;
    for (std::size_t i = 0; i < states.size(); ++i)
        if (qualities[i] >= quality_floor) retained.push_back(i);
    if (retained.empty())
        throw std::runtime_error("build_quality_graph: no outputs at quality " +
                                 std::to_string(quality_floor));
    if (retained.size() > kDenseGraphCap)
        throw std::runtime_error("build_quality_graph: " + std::to_string(retained.size()) +
                                 " vertices exceed the dense cap " + std::to_string(kDenseGraphCap));

    PerturbationGraph g;
    g.quality_floor = quality_floor;
    g.prompt_id = prompt_id;
    g.space_index = retained;
    g.vertices.reserve(retained.size());
    for (std::size_t idx : retained) g.vertices.push_back(states[idx]);

    const std::size_t N = retained.size();
    g.weights.assign(N * N, 0.0);
    for (std::size_t i = 0; i < N; ++i) {
        const std::vector<double> row = kernel_row(retained[i]);
        if (row.size() != states.size())
            throw std::invalid_argument("build_quality_graph: kernel row has wrong size");
        for (std::size_t j = 0; j < N; ++j) g.weights[i * N + j] = row[retained[j]];
    }
    return g;
}

PerturbationGraph build_quality_graph(const SpanPerturber& p, const ReferenceQuality& quality,
                                      const Prompt& x, double quality_floor,
                                      const EnumeratedSpace& space) {
    std::vector<double> qualities(space.size());
    for (std::size_t i = 0; i < space.size(); ++i)
        qualities[i] = quality(x, space.outputs[i]).value;
    return build_quality_graph(
        [&](std::size_t i) { return perturbation_kernel(p, x, space.outputs[i], space); },
        qualities, quality_floor, space.outputs, x.identifier);
}

namespace {

// Reachability over positive weights, forward or transposed.
std::vector<bool> reachable(const PerturbationGraph& g, bool transpose) {
    const std::size_t N = g.n();
    std::vector<bool> seen(N, false);
    std::vector<std::size_t> stack{0};
    seen[0] = true;
    while (!stack.empty()) {
        const std::size_t u = stack.back();
        stack.pop_back();
        for (std::size_t v = 0; v < N; ++v) {
            const double w = transpose ? g.weight(v, u) : g.weight(u, v);
            if (w > 0.0 && !seen[v]) {
                seen[v] = true;
                stack.push_back(v);
            }
        }
    }
    return seen;
}

}  // namespace

bool is_irreducible(const PerturbationGraph& g) {
    if (g.n() == 0) throw std::invalid_argument("is_irreducible: empty graph");
    for (bool b : reachable(g, false))
        if (!b) return false;
    for (bool b : reachable(g, true))
        if (!b) return false;
    return true;
}

bool is_aperiodic(const PerturbationGraph& g) {
    if (!is_irreducible(g))
        throw std::invalid_argument("is_aperiodic: graph is reducible; check is_irreducible first");
    const std::size_t N = g.n();
    if (N == 1) return g.weight(0, 0) > 0.0;
    // BFS levels from vertex 0; the period is gcd over edges (u,v) of
    // level(u) + 1 - level(v).
    std::vector<long> level(N, -1);
    std::vector<std::size_t> queue{0};
    level[0] = 0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
        const std::size_t u = queue[head];
        for (std::size_t v = 0; v < N; ++v)
            if (g.weight(u, v) > 0.0 && level[v] < 0) {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
    }
    long period = 0;
    for (std::size_t u = 0; u < N; ++u)
        for (std::size_t v = 0; v < N; ++v)
            if (g.weight(u, v) > 0.0)
                period = std::gcd(period, std::labs(level[u] + 1 - level[v]));
    return period == 1;
}

std::vector<double> stationary_distribution(const TransitionMatrix& P) {
    const std::size_t N = P.n;
    if (N == 0) throw std::invalid_argument("stationary_distribution: empty matrix");
    for (std::size_t i = 0; i < N; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < N; ++j) s += P.at(i, j);
        if (std::fabs(s - 1.0) > 1e-10)
            throw std::invalid_argument("stationary_distribution: row " + std::to_string(i) +
                                        " sums to " + std::to_string(s));
    }
    std::vector<double> pi(N, 1.0 / double(N));
    std::vector<double> next(N);
    constexpr long kCap = 1000000;
    for (long it = 0; it < kCap; ++it) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            const double w = pi[i];
            if (w == 0.0) continue;
            const double* row = P.p.data() + i * N;
            for (std::size_t j = 0; j < N; ++j) next[j] += w * row[j];
        }
        double norm = 0.0;
        for (double v : next) norm += v;
        for (auto& v : next) v /= norm;
        double residual = 0.0;
        for (std::size_t j = 0; j < N; ++j) residual += std::fabs(next[j] - pi[j]);
        pi.swap(next);
        if (residual <= 1e-12) return pi;
    }
    throw std::runtime_error(
        "stationary_distribution: no convergence within 1e6 sweeps; "
        "the chain is likely reducible or periodic");
}

namespace {

// Roots of a monic polynomial via Durand-Kerner; degree <= 4 in practice.
std::vector<std::complex<double>> poly_roots(const std::vector<double>& coeffs) {
    const std::size_t deg = coeffs.size();
    std::vector<std::complex<double>> roots(deg);
    std::complex<double> seed(0.4, 0.9);
    std::complex<double> z(1.0, 0.0);
    for (auto& r : roots) {
        z *= seed;
        r = z;
    }
    const auto eval = [&](std::complex<double> v) {
        std::complex<double> acc(1.0, 0.0);
        for (std::size_t i = 0; i < deg; ++i) acc = acc * v + coeffs[deg - 1 - i];
        return acc;
    };
    for (int iter = 0; iter < 500; ++iter) {
        double moved = 0.0;
        for (std::size_t i = 0; i < deg; ++i) {
            std::complex<double> denom(1.0, 0.0);
            for (std::size_t j = 0; j < deg; ++j)
                if (j != i) denom *= roots[i] - roots[j];
            if (std::abs(denom) < 1e-300) denom = 1e-300;
            const std::complex<double> delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            moved = std::max(moved, std::abs(delta));
        }
        if (moved < 1e-14) break;
    }
    return roots;
}

struct FitResult {
    double g_estimate = 0.0;
    double relative_residual = 1.0;
};

// Least-squares fit of x_m + a_{m-1} x_{m-1} + ... + a_0 x_0 = 0 over the
// Krylov window; the dominant eigenvalue moduli are the roots of
// lambda^m + a_{m-1} lambda^{m-1} + ... + a_0.
FitResult fit_order(const std::vector<std::vector<double>>& window, std::size_t m) {
    const std::size_t n = window[0].size();
    const std::size_t base = window.size() - 1 - m;
    // Normal equations G a = -b with G(r,c) = <x_{base+r}, x_{base+c}>.
    std::vector<double> G(m * m, 0.0), b(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = r; c < m; ++c) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += window[base + r][i] * window[base + c][i];
            G[r * m + c] = G[c * m + r] = dot;
        }
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += window[base + r][i] * window[base + m][i];
        b[r] = dot;
    }
    // Gaussian elimination with partial pivoting on the tiny system.
    std::vector<double> a(m, 0.0);
    {
        std::vector<double> A(G);
        std::vector<double> rhs(m);
        for (std::size_t i = 0; i < m; ++i) rhs[i] = -b[i];
        for (std::size_t col = 0; col < m; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < m; ++r)
                if (std::fabs(A[r * m + col]) > std::fabs(A[piv * m + col])) piv = r;
            if (std::fabs(A[piv * m + col]) < 1e-300) return {0.0, 1.0};
            if (piv != col) {
                for (std::size_t c = 0; c < m; ++c) std::swap(A[col * m + c], A[piv * m + c]);
                std::swap(rhs[col], rhs[piv]);
            }
            for (std::size_t r = col + 1; r < m; ++r) {
                const double f = A[r * m + col] / A[col * m + col];
                for (std::size_t c = col; c < m; ++c) A[r * m + c] -= f * A[col * m + c];
                rhs[r] -= f * rhs[col];
            }
        }
        for (std::size_t col = m; col-- > 0;) {
            double v = rhs[col];
            for (std::size_t c = col + 1; c < m; ++c) v -= A[col * m + c] * a[c];
            a[col] = v / A[col * m + col];
        }
    }
    // Residual of the fitted recurrence.
    double res2 = 0.0, ref2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double v = window[base + m][i];
        for (std::size_t r = 0; r < m; ++r) v += a[r] * window[base + r][i];
        res2 += v * v;
        ref2 += window[base + m][i] * window[base + m][i];
    }
    double g = 0.0;
    for (const auto& root : poly_roots(a)) g = std::max(g, std::abs(root));
    const double rel = ref2 > 0.0 ? std::sqrt(res2 / ref2) : 0.0;
    return {g, rel};
}

}  // namespace

double spectral_gap(const TransitionMatrix& P, const std::vector<double>& pi) {
    const std::size_t N = P.n;
    if (N == 0 || pi.size() != N) throw std::invalid_argument("spectral_gap: bad inputs");
    if (N > kEigenCap)
        throw std::runtime_error("spectral_gap: n exceeds eigen cap " + std::to_string(kEigenCap));
    if (N == 1) return 0.0;

    // Deflated operator applied to a column vector: y = P^T x - pi * sum(x).
    const auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
        std::fill(y.begin(), y.end(), 0.0);
        double total = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double w = x[i];
            total += w;
            if (w == 0.0) continue;
            const double* row = P.p.data() + i * N;
            for (std::size_t j = 0; j < N; ++j) y[j] += w * row[j];
        }
        for (std::size_t j = 0; j < N; ++j) y[j] -= pi[j] * total;
    };

    // Deterministic start vector with no special alignment.
    std::vector<double> x(N);
    for (std::size_t i = 0; i < N; ++i)
        x[i] = 0.5 + 0.25 * std::sin(1.0 + 2.7 * double(i)) + 0.125 * std::cos(0.3 * double(i * i % 97));
    double nx = std::sqrt(std::inner_product(x.begin(), x.end(), x.begin(), 0.0));
    for (auto& v : x) v /= nx;

    // Window of consecutive raw iterates, rescaled as a block when large.
    std::vector<std::vector<double>> window{x};
    constexpr std::size_t kWindow = 5;  // supports fits up to order 4
    constexpr long kMaxIters = 200000;
    double last_accepted = -1.0;
    double best_g = 0.0, best_res = 1.0;
    long stable = 0;

    for (long it = 0; it < kMaxIters; ++it) {
        std::vector<double> y(N);
        apply(window.back(), y);
        const double ny = std::sqrt(std::inner_product(y.begin(), y.end(), y.begin(), 0.0));
        if (ny < 1e-280) return 0.0;  // operator is (numerically) nilpotent on x
        window.push_back(std::move(y));
        if (window.size() > kWindow) window.erase(window.begin());

        if (window.size() < 2) continue;
        // Keep magnitudes in range: rescale the whole window together so the
        // recurrence structure is preserved.
        double maxnorm = 0.0;
        for (const auto& w : window) {
            const double wn = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
            maxnorm = std::max(maxnorm, wn);
        }
        if (maxnorm > 1e100 || maxnorm < 1e-100) {
            for (auto& w : window)
                for (auto& v : w) v /= maxnorm;
        }

        // The smallest adequate fit order wins: higher orders on an already
        // captured subspace produce tiny residuals with meaningless extra
        // roots, so orders are only escalated while the fit stays poor.
        FitResult accepted{0.0, 1.0};
        bool adequate = false;
        for (std::size_t m = 1; m <= std::min<std::size_t>(4, window.size() - 1); ++m) {
            const FitResult fit = fit_order(window, m);
            if (fit.relative_residual < 1e-12) {
                accepted = fit;
                adequate = true;
                break;
            }
            if (!adequate && fit.relative_residual < accepted.relative_residual) accepted = fit;
        }
        if (accepted.relative_residual < best_res) {
            best_res = accepted.relative_residual;
            best_g = accepted.g_estimate;
        }
        if (adequate) {
            if (std::fabs(accepted.g_estimate - last_accepted) < 1e-10) {
                if (++stable >= 3) return accepted.g_estimate;
            } else {
                stable = 0;
            }
            last_accepted = accepted.g_estimate;
        }
    }
    if (best_res < 1e-6) return best_g;
    throw std::runtime_error("spectral_gap: power iteration did not converge");
}

double mixing_time_bound(double gap, double pi_min, double eps_dist) {
    if (!(gap >= 0.0 && gap < 1.0)) throw std::invalid_argument("mixing_time_bound: need 0 <= g < 1");
    if (!(pi_min > 0.0 && pi_min <= 1.0))
        throw std::invalid_argument("mixing_time_bound: pi_min outside (0,1]");
    if (!(eps_dist > 0.0 && eps_dist <= 1.0))
        throw std::invalid_argument("mixing_time_bound: eps_dist outside (0,1]");
    return (1.0 / (1.0 - gap)) * std::log(1.0 / (pi_min * eps_dist));
}

double tv_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("tv_distance: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return 0.5 * s;
}

long empirical_mixing_time(const TransitionMatrix& P, const std::vector<double>& pi,
                           double eps_dist, long cap) {
    const std::size_t N = P.n;
    if (N == 0 || pi.size() != N) throw std::invalid_argument("empirical_mixing_time: bad inputs");
    if (!(eps_dist > 0.0 && eps_dist <= 1.0))
        throw std::invalid_argument("empirical_mixing_time: eps_dist outside (0,1]");

    // Row i of P^t is the distribution after t steps started from e_i.
    std::vector<double> M = P.p;
    std::vector<double> next(N * N);
    for (long t = 1; t <= cap; ++t) {
        double worst = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < N; ++j) s += std::fabs(M[i * N + j] - pi[j]);
            worst = std::max(worst, 0.5 * s);
        }
        if (worst <= eps_dist) return t;
        // M <- M * P
        std::fill(next.begin(), next.end(), 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            const double* mrow = M.data() + i * N;
            double* nrow = next.data() + i * N;
            for (std::size_t l = 0; l < N; ++l) {
                const double w = mrow[l];
                if (w == 0.0) continue;
                const double* prow = P.p.data() + l * N;
                for (std::size_t j = 0; j < N; ++j) nrow[j] += w * prow[j];
            }
        }
        M.swap(next);
    }
    throw std::runtime_error("empirical_mixing_time: exceeded step cap");
}

SpectralReport spectral_report(const PerturbationGraph& g, double eps_dist) {
    SpectralReport rep;
    rep.irreducible = is_irreducible(g);
    if (rep.irreducible) rep.aperiodic = is_aperiodic(g);
    if (!rep.irreducible || !rep.aperiodic) return rep;
    const TransitionMatrix P = transition_matrix(g);
    rep.stationary = stationary_distribution(P);
    rep.pi_min = *std::min_element(rep.stationary.begin(), rep.stationary.end());
    rep.gap = spectral_gap(P, rep.stationary);
    if (rep.gap < 1.0) rep.mixing_bound = mixing_time_bound(rep.gap, rep.pi_min, eps_dist);
    rep.empirical_mixing = empirical_mixing_time(P, rep.stationary, eps_dist);
    return rep;
}

double quality_percentile(const schemes::WatermarkScheme& scheme, const Prompt& x,
                          long generation_length, const QualityOracle& quality, double v,
                          long samples, RngStream& rng) {
    if (samples < 100) throw std::invalid_argument("quality_percentile: need >= 100 samples");
    if (!(v >= 0.0 && v <= 100.0))
        throw std::invalid_argument("quality_percentile: v outside [0,100]");
    std::vector<double> scores;
    scores.reserve(std::size_t(samples));
    for (long i = 0; i < samples; ++i) {
        RngStream trial = rng.substream("pct/" + std::to_string(i));
        RngStream key_rng = trial.substream("key");
        RngStream gen_rng = trial.substream("gen");
        const auto keyed = scheme.watermark(key_rng);
        const TokenSequence y = keyed.sampler(x, generation_length, gen_rng);
        scores.push_back(quality(x, y).value);
    }
    std::sort(scores.begin(), scores.end());
    if (v <= 0.0) return scores.front();
    if (v >= 100.0) return scores.back();
    // Nearest-rank percentile.
    const auto rank = static_cast<std::size_t>(std::ceil(v / 100.0 * double(samples)));
    return scores[std::min(scores.size() - 1, rank == 0 ? 0 : rank - 1)];
}

double min_quality_percentile(const schemes::WatermarkScheme& scheme,
                              const std::vector<std::pair<Prompt, long>>& prompts,
                              const QualityOracle& quality, double v, long samples,
                              RngStream& rng) {
    if (prompts.empty()) throw std::invalid_argument("min_quality_percentile: no prompts");
    double q_min = 1.0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        RngStream sub = rng.substream("qmin/" + std::to_string(i));
        q_min = std::min(q_min, quality_percentile(scheme, prompts[i].first, prompts[i].second,
                                                   quality, v, samples, sub));
    }
    return q_min;
}

double success_lower_bound(double v, double eps_pos, double eps_dist, double eps_pert, long t,
                           long t_err) {
    if (!(v >= 0.0 && v <= 100.0)) throw std::invalid_argument("success_lower_bound: v outside [0,100]");
    for (double rate : {eps_pos, eps_dist, eps_pert})
        if (!(rate >= 0.0 && rate <= 1.0))
            throw std::invalid_argument("success_lower_bound: rate outside [0,1]");
    if (t_err > t) throw std::invalid_argument("success_lower_bound: t_err > t");
    const double tail = stats::binomial_tail(t, t_err, eps_pert);
    return (1.0 - v / 100.0) * (1.0 - eps_pos) * (1.0 - eps_dist) * (1.0 - tail);
}

}  // namespace wmlab::theory
