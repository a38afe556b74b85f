#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/oracles.hpp"
#include "wmlab/rng.hpp"

namespace wmlab::schemes {
class WatermarkScheme;
}

namespace wmlab::theory {

// Dense cap for n x n weight/transition matrices (memory guard; the
// enumeration cap alone would allow states far beyond dense storage).
inline constexpr std::size_t kDenseGraphCap = 5000;
// Eigen-work cap for spectral_gap.
inline constexpr std::size_t kEigenCap = 2000;

// The quality-floored perturbation graph: vertices are the retained outputs,
// weight(i,j) = Pr[y_j = P(x, y_i)]. For floor 0 every row sums to 1; for a
// positive floor rows sum to <= 1 (mass to dropped vertices removed).
struct PerturbationGraph {
    std::vector<TokenSequence> vertices;
    std::vector<std::size_t> space_index;  // position of each vertex in the full enumeration
    std::vector<double> weights;           // n*n row-major
    double quality_floor = 0.0;
    std::string prompt_id;

    std::size_t n() const { return vertices.size(); }
    double weight(std::size_t i, std::size_t j) const { return weights[i * n() + j]; }
    double out_weight(std::size_t i) const;
};

// Row-stochastic matrix P(i,j) = weight(i,j) / weight(i,*).
struct TransitionMatrix {
    std::size_t n = 0;
    std::vector<double> p;  // row-major

    double at(std::size_t i, std::size_t j) const { return p[i * n + j]; }
};

// Requires every row to have positive out-weight.
TransitionMatrix transition_matrix(const PerturbationGraph& g);

// Retains exactly the outputs with quality >= quality_floor; edge weights are
// the exact kernel probabilities between retained vertices. Errors when no
// output reaches the floor.
PerturbationGraph build_quality_graph(const SpanPerturber& p, const ReferenceQuality& quality,
                                      const Prompt& x, double quality_floor,
                                      const EnumeratedSpace& space);

// Generic variant: kernel_row(i) returns the dense row of the full-space
// kernel for state i; qualities holds Q per state.
PerturbationGraph build_quality_graph(const std::function<std::vector<double>(std::size_t)>& kernel_row,
                                      const std::vector<double>& qualities, double quality_floor,
                                      const std::vector<TokenSequence>& states,
                                      const std::string& prompt_id);

// Strong connectivity of the positive-weight digraph (two-pass reachability).
bool is_irreducible(const PerturbationGraph& g);

// gcd of cycle lengths equals 1; requires an irreducible graph, otherwise the
// period is a per-class notion and the call is refused.
bool is_aperiodic(const PerturbationGraph& g);

// Unique fixed point of pi = P^T pi, by power iteration to L1 residual 1e-12
// (cap 1e6 sweeps). Preconditions: irreducible and aperiodic.
std::vector<double> stationary_distribution(const TransitionMatrix& P);

// Second-largest eigenvalue modulus: power iteration on the deflated operator
// P - 1*pi^T (whose spectral radius is exactly the gap). Complex or tied
// dominant pairs are handled by fitting the minimal polynomial of the Krylov
// iterates (orders 1..4) and taking the maximum root modulus.
double spectral_gap(const TransitionMatrix& P, const std::vector<double>& pi);

// (1 / (1-g)) * ln(1 / (pi_min * eps_dist)) -- the eigenvalue bound with unit
// constant; pair with empirical_mixing_time for the measured comparison.
double mixing_time_bound(double gap, double pi_min, double eps_dist);

// Total variation distance (half L1).
double tv_distance(const std::vector<double>& a, const std::vector<double>& b);

// Smallest t with max_i TV((P^T)^t e_i, pi) <= eps_dist; maximizing over
// basis starts suffices because the distance is convex in the start
// distribution. Computed by iterated matrix powers.
long empirical_mixing_time(const TransitionMatrix& P, const std::vector<double>& pi,
                           double eps_dist, long cap = 1000000);

struct SpectralReport {
    bool irreducible = false;
    bool aperiodic = false;
    std::vector<double> stationary;
    double gap = 0.0;
    double pi_min = 0.0;
    double mixing_bound = 0.0;
    long empirical_mixing = 0;
};

// Full analysis of one graph; spectral fields are only filled when the chain
// is irreducible and aperiodic.
SpectralReport spectral_report(const PerturbationGraph& g, double eps_dist);

// Empirical v-th percentile (nearest-rank) of watermarked-output qualities
// over fresh (key, sampler) draws. v = 0 gives the minimum, 100 the maximum.
double quality_percentile(const schemes::WatermarkScheme& scheme, const Prompt& x,
                          long generation_length, const QualityOracle& quality, double v,
                          long samples, RngStream& rng);

// q_min: the minimum of the v-th percentiles across (prompt, length) pairs.
double min_quality_percentile(const schemes::WatermarkScheme& scheme,
                              const std::vector<std::pair<Prompt, long>>& prompts,
                              const QualityOracle& quality, double v, long samples, RngStream& rng);

// The closed-form guarantee
//   (1 - v/100)(1 - eps_pos)(1 - eps_dist)(1 - binomial_tail(t, t_err, eps_pert)).
double success_lower_bound(double v, double eps_pos, double eps_dist, double eps_pert, long t,
                           long t_err);

}  // namespace wmlab::theory
