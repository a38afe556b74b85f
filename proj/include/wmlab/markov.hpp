#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmlab/core.hpp"
#include "wmlab/rng.hpp"

namespace wmlab {

// Order-k Markov chain over a dense token alphabet, the desk-scale stand-in
// for a generative model. Rows exist for every context length 0..order, so
// generation is well defined from an empty prompt: position i conditions on
// the last min(order, i + |prompt|) known tokens. The sub-order tables play
// the role of the start-context distribution.
struct MarkovModel {
    Vocabulary vocabulary;
    int order = 1;
    long generation_length = 1;

    // tables[len] holds vocabulary.size^len rows of vocabulary.size
    // probabilities each, rows indexed by the mixed-radix code of the
    // context (earlier tokens more significant). Row-major.
    std::vector<std::vector<double>> tables;
    // Parallel per-table flags; rows never supplied stay undefined and
    // touching one is a hard error naming the context.
    std::vector<std::vector<bool>> row_defined;

    MarkovModel(Vocabulary vocab, int order, long generation_length);

    int vocab_size() const { return vocabulary.size; }
    std::size_t rows_for_length(int context_len) const;

    // Sets one row; probabilities must be nonnegative and sum to 1 within 1e-12.
    void set_row(int context_len, std::size_t context_code, std::vector<double> probs);
    void set_row(const std::vector<Token>& context, std::vector<double> probs);

    bool has_row(int context_len, std::size_t context_code) const;
    // Probability row for a context; throws if the row was never defined.
    const double* row(int context_len, std::size_t context_code) const;
    const double* row_for(const std::vector<Token>& context) const;

    static std::size_t context_code(const std::vector<Token>& context, int vocab);

    // Fails unless every row of every table is defined and normalized.
    void validate() const;
};

// All rows uniform.
MarkovModel uniform_model(Vocabulary vocab, int order, long generation_length);

// Context-independent (iid) chain: every row equals `probs`.
MarkovModel iid_model(Vocabulary vocab, long generation_length, const std::vector<double>& probs);

// Every row drawn independently from Dirichlet(concentration, ..., concentration).
MarkovModel random_model(Vocabulary vocab, int order, long generation_length,
                         double concentration, RngStream& rng);

// Plain-text matrix serialization. Header lines carry vocab size, order and
// generation length; every row is printed with 17 significant digits so the
// round-trip is bit-exact. Format documented in the README.
std::string save_model(const MarkovModel& model);
MarkovModel load_model(const std::string& text);
void save_model_file(const MarkovModel& model, const std::string& path);
MarkovModel load_model_file(const std::string& path);

// Draws a length-`length` sequence token-by-token; the running context is
// seeded by the prompt. Identical (seed, label) pairs reproduce the sequence.
TokenSequence sample(const MarkovModel& model, const Prompt& prompt, long length, RngStream& rng);

// Sum over positions of log transition probability, each term clamped below
// at floor_log_prob (so zero-probability steps contribute the floor, not -inf).
double log_likelihood(const MarkovModel& model, const Prompt& prompt, const TokenSequence& y,
                      double floor_log_prob);

}  // namespace wmlab
