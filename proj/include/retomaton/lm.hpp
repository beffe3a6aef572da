#pragma once

#include <map>
#include <memory>

#include "retomaton/trace.hpp"

namespace retomaton {

/// Pluggable base language model contract. Implementations must be
/// deterministic given (state, token); the hidden vector doubles as the
/// retrieval query.
class LmInterface {
public:
    struct State {
        std::vector<double> hidden;
        std::vector<TokenId> context;  // most recent tokens, oldest first
    };

    virtual ~LmInterface() = default;

    virtual uint32_t vocab_size() const = 0;
    virtual uint32_t dim() const = 0;
    virtual State initial_state(std::span<const TokenId> prompt) const = 0;
    virtual State step(const State& state, TokenId token) const = 0;
    /// Next-token distribution given the state; sums to 1 within 1e-9.
    virtual std::vector<double> next_distribution(const State& state) const = 0;
};

/// Deterministic stand-in for a frozen LM: echo-state recurrence
/// h' = tanh(W_h h + W_x E[x]) for hidden states, add-alpha smoothed n-gram
/// counts for probabilities. Same seed and corpus, bit-identical behavior.
class ToyLm : public LmInterface {
public:
    ToyLm(uint32_t vocab_size, uint32_t dim, uint64_t seed, uint32_t order, double alpha);

    uint32_t vocab_size() const override { return vocab_size_; }
    uint32_t dim() const override { return dim_; }
    State initial_state(std::span<const TokenId> prompt) const override;
    State step(const State& state, TokenId token) const override;
    std::vector<double> next_distribution(const State& state) const override;

    uint32_t order() const { return order_; }
    double alpha() const { return alpha_; }
    void set_alpha(double alpha);

    const std::vector<double>& embedding_matrix() const { return embedding_; }
    const std::vector<double>& recurrence_matrix() const { return w_hidden_; }
    const std::vector<double>& input_matrix() const { return w_input_; }

    void accumulate_counts(std::span<const TokenId> tokens);

private:
    struct ContextCounts {
        uint64_t total = 0;
        std::vector<std::pair<TokenId, uint64_t>> by_token;  // sorted by token
    };

    const ContextCounts* lookup(std::span<const TokenId> context) const;

    uint32_t vocab_size_;
    uint32_t dim_;
    uint64_t seed_;
    uint32_t order_;
    double alpha_;
    std::vector<double> embedding_;  // vocab_size x dim
    std::vector<double> w_hidden_;   // dim x dim, spectral radius 0.9
    std::vector<double> w_input_;    // dim x dim
    std::map<std::vector<TokenId>, ContextCounts> counts_;
};

/// Fits the n-gram head on the trace's token sequences; recurrence matrices
/// come from the seed alone.
ToyLm fit_toy_lm(const TraceFile& corpus, uint64_t seed, uint32_t order = 3, double alpha = 0.1);
ToyLm fit_toy_lm(const std::vector<std::vector<TokenId>>& sequences, uint32_t vocab_size,
                 uint32_t dim, uint64_t seed, uint32_t order = 3, double alpha = 0.1);

/// Replays token sequences through the LM and records (hidden, next token)
/// pairs, i.e. a trace in the LM's own hidden space.
TraceFile record_lm_trace(const LmInterface& lm, const std::vector<std::vector<TokenId>>& sequences);

}  // namespace retomaton
