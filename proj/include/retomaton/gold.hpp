#pragma once

#include <filesystem>

#include "retomaton/trace.hpp"

namespace retomaton {

struct GoldTransition {
    TokenId token = 0;
    StateId next_state = 0;
    double prob = 0.0;
};

/// Markov process with known per-state next-token distributions. Record
/// vectors are deterministic seeded embeddings of (state, last token) plus
/// Gaussian noise, which gives k-means recoverable structure.
struct GoldAutomatonSpec {
    uint32_t num_states = 0;
    uint32_t vocab_size = 0;
    uint32_t dim = 0;
    double emission_noise = 0.0;
    uint64_t seed = 0;
    std::vector<std::vector<GoldTransition>> transitions;  // per state
};

void validate_gold_spec(const GoldAutomatonSpec& spec);

GoldAutomatonSpec load_gold_spec(const std::filesystem::path& path);
void save_gold_spec(const GoldAutomatonSpec& spec, const std::filesystem::path& path);

/// Answers the exact next-token distribution at any generated position.
class GoldOracle {
public:
    GoldOracle() = default;
    GoldOracle(GoldAutomatonSpec spec, std::vector<std::vector<StateId>> states);

    /// P_gold(y | generator state at record `pos` of sequence `seq`).
    const std::vector<double>& distribution(size_t seq, size_t pos) const;
    const std::vector<double>& state_distribution(StateId state) const;
    StateId state_at(size_t seq, size_t pos) const { return states_.at(seq).at(pos); }
    size_t num_sequences() const { return states_.size(); }
    const GoldAutomatonSpec& spec() const { return spec_; }

private:
    GoldAutomatonSpec spec_;
    std::vector<std::vector<StateId>> states_;   // generator state before each record
    std::vector<std::vector<double>> marginals_;  // per state, vocab-sized, sums to 1
};

struct GoldCorpus {
    TraceFile trace;
    GoldOracle oracle;
};

/// Pure function of (spec, num_sequences, seq_len): same inputs, same output.
GoldCorpus generate_gold_corpus(const GoldAutomatonSpec& spec, size_t num_sequences,
                                size_t seq_len);

/// Sequence subrange [begin, end) of a generated corpus, oracle included.
GoldCorpus take_sequences(const GoldCorpus& corpus, size_t begin, size_t end);

/// Appends the sequences of `extra` onto `base` (dims and vocab must match).
TraceFile concat_traces(const TraceFile& base, const TraceFile& extra);

}  // namespace retomaton
