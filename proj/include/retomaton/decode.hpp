#pragma once

#include "retomaton/lm.hpp"
#include "retomaton/retrieval.hpp"

namespace retomaton {

enum class Strategy { Global, Cluster, Automaton, Pointer };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct DecodeConfig {
    Strategy strategy = Strategy::Pointer;
    PointerMode pointer_mode = PointerMode::Cluster;
    uint32_t beam_width = 5;
    uint32_t max_new_tokens = 32;
    RetrievalHyperparams hp;
    bool exact_global = false;
    std::optional<TokenId> eos_token;
    size_t trace_neighbors = 5;   // neighbors recorded per step
    size_t context_window = 8;    // tokens of preceding context per neighbor
};

struct TraceNeighbor {
    EntryId entry = kNoEntry;
    std::string token;
    std::string context;
    double score = 0.0;

    bool operator==(const TraceNeighbor&) const = default;
};

/// One record per emitted token: the explainability artifact.
struct TraceStep {
    uint32_t step = 0;
    Source strategy = Source::Global;
    int fallback_level = 0;  // deepest per-token fallback level observed
    std::vector<TraceNeighbor> neighbors;
    TokenId chosen = 0;
    double p_lm = 0.0;
    double p_ret = 0.0;
    double p_final = 0.0;
    size_t pointer_count = 0;

    bool operator==(const TraceStep&) const = default;
};

struct DecodeTrace {
    std::vector<TraceStep> steps;

    bool operator==(const DecodeTrace&) const = default;
};

struct DecodeResult {
    std::vector<TokenId> tokens;
    DecodeTrace trace;
    double log_prob = 0.0;          // interpolated log-probability of the hypothesis
    double knn_fallback_rate = 0.0;  // fraction of steps at the kNN level
};

/// Greedy when beam_width is 1, otherwise beam search over interpolated
/// log-probabilities; each hypothesis owns an independent pointer set.
DecodeResult decode(const LmInterface& lm, const Automaton& aut, const ClusterModel& model,
                    const Datastore& ds, const NnIndex& index, const DecodeConfig& cfg,
                    std::span<const TokenId> prompt,
                    const std::vector<std::string>* vocab = nullptr);

enum class TraceFormat { Text, Jsonl };

std::string emit_trace(const DecodeTrace& trace, TraceFormat format);
DecodeTrace parse_trace_jsonl(const std::string& text);

}  // namespace retomaton
