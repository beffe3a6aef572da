#pragma once

#include <filesystem>
#include <optional>

#include "retomaton/automaton.hpp"
#include "retomaton/clustering.hpp"

namespace retomaton {

/// Similarity kernel K(h_q, h_i) = exp(-||h_q - h_i||^2 / temperature).
/// The same kernel backs every retrieval strategy, transition scoring
/// included, so the k = 1 cluster equivalence holds exactly.
struct KernelParams {
    double temperature = 1.0;
};

/// Total kernel mass below this triggers the unweighted kNN fallback.
constexpr double kKernelUnderflow = 1e-300;

struct RetrievalHyperparams {
    size_t k = 256;        // neighbor count
    double lambda = 0.2;   // interpolation weight
    double temperature = 1.0;
};

void validate_hyperparams(const RetrievalHyperparams& hp);

/// Which level of the fallback chain produced a probability.
enum class Source : uint8_t { Automaton = 0, Cluster = 1, Global = 2, KnnFallback = 3 };

const char* source_name(Source s);

struct TokenDistribution {
    std::vector<double> probs;          // vocab-sized, sums to 1 when mass exists
    Source strategy_used = Source::Global;
    std::vector<Source> token_level;    // per-token fallback level
    size_t candidates_examined = 0;
};

struct Neighbor {
    EntryId entry;
    double dist2;
};

/// Optional per-query diagnostics for trace emission.
struct RetrievalDetail {
    std::vector<std::pair<EntryId, double>> scored;  // (entry, kernel score), best first
    size_t max_entries = 8;
};

// ---------------------------------------------------------------------------
// Nearest-neighbor index
// ---------------------------------------------------------------------------

enum class IndexKind : uint8_t { Flat = 0, Ivf = 1 };

/// Flat index: exact scan over the valid entries. IVF: coarse k-means lists
/// for candidate generation, re-ranked by exact distance on the raw vectors.
struct NnIndex {
    IndexKind kind = IndexKind::Flat;
    uint32_t dim = 0;
    // IVF only:
    uint32_t nlist = 0;
    uint32_t nprobe = 1;
    std::vector<double> coarse_centroids;       // nlist * dim
    std::vector<std::vector<EntryId>> lists;    // sorted entry ids per list
};

NnIndex build_flat_index(const Datastore& ds);
NnIndex build_ivf_index(const Datastore& ds, uint32_t nlist, uint32_t nprobe, uint64_t seed);

/// Smallest squared distance first; ties broken by lower entry id. Never
/// returns masked entries.
std::vector<Neighbor> knn_search(const NnIndex& index, const Datastore& ds,
                                 std::span<const double> query, size_t k);

void save_index(const NnIndex& index, const std::filesystem::path& path);
NnIndex load_index(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Retrieval probability strategies (four-level fallback chain:
// automaton -> cluster -> global -> unweighted kNN)
// ---------------------------------------------------------------------------

/// Kernel-weighted distribution over explicit neighbors; falls back to
/// unweighted voting over the same neighbors on kernel underflow.
TokenDistribution p_knn(const std::vector<Neighbor>& neighbors, const Datastore& ds,
                        const KernelParams& params, Source label = Source::Global,
                        RetrievalDetail* detail = nullptr);

struct GlobalOptions {
    bool exact = false;  // sum over every valid entry instead of top-k candidates
};

TokenDistribution p_global(const Datastore& ds, const NnIndex& index,
                           std::span<const double> query, const RetrievalHyperparams& hp,
                           const GlobalOptions& opts = {}, RetrievalDetail* detail = nullptr);

TokenDistribution p_cluster(const Automaton& aut, const ClusterModel& model, const Datastore& ds,
                            const NnIndex& index, std::span<const double> query,
                            const RetrievalHyperparams& hp, const GlobalOptions& opts = {},
                            RetrievalDetail* detail = nullptr);

TokenDistribution p_automaton(const Automaton& aut, const ClusterModel& model,
                              const Datastore& ds, const NnIndex& index,
                              std::span<const double> query, const RetrievalHyperparams& hp,
                              const GlobalOptions& opts = {}, RetrievalDetail* detail = nullptr);

struct PointerQueryResult {
    TokenDistribution dist;
    /// Candidates to advance from after the token is chosen. On the empty-set
    /// fallback path this is a fresh set seeded from the kNN results.
    PointerSet pointers;
};

PointerQueryResult p_pointer(const PointerSet& ps, const Automaton& aut, const Datastore& ds,
                             const NnIndex& index, std::span<const double> query,
                             const RetrievalHyperparams& hp, PointerMode mode,
                             RetrievalDetail* detail = nullptr);

/// Convex combination lambda * p_ret + (1 - lambda) * p_lm.
TokenDistribution interpolate(const TokenDistribution& p_ret, const std::vector<double>& p_lm,
                              double lambda);

}  // namespace retomaton
