#include "retomaton/retrieval.hpp"

#include <algorithm>
#include <cmath>

namespace retomaton {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'I', 'X'};
constexpr uint32_t kVersion = 1;

double kernel(double dist2, double temperature) { return std::exp(-dist2 / temperature); }

/// Per-token kernel masses plus a flat denominator, accumulated in ascending
/// entry id order. Every strategy shares this accumulation path, which is
/// what makes the k = 1 cluster equivalence exact.
struct KernelMass {
    std::vector<double> per_token;
    double total = 0.0;
};

KernelMass kernel_mass(const std::vector<EntryId>& sorted_entries, const Datastore& ds,
                       std::span<const double> query, double temperature,
                       RetrievalDetail* detail) {
    KernelMass mass;
    mass.per_token.assign(ds.vocab_size, 0.0);
    for (EntryId e : sorted_entries) {
        double w = kernel(squared_distance(ds.vector(e), query), temperature);
        mass.per_token[ds.tokens[e]] += w;
        mass.total += w;
        if (detail) detail->scored.emplace_back(e, w);
    }
    if (detail) {
        std::stable_sort(detail->scored.begin(), detail->scored.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        if (detail->scored.size() > detail->max_entries) {
            detail->scored.resize(detail->max_entries);
        }
    }
    return mass;
}

std::vector<EntryId> neighbor_ids_sorted(const std::vector<Neighbor>& neighbors) {
    std::vector<EntryId> ids;
    ids.reserve(neighbors.size());
    for (const Neighbor& n : neighbors) ids.push_back(n.entry);
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<Neighbor> select_top_k(std::vector<Neighbor>& candidates, size_t k) {
    auto cmp = [](const Neighbor& a, const Neighbor& b) {
        if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
        return a.entry < b.entry;
    };
    if (candidates.size() > k) {
        std::nth_element(candidates.begin(), candidates.begin() + k, candidates.end(), cmp);
        candidates.resize(k);
    }
    std::sort(candidates.begin(), candidates.end(), cmp);
    return candidates;
}

}  // namespace

void validate_hyperparams(const RetrievalHyperparams& hp) {
    if (hp.k == 0) throw std::invalid_argument("hyperparams: k must be >= 1");
    if (hp.lambda < 0.0 || hp.lambda > 1.0) {
        throw std::invalid_argument("hyperparams: lambda must be in [0, 1]");
    }
    if (!(hp.temperature > 0.0)) {
        throw std::invalid_argument("hyperparams: temperature must be positive");
    }
}

const char* source_name(Source s) {
    switch (s) {
        case Source::Automaton: return "automaton";
        case Source::Cluster: return "cluster";
        case Source::Global: return "global";
        case Source::KnnFallback: return "knn_fallback";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Index
// ---------------------------------------------------------------------------

NnIndex build_flat_index(const Datastore& ds) {
    NnIndex index;
    index.kind = IndexKind::Flat;
    index.dim = ds.dim;
    return index;
}

NnIndex build_ivf_index(const Datastore& ds, uint32_t nlist, uint32_t nprobe, uint64_t seed) {
    if (nlist == 0) throw std::invalid_argument("build_ivf_index: nlist must be positive");
    ClusterModel coarse = fit_kmeans(ds, nlist, seed, /*max_iter=*/20, /*tol=*/1e-4);
    NnIndex index;
    index.kind = IndexKind::Ivf;
    index.dim = ds.dim;
    index.nlist = nlist;
    index.nprobe = std::min(std::max<uint32_t>(nprobe, 1), nlist);
    index.coarse_centroids = coarse.centroids;
    index.lists.resize(nlist);
    for (size_t e = 0; e < ds.size(); ++e) {
        if (!ds.valid[e]) continue;
        StateId list = assign(coarse, ds.vector(static_cast<EntryId>(e)));
        index.lists[list].push_back(static_cast<EntryId>(e));
    }
    return index;
}

std::vector<Neighbor> knn_search(const NnIndex& index, const Datastore& ds,
                                 std::span<const double> query, size_t k) {
    if (k == 0) throw std::invalid_argument("knn_search: k must be >= 1");
    if (query.size() != ds.dim) throw std::invalid_argument("knn_search: dimension mismatch");
    if (ds.num_valid() == 0) throw std::invalid_argument("knn_search: empty datastore");

    std::vector<Neighbor> candidates;
    if (index.kind == IndexKind::Flat) {
        candidates.reserve(ds.size());
        for (size_t e = 0; e < ds.size(); ++e) {
            if (!ds.valid[e]) continue;
            candidates.push_back({static_cast<EntryId>(e),
                                  squared_distance(ds.vector(static_cast<EntryId>(e)), query)});
        }
    } else {
        std::vector<std::pair<double, uint32_t>> list_rank;
        list_rank.reserve(index.nlist);
        for (uint32_t l = 0; l < index.nlist; ++l) {
            const double* c = index.coarse_centroids.data() + static_cast<size_t>(l) * index.dim;
            double acc = 0.0;
            for (uint32_t j = 0; j < index.dim; ++j) {
                double diff = query[j] - c[j];
                acc += diff * diff;
            }
            list_rank.emplace_back(acc, l);
        }
        std::sort(list_rank.begin(), list_rank.end());
        size_t probes = std::min<size_t>(index.nprobe, list_rank.size());
        for (size_t p = 0; p < probes; ++p) {
            for (EntryId e : index.lists[list_rank[p].second]) {
                candidates.push_back({e, squared_distance(ds.vector(e), query)});
            }
        }
    }
    return select_top_k(candidates, k);
}

void save_index(const NnIndex& index, const std::filesystem::path& path) {
    ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u8(static_cast<uint8_t>(index.kind));
    w.u32(index.dim);
    if (index.kind == IndexKind::Ivf) {
        w.u32(index.nlist);
        w.u32(index.nprobe);
        for (double c : index.coarse_centroids) w.f32(static_cast<float>(c));
        for (const auto& list : index.lists) {
            w.u64(list.size());
            for (EntryId e : list) w.u64(static_cast<uint64_t>(e));
        }
    }
    write_file_atomic(path, w.bytes());
}

NnIndex load_index(const std::filesystem::path& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.magic(kMagic, "index file");
    uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError(FormatErrorKind::UnsupportedVersion, r.offset() - 4,
                          "unsupported index version " + std::to_string(version));
    }
    NnIndex index;
    uint8_t kind = r.u8("kind");
    if (kind > 1) {
        throw FormatError(FormatErrorKind::Malformed, r.offset() - 1, "unknown index kind");
    }
    index.kind = static_cast<IndexKind>(kind);
    index.dim = r.u32("dim");
    if (index.kind == IndexKind::Ivf) {
        index.nlist = r.u32("nlist");
        index.nprobe = r.u32("nprobe");
        if (index.nlist == 0) {
            throw FormatError(FormatErrorKind::Malformed, r.offset() - 8, "nlist must be positive");
        }
        index.coarse_centroids.resize(static_cast<size_t>(index.nlist) * index.dim);
        for (double& c : index.coarse_centroids) c = r.f32("coarse centroid");
        index.lists.resize(index.nlist);
        for (auto& list : index.lists) {
            uint64_t count = r.u64("list size");
            list.reserve(count);
            for (uint64_t i = 0; i < count; ++i) {
                list.push_back(static_cast<EntryId>(r.u64("list entry id")));
            }
        }
    }
    if (!r.at_end()) {
        throw FormatError(FormatErrorKind::Malformed, r.offset(),
                          "trailing bytes after index payload");
    }
    return index;
}

// ---------------------------------------------------------------------------
// Retrieval strategies
// ---------------------------------------------------------------------------

TokenDistribution p_knn(const std::vector<Neighbor>& neighbors, const Datastore& ds,
                        const KernelParams& params, Source label, RetrievalDetail* detail) {
    if (neighbors.empty()) throw std::invalid_argument("p_knn: no neighbors");
    TokenDistribution dist;
    dist.probs.assign(ds.vocab_size, 0.0);
    dist.candidates_examined = neighbors.size();

    // Neighbor distances are already exact; accumulate in ascending id order.
    KernelMass mass;
    mass.per_token.assign(ds.vocab_size, 0.0);
    std::vector<Neighbor> by_id(neighbors);
    std::sort(by_id.begin(), by_id.end(),
              [](const Neighbor& a, const Neighbor& b) { return a.entry < b.entry; });
    if (detail) detail->scored.clear();
    for (const Neighbor& n : by_id) {
        double w = kernel(n.dist2, params.temperature);
        mass.per_token[ds.tokens[n.entry]] += w;
        mass.total += w;
        if (detail) detail->scored.emplace_back(n.entry, w);
    }
    if (detail) {
        std::stable_sort(detail->scored.begin(), detail->scored.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        if (detail->scored.size() > detail->max_entries) {
            detail->scored.resize(detail->max_entries);
        }
    }

    if (mass.total < kKernelUnderflow) {
        // Unweighted voting over the same neighbors.
        for (const Neighbor& n : neighbors) dist.probs[ds.tokens[n.entry]] += 1.0;
        for (double& p : dist.probs) p /= static_cast<double>(neighbors.size());
        dist.strategy_used = Source::KnnFallback;
        dist.token_level.assign(ds.vocab_size, Source::KnnFallback);
        return dist;
    }
    for (TokenId y = 0; y < ds.vocab_size; ++y) dist.probs[y] = mass.per_token[y] / mass.total;
    dist.strategy_used = label;
    dist.token_level.assign(ds.vocab_size, label);
    return dist;
}

TokenDistribution p_global(const Datastore& ds, const NnIndex& index,
                           std::span<const double> query, const RetrievalHyperparams& hp,
                           const GlobalOptions& opts, RetrievalDetail* detail) {
    validate_hyperparams(hp);
    if (ds.num_valid() == 0) throw std::invalid_argument("p_global: empty datastore");

    if (!opts.exact) {
        std::vector<Neighbor> neighbors = knn_search(index, ds, query, hp.k);
        return p_knn(neighbors, ds, KernelParams{hp.temperature}, Source::Global, detail);
    }

    std::vector<EntryId> all_valid;
    all_valid.reserve(ds.num_valid());
    for (size_t e = 0; e < ds.size(); ++e) {
        if (ds.valid[e]) all_valid.push_back(static_cast<EntryId>(e));
    }
    if (detail) detail->scored.clear();
    KernelMass mass = kernel_mass(all_valid, ds, query, hp.temperature, detail);

    TokenDistribution dist;
    dist.probs.assign(ds.vocab_size, 0.0);
    dist.candidates_examined = all_valid.size();
    if (mass.total < kKernelUnderflow) {
        std::vector<Neighbor> neighbors = knn_search(index, ds, query, hp.k);
        TokenDistribution fb = p_knn(neighbors, ds, KernelParams{hp.temperature}, Source::Global,
                                     detail);
        fb.candidates_examined += all_valid.size();
        if (fb.strategy_used != Source::KnnFallback) {
            // The exact sum underflowed but the nearest neighbors carried
            // mass; still report the kNN fallback level.
            fb.strategy_used = Source::KnnFallback;
            fb.token_level.assign(ds.vocab_size, Source::KnnFallback);
        }
        return fb;
    }
    for (TokenId y = 0; y < ds.vocab_size; ++y) dist.probs[y] = mass.per_token[y] / mass.total;
    dist.strategy_used = Source::Global;
    dist.token_level.assign(ds.vocab_size, Source::Global);
    return dist;
}

TokenDistribution p_cluster(const Automaton& aut, const ClusterModel& model, const Datastore& ds,
                            const NnIndex& index, std::span<const double> query,
                            const RetrievalHyperparams& hp, const GlobalOptions& opts,
                            RetrievalDetail* detail) {
    validate_hyperparams(hp);
    StateId q = assign(model, query);
    // A centroid can end up with no assigned entries; its support is empty.
    static const std::vector<EntryId> kEmpty;
    const std::vector<EntryId>& support = q < aut.support.size() ? aut.support[q] : kEmpty;
    if (support.empty()) {
        return p_global(ds, index, query, hp, opts, detail);
    }
    if (detail) detail->scored.clear();
    KernelMass mass = kernel_mass(support, ds, query, hp.temperature, detail);
    if (mass.total < kKernelUnderflow) {
        TokenDistribution fb = p_global(ds, index, query, hp, opts, detail);
        fb.candidates_examined += support.size();
        return fb;
    }
    TokenDistribution dist;
    dist.probs.assign(ds.vocab_size, 0.0);
    dist.candidates_examined = support.size();
    for (TokenId y = 0; y < ds.vocab_size; ++y) dist.probs[y] = mass.per_token[y] / mass.total;
    dist.strategy_used = Source::Cluster;
    dist.token_level.assign(ds.vocab_size, Source::Cluster);
    return dist;
}

TokenDistribution p_automaton(const Automaton& aut, const ClusterModel& model,
                              const Datastore& ds, const NnIndex& index,
                              std::span<const double> query, const RetrievalHyperparams& hp,
                              const GlobalOptions& opts, RetrievalDetail* detail) {
    validate_hyperparams(hp);
    StateId q = assign(model, query);
    static const std::vector<EntryId> kEmpty;
    const std::vector<EntryId>& support = q < aut.support.size() ? aut.support[q] : kEmpty;
    if (support.empty()) {
        return p_global(ds, index, query, hp, opts, detail);
    }
    if (detail) detail->scored.clear();
    KernelMass mass = kernel_mass(support, ds, query, hp.temperature, detail);
    if (mass.total < kKernelUnderflow) {
        TokenDistribution fb = p_global(ds, index, query, hp, opts, detail);
        fb.candidates_examined += support.size();
        return fb;
    }

    TokenDistribution dist;
    dist.probs.assign(ds.vocab_size, 0.0);
    dist.token_level.assign(ds.vocab_size, Source::Automaton);
    dist.candidates_examined = support.size();
    dist.strategy_used = Source::Automaton;

    bool fallback_mass_added = false;
    for (TokenId y = 0; y < ds.vocab_size; ++y) {
        if (aut.support_for(q, y) != nullptr) {
            dist.probs[y] = mass.per_token[y] / mass.total;
        } else {
            // S(q, y) empty: that token falls back to the cluster-level
            // value, which over the same support is mass 0.
            dist.probs[y] = mass.per_token[y] / mass.total;
            dist.token_level[y] = Source::Cluster;
            if (dist.probs[y] > 0.0) fallback_mass_added = true;
        }
    }
    if (fallback_mass_added) {
        double total = 0.0;
        for (double p : dist.probs) total += p;
        if (total > 0.0) {
            for (double& p : dist.probs) p /= total;
        }
    }
    return dist;
}

PointerQueryResult p_pointer(const PointerSet& ps, const Automaton& aut, const Datastore& ds,
                             const NnIndex& index, std::span<const double> query,
                             const RetrievalHyperparams& hp, PointerMode mode,
                             RetrievalDetail* detail) {
    validate_hyperparams(hp);

    auto knn_fallback = [&](size_t extra_examined) {
        std::vector<Neighbor> neighbors = knn_search(index, ds, query, hp.k);
        PointerQueryResult out;
        out.dist = p_knn(neighbors, ds, KernelParams{hp.temperature}, Source::KnnFallback, detail);
        out.dist.strategy_used = Source::KnnFallback;
        out.dist.token_level.assign(ds.vocab_size, Source::KnnFallback);
        out.dist.candidates_examined += extra_examined;
        out.pointers.entries = neighbor_ids_sorted(neighbors);
        out.pointers.origin = PointerOrigin::FallbackKnn;
        return out;
    };

    if (ps.empty()) return knn_fallback(0);

    std::vector<EntryId> candidates = expand_pointer_states(ps, aut, ds, mode);
    if (candidates.empty()) return knn_fallback(0);

    if (detail) detail->scored.clear();
    KernelMass mass = kernel_mass(candidates, ds, query, hp.temperature, detail);
    if (mass.total < kKernelUnderflow) return knn_fallback(candidates.size());

    PointerQueryResult out;
    out.dist.probs.assign(ds.vocab_size, 0.0);
    for (TokenId y = 0; y < ds.vocab_size; ++y) {
        out.dist.probs[y] = mass.per_token[y] / mass.total;
    }
    out.dist.strategy_used = Source::Automaton;
    out.dist.token_level.assign(ds.vocab_size, Source::Automaton);
    out.dist.candidates_examined = candidates.size();

    // Keep the k best-scoring candidates as the set to advance from.
    if (candidates.size() > hp.k) {
        std::vector<Neighbor> scored;
        scored.reserve(candidates.size());
        for (EntryId e : candidates) {
            scored.push_back({e, squared_distance(ds.vector(e), query)});
        }
        select_top_k(scored, hp.k);
        out.pointers.entries = neighbor_ids_sorted(scored);
    } else {
        out.pointers.entries = candidates;
    }
    out.pointers.origin = ps.origin;
    return out;
}

TokenDistribution interpolate(const TokenDistribution& p_ret, const std::vector<double>& p_lm,
                              double lambda) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw std::invalid_argument("interpolate: lambda must be in [0, 1]");
    }
    if (p_ret.probs.size() != p_lm.size()) {
        throw std::invalid_argument("interpolate: distribution sizes differ");
    }
    TokenDistribution out = p_ret;
    for (size_t y = 0; y < p_lm.size(); ++y) {
        out.probs[y] = lambda * p_ret.probs[y] + (1.0 - lambda) * p_lm[y];
    }
    return out;
}

}  // namespace retomaton
