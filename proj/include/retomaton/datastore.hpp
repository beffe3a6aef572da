#pragma once

#include <filesystem>

#include "retomaton/trace.hpp"

namespace retomaton {

/// Transition datastore: one entry per corpus record. Sequence-final entries
/// are kept as pointer targets but masked out of every retrieval sum.
/// Struct-of-arrays; entry ids are stable 64-bit indices.
struct Datastore {
    uint32_t dim = 0;
    uint32_t vocab_size = 0;

    std::vector<float> vectors;       // num_entries * dim
    std::vector<TokenId> tokens;
    std::vector<uint64_t> seq;
    std::vector<uint64_t> pos;
    std::vector<EntryId> successor;   // kNoEntry when the record is sequence-final
    std::vector<uint8_t> valid;       // 1 iff the entry is a valid transition
    std::vector<int64_t> cluster;     // kNoCluster until annotated
    bool has_clusters = false;

    size_t size() const { return tokens.size(); }
    size_t num_valid() const;
    std::span<const float> vector(EntryId e) const {
        return std::span<const float>(vectors).subspan(static_cast<size_t>(e) * dim, dim);
    }

    bool operator==(const Datastore&) const = default;
};

Datastore build_datastore(const TraceFile& trace);

void save_datastore(const Datastore& ds, const std::filesystem::path& path);
Datastore load_datastore(const std::filesystem::path& path);

}  // namespace retomaton
