#pragma once

#include <filesystem>

#include "retomaton/common.hpp"

namespace retomaton {

/// One recorded sequence: record i holds (hidden vector h_i, token y_i).
/// Vectors are stored flat, row-major, `length() * dim` floats.
struct Sequence {
    std::vector<float> vectors;
    std::vector<TokenId> tokens;

    size_t length() const { return tokens.size(); }
    std::span<const float> vector(size_t i, uint32_t dim) const {
        return std::span<const float>(vectors).subspan(i * dim, dim);
    }

    bool operator==(const Sequence&) const = default;
};

struct TraceFile {
    uint32_t dim = 0;
    uint32_t vocab_size = 0;
    std::vector<Sequence> sequences;

    bool operator==(const TraceFile&) const = default;
};

/// Throws std::invalid_argument on any invariant violation (dimension, token
/// range, non-finite component, zero-length sequence).
void validate_trace(const TraceFile& file);

std::vector<uint8_t> serialize_trace(const TraceFile& file);
TraceFile parse_trace(std::span<const uint8_t> bytes);

void write_trace(const TraceFile& file, const std::filesystem::path& path);
TraceFile read_trace(const std::filesystem::path& path);

}  // namespace retomaton
