#include "retomaton/trace.hpp"

#include <cmath>

namespace retomaton {

namespace {
constexpr char kMagic[4] = {'R', 'T', 'M', 'T'};
constexpr uint32_t kVersion = 1;
}  // namespace

void validate_trace(const TraceFile& file) {
    if (file.dim == 0) throw std::invalid_argument("trace dim must be positive");
    if (file.vocab_size == 0) throw std::invalid_argument("trace vocab_size must be positive");
    for (size_t m = 0; m < file.sequences.size(); ++m) {
        const Sequence& seq = file.sequences[m];
        if (seq.length() == 0) {
            throw std::invalid_argument("sequence " + std::to_string(m) + " is empty");
        }
        if (seq.vectors.size() != seq.tokens.size() * file.dim) {
            throw std::invalid_argument("sequence " + std::to_string(m) +
                                        " vector payload does not match dim * length");
        }
        for (float v : seq.vectors) {
            if (!std::isfinite(v)) {
                throw std::invalid_argument("sequence " + std::to_string(m) +
                                            " contains a non-finite component");
            }
        }
        for (TokenId t : seq.tokens) {
            if (t >= file.vocab_size) {
                throw std::invalid_argument("sequence " + std::to_string(m) +
                                            " token id out of range: " + std::to_string(t));
            }
        }
    }
}

std::vector<uint8_t> serialize_trace(const TraceFile& file) {
    validate_trace(file);
    ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(file.dim);
    w.u32(file.vocab_size);
    w.u64(file.sequences.size());
    for (const Sequence& seq : file.sequences) {
        w.u64(seq.length());
        for (size_t i = 0; i < seq.length(); ++i) {
            w.f32_block(seq.vectors.data() + i * file.dim, file.dim);
            w.u32(seq.tokens[i]);
        }
    }
    return w.bytes();
}

TraceFile parse_trace(std::span<const uint8_t> bytes) {
    ByteReader r(bytes);
    r.magic(kMagic, "trace file");
    uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError(FormatErrorKind::UnsupportedVersion, r.offset() - 4,
                          "unsupported trace version " + std::to_string(version));
    }
    TraceFile file;
    file.dim = r.u32("dim");
    file.vocab_size = r.u32("vocab_size");
    if (file.dim == 0) {
        throw FormatError(FormatErrorKind::Malformed, r.offset() - 8, "dim must be positive");
    }
    if (file.vocab_size == 0) {
        throw FormatError(FormatErrorKind::Malformed, r.offset() - 4,
                          "vocab_size must be positive");
    }
    uint64_t num_sequences = r.u64("num_sequences");
    file.sequences.reserve(num_sequences);
    for (uint64_t m = 0; m < num_sequences; ++m) {
        uint64_t len = r.u64("sequence length");
        if (len == 0) {
            throw FormatError(FormatErrorKind::Malformed, r.offset() - 8,
                              "sequence of length 0");
        }
        Sequence seq;
        seq.vectors.resize(len * file.dim);
        seq.tokens.reserve(len);
        for (uint64_t i = 0; i < len; ++i) {
            size_t vec_off = r.offset();
            r.f32_block(seq.vectors.data() + i * file.dim, file.dim, "record vector");
            for (uint32_t j = 0; j < file.dim; ++j) {
                if (!std::isfinite(seq.vectors[i * file.dim + j])) {
                    throw FormatError(FormatErrorKind::NonFinite, vec_off + 4ull * j,
                                      "non-finite vector component");
                }
            }
            TokenId token = r.u32("record token");
            if (token >= file.vocab_size) {
                throw FormatError(FormatErrorKind::TokenOutOfRange, r.offset() - 4,
                                  "token id " + std::to_string(token) + " >= vocab_size");
            }
            seq.tokens.push_back(token);
        }
        file.sequences.push_back(std::move(seq));
    }
    if (!r.at_end()) {
        throw FormatError(FormatErrorKind::Malformed, r.offset(),
                          "trailing bytes after trace payload");
    }
    return file;
}

void write_trace(const TraceFile& file, const std::filesystem::path& path) {
    std::vector<uint8_t> bytes = serialize_trace(file);
    write_file_atomic(path, bytes);
}

TraceFile read_trace(const std::filesystem::path& path) {
    return parse_trace(read_file_bytes(path));
}

}  // namespace retomaton
