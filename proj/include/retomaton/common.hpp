#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace retomaton {

using TokenId = uint32_t;
using EntryId = int64_t;
using StateId = uint32_t;

constexpr EntryId kNoEntry = -1;
constexpr int64_t kNoCluster = -1;

enum class FormatErrorKind {
    BadMagic,
    UnsupportedVersion,
    Truncated,
    TokenOutOfRange,
    NonFinite,
    DimensionMismatch,
    Malformed,
};

/// File-format violation carrying the byte offset of the offending field.
class FormatError : public std::runtime_error {
public:
    FormatError(FormatErrorKind kind, uint64_t offset, const std::string& what)
        : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"),
          kind(kind),
          offset(offset) {}

    FormatErrorKind kind;
    uint64_t offset;
};

const char* format_error_kind_name(FormatErrorKind kind);

// ---------------------------------------------------------------------------
// Little-endian binary buffers
// ---------------------------------------------------------------------------

class ByteReader {
public:
    explicit ByteReader(std::span<const uint8_t> buf) : buf_(buf) {}

    size_t offset() const { return off_; }
    size_t remaining() const { return buf_.size() - off_; }
    bool at_end() const { return off_ == buf_.size(); }

    uint8_t u8(const char* what);
    uint32_t u32(const char* what);
    uint64_t u64(const char* what);
    int64_t i64(const char* what);
    float f32(const char* what);
    void magic(const char expected[4], const char* what);
    void f32_block(float* dst, size_t count, const char* what);

private:
    void need(size_t n, const char* what);

    std::span<const uint8_t> buf_;
    size_t off_ = 0;
};

class ByteWriter {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u32(uint32_t v);
    void u64(uint64_t v);
    void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
    void f32(float v);
    void magic(const char m[4]);
    void f32_block(const float* src, size_t count);

    const std::vector<uint8_t>& bytes() const { return buf_; }

private:
    std::vector<uint8_t> buf_;
};

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Writes via a temp file in the same directory, then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::span<const uint8_t> bytes);

// ---------------------------------------------------------------------------
// Vocabulary files: UTF-8, one token string per line, line number = token id.
// ---------------------------------------------------------------------------

std::vector<std::string> read_vocab(const std::filesystem::path& path);
void write_vocab(const std::filesystem::path& path, const std::vector<std::string>& tokens);

/// Token rendering for traces: vocab string when available, else the id.
std::string token_text(TokenId token, const std::vector<std::string>* vocab);

/// Thread cap from RETOMATON_THREADS (0 or unset = hardware concurrency).
unsigned effective_thread_count();

double squared_distance(std::span<const float> stored, std::span<const double> query);

}  // namespace retomaton
