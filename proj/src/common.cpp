#include "retomaton/common.hpp"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <thread>

namespace retomaton {

const char* format_error_kind_name(FormatErrorKind kind) {
    switch (kind) {
        case FormatErrorKind::BadMagic: return "BadMagic";
        case FormatErrorKind::UnsupportedVersion: return "UnsupportedVersion";
        case FormatErrorKind::Truncated: return "Truncated";
        case FormatErrorKind::TokenOutOfRange: return "TokenOutOfRange";
        case FormatErrorKind::NonFinite: return "NonFinite";
        case FormatErrorKind::DimensionMismatch: return "DimensionMismatch";
        case FormatErrorKind::Malformed: return "Malformed";
    }
    return "Unknown";
}

void ByteReader::need(size_t n, const char* what) {
    if (buf_.size() - off_ < n) {
        throw FormatError(FormatErrorKind::Truncated, off_,
                          std::string("truncated while reading ") + what);
    }
}

uint8_t ByteReader::u8(const char* what) {
    need(1, what);
    return buf_[off_++];
}

uint32_t ByteReader::u32(const char* what) {
    need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf_[off_ + i]) << (8 * i);
    off_ += 4;
    return v;
}

uint64_t ByteReader::u64(const char* what) {
    need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf_[off_ + i]) << (8 * i);
    off_ += 8;
    return v;
}

int64_t ByteReader::i64(const char* what) { return static_cast<int64_t>(u64(what)); }

float ByteReader::f32(const char* what) {
    uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
}

void ByteReader::magic(const char expected[4], const char* what) {
    need(4, what);
    if (std::memcmp(buf_.data() + off_, expected, 4) != 0) {
        throw FormatError(FormatErrorKind::BadMagic, off_,
                          std::string("bad magic for ") + what);
    }
    off_ += 4;
}

void ByteReader::f32_block(float* dst, size_t count, const char* what) {
    need(count * 4, what);
    for (size_t i = 0; i < count; ++i) {
        uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<uint32_t>(buf_[off_ + 4 * i + b]) << (8 * b);
        std::memcpy(dst + i, &bits, sizeof(float));
    }
    off_ += count * 4;
}

void ByteWriter::u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    u32(bits);
}

void ByteWriter::magic(const char m[4]) {
    buf_.insert(buf_.end(), m, m + 4);
}

void ByteWriter::f32_block(const float* src, size_t count) {
    buf_.reserve(buf_.size() + count * 4);
    for (size_t i = 0; i < count; ++i) f32(src[i]);
}

std::vector<uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (in.bad()) throw std::runtime_error("I/O error reading: " + path.string());
    return bytes;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open file for writing: " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("I/O error writing: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<std::string> read_vocab(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open vocab file: " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return tokens;
}

void write_vocab(const std::filesystem::path& path, const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        out += t;
        out += '\n';
    }
    write_file_atomic(path, std::span<const uint8_t>(
                                reinterpret_cast<const uint8_t*>(out.data()), out.size()));
}

std::string token_text(TokenId token, const std::vector<std::string>* vocab) {
    if (vocab && token < vocab->size()) return (*vocab)[token];
    return "<" + std::to_string(token) + ">";
}

unsigned effective_thread_count() {
    if (const char* env = std::getenv("RETOMATON_THREADS")) {
        long n = std::strtol(env, nullptr, 10);
        if (n > 0) return static_cast<unsigned>(n);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

double squared_distance(std::span<const float> stored, std::span<const double> query) {
    double acc = 0.0;
    for (size_t j = 0; j < query.size(); ++j) {
        double diff = static_cast<double>(stored[j]) - query[j];
        acc += diff * diff;
    }
    return acc;
}

}  // namespace retomaton
