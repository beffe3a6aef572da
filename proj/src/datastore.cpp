#include "retomaton/datastore.hpp"

#include <cmath>

namespace retomaton {

namespace {
constexpr char kMagic[4] = {'R', 'T', 'D', 'S'};
constexpr uint32_t kVersion = 1;
}  // namespace

size_t Datastore::num_valid() const {
    size_t n = 0;
    for (uint8_t v : valid) n += v;
    return n;
}

Datastore build_datastore(const TraceFile& trace) {
    validate_trace(trace);
    Datastore ds;
    ds.dim = trace.dim;
    ds.vocab_size = trace.vocab_size;

    size_t total = 0;
    for (const Sequence& seq : trace.sequences) total += seq.length();
    ds.vectors.reserve(total * ds.dim);
    ds.tokens.reserve(total);
    ds.seq.reserve(total);
    ds.pos.reserve(total);
    ds.successor.reserve(total);
    ds.valid.reserve(total);
    ds.cluster.assign(total, kNoCluster);

    for (size_t m = 0; m < trace.sequences.size(); ++m) {
        const Sequence& seq = trace.sequences[m];
        EntryId first = static_cast<EntryId>(ds.tokens.size());
        for (size_t i = 0; i < seq.length(); ++i) {
            auto vec = seq.vector(i, ds.dim);
            ds.vectors.insert(ds.vectors.end(), vec.begin(), vec.end());
            ds.tokens.push_back(seq.tokens[i]);
            ds.seq.push_back(m);
            ds.pos.push_back(i);
            bool final = (i + 1 == seq.length());
            ds.successor.push_back(final ? kNoEntry : first + static_cast<EntryId>(i) + 1);
            ds.valid.push_back(final ? 0 : 1);
        }
    }
    return ds;
}

void save_datastore(const Datastore& ds, const std::filesystem::path& path) {
    ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(ds.dim);
    w.u32(ds.vocab_size);
    w.u64(ds.size());
    w.u8(ds.has_clusters ? 1 : 0);
    for (size_t e = 0; e < ds.size(); ++e) {
        w.f32_block(ds.vectors.data() + e * ds.dim, ds.dim);
        w.u32(ds.tokens[e]);
        w.u64(ds.seq[e]);
        w.u64(ds.pos[e]);
        w.i64(ds.successor[e]);
        w.u8(ds.valid[e]);
        w.i64(ds.cluster[e]);
    }
    write_file_atomic(path, w.bytes());
}

Datastore load_datastore(const std::filesystem::path& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.magic(kMagic, "datastore file");
    uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError(FormatErrorKind::UnsupportedVersion, r.offset() - 4,
                          "unsupported datastore version " + std::to_string(version));
    }
    Datastore ds;
    ds.dim = r.u32("dim");
    ds.vocab_size = r.u32("vocab_size");
    if (ds.dim == 0 || ds.vocab_size == 0) {
        throw FormatError(FormatErrorKind::Malformed, r.offset() - 8,
                          "dim and vocab_size must be positive");
    }
    uint64_t num_entries = r.u64("num_entries");
    ds.has_clusters = r.u8("has_clusters") != 0;
    ds.vectors.resize(num_entries * ds.dim);
    ds.tokens.reserve(num_entries);
    ds.seq.reserve(num_entries);
    ds.pos.reserve(num_entries);
    ds.successor.reserve(num_entries);
    ds.valid.reserve(num_entries);
    ds.cluster.reserve(num_entries);
    for (uint64_t e = 0; e < num_entries; ++e) {
        size_t vec_off = r.offset();
        r.f32_block(ds.vectors.data() + e * ds.dim, ds.dim, "entry vector");
        for (uint32_t j = 0; j < ds.dim; ++j) {
            if (!std::isfinite(ds.vectors[e * ds.dim + j])) {
                throw FormatError(FormatErrorKind::NonFinite, vec_off + 4ull * j,
                                  "non-finite entry component");
            }
        }
        TokenId token = r.u32("entry token");
        if (token >= ds.vocab_size) {
            throw FormatError(FormatErrorKind::TokenOutOfRange, r.offset() - 4,
                              "entry token id out of range");
        }
        ds.tokens.push_back(token);
        ds.seq.push_back(r.u64("entry seq"));
        ds.pos.push_back(r.u64("entry pos"));
        EntryId succ = r.i64("entry successor");
        if (succ != kNoEntry && (succ < 0 || static_cast<uint64_t>(succ) >= num_entries)) {
            throw FormatError(FormatErrorKind::Malformed, r.offset() - 8,
                              "successor entry id out of range");
        }
        ds.successor.push_back(succ);
        ds.valid.push_back(r.u8("entry valid"));
        ds.cluster.push_back(r.i64("entry cluster"));
    }
    if (!r.at_end()) {
        throw FormatError(FormatErrorKind::Malformed, r.offset(),
                          "trailing bytes after datastore payload");
    }
    return ds;
}

}  // namespace retomaton
