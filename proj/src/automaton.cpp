#include "retomaton/automaton.hpp"

#include <algorithm>
#include <set>

namespace retomaton {

namespace {
constexpr char kMagic[4] = {'R', 'T', 'W', 'A'};
constexpr uint32_t kVersion = 1;
}  // namespace

const std::vector<EntryId>* Automaton::support_for(StateId q, TokenId y) const {
    auto it = support_by_token[q].find(y);
    return it == support_by_token[q].end() ? nullptr : &it->second;
}

const std::vector<StateId>* Automaton::successors(StateId q, TokenId y) const {
    auto it = delta[q].find(y);
    return it == delta[q].end() ? nullptr : &it->second;
}

Automaton build_automaton(const Datastore& ds) {
    if (!ds.has_clusters) {
        throw std::invalid_argument("build_automaton: datastore is not cluster-annotated");
    }
    int64_t max_cluster = -1;
    for (size_t e = 0; e < ds.size(); ++e) {
        if (ds.cluster[e] < 0) {
            throw std::invalid_argument("build_automaton: entry without cluster assignment");
        }
        max_cluster = std::max(max_cluster, ds.cluster[e]);
    }

    Automaton aut;
    aut.num_states = static_cast<uint32_t>(max_cluster + 1);
    aut.support.resize(aut.num_states);
    aut.support_by_token.resize(aut.num_states);
    aut.delta.resize(aut.num_states);

    for (size_t e = 0; e < ds.size(); ++e) {
        if (!ds.valid[e]) continue;
        StateId q = static_cast<StateId>(ds.cluster[e]);
        TokenId y = ds.tokens[e];
        aut.support[q].push_back(static_cast<EntryId>(e));
        aut.support_by_token[q][y].push_back(static_cast<EntryId>(e));
        EntryId succ = ds.successor[e];
        StateId q_next = static_cast<StateId>(ds.cluster[succ]);
        auto& succs = aut.delta[q][y];
        if (std::find(succs.begin(), succs.end(), q_next) == succs.end()) {
            succs.push_back(q_next);
        }
    }
    for (auto& per_state : aut.delta) {
        for (auto& [token, succs] : per_state) std::sort(succs.begin(), succs.end());
    }
    return aut;
}

PointerSet advance_pointers(const PointerSet& ps, const Datastore& ds, TokenId chosen_token) {
    PointerSet next;
    next.origin = PointerOrigin::Advanced;
    for (EntryId e : ps.entries) {
        if (ds.tokens[e] != chosen_token) continue;
        EntryId succ = ds.successor[e];
        if (succ == kNoEntry) continue;
        if (!ds.valid[succ]) continue;
        next.entries.push_back(succ);
    }
    std::sort(next.entries.begin(), next.entries.end());
    next.entries.erase(std::unique(next.entries.begin(), next.entries.end()),
                       next.entries.end());
    return next;
}

std::vector<EntryId> expand_pointer_states(const PointerSet& ps, const Automaton& aut,
                                           const Datastore& ds, PointerMode mode) {
    std::vector<EntryId> out;
    if (mode == PointerMode::Strict) {
        for (EntryId e : ps.entries) {
            if (ds.valid[e]) out.push_back(e);
        }
        return out;
    }
    std::set<StateId> states;
    for (EntryId e : ps.entries) {
        if (ds.cluster[e] >= 0) states.insert(static_cast<StateId>(ds.cluster[e]));
    }
    for (StateId q : states) {
        out.insert(out.end(), aut.support[q].begin(), aut.support[q].end());
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<StateId> reachable_states(const Automaton& aut, StateId start) {
    std::vector<uint8_t> seen(aut.num_states, 0);
    std::vector<StateId> stack{start};
    std::vector<StateId> out;
    seen[start] = 1;
    while (!stack.empty()) {
        StateId q = stack.back();
        stack.pop_back();
        out.push_back(q);
        for (const auto& [token, succs] : aut.delta[q]) {
            for (StateId next : succs) {
                if (!seen[next]) {
                    seen[next] = 1;
                    stack.push_back(next);
                }
            }
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void save_automaton(const Automaton& aut, const std::filesystem::path& path) {
    ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(aut.num_states);
    for (StateId q = 0; q < aut.num_states; ++q) {
        w.u64(aut.support[q].size());
        for (EntryId e : aut.support[q]) w.u64(static_cast<uint64_t>(e));
        w.u32(static_cast<uint32_t>(aut.support_by_token[q].size()));
        for (const auto& [token, entries] : aut.support_by_token[q]) {
            w.u32(token);
            w.u64(entries.size());
            for (EntryId e : entries) w.u64(static_cast<uint64_t>(e));
            const std::vector<StateId>* succs = aut.successors(q, token);
            w.u32(succs ? static_cast<uint32_t>(succs->size()) : 0);
            if (succs) {
                for (StateId s : *succs) w.u32(s);
            }
        }
    }
    write_file_atomic(path, w.bytes());
}

Automaton load_automaton(const std::filesystem::path& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.magic(kMagic, "automaton file");
    uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError(FormatErrorKind::UnsupportedVersion, r.offset() - 4,
                          "unsupported automaton version " + std::to_string(version));
    }
    Automaton aut;
    aut.num_states = r.u32("num_states");
    aut.support.resize(aut.num_states);
    aut.support_by_token.resize(aut.num_states);
    aut.delta.resize(aut.num_states);
    for (StateId q = 0; q < aut.num_states; ++q) {
        uint64_t support_size = r.u64("support size");
        aut.support[q].reserve(support_size);
        for (uint64_t i = 0; i < support_size; ++i) {
            aut.support[q].push_back(static_cast<EntryId>(r.u64("support entry id")));
        }
        uint32_t num_tokens = r.u32("token count");
        for (uint32_t t = 0; t < num_tokens; ++t) {
            TokenId token = r.u32("token");
            uint64_t count = r.u64("token support size");
            std::vector<EntryId> entries;
            entries.reserve(count);
            for (uint64_t i = 0; i < count; ++i) {
                entries.push_back(static_cast<EntryId>(r.u64("token support entry id")));
            }
            aut.support_by_token[q][token] = std::move(entries);
            uint32_t num_succs = r.u32("successor count");
            if (num_succs > 0) {
                std::vector<StateId> succs;
                succs.reserve(num_succs);
                for (uint32_t i = 0; i < num_succs; ++i) {
                    StateId s = r.u32("successor state");
                    if (s >= aut.num_states) {
                        throw FormatError(FormatErrorKind::Malformed, r.offset() - 4,
                                          "successor state out of range");
                    }
                    succs.push_back(s);
                }
                aut.delta[q][token] = std::move(succs);
            }
        }
    }
    if (!r.at_end()) {
        throw FormatError(FormatErrorKind::Malformed, r.offset(),
                          "trailing bytes after automaton payload");
    }
    return aut;
}

}  // namespace retomaton
