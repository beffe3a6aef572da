#pragma once

#include <filesystem>
#include <map>

#include "retomaton/datastore.hpp"

namespace retomaton {

enum class PointerMode {
    Strict,   // s_q = the current pointer entries themselves
    Cluster,  // s_q = union of supports of the pointer entries' clusters
};

enum class PointerOrigin { Initial, Advanced, FallbackKnn };

/// Current candidate set of a decode session. Entry ids are kept sorted and
/// unique; masked entries appear only transiently before filtering.
struct PointerSet {
    std::vector<EntryId> entries;
    PointerOrigin origin = PointerOrigin::Initial;

    bool empty() const { return entries.empty(); }
    size_t size() const { return entries.size(); }
};

/// The WFA scaffold: states are cluster ids, supports hold the valid entries
/// per state (and per token), delta holds the observed successor states.
/// Transition weights are query-conditioned and never stored.
struct Automaton {
    uint32_t num_states = 0;
    std::vector<std::vector<EntryId>> support;                       // S(q), sorted ids
    std::vector<std::map<TokenId, std::vector<EntryId>>> support_by_token;  // S(q, y)
    std::vector<std::map<TokenId, std::vector<StateId>>> delta;      // sorted state ids

    const std::vector<EntryId>* support_for(StateId q, TokenId y) const;
    const std::vector<StateId>* successors(StateId q, TokenId y) const;

    bool operator==(const Automaton&) const = default;
};

/// Single pass over the valid entries of an annotated datastore.
Automaton build_automaton(const Datastore& ds);

PointerSet advance_pointers(const PointerSet& ps, const Datastore& ds, TokenId chosen_token);

std::vector<EntryId> expand_pointer_states(const PointerSet& ps, const Automaton& aut,
                                           const Datastore& ds, PointerMode mode);

/// States reachable from `start` via delta over any token.
std::vector<StateId> reachable_states(const Automaton& aut, StateId start);

void save_automaton(const Automaton& aut, const std::filesystem::path& path);
Automaton load_automaton(const std::filesystem::path& path);

}  // namespace retomaton
