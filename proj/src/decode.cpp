#include "retomaton/decode.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace retomaton {

const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::Global: return "global";
        case Strategy::Cluster: return "cluster";
        case Strategy::Automaton: return "automaton";
        case Strategy::Pointer: return "pointer";
    }
    return "unknown";
}

Strategy strategy_from_name(const std::string& name) {
    if (name == "global") return Strategy::Global;
    if (name == "cluster") return Strategy::Cluster;
    if (name == "automaton") return Strategy::Automaton;
    if (name == "pointer") return Strategy::Pointer;
    throw std::invalid_argument("unknown strategy: " + name);
}

namespace {

std::string neighbor_context(const Datastore& ds, EntryId entry, size_t window,
                             const std::vector<std::string>* vocab) {
    // Entries of one sequence are laid out consecutively, so walking entry
    // ids backwards walks positions backwards within the sequence.
    uint64_t pos = ds.pos[entry];
    size_t take = std::min<size_t>(window, pos);
    std::string out;
    for (size_t i = take; i >= 1; --i) {
        out += token_text(ds.tokens[entry - static_cast<EntryId>(i)], vocab);
        if (i > 1) out += ' ';
    }
    return out;
}

std::vector<TraceNeighbor> collect_neighbors(const RetrievalDetail& detail, const Datastore& ds,
                                             const DecodeConfig& cfg,
                                             const std::vector<std::string>* vocab) {
    std::vector<TraceNeighbor> out;
    size_t n = std::min(cfg.trace_neighbors, detail.scored.size());
    for (size_t i = 0; i < n; ++i) {
        auto [entry, score] = detail.scored[i];
        out.push_back({entry, token_text(ds.tokens[entry], vocab),
                       neighbor_context(ds, entry, cfg.context_window, vocab), score});
    }
    return out;
}

int deepest_fallback(const TokenDistribution& dist) {
    int level = static_cast<int>(dist.strategy_used);
    for (size_t y = 0; y < dist.token_level.size(); ++y) {
        if (dist.probs[y] > 0.0 || dist.token_level[y] != Source::Automaton) {
            level = std::max(level, static_cast<int>(dist.token_level[y]));
        }
    }
    return level;
}

struct Hypothesis {
    LmInterface::State state;
    PointerSet pointers;
    std::vector<TokenId> tokens;
    double log_prob = 0.0;
    DecodeTrace trace;
    bool finished = false;
};

}  // namespace

DecodeResult decode(const LmInterface& lm, const Automaton& aut, const ClusterModel& model,
                    const Datastore& ds, const NnIndex& index, const DecodeConfig& cfg,
                    std::span<const TokenId> prompt, const std::vector<std::string>* vocab) {
    if (cfg.beam_width == 0) throw std::invalid_argument("decode: beam_width must be >= 1");
    validate_hyperparams(cfg.hp);
    for (TokenId t : prompt) {
        if (t >= lm.vocab_size()) {
            throw std::invalid_argument("decode: unknown token in prompt: " + std::to_string(t));
        }
    }

    std::vector<Hypothesis> beam(1);
    beam[0].state = lm.initial_state(prompt);

    GlobalOptions gopts{cfg.exact_global};

    for (uint32_t step = 0; step < cfg.max_new_tokens; ++step) {
        bool any_live = false;
        struct Candidate {
            size_t hyp;
            TokenId token;      // unused for finished pass-through
            double score;
            bool pass_through;
            TraceStep trace_step;
            PointerSet next_pointers;
        };
        std::vector<Candidate> candidates;

        for (size_t hi = 0; hi < beam.size(); ++hi) {
            Hypothesis& hyp = beam[hi];
            if (hyp.finished) {
                candidates.push_back({hi, 0, hyp.log_prob, true, {}, {}});
                continue;
            }
            any_live = true;

            std::vector<double> lm_probs = lm.next_distribution(hyp.state);
            std::span<const double> query(hyp.state.hidden);
            RetrievalDetail detail;
            detail.max_entries = std::max<size_t>(cfg.trace_neighbors, 1);

            TokenDistribution ret;
            PointerSet advanced_from;
            switch (cfg.strategy) {
                case Strategy::Global:
                    ret = p_global(ds, index, query, cfg.hp, gopts, &detail);
                    break;
                case Strategy::Cluster:
                    ret = p_cluster(aut, model, ds, index, query, cfg.hp, gopts, &detail);
                    break;
                case Strategy::Automaton:
                    ret = p_automaton(aut, model, ds, index, query, cfg.hp, gopts, &detail);
                    break;
                case Strategy::Pointer: {
                    PointerQueryResult pr =
                        p_pointer(hyp.pointers, aut, ds, index, query, cfg.hp, cfg.pointer_mode,
                                  &detail);
                    ret = std::move(pr.dist);
                    advanced_from = std::move(pr.pointers);
                    break;
                }
            }

            TokenDistribution final = interpolate(ret, lm_probs, cfg.hp.lambda);

            // Top beam_width tokens of this hypothesis suffice for the
            // global beam selection.
            std::vector<TokenId> order(final.probs.size());
            for (TokenId y = 0; y < order.size(); ++y) order[y] = y;
            size_t expand = std::min<size_t>(cfg.beam_width, order.size());
            std::partial_sort(order.begin(), order.begin() + expand, order.end(),
                              [&](TokenId a, TokenId b) {
                                  if (final.probs[a] != final.probs[b]) {
                                      return final.probs[a] > final.probs[b];
                                  }
                                  return a < b;
                              });

            std::vector<TraceNeighbor> neighbors = collect_neighbors(detail, ds, cfg, vocab);
            for (size_t r = 0; r < expand; ++r) {
                TokenId y = order[r];
                if (final.probs[y] <= 0.0) continue;
                Candidate cand;
                cand.hyp = hi;
                cand.token = y;
                cand.score = hyp.log_prob + std::log(final.probs[y]);
                cand.pass_through = false;
                cand.trace_step.step = step;
                cand.trace_step.strategy = ret.strategy_used;
                cand.trace_step.fallback_level = deepest_fallback(ret);
                cand.trace_step.neighbors = neighbors;
                cand.trace_step.chosen = y;
                cand.trace_step.p_lm = lm_probs[y];
                cand.trace_step.p_ret = ret.probs[y];
                cand.trace_step.p_final = final.probs[y];
                cand.trace_step.pointer_count =
                    cfg.strategy == Strategy::Pointer ? advanced_from.size() : 0;
                cand.next_pointers = advanced_from;
                candidates.push_back(std::move(cand));
            }
        }

        if (!any_live) break;

        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) {
                             if (a.score != b.score) return a.score > b.score;
                             if (a.hyp != b.hyp) return a.hyp < b.hyp;
                             return a.token < b.token;
                         });
        size_t keep = std::min<size_t>(cfg.beam_width, candidates.size());

        std::vector<Hypothesis> next_beam;
        next_beam.reserve(keep);
        for (size_t c = 0; c < keep; ++c) {
            Candidate& cand = candidates[c];
            const Hypothesis& parent = beam[cand.hyp];
            if (cand.pass_through) {
                next_beam.push_back(parent);
                continue;
            }
            Hypothesis child;
            child.state = lm.step(parent.state, cand.token);
            child.tokens = parent.tokens;
            child.tokens.push_back(cand.token);
            child.log_prob = cand.score;
            child.trace = parent.trace;
            child.trace.steps.push_back(std::move(cand.trace_step));
            if (cfg.strategy == Strategy::Pointer) {
                child.pointers = advance_pointers(cand.next_pointers, ds, cand.token);
            }
            child.finished = cfg.eos_token && cand.token == *cfg.eos_token;
            next_beam.push_back(std::move(child));
        }
        beam = std::move(next_beam);
    }

    // Returned hypothesis has log-probability >= every survivor.
    size_t best = 0;
    for (size_t hi = 1; hi < beam.size(); ++hi) {
        if (beam[hi].log_prob > beam[best].log_prob) best = hi;
    }
    DecodeResult result;
    result.tokens = beam[best].tokens;
    result.trace = beam[best].trace;
    result.log_prob = beam[best].log_prob;
    size_t knn_steps = 0;
    for (const TraceStep& s : result.trace.steps) {
        if (s.strategy == Source::KnnFallback) ++knn_steps;
    }
    result.knn_fallback_rate =
        result.trace.steps.empty() ? 0.0
                                   : static_cast<double>(knn_steps) / result.trace.steps.size();
    return result;
}

std::string emit_trace(const DecodeTrace& trace, TraceFormat format) {
    if (format == TraceFormat::Jsonl) {
        std::string out;
        for (const TraceStep& s : trace.steps) {
            nlohmann::ordered_json j;
            j["step"] = s.step;
            j["strategy"] = source_name(s.strategy);
            j["fallback_level"] = s.fallback_level;
            nlohmann::ordered_json neighbors = nlohmann::ordered_json::array();
            for (const TraceNeighbor& n : s.neighbors) {
                neighbors.push_back({{"entry", n.entry},
                                     {"token", n.token},
                                     {"context", n.context},
                                     {"score", n.score}});
            }
            j["neighbors"] = std::move(neighbors);
            j["chosen"] = s.chosen;
            j["p_lm"] = s.p_lm;
            j["p_ret"] = s.p_ret;
            j["p_final"] = s.p_final;
            j["pointer_count"] = s.pointer_count;
            out += j.dump();
            out += '\n';
        }
        return out;
    }

    std::ostringstream out;
    for (const TraceStep& s : trace.steps) {
        out << "step " << s.step << ": strategy=" << source_name(s.strategy)
            << " fallback_level=" << s.fallback_level << " chosen=" << s.chosen
            << " p_lm=" << s.p_lm << " p_ret=" << s.p_ret << " p_final=" << s.p_final
            << " pointers=" << s.pointer_count << '\n';
        size_t rank = 1;
        for (const TraceNeighbor& n : s.neighbors) {
            out << "  " << rank++ << ". " << n.context << "\"" << n.token
                << "\" (entry " << n.entry << ", score " << n.score << ")\n";
        }
    }
    return out.str();
}

DecodeTrace parse_trace_jsonl(const std::string& text) {
    DecodeTrace trace;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        TraceStep s;
        s.step = j.at("step").get<uint32_t>();
        const std::string strat = j.at("strategy").get<std::string>();
        if (strat == "automaton") s.strategy = Source::Automaton;
        else if (strat == "cluster") s.strategy = Source::Cluster;
        else if (strat == "global") s.strategy = Source::Global;
        else if (strat == "knn_fallback") s.strategy = Source::KnnFallback;
        else throw std::invalid_argument("unknown strategy in trace: " + strat);
        s.fallback_level = j.at("fallback_level").get<int>();
        for (const auto& n : j.at("neighbors")) {
            s.neighbors.push_back({n.at("entry").get<EntryId>(),
                                   n.at("token").get<std::string>(),
                                   n.at("context").get<std::string>(),
                                   n.at("score").get<double>()});
        }
        s.chosen = j.at("chosen").get<TokenId>();
        s.p_lm = j.at("p_lm").get<double>();
        s.p_ret = j.at("p_ret").get<double>();
        s.p_final = j.at("p_final").get<double>();
        s.pointer_count = j.at("pointer_count").get<size_t>();
        trace.steps.push_back(std::move(s));
    }
    return trace;
}

}  // namespace retomaton
