#include "retomaton/gold.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace retomaton {

void validate_gold_spec(const GoldAutomatonSpec& spec) {
    if (spec.num_states == 0) throw std::invalid_argument("gold spec: num_states must be positive");
    if (spec.vocab_size == 0) throw std::invalid_argument("gold spec: vocab_size must be positive");
    if (spec.dim == 0) throw std::invalid_argument("gold spec: dim must be positive");
    if (spec.emission_noise < 0.0) {
        throw std::invalid_argument("gold spec: emission_noise must be nonnegative");
    }
    if (spec.transitions.size() != spec.num_states) {
        throw std::invalid_argument("gold spec: one transition table required per state");
    }
    for (StateId q = 0; q < spec.num_states; ++q) {
        double total = 0.0;
        if (spec.transitions[q].empty()) {
            throw std::invalid_argument("gold spec: state " + std::to_string(q) +
                                        " has no outgoing transitions");
        }
        for (const GoldTransition& t : spec.transitions[q]) {
            if (t.token >= spec.vocab_size) {
                throw std::invalid_argument("gold spec: transition token out of range");
            }
            if (t.next_state >= spec.num_states) {
                throw std::invalid_argument("gold spec: transition next_state out of range");
            }
            if (t.prob < 0.0) throw std::invalid_argument("gold spec: negative probability");
            total += t.prob;
        }
        if (std::abs(total - 1.0) > 1e-9) {
            throw std::invalid_argument("gold spec: state " + std::to_string(q) +
                                        " probabilities sum to " + std::to_string(total));
        }
    }
}

GoldAutomatonSpec load_gold_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open gold spec: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in);
    GoldAutomatonSpec spec;
    spec.num_states = j.at("num_states").get<uint32_t>();
    spec.vocab_size = j.at("vocab_size").get<uint32_t>();
    spec.dim = j.at("dim").get<uint32_t>();
    spec.emission_noise = j.at("emission_noise").get<double>();
    spec.seed = j.at("seed").get<uint64_t>();
    for (const auto& state_row : j.at("transitions")) {
        std::vector<GoldTransition> row;
        for (const auto& t : state_row) {
            row.push_back({t.at("token").get<TokenId>(), t.at("next").get<StateId>(),
                           t.at("prob").get<double>()});
        }
        spec.transitions.push_back(std::move(row));
    }
    validate_gold_spec(spec);
    return spec;
}

void save_gold_spec(const GoldAutomatonSpec& spec, const std::filesystem::path& path) {
    validate_gold_spec(spec);
    nlohmann::json j;
    j["num_states"] = spec.num_states;
    j["vocab_size"] = spec.vocab_size;
    j["dim"] = spec.dim;
    j["emission_noise"] = spec.emission_noise;
    j["seed"] = spec.seed;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : spec.transitions) {
        nlohmann::json out_row = nlohmann::json::array();
        for (const GoldTransition& t : row) {
            out_row.push_back({{"token", t.token}, {"next", t.next_state}, {"prob", t.prob}});
        }
        rows.push_back(std::move(out_row));
    }
    j["transitions"] = std::move(rows);
    std::string text = j.dump(2);
    text += '\n';
    write_file_atomic(path, std::span<const uint8_t>(
                                reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

GoldOracle::GoldOracle(GoldAutomatonSpec spec, std::vector<std::vector<StateId>> states)
    : spec_(std::move(spec)), states_(std::move(states)) {
    marginals_.assign(spec_.num_states, std::vector<double>(spec_.vocab_size, 0.0));
    for (StateId q = 0; q < spec_.num_states; ++q) {
        for (const GoldTransition& t : spec_.transitions[q]) {
            marginals_[q][t.token] += t.prob;
        }
    }
}

const std::vector<double>& GoldOracle::distribution(size_t seq, size_t pos) const {
    return marginals_.at(states_.at(seq).at(pos));
}

const std::vector<double>& GoldOracle::state_distribution(StateId state) const {
    return marginals_.at(state);
}

namespace {

// The start-of-sequence pseudo token occupies the last row block of the
// embedding table; it never appears in the vocabulary.
size_t embedding_row(const GoldAutomatonSpec& spec, StateId state, TokenId last_token) {
    return static_cast<size_t>(state) * (spec.vocab_size + 1) + last_token;
}

}  // namespace

GoldCorpus generate_gold_corpus(const GoldAutomatonSpec& spec, size_t num_sequences,
                                size_t seq_len) {
    validate_gold_spec(spec);
    if (seq_len == 0) throw std::invalid_argument("seq_len must be positive");

    // Base embeddings drawn once from a dedicated stream so the table is
    // independent of how many sequences are sampled.
    size_t rows = static_cast<size_t>(spec.num_states) * (spec.vocab_size + 1);
    std::vector<double> base(rows * spec.dim);
    {
        std::mt19937_64 rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (double& v : base) v = gauss(rng);
    }

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 1.0);

    TraceFile trace;
    trace.dim = spec.dim;
    trace.vocab_size = spec.vocab_size;
    std::vector<std::vector<StateId>> states(num_sequences);

    for (size_t m = 0; m < num_sequences; ++m) {
        Sequence seq;
        seq.vectors.resize(seq_len * spec.dim);
        seq.tokens.reserve(seq_len);
        states[m].reserve(seq_len);

        StateId state = 0;
        TokenId last_token = spec.vocab_size;  // start sentinel
        for (size_t i = 0; i < seq_len; ++i) {
            states[m].push_back(state);
            const double* row = base.data() + embedding_row(spec, state, last_token) * spec.dim;
            for (uint32_t j = 0; j < spec.dim; ++j) {
                double v = row[j];
                if (spec.emission_noise > 0.0) v += spec.emission_noise * noise(rng);
                seq.vectors[i * spec.dim + j] = static_cast<float>(v);
            }
            double u = unif(rng);
            double acc = 0.0;
            const GoldTransition* chosen = &spec.transitions[state].back();
            for (const GoldTransition& t : spec.transitions[state]) {
                acc += t.prob;
                if (u < acc) {
                    chosen = &t;
                    break;
                }
            }
            seq.tokens.push_back(chosen->token);
            last_token = chosen->token;
            state = chosen->next_state;
        }
        trace.sequences.push_back(std::move(seq));
    }

    return GoldCorpus{std::move(trace), GoldOracle(spec, std::move(states))};
}

GoldCorpus take_sequences(const GoldCorpus& corpus, size_t begin, size_t end) {
    if (begin > end || end > corpus.trace.sequences.size()) {
        throw std::invalid_argument("take_sequences: range out of bounds");
    }
    GoldCorpus out;
    out.trace.dim = corpus.trace.dim;
    out.trace.vocab_size = corpus.trace.vocab_size;
    std::vector<std::vector<StateId>> states;
    for (size_t m = begin; m < end; ++m) {
        out.trace.sequences.push_back(corpus.trace.sequences[m]);
        states.push_back(std::vector<StateId>());
        for (size_t i = 0; i < corpus.trace.sequences[m].length(); ++i) {
            states.back().push_back(corpus.oracle.state_at(m, i));
        }
    }
    out.oracle = GoldOracle(corpus.oracle.spec(), std::move(states));
    return out;
}

TraceFile concat_traces(const TraceFile& base, const TraceFile& extra) {
    if (base.dim != extra.dim || base.vocab_size != extra.vocab_size) {
        throw std::invalid_argument("concat_traces: dim/vocab mismatch");
    }
    TraceFile out = base;
    out.sequences.insert(out.sequences.end(), extra.sequences.begin(), extra.sequences.end());
    return out;
}

}  // namespace retomaton
