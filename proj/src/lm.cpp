#include "retomaton/lm.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace retomaton {

namespace {

/// Spectral radius estimate via power-iteration log-growth averaging.
double spectral_radius(const std::vector<double>& m, uint32_t dim) {
    std::vector<double> v(dim, 1.0);
    std::vector<double> next(dim);
    double norm = std::sqrt(static_cast<double>(dim));
    for (double& x : v) x /= norm;

    double log_growth = 0.0;
    int samples = 0;
    for (int iter = 0; iter < 200; ++iter) {
        for (uint32_t i = 0; i < dim; ++i) {
            double acc = 0.0;
            for (uint32_t j = 0; j < dim; ++j) acc += m[i * dim + j] * v[j];
            next[i] = acc;
        }
        double n = 0.0;
        for (double x : next) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-300) return 0.0;
        if (iter >= 100) {
            log_growth += std::log(n);
            ++samples;
        }
        for (uint32_t i = 0; i < dim; ++i) v[i] = next[i] / n;
    }
    return std::exp(log_growth / samples);
}

}  // namespace

ToyLm::ToyLm(uint32_t vocab_size, uint32_t dim, uint64_t seed, uint32_t order, double alpha)
    : vocab_size_(vocab_size), dim_(dim), seed_(seed), order_(order), alpha_(alpha) {
    if (vocab_size == 0) throw std::invalid_argument("ToyLm: vocab_size must be positive");
    if (dim == 0) throw std::invalid_argument("ToyLm: dim must be positive");
    if (order == 0) throw std::invalid_argument("ToyLm: order must be positive");
    if (alpha <= 0.0) throw std::invalid_argument("ToyLm: alpha must be positive");

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    embedding_.resize(static_cast<size_t>(vocab_size) * dim);
    for (double& v : embedding_) v = gauss(rng);
    w_hidden_.resize(static_cast<size_t>(dim) * dim);
    for (double& v : w_hidden_) v = gauss(rng);
    w_input_.resize(static_cast<size_t>(dim) * dim);
    for (double& v : w_input_) v = gauss(rng);

    double rho_h = spectral_radius(w_hidden_, dim);
    if (rho_h > 0.0) {
        for (double& v : w_hidden_) v *= 0.9 / rho_h;
    }
    double rho_x = spectral_radius(w_input_, dim);
    if (rho_x > 0.0) {
        for (double& v : w_input_) v *= 0.9 / rho_x;
    }
}

void ToyLm::set_alpha(double alpha) {
    if (alpha <= 0.0) throw std::invalid_argument("ToyLm: alpha must be positive");
    alpha_ = alpha;
}

void ToyLm::accumulate_counts(std::span<const TokenId> tokens) {
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] >= vocab_size_) throw std::invalid_argument("ToyLm: token out of range");
        size_t max_len = std::min<size_t>(i, order_ - 1);
        for (size_t len = 0; len <= max_len; ++len) {
            std::vector<TokenId> ctx(tokens.begin() + (i - len), tokens.begin() + i);
            ContextCounts& cc = counts_[std::move(ctx)];
            cc.total++;
            auto it = std::lower_bound(
                cc.by_token.begin(), cc.by_token.end(), tokens[i],
                [](const auto& a, TokenId t) { return a.first < t; });
            if (it != cc.by_token.end() && it->first == tokens[i]) {
                it->second++;
            } else {
                cc.by_token.insert(it, {tokens[i], 1});
            }
        }
    }
}

const ToyLm::ContextCounts* ToyLm::lookup(std::span<const TokenId> context) const {
    size_t max_len = std::min<size_t>(context.size(), order_ - 1);
    for (size_t len = max_len; len != static_cast<size_t>(-1); --len) {
        std::vector<TokenId> ctx(context.end() - len, context.end());
        auto it = counts_.find(ctx);
        if (it != counts_.end()) return &it->second;
        if (len == 0) break;
    }
    return nullptr;
}

LmInterface::State ToyLm::initial_state(std::span<const TokenId> prompt) const {
    State state;
    state.hidden.assign(dim_, 0.0);
    for (TokenId t : prompt) state = step(state, t);
    return state;
}

LmInterface::State ToyLm::step(const State& state, TokenId token) const {
    if (token >= vocab_size_) throw std::invalid_argument("ToyLm: token out of range");
    if (state.hidden.size() != dim_) throw std::invalid_argument("ToyLm: bad state dimension");
    State next;
    next.hidden.resize(dim_);
    const double* emb = embedding_.data() + static_cast<size_t>(token) * dim_;
    for (uint32_t i = 0; i < dim_; ++i) {
        double acc = 0.0;
        for (uint32_t j = 0; j < dim_; ++j) {
            acc += w_hidden_[i * dim_ + j] * state.hidden[j] + w_input_[i * dim_ + j] * emb[j];
        }
        next.hidden[i] = std::tanh(acc);
    }
    next.context = state.context;
    next.context.push_back(token);
    if (next.context.size() > order_ - 1) {
        next.context.erase(next.context.begin(),
                           next.context.end() - (order_ - 1));
    }
    return next;
}

std::vector<double> ToyLm::next_distribution(const State& state) const {
    const ContextCounts* cc = lookup(state.context);
    std::vector<double> probs(vocab_size_);
    uint64_t total = cc ? cc->total : 0;
    double denom = static_cast<double>(total) + alpha_ * vocab_size_;
    for (TokenId y = 0; y < vocab_size_; ++y) probs[y] = alpha_ / denom;
    if (cc) {
        for (const auto& [token, count] : cc->by_token) {
            probs[token] = (static_cast<double>(count) + alpha_) / denom;
        }
    }
    return probs;
}

ToyLm fit_toy_lm(const TraceFile& corpus, uint64_t seed, uint32_t order, double alpha) {
    if (corpus.sequences.empty()) throw std::invalid_argument("fit_toy_lm: empty corpus");
    ToyLm lm(corpus.vocab_size, corpus.dim, seed, order, alpha);
    for (const Sequence& seq : corpus.sequences) lm.accumulate_counts(seq.tokens);
    return lm;
}

ToyLm fit_toy_lm(const std::vector<std::vector<TokenId>>& sequences, uint32_t vocab_size,
                 uint32_t dim, uint64_t seed, uint32_t order, double alpha) {
    if (sequences.empty()) throw std::invalid_argument("fit_toy_lm: empty corpus");
    ToyLm lm(vocab_size, dim, seed, order, alpha);
    for (const auto& seq : sequences) lm.accumulate_counts(seq);
    return lm;
}

TraceFile record_lm_trace(const LmInterface& lm,
                          const std::vector<std::vector<TokenId>>& sequences) {
    TraceFile trace;
    trace.dim = lm.dim();
    trace.vocab_size = lm.vocab_size();
    for (const auto& tokens : sequences) {
        if (tokens.size() < 2) continue;  // no (hidden, next-token) pair to record
        Sequence seq;
        LmInterface::State state;
        state.hidden.assign(lm.dim(), 0.0);
        for (size_t t = 0; t + 1 < tokens.size(); ++t) {
            state = lm.step(state, tokens[t]);
            for (double v : state.hidden) seq.vectors.push_back(static_cast<float>(v));
            seq.tokens.push_back(tokens[t + 1]);
        }
        trace.sequences.push_back(std::move(seq));
    }
    return trace;
}

}  // namespace retomaton
