#pragma once

#include <optional>

#include "retomaton/decode.hpp"
#include "retomaton/gold.hpp"

namespace retomaton {

struct EvalConfig {
    Strategy strategy = Strategy::Automaton;
    PointerMode pointer_mode = PointerMode::Cluster;
    RetrievalHyperparams hp;
    bool exact_global = false;
};

struct EvalReport {
    std::string datastore_label;
    Strategy strategy = Strategy::Automaton;
    RetrievalHyperparams hp;
    uint32_t clusters = 0;
    size_t positions = 0;

    double ppl = 0.0;
    double nll = 0.0;  // nats per token
    std::optional<double> kld;

    double fb_automaton = 0.0;
    double fb_cluster = 0.0;
    double fb_global = 0.0;
    double fb_knn = 0.0;
    double cand_mean = 0.0;
    double us_per_token = 0.0;
};

/// KL(p || q) in nats; +inf when q lacks mass where p has it.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Teacher-forced pass over the held-out trace. Queries use the stored
/// hidden vectors; the LM contributes the interpolated base distribution.
EvalReport evaluate(const LmInterface& lm, const Automaton& aut, const ClusterModel& model,
                    const Datastore& ds, const NnIndex& index, const EvalConfig& cfg,
                    const TraceFile& heldout, const GoldOracle* gold = nullptr);

std::vector<RetrievalHyperparams> hyperparam_grid(const std::vector<size_t>& ks,
                                                  const std::vector<double>& lambdas,
                                                  const std::vector<double>& temperatures);

struct StrategyRun {
    std::string label;
    const Automaton* aut = nullptr;
    const ClusterModel* model = nullptr;
    const Datastore* ds = nullptr;
    const NnIndex* index = nullptr;
    EvalConfig cfg;
};

/// One report per run; asserts nothing itself.
std::vector<EvalReport> compare_strategies(const LmInterface& lm,
                                           const std::vector<StrategyRun>& runs,
                                           const TraceFile& heldout,
                                           const GoldOracle* gold = nullptr);

/// Re-clusters, rebuilds the automaton, and evaluates per cluster count.
std::vector<EvalReport> sweep_clusters(const LmInterface& lm, const Datastore& base,
                                       const NnIndex& index, const std::vector<uint32_t>& k_list,
                                       const std::vector<EvalConfig>& cfgs,
                                       const TraceFile& heldout, const GoldOracle* gold,
                                       uint64_t seed);

std::string report_csv_header();
std::string report_csv_row(const EvalReport& report, bool include_timing);
std::string render_report_table(const std::vector<EvalReport>& reports);

}  // namespace retomaton
