#include "retomaton/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace retomaton {

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: size mismatch");
    double kl = 0.0;
    for (size_t y = 0; y < p.size(); ++y) {
        if (p[y] <= 0.0) continue;
        if (q[y] <= 0.0) return std::numeric_limits<double>::infinity();
        kl += p[y] * std::log(p[y] / q[y]);
    }
    return kl < 0.0 ? 0.0 : kl;  // clamp tiny negative rounding residue
}

EvalReport evaluate(const LmInterface& lm, const Automaton& aut, const ClusterModel& model,
                    const Datastore& ds, const NnIndex& index, const EvalConfig& cfg,
                    const TraceFile& heldout, const GoldOracle* gold) {
    validate_trace(heldout);
    validate_hyperparams(cfg.hp);
    if (heldout.dim != ds.dim || heldout.vocab_size != ds.vocab_size) {
        throw std::invalid_argument("evaluate: held-out dim/vocab mismatch with datastore");
    }
    if (heldout.vocab_size != lm.vocab_size()) {
        throw std::invalid_argument("evaluate: held-out vocab mismatch with LM");
    }

    EvalReport report;
    report.strategy = cfg.strategy;
    report.hp = cfg.hp;
    report.clusters = model.k;

    GlobalOptions gopts{cfg.exact_global};
    double nll_sum = 0.0;
    double kld_sum = 0.0;
    size_t positions = 0;
    size_t fb_counts[4] = {0, 0, 0, 0};
    double cand_sum = 0.0;

    auto t0 = std::chrono::steady_clock::now();
    for (size_t m = 0; m < heldout.sequences.size(); ++m) {
        const Sequence& seq = heldout.sequences[m];
        LmInterface::State lm_state = lm.initial_state({});
        PointerSet pointers;

        std::vector<double> query(heldout.dim);
        for (size_t i = 0; i < seq.length(); ++i) {
            auto v = seq.vector(i, heldout.dim);
            for (uint32_t j = 0; j < heldout.dim; ++j) query[j] = v[j];

            std::vector<double> lm_probs = lm.next_distribution(lm_state);
            TokenDistribution ret;
            switch (cfg.strategy) {
                case Strategy::Global:
                    ret = p_global(ds, index, query, cfg.hp, gopts);
                    break;
                case Strategy::Cluster:
                    ret = p_cluster(aut, model, ds, index, query, cfg.hp, gopts);
                    break;
                case Strategy::Automaton:
                    ret = p_automaton(aut, model, ds, index, query, cfg.hp, gopts);
                    break;
                case Strategy::Pointer: {
                    PointerQueryResult pr = p_pointer(pointers, aut, ds, index, query, cfg.hp,
                                                      cfg.pointer_mode);
                    ret = std::move(pr.dist);
                    pointers = advance_pointers(pr.pointers, ds, seq.tokens[i]);
                    break;
                }
            }
            TokenDistribution final = interpolate(ret, lm_probs, cfg.hp.lambda);

            TokenId target = seq.tokens[i];
            double p = final.probs[target];
            nll_sum += p > 0.0 ? -std::log(p) : 1e9;  // hard floor for zero-mass targets
            if (gold) kld_sum += kl_divergence(gold->distribution(m, i), final.probs);
            fb_counts[static_cast<size_t>(ret.strategy_used)]++;
            cand_sum += static_cast<double>(ret.candidates_examined);
            ++positions;

            lm_state = lm.step(lm_state, target);
        }
    }
    auto t1 = std::chrono::steady_clock::now();

    if (positions == 0) throw std::invalid_argument("evaluate: no predicted positions");
    report.positions = positions;
    report.nll = nll_sum / static_cast<double>(positions);
    report.ppl = std::exp(report.nll);
    if (gold) report.kld = kld_sum / static_cast<double>(positions);
    report.fb_automaton = static_cast<double>(fb_counts[0]) / positions;
    report.fb_cluster = static_cast<double>(fb_counts[1]) / positions;
    report.fb_global = static_cast<double>(fb_counts[2]) / positions;
    report.fb_knn = static_cast<double>(fb_counts[3]) / positions;
    report.cand_mean = cand_sum / static_cast<double>(positions);
    report.us_per_token =
        std::chrono::duration<double, std::micro>(t1 - t0).count() / positions;
    return report;
}

std::vector<RetrievalHyperparams> hyperparam_grid(const std::vector<size_t>& ks,
                                                  const std::vector<double>& lambdas,
                                                  const std::vector<double>& temperatures) {
    std::vector<RetrievalHyperparams> grid;
    for (double lambda : lambdas) {
        for (size_t k : ks) {
            for (double temp : temperatures) {
                RetrievalHyperparams hp;
                hp.k = k;
                hp.lambda = lambda;
                hp.temperature = temp;
                validate_hyperparams(hp);
                grid.push_back(hp);
            }
        }
    }
    return grid;
}

std::vector<EvalReport> compare_strategies(const LmInterface& lm,
                                           const std::vector<StrategyRun>& runs,
                                           const TraceFile& heldout, const GoldOracle* gold) {
    std::vector<EvalReport> reports;
    reports.reserve(runs.size());
    for (const StrategyRun& run : runs) {
        EvalReport r = evaluate(lm, *run.aut, *run.model, *run.ds, *run.index, run.cfg, heldout,
                                gold);
        r.datastore_label = run.label;
        reports.push_back(std::move(r));
    }
    return reports;
}

std::vector<EvalReport> sweep_clusters(const LmInterface& lm, const Datastore& base,
                                       const NnIndex& index, const std::vector<uint32_t>& k_list,
                                       const std::vector<EvalConfig>& cfgs,
                                       const TraceFile& heldout, const GoldOracle* gold,
                                       uint64_t seed) {
    std::vector<EvalReport> reports;
    for (uint32_t k : k_list) {
        Datastore ds = base;
        ClusterModel model = fit_kmeans(ds, k, seed);
        annotate_clusters(ds, model);
        Automaton aut = build_automaton(ds);
        for (const EvalConfig& cfg : cfgs) {
            EvalReport r = evaluate(lm, aut, model, ds, index, cfg, heldout, gold);
            reports.push_back(std::move(r));
        }
    }
    return reports;
}

std::string report_csv_header() {
    return "datastore,strategy,k,lambda,temp,clusters,ppl,nll,kld,"
           "fb_auto,fb_cluster,fb_global,fb_knn,cand_mean,us_per_token";
}

namespace {
std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}
}  // namespace

std::string report_csv_row(const EvalReport& r, bool include_timing) {
    std::string row;
    row += r.datastore_label + ',';
    row += strategy_name(r.strategy);
    row += ',';
    row += std::to_string(r.hp.k) + ',';
    row += fmt(r.hp.lambda) + ',';
    row += fmt(r.hp.temperature) + ',';
    row += std::to_string(r.clusters) + ',';
    row += fmt(r.ppl) + ',';
    row += fmt(r.nll) + ',';
    row += (r.kld ? fmt(*r.kld) : std::string()) + ',';
    row += fmt(r.fb_automaton) + ',';
    row += fmt(r.fb_cluster) + ',';
    row += fmt(r.fb_global) + ',';
    row += fmt(r.fb_knn) + ',';
    row += fmt(r.cand_mean) + ',';
    row += include_timing ? fmt(r.us_per_token) : std::string("0");
    return row;
}

std::string render_report_table(const std::vector<EvalReport>& reports) {
    std::ostringstream out;
    out << "datastore        strategy   k     lambda temp  clusters ppl        nll        kld\n";
    for (const EvalReport& r : reports) {
        char line[256];
        std::snprintf(line, sizeof line, "%-16s %-10s %-5zu %-6.3g %-5.3g %-8u %-10.5g %-10.5g %s\n",
                      r.datastore_label.c_str(), strategy_name(r.strategy), r.hp.k, r.hp.lambda,
                      r.hp.temperature, r.clusters, r.ppl, r.nll,
                      r.kld ? fmt(*r.kld).c_str() : "-");
        out << line;
    }
    return out.str();
}

}  // namespace retomaton
