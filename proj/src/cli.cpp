#include "retomaton/cli.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "retomaton/eval.hpp"

namespace retomaton {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    write_file_atomic(path, std::span<const uint8_t>(
                                reinterpret_cast<const uint8_t*>(text.data()), text.size()));
}

std::vector<TokenId> parse_token_list(const std::string& text) {
    std::vector<TokenId> tokens;
    std::istringstream in(text);
    long long v;
    while (in >> v) {
        if (v < 0) throw std::invalid_argument("negative token id in list: " + std::to_string(v));
        tokens.push_back(static_cast<TokenId>(v));
    }
    if (!in.eof()) throw std::invalid_argument("malformed token list: " + text);
    return tokens;
}

std::vector<std::vector<TokenId>> datastore_sequences(const Datastore& ds) {
    std::vector<std::vector<TokenId>> seqs;
    for (size_t e = 0; e < ds.size(); ++e) {
        if (e == 0 || ds.seq[e] != ds.seq[e - 1]) seqs.emplace_back();
        seqs.back().push_back(ds.tokens[e]);
    }
    return seqs;
}

struct LmFlags {
    uint64_t seed = 1;
    uint32_t order = 3;
    double alpha = 0.1;
};

void add_lm_flags(CLI::App* cmd, LmFlags& lm) {
    cmd->add_option("--lm-seed", lm.seed, "Base LM seed");
    cmd->add_option("--lm-order", lm.order, "Base LM n-gram order")->check(CLI::PositiveNumber);
    cmd->add_option("--lm-alpha", lm.alpha, "Base LM add-alpha smoothing")
        ->check(CLI::PositiveNumber);
}

ToyLm fit_lm_from_datastore(const Datastore& ds, const LmFlags& lm) {
    return fit_toy_lm(datastore_sequences(ds), ds.vocab_size, ds.dim, lm.seed, lm.order, lm.alpha);
}

struct HyperFlags {
    RetrievalHyperparams hp;
    bool exact_global = false;
};

void add_hyper_flags(CLI::App* cmd, HyperFlags& h) {
    cmd->add_option("--k", h.hp.k, "Neighbor count")->check(CLI::PositiveNumber);
    cmd->add_option("--lambda", h.hp.lambda, "Retrieval interpolation weight")
        ->check(CLI::Range(0.0, 1.0));
    cmd->add_option("--temperature", h.hp.temperature, "Kernel temperature")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--exact-global", h.exact_global,
                  "Sum global retrieval over every valid entry");
}

Strategy parse_strategy(const std::string& name) { return strategy_from_name(name); }

PointerMode parse_pointer_mode(const std::string& name) {
    if (name == "strict" || name == "pointer-strict") return PointerMode::Strict;
    if (name == "cluster" || name == "pointer-cluster") return PointerMode::Cluster;
    throw std::invalid_argument("unknown pointer mode: " + name);
}

// ---------------------------------------------------------------------------
// Subcommand bodies. All throw on failure; run() maps to exit codes.
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string spec_path, out_path;
    size_t sequences = 0, len = 0;
    size_t begin = 0;
    long long end = -1;  // -1 = all
};

int cmd_gen(const GenArgs& a) {
    GoldAutomatonSpec spec = load_gold_spec(a.spec_path);
    GoldCorpus corpus = generate_gold_corpus(spec, a.sequences, a.len);
    size_t end = a.end < 0 ? a.sequences : static_cast<size_t>(a.end);
    if (a.begin > end || end > a.sequences) {
        throw std::invalid_argument("gen: subrange out of bounds");
    }
    if (a.begin != 0 || end != a.sequences) corpus = take_sequences(corpus, a.begin, end);
    write_trace(corpus.trace, a.out_path);
    std::cout << "sequences=" << corpus.trace.sequences.size() << " len=" << a.len
              << " dim=" << corpus.trace.dim << " vocab=" << corpus.trace.vocab_size << "\n";
    return kExitOk;
}

int cmd_build(const std::string& trace_path, const std::string& out_path) {
    TraceFile trace = read_trace(trace_path);
    Datastore ds = build_datastore(trace);
    save_datastore(ds, out_path);
    std::cout << "entries=" << ds.size() << " valid=" << ds.num_valid()
              << " dim=" << ds.dim << " vocab=" << ds.vocab_size << "\n";
    return kExitOk;
}

struct ClusterArgs {
    std::string ds_path, out_path, model_path;
    uint32_t clusters = 0;  // 0 = default heuristic
    uint64_t seed = 1;
};

int cmd_cluster(const ClusterArgs& a) {
    Datastore ds = load_datastore(a.ds_path);
    uint32_t k = a.clusters == 0 ? default_cluster_count(ds) : a.clusters;
    ClusterModel model = fit_kmeans(ds, k, a.seed);
    annotate_clusters(ds, model);
    save_datastore(ds, a.out_path);
    if (!a.model_path.empty()) save_cluster_model(model, a.model_path);
    std::cout << "clusters=" << model.k << " iterations=" << model.iterations_run
              << " inertia=" << model.inertia << "\n";
    return kExitOk;
}

struct IndexArgs {
    std::string ds_path, out_path, kind = "flat";
    uint32_t nlist = 64, nprobe = 8;
    uint64_t seed = 1;
};

int cmd_index(const IndexArgs& a) {
    Datastore ds = load_datastore(a.ds_path);
    NnIndex index = a.kind == "flat" ? build_flat_index(ds)
                                     : build_ivf_index(ds, a.nlist, a.nprobe, a.seed);
    save_index(index, a.out_path);
    std::cout << "kind=" << a.kind;
    if (index.kind == IndexKind::Ivf) {
        std::cout << " nlist=" << index.nlist << " nprobe=" << index.nprobe;
    }
    std::cout << " dim=" << index.dim << "\n";
    return kExitOk;
}

int cmd_wfa(const std::string& ds_path, const std::string& out_path) {
    Datastore ds = load_datastore(ds_path);
    Automaton aut = build_automaton(ds);
    save_automaton(aut, out_path);
    std::cout << "states=" << aut.num_states << "\n";
    return kExitOk;
}

struct DecodeArgs {
    std::string ds_path, model_path, index_path, vocab_path;
    std::string prompt, prompt_file;
    std::string strategy = "pointer", pointer_mode = "cluster";
    uint32_t beam = 5, max_new_tokens = 32;
    long long eos = -1;
    HyperFlags hyper;
    LmFlags lm;
    std::string trace_format = "text", trace_out;
};

int cmd_decode(const DecodeArgs& a) {
    Datastore ds = load_datastore(a.ds_path);
    ClusterModel model = load_cluster_model(a.model_path);
    NnIndex index = load_index(a.index_path);
    Automaton aut = build_automaton(ds);

    std::vector<std::string> vocab;
    if (!a.vocab_path.empty()) vocab = read_vocab(a.vocab_path);

    std::string prompt_text = a.prompt;
    if (!a.prompt_file.empty()) {
        std::vector<uint8_t> bytes = read_file_bytes(a.prompt_file);
        prompt_text.assign(bytes.begin(), bytes.end());
    }
    std::vector<TokenId> prompt = parse_token_list(prompt_text);

    ToyLm lm = fit_lm_from_datastore(ds, a.lm);

    DecodeConfig cfg;
    cfg.strategy = parse_strategy(a.strategy);
    cfg.pointer_mode = parse_pointer_mode(a.pointer_mode);
    cfg.beam_width = a.beam;
    cfg.max_new_tokens = a.max_new_tokens;
    cfg.hp = a.hyper.hp;
    cfg.exact_global = a.hyper.exact_global;
    if (a.eos >= 0) cfg.eos_token = static_cast<TokenId>(a.eos);

    DecodeResult result =
        decode(lm, aut, model, ds, index, cfg, prompt, vocab.empty() ? nullptr : &vocab);

    std::string tokens_line;
    for (size_t i = 0; i < result.tokens.size(); ++i) {
        if (i) tokens_line += ' ';
        tokens_line += token_text(result.tokens[i], vocab.empty() ? nullptr : &vocab);
    }
    std::cout << tokens_line << "\n";

    TraceFormat fmt = a.trace_format == "jsonl" ? TraceFormat::Jsonl : TraceFormat::Text;
    std::string trace_text = emit_trace(result.trace, fmt);
    if (a.trace_out.empty()) {
        std::cout << trace_text;
    } else {
        write_text_atomic(a.trace_out, trace_text);
    }
    return kExitOk;
}

struct GoldFlags {
    std::string spec_path;
    size_t sequences = 0, len = 0;
    size_t begin = 0;
    long long end = -1;
};

void add_gold_flags(CLI::App* cmd, GoldFlags& g) {
    cmd->add_option("--gold-spec", g.spec_path, "Gold generator spec (JSON)");
    cmd->add_option("--gold-sequences", g.sequences, "Sequences the gold corpus was drawn with");
    cmd->add_option("--gold-len", g.len, "Sequence length the gold corpus was drawn with");
    cmd->add_option("--gold-begin", g.begin, "First gold sequence matching the held-out trace");
    cmd->add_option("--gold-end", g.end, "One past the last matching gold sequence");
}

/// Regenerates the gold corpus and checks the held-out trace is exactly the
/// requested subrange of it, so the oracle's per-position states line up.
std::optional<GoldCorpus> load_gold(const GoldFlags& g, const TraceFile& heldout) {
    if (g.spec_path.empty()) return std::nullopt;
    if (g.sequences == 0 || g.len == 0) {
        throw std::invalid_argument("--gold-spec needs --gold-sequences and --gold-len");
    }
    GoldAutomatonSpec spec = load_gold_spec(g.spec_path);
    GoldCorpus corpus = generate_gold_corpus(spec, g.sequences, g.len);
    size_t end = g.end < 0 ? g.sequences : static_cast<size_t>(g.end);
    if (g.begin > end || end > g.sequences) {
        throw std::invalid_argument("gold subrange out of bounds");
    }
    GoldCorpus slice = take_sequences(corpus, g.begin, end);
    if (!(slice.trace == heldout)) {
        throw std::invalid_argument(
            "held-out trace does not match the regenerated gold corpus subrange");
    }
    return slice;
}

struct EvalArgs {
    std::string ds_path, model_path, index_path, heldout_path;
    std::string strategy = "pointer", pointer_mode = "cluster";
    HyperFlags hyper;
    LmFlags lm;
    GoldFlags gold;
    std::string csv_path, label = "datastore";
    bool timing = false;
};

int cmd_eval(const EvalArgs& a) {
    Datastore ds = load_datastore(a.ds_path);
    ClusterModel model = load_cluster_model(a.model_path);
    NnIndex index = load_index(a.index_path);
    Automaton aut = build_automaton(ds);
    TraceFile heldout = read_trace(a.heldout_path);
    std::optional<GoldCorpus> gold = load_gold(a.gold, heldout);
    ToyLm lm = fit_lm_from_datastore(ds, a.lm);

    EvalConfig cfg;
    cfg.strategy = parse_strategy(a.strategy);
    cfg.pointer_mode = parse_pointer_mode(a.pointer_mode);
    cfg.hp = a.hyper.hp;
    cfg.exact_global = a.hyper.exact_global;

    EvalReport report =
        evaluate(lm, aut, model, ds, index, cfg, heldout, gold ? &gold->oracle : nullptr);
    report.datastore_label = a.label;

    std::cout << render_report_table({report});
    if (!a.csv_path.empty()) {
        std::string csv = report_csv_header() + "\n" + report_csv_row(report, a.timing) + "\n";
        write_text_atomic(a.csv_path, csv);
    }
    return kExitOk;
}

struct SweepArgs {
    EvalArgs base;
    std::string grid_path;
    std::string clusters_list;  // comma-separated cluster counts, refit per value
    uint64_t cluster_seed = 1;
};

int cmd_sweep(const SweepArgs& a) {
    if (a.base.csv_path.empty()) throw std::invalid_argument("sweep: --csv is required");
    Datastore ds = load_datastore(a.base.ds_path);
    ClusterModel model = load_cluster_model(a.base.model_path);
    NnIndex index = load_index(a.base.index_path);
    TraceFile heldout = read_trace(a.base.heldout_path);
    std::optional<GoldCorpus> gold = load_gold(a.base.gold, heldout);
    ToyLm lm = fit_lm_from_datastore(ds, a.base.lm);

    std::vector<size_t> ks{a.base.hyper.hp.k};
    std::vector<double> lambdas{a.base.hyper.hp.lambda};
    std::vector<double> temps{a.base.hyper.hp.temperature};
    if (!a.grid_path.empty()) {
        std::vector<uint8_t> bytes = read_file_bytes(a.grid_path);
        nlohmann::json j = nlohmann::json::parse(bytes.begin(), bytes.end());
        if (j.contains("k")) ks = j.at("k").get<std::vector<size_t>>();
        if (j.contains("lambda")) lambdas = j.at("lambda").get<std::vector<double>>();
        if (j.contains("temperature")) temps = j.at("temperature").get<std::vector<double>>();
    }
    std::vector<RetrievalHyperparams> grid = hyperparam_grid(ks, lambdas, temps);

    EvalConfig base_cfg;
    base_cfg.strategy = parse_strategy(a.base.strategy);
    base_cfg.pointer_mode = parse_pointer_mode(a.base.pointer_mode);
    base_cfg.exact_global = a.base.hyper.exact_global;

    std::vector<EvalConfig> cfgs;
    for (const RetrievalHyperparams& hp : grid) {
        EvalConfig cfg = base_cfg;
        cfg.hp = hp;
        cfgs.push_back(cfg);
    }

    const GoldOracle* oracle = gold ? &gold->oracle : nullptr;
    std::vector<EvalReport> reports;
    if (a.clusters_list.empty()) {
        Automaton aut = build_automaton(ds);
        for (const EvalConfig& cfg : cfgs) {
            reports.push_back(evaluate(lm, aut, model, ds, index, cfg, heldout, oracle));
        }
    } else {
        std::vector<uint32_t> k_list;
        std::istringstream in(a.clusters_list);
        std::string part;
        while (std::getline(in, part, ',')) {
            k_list.push_back(static_cast<uint32_t>(std::stoul(part)));
        }
        reports = sweep_clusters(lm, ds, index, k_list, cfgs, heldout, oracle, a.cluster_seed);
    }

    std::string csv = report_csv_header() + "\n";
    for (EvalReport& r : reports) {
        r.datastore_label = a.base.label;
        csv += report_csv_row(r, a.base.timing) + "\n";
    }
    write_text_atomic(a.base.csv_path, csv);
    std::cout << "rows=" << reports.size() << "\n";
    return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"retomaton: automaton-structured retrieval memory toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* c_gen = app.add_subcommand("gen", "Generate a synthetic corpus trace");
    c_gen->add_option("--spec", gen.spec_path, "Generator spec (JSON)")->required();
    c_gen->add_option("--sequences", gen.sequences, "Number of sequences")->required();
    c_gen->add_option("--len", gen.len, "Records per sequence")->required();
    c_gen->add_option("--begin", gen.begin, "First sequence of the kept subrange");
    c_gen->add_option("--end", gen.end, "One past the last kept sequence (-1 = all)");
    c_gen->add_option("--out", gen.out_path, "Output trace path")->required();

    std::string build_trace, build_out;
    CLI::App* c_build = app.add_subcommand("build", "Build a transition datastore from a trace");
    c_build->add_option("--trace", build_trace, "Input trace path")->required();
    c_build->add_option("--out", build_out, "Output datastore path")->required();

    ClusterArgs cluster;
    CLI::App* c_cluster = app.add_subcommand("cluster", "Cluster a datastore into states");
    c_cluster->add_option("--ds", cluster.ds_path, "Input datastore path")->required();
    c_cluster->add_option("--clusters", cluster.clusters, "Cluster count (0 = sqrt heuristic)");
    c_cluster->add_option("--seed", cluster.seed, "Clustering seed");
    c_cluster->add_option("--out", cluster.out_path, "Annotated datastore output path")
        ->required();
    c_cluster->add_option("--model-out", cluster.model_path, "Cluster model output path");

    IndexArgs index;
    CLI::App* c_index = app.add_subcommand("index", "Build a nearest-neighbor index");
    c_index->add_option("--ds", index.ds_path, "Input datastore path")->required();
    c_index->add_option("--kind", index.kind, "Index kind")
        ->check(CLI::IsMember({"flat", "ivf"}));
    c_index->add_option("--nlist", index.nlist, "IVF list count");
    c_index->add_option("--nprobe", index.nprobe, "IVF lists probed per query");
    c_index->add_option("--seed", index.seed, "IVF coarse clustering seed");
    c_index->add_option("--out", index.out_path, "Output index path")->required();

    std::string wfa_ds, wfa_out;
    CLI::App* c_wfa = app.add_subcommand("wfa", "Extract the automaton from an annotated datastore");
    c_wfa->add_option("--ds", wfa_ds, "Annotated datastore path")->required();
    c_wfa->add_option("--out", wfa_out, "Output automaton path")->required();

    DecodeArgs dec;
    CLI::App* c_decode = app.add_subcommand("decode", "Decode with retrieval interpolation");
    c_decode->add_option("--ds", dec.ds_path, "Annotated datastore path")->required();
    c_decode->add_option("--model", dec.model_path, "Cluster model path")->required();
    c_decode->add_option("--index", dec.index_path, "Index path")->required();
    c_decode->add_option("--vocab", dec.vocab_path, "Vocabulary file (one token per line)");
    c_decode->add_option("--prompt", dec.prompt, "Prompt token ids, whitespace separated");
    c_decode->add_option("--prompt-file", dec.prompt_file, "File holding prompt token ids");
    c_decode->add_option("--strategy", dec.strategy, "Retrieval strategy")
        ->check(CLI::IsMember({"global", "cluster", "automaton", "pointer"}));
    c_decode->add_option("--pointer-mode", dec.pointer_mode, "Pointer expansion mode")
        ->check(CLI::IsMember({"strict", "cluster", "pointer-strict", "pointer-cluster"}));
    c_decode->add_option("--beam", dec.beam, "Beam width")->check(CLI::PositiveNumber);
    c_decode->add_option("--max-new-tokens", dec.max_new_tokens, "Tokens to emit");
    c_decode->add_option("--eos", dec.eos, "Stop token id (-1 = none)");
    add_hyper_flags(c_decode, dec.hyper);
    add_lm_flags(c_decode, dec.lm);
    c_decode->add_option("--trace-format", dec.trace_format, "Trace output format")
        ->check(CLI::IsMember({"text", "jsonl"}));
    c_decode->add_option("--trace-out", dec.trace_out, "Trace output path (default: stdout)");

    EvalArgs ev;
    CLI::App* c_eval = app.add_subcommand("eval", "Teacher-forced evaluation on a held-out trace");
    c_eval->add_option("--ds", ev.ds_path, "Annotated datastore path")->required();
    c_eval->add_option("--model", ev.model_path, "Cluster model path")->required();
    c_eval->add_option("--index", ev.index_path, "Index path")->required();
    c_eval->add_option("--heldout", ev.heldout_path, "Held-out trace path")->required();
    c_eval->add_option("--strategy", ev.strategy, "Retrieval strategy")
        ->check(CLI::IsMember({"global", "cluster", "automaton", "pointer"}));
    c_eval->add_option("--pointer-mode", ev.pointer_mode, "Pointer expansion mode")
        ->check(CLI::IsMember({"strict", "cluster", "pointer-strict", "pointer-cluster"}));
    add_hyper_flags(c_eval, ev.hyper);
    add_lm_flags(c_eval, ev.lm);
    add_gold_flags(c_eval, ev.gold);
    c_eval->add_option("--csv", ev.csv_path, "CSV output path");
    c_eval->add_option("--label", ev.label, "Datastore label in reports");
    c_eval->add_flag("--timing", ev.timing, "Emit measured per-token timing in the CSV");

    SweepArgs sweep;
    CLI::App* c_sweep = app.add_subcommand("sweep", "Hyperparameter sweep to CSV");
    c_sweep->add_option("--ds", sweep.base.ds_path, "Annotated datastore path")->required();
    c_sweep->add_option("--model", sweep.base.model_path, "Cluster model path")->required();
    c_sweep->add_option("--index", sweep.base.index_path, "Index path")->required();
    c_sweep->add_option("--heldout", sweep.base.heldout_path, "Held-out trace path")->required();
    c_sweep->add_option("--strategy", sweep.base.strategy, "Retrieval strategy")
        ->check(CLI::IsMember({"global", "cluster", "automaton", "pointer"}));
    c_sweep->add_option("--pointer-mode", sweep.base.pointer_mode, "Pointer expansion mode")
        ->check(CLI::IsMember({"strict", "cluster", "pointer-strict", "pointer-cluster"}));
    add_hyper_flags(c_sweep, sweep.base.hyper);
    add_lm_flags(c_sweep, sweep.base.lm);
    add_gold_flags(c_sweep, sweep.base.gold);
    c_sweep->add_option("--grid", sweep.grid_path,
                        "JSON grid file with \"k\", \"lambda\", \"temperature\" arrays");
    c_sweep->add_option("--clusters-list", sweep.clusters_list,
                        "Comma-separated cluster counts; refits per value");
    c_sweep->add_option("--cluster-seed", sweep.cluster_seed, "Seed for refits");
    c_sweep->add_option("--csv", sweep.base.csv_path, "CSV output path")->required();
    c_sweep->add_option("--label", sweep.base.label, "Datastore label in reports");
    c_sweep->add_flag("--timing", sweep.base.timing, "Emit measured per-token timing in the CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (c_gen->parsed()) return cmd_gen(gen);
        if (c_build->parsed()) return cmd_build(build_trace, build_out);
        if (c_cluster->parsed()) return cmd_cluster(cluster);
        if (c_index->parsed()) return cmd_index(index);
        if (c_wfa->parsed()) return cmd_wfa(wfa_ds, wfa_out);
        if (c_decode->parsed()) return cmd_decode(dec);
        if (c_eval->parsed()) return cmd_eval(ev);
        if (c_sweep->parsed()) return cmd_sweep(sweep);
        std::cerr << "error: no subcommand\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::logic_error& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}

int cli_main(const std::vector<std::string>& args) {
    std::vector<const char*> argv;
    argv.reserve(args.size() + 1);
    argv.push_back("retomaton");
    for (const std::string& a : args) argv.push_back(a.c_str());
    return cli_main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace retomaton
