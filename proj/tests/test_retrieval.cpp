#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"

using namespace retomaton;

TEST_CASE("hyperparameter validation") {
    RetrievalHyperparams hp;
    CHECK_NOTHROW(validate_hyperparams(hp));
    hp.k = 0;
    CHECK_THROWS_AS(validate_hyperparams(hp), std::invalid_argument);
    hp = {};
    hp.lambda = 1.5;
    CHECK_THROWS_AS(validate_hyperparams(hp), std::invalid_argument);
    hp = {};
    hp.temperature = 0.0;
    CHECK_THROWS_AS(validate_hyperparams(hp), std::invalid_argument);
}

TEST_CASE("self-match query returns the stored entry at distance 0") {
    auto w = testutil::mini_world();
    std::vector<double> q{10.0, 10.0};  // entry 1's vector
    std::vector<Neighbor> r = knn_search(w.index, w.ds, q, 1);
    REQUIRE(r.size() == 1);
    CHECK(r[0].entry == 1);
    CHECK(r[0].dist2 == 0.0);
}

TEST_CASE("flat search equals the brute-force oracle, ties included") {
    Datastore ds = build_datastore(testutil::random_trace(25, 20, 4, 6, 101));
    REQUIRE(ds.size() == 500);
    NnIndex flat = build_flat_index(ds);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> q = testutil::random_query(4, rng, 1.5);
        std::vector<Neighbor> got = knn_search(flat, ds, q, 16);
        std::vector<Neighbor> want = testutil::brute_knn(ds, q, 16);
        REQUIRE(got.size() == want.size());
        for (size_t i = 0; i < got.size(); ++i) {
            CHECK(got[i].entry == want[i].entry);
            CHECK(got[i].dist2 == want[i].dist2);
        }
    }
}

TEST_CASE("search never returns masked entries") {
    Datastore ds = build_datastore(testutil::random_trace(30, 4, 3, 4, 55));
    NnIndex flat = build_flat_index(ds);
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> q = testutil::random_query(3, rng);
        for (const Neighbor& n : knn_search(flat, ds, q, 64)) CHECK(ds.valid[n.entry]);
    }
}

TEST_CASE("IVF with nprobe = nlist is identical to flat search") {
    Datastore ds = build_datastore(testutil::random_trace(40, 15, 3, 5, 111));
    NnIndex flat = build_flat_index(ds);
    NnIndex ivf = build_ivf_index(ds, 16, 16, 9);
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> q = testutil::random_query(3, rng, 2.0);
        std::vector<Neighbor> a = knn_search(flat, ds, q, 10);
        std::vector<Neighbor> b = knn_search(ivf, ds, q, 10);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].entry == b[i].entry);
    }
}

TEST_CASE("index files round-trip") {
    auto path = std::filesystem::temp_directory_path() / "rt_idx_test.ridx";
    Datastore ds = build_datastore(testutil::random_trace(20, 10, 3, 4, 121));
    NnIndex ivf = build_ivf_index(ds, 8, 3, 2);
    save_index(ivf, path);
    NnIndex back = load_index(path);
    CHECK(back.kind == IndexKind::Ivf);
    CHECK(back.nlist == 8);
    CHECK(back.nprobe == 3);
    CHECK(back.lists == ivf.lists);

    NnIndex flat = build_flat_index(ds);
    save_index(flat, path);
    CHECK(load_index(path).kind == IndexKind::Flat);
    std::filesystem::remove(path);
}

TEST_CASE("p_knn puts all mass on a single observed token") {
    auto w = testutil::mini_world();
    std::vector<Neighbor> neighbors{{0, 1.0}, {0, 4.0}};
    TokenDistribution d = p_knn(neighbors, w.ds, KernelParams{1.0});
    CHECK(d.probs[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.probs[1] == 0.0);
}

TEST_CASE("p_knn symmetry and the exp(-ln 4) split") {
    auto w = testutil::mini_world();
    // entry 0 emits a, entry 3 emits b
    std::vector<Neighbor> equal{{0, 0.0}, {3, 0.0}};
    TokenDistribution d = p_knn(equal, w.ds, KernelParams{1.0});
    CHECK(d.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(d.probs[1] == doctest::Approx(0.5).epsilon(1e-12));

    std::vector<Neighbor> skew{{0, 0.0}, {3, std::log(4.0)}};
    d = p_knn(skew, w.ds, KernelParams{1.0});
    CHECK(d.probs[0] == doctest::Approx(0.8).epsilon(1e-12));  // 1 / (1 + 0.25)
    CHECK(d.probs[1] == doctest::Approx(0.2).epsilon(1e-12));  // 0.25 / (1 + 0.25)
}

TEST_CASE("p_knn underflow switches to unweighted voting") {
    auto w = testutil::mini_world();
    std::vector<Neighbor> far{{0, 1e8}, {1, 1e8}, {3, 1e8}};
    TokenDistribution d = p_knn(far, w.ds, KernelParams{1.0});
    CHECK(d.strategy_used == Source::KnnFallback);
    CHECK(d.probs[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK(d.probs[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("single-transition store gives probability 1 via p_global") {
    TraceFile t;
    t.dim = 1;
    t.vocab_size = 3;
    Sequence s;
    s.vectors = {0.0f, 1.0f};
    s.tokens = {2, 0};
    t.sequences = {s};
    Datastore ds = build_datastore(t);
    NnIndex flat = build_flat_index(ds);
    RetrievalHyperparams hp;
    std::vector<double> q{0.4};
    TokenDistribution d = p_global(ds, flat, q, hp);
    CHECK(d.probs[2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("p_global hand computation over the three mini transitions") {
    auto w = testutil::mini_world();
    std::vector<double> q{2.0, 2.0};
    RetrievalHyperparams hp;
    hp.temperature = 50.0;  // keep all three kernels well away from underflow
    TokenDistribution d = p_global(w.ds, w.index, q, hp, GlobalOptions{true});
    double w0 = std::exp(-8.0 / 50.0);              // entry 0 at (0,0), token a
    double w1 = std::exp(-128.0 / 50.0);            // entry 1 at (10,10), token b
    double w3 = std::exp(-(2.25 + 6.25) / 50.0);    // entry 3 at (0.5,-0.5), token b
    double total = w0 + w1 + w3;
    CHECK(d.probs[0] == doctest::Approx(w0 / total).epsilon(1e-12));
    CHECK(d.probs[1] == doctest::Approx((w1 + w3) / total).epsilon(1e-12));
}

TEST_CASE("top-k p_global equals the exact sum when k covers the store") {
    Datastore ds = build_datastore(testutil::random_trace(10, 10, 3, 4, 131));
    NnIndex flat = build_flat_index(ds);
    RetrievalHyperparams hp;
    hp.k = ds.num_valid();
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> q = testutil::random_query(3, rng);
        TokenDistribution a = p_global(ds, flat, q, hp, GlobalOptions{false});
        TokenDistribution b = p_global(ds, flat, q, hp, GlobalOptions{true});
        CHECK(testutil::linf(a.probs, b.probs) == 0.0);
    }
}

TEST_CASE("p_cluster restricts mass to the assigned state's tokens") {
    auto w = testutil::mini_world();
    std::vector<double> q{9.0, 9.0};  // assigned to state 1, S = {entry 1: token b}
    RetrievalHyperparams hp;
    TokenDistribution d = p_cluster(w.aut, w.model, w.ds, w.index, q, hp);
    CHECK(d.strategy_used == Source::Cluster);
    CHECK(d.probs[0] == 0.0);
    CHECK(d.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("empty-support state falls back to p_global exactly") {
    auto w = testutil::mini_world();
    ClusterModel three = w.model;
    three.k = 3;
    three.centroids.push_back(-100.0);
    three.centroids.push_back(-100.0);
    std::vector<double> q{-99.0, -99.0};  // assigned to the supportless state 2
    RetrievalHyperparams hp;
    hp.temperature = 1e6;  // keep distant kernels finite
    TokenDistribution d = p_cluster(w.aut, three, w.ds, w.index, q, hp);
    TokenDistribution g = p_global(w.ds, w.index, q, hp);
    CHECK(d.strategy_used == Source::Global);
    CHECK(testutil::linf(d.probs, g.probs) == 0.0);
}

TEST_CASE("p_cluster support restriction property on random stores") {
    Datastore ds = build_datastore(testutil::random_trace(15, 10, 3, 6, 141));
    ClusterModel m = fit_kmeans(ds, 8, 5);
    annotate_clusters(ds, m);
    Automaton aut = build_automaton(ds);
    NnIndex flat = build_flat_index(ds);
    RetrievalHyperparams hp;
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> q = testutil::random_query(3, rng);
        TokenDistribution d = p_cluster(aut, m, ds, flat, q, hp);
        if (d.strategy_used != Source::Cluster) continue;
        StateId state = assign(m, std::span<const double>(q));
        for (TokenId y = 0; y < ds.vocab_size; ++y) {
            if (d.probs[y] > 0.0) CHECK(aut.support_for(state, y) != nullptr);
        }
    }
}

TEST_CASE("automaton strategy matches the worked mini-corpus values") {
    auto w = testutil::mini_world();
    std::vector<double> q{10.5, 9.5};  // state 1
    RetrievalHyperparams hp;
    TokenDistribution d = p_automaton(w.aut, w.model, w.ds, w.index, q, hp);
    CHECK(d.strategy_used == Source::Automaton);
    CHECK(d.probs[1] == doctest::Approx(1.0).epsilon(1e-12));  // only observed token
    CHECK(d.probs[0] == 0.0);
    CHECK(d.token_level[1] == Source::Automaton);
    CHECK(d.token_level[0] == Source::Cluster);  // S(state1, a) empty: per-token fallback
}

TEST_CASE("k=1 cluster count collapses every strategy onto p_global") {
    Datastore ds = build_datastore(testutil::random_trace(12, 10, 3, 5, 151));
    ClusterModel m = fit_kmeans(ds, 1, 1);
    annotate_clusters(ds, m);
    Automaton aut = build_automaton(ds);
    NnIndex flat = build_flat_index(ds);
    RetrievalHyperparams hp;
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> q = testutil::random_query(3, rng, 1.5);
        TokenDistribution g = p_global(ds, flat, q, hp, GlobalOptions{true});
        TokenDistribution c = p_cluster(aut, m, ds, flat, q, hp, GlobalOptions{true});
        TokenDistribution a = p_automaton(aut, m, ds, flat, q, hp, GlobalOptions{true});
        CHECK(testutil::linf(g.probs, c.probs) == 0.0);
        CHECK(testutil::linf(g.probs, a.probs) == 0.0);
    }
}

TEST_CASE("empty pointer set falls back to kNN and reseeds the pointers") {
    auto w = testutil::mini_world();
    RetrievalHyperparams hp;
    std::vector<double> q{0.2, 0.1};
    PointerQueryResult r = p_pointer({}, w.aut, w.ds, w.index, q, hp, PointerMode::Cluster);
    CHECK(r.dist.strategy_used == Source::KnnFallback);
    CHECK(r.pointers.origin == PointerOrigin::FallbackKnn);
    CHECK(!r.pointers.empty());

    std::vector<Neighbor> neighbors = knn_search(w.index, w.ds, q, hp.k);
    TokenDistribution direct = p_knn(neighbors, w.ds, KernelParams{hp.temperature});
    CHECK(testutil::linf(r.dist.probs, direct.probs) == 0.0);
}

TEST_CASE("pointer set covering a full state reproduces p_cluster") {
    auto w = testutil::mini_world();
    RetrievalHyperparams hp;
    std::vector<double> q{9.8, 10.1};
    PointerSet ps{{1}, PointerOrigin::Advanced};  // expands to S(state 1)
    PointerQueryResult r = p_pointer(ps, w.aut, w.ds, w.index, q, hp, PointerMode::Cluster);
    TokenDistribution c = p_cluster(w.aut, w.model, w.ds, w.index, q, hp);
    CHECK(testutil::linf(r.dist.probs, c.probs) == 0.0);
}

TEST_CASE("mini walk: emit a, advance, all retrieval mass lands on b") {
    auto w = testutil::mini_world();
    RetrievalHyperparams hp;
    std::vector<double> q0{0.0, 0.0};
    std::vector<Neighbor> seed = knn_search(w.index, w.ds, q0, 1);
    PointerSet ps{{seed[0].entry}, PointerOrigin::FallbackKnn};
    REQUIRE(ps.entries == std::vector<EntryId>{0});

    PointerSet advanced = advance_pointers(ps, w.ds, 0);  // chose token a
    REQUIRE(advanced.entries == std::vector<EntryId>{1});

    std::vector<double> q1{10.0, 10.0};
    PointerQueryResult r = p_pointer(advanced, w.aut, w.ds, w.index, q1, hp,
                                     PointerMode::Cluster);
    CHECK(r.dist.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.dist.probs[0] == 0.0);
}

TEST_CASE("interpolation identities and the 0.4/0.6 example") {
    TokenDistribution ret;
    ret.probs = {1.0, 0.0};
    std::vector<double> lm{0.2, 0.8};

    TokenDistribution at0 = interpolate(ret, lm, 0.0);
    CHECK(at0.probs[0] == 0.2);
    CHECK(at0.probs[1] == 0.8);

    TokenDistribution at1 = interpolate(ret, lm, 1.0);
    CHECK(at1.probs[0] == 1.0);
    CHECK(at1.probs[1] == 0.0);

    TokenDistribution mid = interpolate(ret, lm, 0.25);
    CHECK(mid.probs[0] == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(mid.probs[1] == doctest::Approx(0.6).epsilon(1e-12));

    CHECK_THROWS_AS(interpolate(ret, lm, 1.5), std::invalid_argument);
}

TEST_CASE("every strategy returns a normalized distribution") {
    Datastore ds = build_datastore(testutil::random_trace(10, 8, 3, 5, 161));
    ClusterModel m = fit_kmeans(ds, 4, 3);
    annotate_clusters(ds, m);
    Automaton aut = build_automaton(ds);
    NnIndex flat = build_flat_index(ds);
    RetrievalHyperparams hp;
    hp.k = 16;
    std::mt19937_64 rng(31);
    PointerSet ps;
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<double> q = testutil::random_query(3, rng, 2.0);
        for (const TokenDistribution& d :
             {p_global(ds, flat, q, hp), p_cluster(aut, m, ds, flat, q, hp),
              p_automaton(aut, m, ds, flat, q, hp)}) {
            double sum = 0.0;
            for (double p : d.probs) {
                CHECK(p >= 0.0);
                sum += p;
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        }
        PointerQueryResult r = p_pointer(ps, aut, ds, flat, q, hp, PointerMode::Cluster);
        double sum = 0.0;
        for (double p : r.dist.probs) sum += p;
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        ps = advance_pointers(r.pointers, ds, static_cast<TokenId>(rng() % ds.vocab_size));
    }
}
