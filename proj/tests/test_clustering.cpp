#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "test_util.hpp"

using namespace retomaton;

namespace {

/// Two well-separated Gaussian blobs (separation 10 sigma); returns the
/// datastore plus the ground-truth blob label per entry.
std::pair<Datastore, std::vector<int>> blob_store(size_t points_per_blob, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> noise(0.0f, 1.0f);
    TraceFile t;
    t.dim = 2;
    t.vocab_size = 2;
    std::vector<int> labels;
    Sequence s;
    for (size_t i = 0; i < points_per_blob * 2; ++i) {
        int blob = i % 2;
        float cx = blob ? 10.0f : 0.0f;
        s.vectors.push_back(cx + noise(rng));
        s.vectors.push_back(noise(rng));
        s.tokens.push_back(static_cast<TokenId>(blob));
        labels.push_back(blob);
    }
    // trailing record so every blob point is a valid transition
    s.vectors.push_back(100.0f);
    s.vectors.push_back(100.0f);
    s.tokens.push_back(0);
    labels.push_back(-1);
    t.sequences = {s};
    return {build_datastore(t), labels};
}

}  // namespace

TEST_CASE("k=1 centroid is the mean of the valid vectors") {
    Datastore ds = build_datastore(testutil::random_trace(4, 5, 3, 4, 3));
    ClusterModel m = fit_kmeans(ds, 1, 9);
    std::vector<double> mean(3, 0.0);
    size_t n = 0;
    for (size_t e = 0; e < ds.size(); ++e) {
        if (!ds.valid[e]) continue;
        auto v = ds.vector(static_cast<EntryId>(e));
        for (int j = 0; j < 3; ++j) mean[j] += v[j];
        ++n;
    }
    for (int j = 0; j < 3; ++j) {
        CHECK(m.centroids[j] == doctest::Approx(mean[j] / n).epsilon(1e-12));
    }
}

TEST_CASE("two separated blobs are recovered at 99%+ accuracy") {
    auto [ds, labels] = blob_store(500, 41);
    ClusterModel m = fit_kmeans(ds, 2, 7);
    // map model state -> majority blob
    size_t agree[2][2] = {};
    for (size_t e = 0; e < ds.size(); ++e) {
        if (!ds.valid[e]) continue;
        StateId q = assign(m, ds.vector(static_cast<EntryId>(e)));
        agree[q][labels[e]]++;
    }
    size_t correct = std::max(agree[0][0] + agree[1][1], agree[0][1] + agree[1][0]);
    CHECK(static_cast<double>(correct) / 1000 >= 0.99);
}

TEST_CASE("fit is bitwise deterministic for fixed inputs") {
    Datastore ds = build_datastore(testutil::random_trace(20, 10, 4, 6, 13));
    ClusterModel a = fit_kmeans(ds, 8, 5);
    ClusterModel b = fit_kmeans(ds, 8, 5);
    CHECK(a.centroids == b.centroids);
    CHECK(a.iterations_run == b.iterations_run);
    CHECK(a.inertia == b.inertia);
}

TEST_CASE("fit is deterministic across thread counts") {
    Datastore ds = build_datastore(testutil::random_trace(50, 40, 4, 6, 29));
    setenv("RETOMATON_THREADS", "1", 1);
    ClusterModel a = fit_kmeans(ds, 10, 5);
    setenv("RETOMATON_THREADS", "7", 1);
    ClusterModel b = fit_kmeans(ds, 10, 5);
    unsetenv("RETOMATON_THREADS");
    CHECK(a.centroids == b.centroids);
    CHECK(a.inertia == b.inertia);
}

TEST_CASE("inertia is non-increasing across iterations") {
    Datastore ds = build_datastore(testutil::random_trace(30, 20, 3, 4, 53));
    ClusterModel m = fit_kmeans(ds, 12, 3);
    REQUIRE(!m.inertia_history.empty());
    for (size_t i = 1; i < m.inertia_history.size(); ++i) {
        CHECK(m.inertia_history[i] <= m.inertia_history[i - 1] + 1e-9);
    }
    CHECK(m.inertia == m.inertia_history.back());
}

TEST_CASE("assign follows argmin with low-index tie-break") {
    ClusterModel m;
    m.k = 5;
    m.dim = 1;
    m.centroids = {0.0, 2.0, 4.0, 2.0, 9.0};
    std::vector<double> v{4.1};
    CHECK(assign(m, std::span<const double>(v)) == 2);
    v[0] = 2.0;  // exactly on centroids 1 and 3
    CHECK(assign(m, std::span<const double>(v)) == 1);
    v[0] = 1.0;  // equidistant from centroids 0 and 1 (and 3)
    CHECK(assign(m, std::span<const double>(v)) == 0);
}

TEST_CASE("assign agrees with an exhaustive distance scan") {
    Datastore ds = build_datastore(testutil::random_trace(10, 12, 4, 3, 67));
    ClusterModel m = fit_kmeans(ds, 6, 11);
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> q = testutil::random_query(4, rng, 2.0);
        StateId best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (StateId c = 0; c < m.k; ++c) {
            double d = 0.0;
            auto cen = m.centroid(c);
            for (int j = 0; j < 4; ++j) d += (q[j] - cen[j]) * (q[j] - cen[j]);
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        CHECK(assign(m, std::span<const double>(q)) == best);
    }
}

TEST_CASE("annotation covers every entry, masked targets included") {
    Datastore ds = build_datastore(testutil::random_trace(6, 8, 3, 4, 71));
    ClusterModel m = fit_kmeans(ds, 4, 2);
    annotate_clusters(ds, m);
    CHECK(ds.has_clusters);
    for (size_t e = 0; e < ds.size(); ++e) {
        CHECK(ds.cluster[e] != kNoCluster);
        CHECK(ds.cluster[e] ==
              static_cast<int64_t>(assign(m, ds.vector(static_cast<EntryId>(e)))));
    }
    // the successor's stored cluster is its own assignment
    for (size_t e = 0; e < ds.size(); ++e) {
        if (!ds.valid[e]) continue;
        EntryId succ = ds.successor[e];
        CHECK(ds.cluster[succ] == static_cast<int64_t>(assign(m, ds.vector(succ))));
    }
}

TEST_CASE("mini corpus annotation matches the intended state layout") {
    Datastore ds = build_datastore(testutil::mini_trace());
    annotate_clusters(ds, testutil::mini_model());
    CHECK(ds.cluster[0] == 0);
    CHECK(ds.cluster[1] == 1);
    CHECK(ds.cluster[2] == 0);
    CHECK(ds.cluster[3] == 0);
    CHECK(ds.cluster[4] == 1);
}

TEST_CASE("k=1 annotation assigns state 0 everywhere") {
    Datastore ds = build_datastore(testutil::random_trace(4, 6, 2, 3, 81));
    ClusterModel m = fit_kmeans(ds, 1, 1);
    annotate_clusters(ds, m);
    for (size_t e = 0; e < ds.size(); ++e) CHECK(ds.cluster[e] == 0);
}

TEST_CASE("invalid k values are rejected") {
    Datastore ds = build_datastore(testutil::random_trace(2, 3, 2, 2, 1));
    CHECK_THROWS_AS(fit_kmeans(ds, 0, 1), std::invalid_argument);
    CHECK_THROWS_AS(fit_kmeans(ds, static_cast<uint32_t>(ds.num_valid() + 1), 1),
                    std::invalid_argument);
}

TEST_CASE("default cluster count is the square-root heuristic") {
    Datastore ds = build_datastore(testutil::random_trace(10, 11, 2, 3, 1));
    REQUIRE(ds.num_valid() == 100);
    CHECK(default_cluster_count(ds) == 10);
    Datastore ds2 = build_datastore(testutil::random_trace(1, 102, 2, 3, 1));
    REQUIRE(ds2.num_valid() == 101);
    CHECK(default_cluster_count(ds2) == 11);  // ceil(sqrt(101))
}

TEST_CASE("model file round-trips") {
    auto path = std::filesystem::temp_directory_path() / "rt_km_test.rkm";
    Datastore ds = build_datastore(testutil::random_trace(5, 8, 3, 4, 19));
    ClusterModel m = fit_kmeans(ds, 3, 21);
    save_cluster_model(m, path);
    ClusterModel back = load_cluster_model(path);
    CHECK(back.k == m.k);
    CHECK(back.dim == m.dim);
    CHECK(back.seed == m.seed);
    // centroids persist as f32
    for (size_t i = 0; i < m.centroids.size(); ++i) {
        CHECK(back.centroids[i] == doctest::Approx(m.centroids[i]).epsilon(1e-6));
    }
    std::filesystem::remove(path);
}
