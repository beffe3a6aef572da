#include "retomaton/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <thread>

namespace retomaton {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'K', 'M'};
constexpr uint32_t kVersion = 1;
constexpr size_t kChunk = 4096;

double point_centroid_dist2(const float* point, const double* centroid, uint32_t dim) {
    double acc = 0.0;
    for (uint32_t j = 0; j < dim; ++j) {
        double diff = static_cast<double>(point[j]) - centroid[j];
        acc += diff * diff;
    }
    return acc;
}

StateId nearest_centroid(const float* point, const std::vector<double>& centroids, uint32_t k,
                         uint32_t dim, double* best_dist_out = nullptr) {
    StateId best = 0;
    double best_dist = point_centroid_dist2(point, centroids.data(), dim);
    for (StateId q = 1; q < k; ++q) {
        double d = point_centroid_dist2(point, centroids.data() + static_cast<size_t>(q) * dim, dim);
        if (d < best_dist) {
            best_dist = d;
            best = q;
        }
    }
    if (best_dist_out) *best_dist_out = best_dist;
    return best;
}

struct ChunkAccum {
    std::vector<double> sums;     // k * dim
    std::vector<uint64_t> counts;  // k
    double inertia = 0.0;
};

/// Runs `fn(chunk_index)` for every chunk, possibly in parallel. Results are
/// written into per-chunk slots, so the combined outcome does not depend on
/// the thread count.
void for_each_chunk(size_t num_chunks, const std::function<void(size_t)>& fn) {
    unsigned threads = std::min<unsigned>(effective_thread_count(),
                                          static_cast<unsigned>(num_chunks));
    if (threads <= 1) {
        for (size_t c = 0; c < num_chunks; ++c) fn(c);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&, t]() {
            for (size_t c = t; c < num_chunks; c += threads) fn(c);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

ClusterModel fit_kmeans(const Datastore& ds, uint32_t k, uint64_t seed, uint32_t max_iter,
                        double tol) {
    if (ds.size() == 0) throw std::invalid_argument("fit_kmeans: empty datastore");
    if (k == 0) throw std::invalid_argument("fit_kmeans: k must be positive");
    if (tol < 0.0) throw std::invalid_argument("fit_kmeans: tol must be nonnegative");

    std::vector<EntryId> points;
    for (size_t e = 0; e < ds.size(); ++e) {
        if (ds.valid[e]) points.push_back(static_cast<EntryId>(e));
    }
    if (points.size() < k) {
        throw std::invalid_argument("fit_kmeans: k exceeds number of valid entries");
    }

    const uint32_t dim = ds.dim;
    ClusterModel model;
    model.k = k;
    model.dim = dim;
    model.seed = seed;
    model.centroids.assign(static_cast<size_t>(k) * dim, 0.0);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    // k-means++ seeding.
    {
        size_t first = static_cast<size_t>(unif(rng) * static_cast<double>(points.size()));
        if (first >= points.size()) first = points.size() - 1;
        auto v0 = ds.vector(points[first]);
        for (uint32_t j = 0; j < dim; ++j) model.centroids[j] = v0[j];

        std::vector<double> min_dist(points.size());
        for (size_t p = 0; p < points.size(); ++p) {
            min_dist[p] = point_centroid_dist2(ds.vector(points[p]).data(), model.centroids.data(),
                                               dim);
        }
        for (StateId q = 1; q < k; ++q) {
            double total = 0.0;
            for (double d : min_dist) total += d;
            size_t chosen;
            if (total <= 0.0) {
                chosen = static_cast<size_t>(unif(rng) * static_cast<double>(points.size()));
                if (chosen >= points.size()) chosen = points.size() - 1;
            } else {
                double target = unif(rng) * total;
                double acc = 0.0;
                chosen = points.size() - 1;
                for (size_t p = 0; p < points.size(); ++p) {
                    acc += min_dist[p];
                    if (target < acc) {
                        chosen = p;
                        break;
                    }
                }
            }
            auto vc = ds.vector(points[chosen]);
            double* dst = model.centroids.data() + static_cast<size_t>(q) * dim;
            for (uint32_t j = 0; j < dim; ++j) dst[j] = vc[j];
            for (size_t p = 0; p < points.size(); ++p) {
                double d = point_centroid_dist2(ds.vector(points[p]).data(), dst, dim);
                if (d < min_dist[p]) min_dist[p] = d;
            }
        }
    }

    // Lloyd iterations with per-chunk deterministic accumulation.
    size_t num_chunks = (points.size() + kChunk - 1) / kChunk;
    std::vector<StateId> assignment(points.size());
    double prev_inertia = std::numeric_limits<double>::infinity();

    for (uint32_t iter = 0; iter < max_iter; ++iter) {
        std::vector<ChunkAccum> accums(num_chunks);
        for_each_chunk(num_chunks, [&](size_t c) {
            ChunkAccum& acc = accums[c];
            acc.sums.assign(static_cast<size_t>(k) * dim, 0.0);
            acc.counts.assign(k, 0);
            size_t begin = c * kChunk;
            size_t end = std::min(begin + kChunk, points.size());
            for (size_t p = begin; p < end; ++p) {
                const float* v = ds.vector(points[p]).data();
                double best;
                StateId q = nearest_centroid(v, model.centroids, k, dim, &best);
                assignment[p] = q;
                acc.inertia += best;
                acc.counts[q]++;
                double* sum = acc.sums.data() + static_cast<size_t>(q) * dim;
                for (uint32_t j = 0; j < dim; ++j) sum[j] += v[j];
            }
        });

        std::vector<double> sums(static_cast<size_t>(k) * dim, 0.0);
        std::vector<uint64_t> counts(k, 0);
        double inertia = 0.0;
        for (const ChunkAccum& acc : accums) {
            for (size_t i = 0; i < sums.size(); ++i) sums[i] += acc.sums[i];
            for (StateId q = 0; q < k; ++q) counts[q] += acc.counts[q];
            inertia += acc.inertia;
        }

        if (inertia > prev_inertia + 1e-9 * std::max(1.0, prev_inertia)) {
            throw std::logic_error("fit_kmeans: inertia increased across iterations");
        }
        model.inertia_history.push_back(inertia);
        model.inertia = inertia;
        model.iterations_run = iter + 1;

        bool converged = std::isfinite(prev_inertia) && (prev_inertia - inertia) < tol;
        prev_inertia = inertia;

        for (StateId q = 0; q < k; ++q) {
            if (counts[q] == 0) continue;
            double* dst = model.centroids.data() + static_cast<size_t>(q) * dim;
            const double* sum = sums.data() + static_cast<size_t>(q) * dim;
            for (uint32_t j = 0; j < dim; ++j) dst[j] = sum[j] / static_cast<double>(counts[q]);
        }

        // Empty-cluster repair: reseed each empty centroid to the point
        // currently farthest from its assigned centroid.
        for (StateId q = 0; q < k; ++q) {
            if (counts[q] != 0) continue;
            size_t farthest = 0;
            double far_dist = -1.0;
            for (size_t p = 0; p < points.size(); ++p) {
                const float* v = ds.vector(points[p]).data();
                double d = point_centroid_dist2(
                    v, model.centroids.data() + static_cast<size_t>(assignment[p]) * dim, dim);
                if (d > far_dist) {
                    far_dist = d;
                    farthest = p;
                }
            }
            double* dst = model.centroids.data() + static_cast<size_t>(q) * dim;
            const float* v = ds.vector(points[farthest]).data();
            for (uint32_t j = 0; j < dim; ++j) dst[j] = v[j];
            counts[q] = 1;
            assignment[farthest] = q;
            converged = false;
        }

        if (converged) break;
    }

    // Final model must have no empty clusters.
    {
        std::vector<uint8_t> seen(k, 0);
        for (EntryId e : points) seen[assign(model, ds.vector(e))] = 1;
        if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
            throw std::logic_error("fit_kmeans: empty cluster in final model");
        }
    }
    return model;
}

StateId assign(const ClusterModel& model, std::span<const double> vector) {
    if (vector.size() != model.dim) {
        throw std::invalid_argument("assign: vector dimension mismatch");
    }
    StateId best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (StateId q = 0; q < model.k; ++q) {
        const double* c = model.centroids.data() + static_cast<size_t>(q) * model.dim;
        double acc = 0.0;
        for (uint32_t j = 0; j < model.dim; ++j) {
            double diff = vector[j] - c[j];
            acc += diff * diff;
        }
        if (acc < best_dist) {
            best_dist = acc;
            best = q;
        }
    }
    return best;
}

StateId assign(const ClusterModel& model, std::span<const float> vector) {
    if (vector.size() != model.dim) {
        throw std::invalid_argument("assign: vector dimension mismatch");
    }
    StateId best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (StateId q = 0; q < model.k; ++q) {
        double d = point_centroid_dist2(vector.data(),
                                        model.centroids.data() + static_cast<size_t>(q) * model.dim,
                                        model.dim);
        if (d < best_dist) {
            best_dist = d;
            best = q;
        }
    }
    return best;
}

void annotate_clusters(Datastore& ds, const ClusterModel& model) {
    if (model.dim != ds.dim) {
        throw std::invalid_argument("annotate_clusters: model dimension mismatch");
    }
    for (size_t e = 0; e < ds.size(); ++e) {
        ds.cluster[e] = assign(model, ds.vector(static_cast<EntryId>(e)));
    }
    ds.has_clusters = true;
}

uint32_t default_cluster_count(const Datastore& ds) {
    size_t n = ds.num_valid();
    if (n == 0) return 1;
    return static_cast<uint32_t>(std::ceil(std::sqrt(static_cast<double>(n))));
}

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& path) {
    ByteWriter w;
    w.magic(kMagic);
    w.u32(kVersion);
    w.u32(model.k);
    w.u32(model.dim);
    w.u64(model.seed);
    for (double c : model.centroids) w.f32(static_cast<float>(c));
    write_file_atomic(path, w.bytes());
}

ClusterModel load_cluster_model(const std::filesystem::path& path) {
    std::vector<uint8_t> bytes = read_file_bytes(path);
    ByteReader r(bytes);
    r.magic(kMagic, "cluster model file");
    uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw FormatError(FormatErrorKind::UnsupportedVersion, r.offset() - 4,
                          "unsupported cluster model version " + std::to_string(version));
    }
    ClusterModel model;
    model.k = r.u32("k");
    model.dim = r.u32("dim");
    model.seed = r.u64("seed");
    if (model.k == 0 || model.dim == 0) {
        throw FormatError(FormatErrorKind::Malformed, 8, "k and dim must be positive");
    }
    model.centroids.resize(static_cast<size_t>(model.k) * model.dim);
    for (double& c : model.centroids) {
        float v = r.f32("centroid");
        if (!std::isfinite(v)) {
            throw FormatError(FormatErrorKind::NonFinite, r.offset() - 4,
                              "non-finite centroid component");
        }
        c = v;
    }
    if (!r.at_end()) {
        throw FormatError(FormatErrorKind::Malformed, r.offset(),
                          "trailing bytes after centroid payload");
    }
    return model;
}

}  // namespace retomaton
