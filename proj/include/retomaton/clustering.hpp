#pragma once

#include <filesystem>

#include "retomaton/datastore.hpp"

namespace retomaton {

/// k-means state abstraction: centroid q of a vector is its symbolic state.
/// Assignment is argmin squared Euclidean distance, ties to the lowest index.
struct ClusterModel {
    uint32_t k = 0;
    uint32_t dim = 0;
    uint64_t seed = 0;
    std::vector<double> centroids;  // k * dim, row-major
    uint32_t iterations_run = 0;
    double inertia = 0.0;
    std::vector<double> inertia_history;  // one value per Lloyd iteration

    std::span<const double> centroid(StateId q) const {
        return std::span<const double>(centroids).subspan(static_cast<size_t>(q) * dim, dim);
    }
};

/// Lloyd's algorithm with k-means++ seeding. Deterministic given
/// (datastore, k, seed, max_iter, tol) regardless of thread count.
ClusterModel fit_kmeans(const Datastore& ds, uint32_t k, uint64_t seed,
                        uint32_t max_iter = 50, double tol = 1e-6);

StateId assign(const ClusterModel& model, std::span<const double> vector);
StateId assign(const ClusterModel& model, std::span<const float> vector);

/// Sets cluster_of for every entry, masked pointer targets included.
void annotate_clusters(Datastore& ds, const ClusterModel& model);

/// Default cluster count when none is given: ceil(sqrt(num_valid)).
uint32_t default_cluster_count(const Datastore& ds);

void save_cluster_model(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_cluster_model(const std::filesystem::path& path);

}  // namespace retomaton
