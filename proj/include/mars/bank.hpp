#pragma once
// Per-image, per-class spherical K-means and the dataset-wide centroid banks.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mars/core.hpp"

namespace mars {

struct Centroid {
    Vec vector;  // unit norm
    int class_id = 0;
    std::string image_id;
    int cluster_index = 0;
    int member_count = 0;

    bool operator==(const Centroid&) const = default;
};

struct CentroidBank {
    int dim = 0;
    int k_fg = 2;
    int k_bg = 2;
    std::map<int, std::vector<Centroid>> foreground;  // class_id > 0
    std::vector<Centroid> background;                 // class_id == 0

    // Sorts every list by (image_id, cluster_index).
    void canonicalize();
    std::size_t foreground_size() const;

    bool operator==(const CentroidBank&) const = default;
};

struct KMeansResult {
    std::vector<Vec> centroids;
    std::vector<int> member_counts;
    std::vector<int> assignment;  // per input vector, index into centroids
    std::vector<double> objective_trace;  // total cosine distance after each assignment pass
    int iterations = 0;
};

inline constexpr int kMaxLloydIterations = 100;

// Pixel vectors where y == class_id, L2-normalized, in row-major order.
std::vector<Vec> decompose_class_vectors(const FeatureMap& f, const LabelMap& y, int class_id);

// Spherical K-means with k-means++ seeding. Returns min(k, n) clusters at most;
// clusters left empty (duplicate inputs) are dropped.
KMeansResult kmeans_spherical(std::span<const Vec> vectors, int k, uint64_t seed);

// Seed for one (image, class) clustering run; independent of manifest order.
uint64_t derive_seed(uint64_t seed, const std::string& image_id, int class_id);

// `features` and `pseudo_labels` are aligned with manifest.records.
CentroidBank build_centroid_bank(const DatasetManifest& manifest,
                                 std::span<const FeatureMap> features,
                                 std::span<const LabelMap> pseudo_labels, int k_fg, int k_bg,
                                 uint64_t seed);

}  // namespace mars
