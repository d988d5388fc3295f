#pragma once
// Scoring foreground centroids by their mean cosine distance to the background
// bank and aggregating the most distant fraction into one centroid per class.

#include <map>
#include <vector>

#include "mars/bank.hpp"

namespace mars {

struct ScoredCentroid {
    Centroid centroid;
    double dist = 0.0;  // mean cosine distance to all background centroids
};

struct SelectedRef {
    std::string image_id;
    int cluster_index = 0;
    double dist = 0.0;

    bool operator==(const SelectedRef&) const = default;
};

struct DebiasedCentroidSet {
    double alpha = 0.4;
    std::map<int, Vec> per_class;  // unit norm
    std::map<int, int> selected_counts;
    std::map<int, std::vector<SelectedRef>> selected;  // in ranked order

    bool operator==(const DebiasedCentroidSet&) const = default;
};

inline constexpr double kDefaultAlpha = 0.40;

double background_distance(const Vec& v, const CentroidBank& bank);

// ceil(m * alpha), guarded against products like 5 * 0.6 landing a ulp above an integer.
int selection_count(std::size_t m, double alpha);

// All centroids of one class, scored and sorted by descending distance with ties
// broken by (image_id, cluster_index).
std::vector<ScoredCentroid> rank_class(const std::vector<Centroid>& centroids,
                                       const CentroidBank& bank);

DebiasedCentroidSet select_debiased(const CentroidBank& bank, double alpha);

}  // namespace mars
