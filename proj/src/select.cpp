#include "mars/select.hpp"

#include <algorithm>
#include <cmath>

namespace mars {

double background_distance(const Vec& v, const CentroidBank& bank) {
    if (bank.background.empty()) throw Error("no background centroids");
    double sum = 0.0;
    for (const Centroid& b : bank.background) sum += cosine_distance(v, b.vector);
    return sum / double(bank.background.size());
}

int selection_count(std::size_t m, double alpha) {
    const double raw = double(m) * alpha;
    const double nearest = std::round(raw);
    const double product = std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw) ? nearest : raw;
    return std::clamp(int(std::ceil(product)), m == 0 ? 0 : 1, int(m));
}

std::vector<ScoredCentroid> rank_class(const std::vector<Centroid>& centroids,
                                       const CentroidBank& bank) {
    std::vector<ScoredCentroid> scored;
    scored.reserve(centroids.size());
    for (const Centroid& c : centroids) scored.push_back({c, background_distance(c.vector, bank)});
    std::sort(scored.begin(), scored.end(), [](const ScoredCentroid& a, const ScoredCentroid& b) {
        if (a.dist != b.dist) return a.dist > b.dist;
        if (a.centroid.image_id != b.centroid.image_id) {
            return a.centroid.image_id < b.centroid.image_id;
        }
        return a.centroid.cluster_index < b.centroid.cluster_index;
    });
    return scored;
}

DebiasedCentroidSet select_debiased(const CentroidBank& bank, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw Error("alpha must be in (0, 1], got " + std::to_string(alpha));
    }
    if (bank.background.empty()) throw Error("no background centroids");

    DebiasedCentroidSet out;
    out.alpha = alpha;
    for (const auto& [cls, centroids] : bank.foreground) {
        if (centroids.empty()) continue;
        const auto ranked = rank_class(centroids, bank);
        const int take = selection_count(ranked.size(), alpha);
        Vec mean(bank.dim, 0.0);
        auto& refs = out.selected[cls];
        for (int i = 0; i < take; ++i) {
            const auto& sc = ranked[i];
            for (std::size_t d = 0; d < mean.size(); ++d) mean[d] += sc.centroid.vector[d];
            refs.push_back({sc.centroid.image_id, sc.centroid.cluster_index, sc.dist});
        }
        for (double& x : mean) x /= take;
        out.per_class[cls] = normalized(mean);
        out.selected_counts[cls] = take;
    }
    return out;
}

}  // namespace mars
