#include "mars/debias.hpp"

#include <algorithm>
#include <numeric>

namespace mars {

std::size_t BinaryMask::count() const {
    return std::size_t(std::count(values.begin(), values.end(), uint8_t{1}));
}

SimilarityMap similarity_map(const FeatureMap& f, const DebiasedCentroidSet& centroids,
                             const std::set<int>& truth_classes) {
    SimilarityMap out;
    out.height = f.height();
    out.width = f.width();
    std::vector<const Vec*> usable;
    for (int c : truth_classes) {
        auto it = centroids.per_class.find(c);
        if (it == centroids.per_class.end()) {
            out.skipped_classes.push_back(c);
        } else {
            if (int(it->second.size()) != f.dim()) throw Error("centroid dim mismatch");
            usable.push_back(&it->second);
        }
    }
    if (usable.empty()) throw Error("no usable centroids");

    out.values.resize(f.pixels());
    Vec v(f.dim());
    for (int y = 0; y < f.height(); ++y) {
        for (int x = 0; x < f.width(); ++x) {
            for (int d = 0; d < f.dim(); ++d) v[d] = f.at(d, y, x);
            double best = -1.0;
            for (const Vec* c : usable) best = std::max(best, cosine_similarity(v, *c));
            out.values[std::size_t(y) * f.width() + x] = std::max(best, 0.0);
        }
    }
    return out;
}

BinaryMask binarize(const SimilarityMap& m, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw Error("threshold must be in [0, 1], got " + std::to_string(threshold));
    }
    BinaryMask mask{m.height, m.width, std::vector<uint8_t>(m.values.size())};
    for (std::size_t i = 0; i < m.values.size(); ++i) mask.values[i] = m.values[i] >= threshold;
    return mask;
}

ThresholdRefinement::ThresholdRefinement(double threshold) : threshold_(threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) {
        throw Error("threshold must be in [0, 1], got " + std::to_string(threshold));
    }
}

LabelMap debias_label(const LabelMap& yb, const BinaryMask& mask) {
    if (yb.height() != mask.height || yb.width() != mask.width) {
        throw Error("dimension mismatch between label map and mask");
    }
    if (yb.has_biased()) throw Error("pseudo label already contains -1");
    LabelMap out = yb;
    for (std::size_t i = 0; i < yb.pixels(); ++i) {
        if (yb[i] > 0 && mask.values[i] == 0) out[i] = LabelMap::kBiased;
    }
    return out;
}

LabelMap debias_image(const FeatureMap& f, const LabelMap& yb, const DebiasedCentroidSet& centroids,
                      const std::set<int>& truth_classes, const Refinement& refinement,
                      std::vector<int>* skipped_classes) {
    require_same_shape(f, yb);
    const SimilarityMap sim = similarity_map(f, centroids, truth_classes);
    if (skipped_classes) *skipped_classes = sim.skipped_classes;
    return debias_label(yb, refinement.refine(sim));
}

}  // namespace mars
