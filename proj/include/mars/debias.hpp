#pragma once
// Per-image similarity to the debiased centroids, a pluggable refinement that
// turns it into a binary mask, and the rewrite of biased pixels to -1.

#include <memory>
#include <set>
#include <vector>

#include "mars/core.hpp"
#include "mars/select.hpp"

namespace mars {

struct SimilarityMap {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // [0, 1], row-major
    std::vector<int> skipped_classes;  // truth classes without a debiased centroid

    double at(int y, int x) const { return values[std::size_t(y) * width + x]; }
};

struct BinaryMask {
    int height = 0;
    int width = 0;
    std::vector<uint8_t> values;  // 0 / 1

    uint8_t at(int y, int x) const { return values[std::size_t(y) * width + x]; }
    std::size_t count() const;

    bool operator==(const BinaryMask&) const = default;
};

inline constexpr double kDefaultThreshold = 0.30;

// max over truth classes of cosine similarity to the class centroid, ReLU'd.
SimilarityMap similarity_map(const FeatureMap& f, const DebiasedCentroidSet& centroids,
                             const std::set<int>& truth_classes);

BinaryMask binarize(const SimilarityMap& m, double threshold);

// Stand-in slot for a post-processing refinement such as a dense CRF.
class Refinement {
public:
    virtual ~Refinement() = default;
    virtual BinaryMask refine(const SimilarityMap& m) const = 0;
};

class ThresholdRefinement final : public Refinement {
public:
    explicit ThresholdRefinement(double threshold = kDefaultThreshold);
    BinaryMask refine(const SimilarityMap& m) const override { return binarize(m, threshold_); }
    double threshold() const { return threshold_; }

private:
    double threshold_;
};

// -1 where the pseudo label is foreground and the mask is 0; otherwise unchanged.
LabelMap debias_label(const LabelMap& yb, const BinaryMask& mask);

// similarity_map -> refine -> debias_label for one image.
LabelMap debias_image(const FeatureMap& f, const LabelMap& yb, const DebiasedCentroidSet& centroids,
                      const std::set<int>& truth_classes, const Refinement& refinement,
                      std::vector<int>* skipped_classes = nullptr);

}  // namespace mars
