#include "mars/bank.hpp"

#include <algorithm>
#include <cassert>
#include <limits>

#include "mars/rng.hpp"

namespace mars {

namespace {

int nearest(const Vec& x, const std::vector<Vec>& centers) {
    int best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < centers.size(); ++j) {
        const double s = dot(x, centers[j]);
        if (s > best_sim) {
            best_sim = s;
            best = int(j);
        }
    }
    return best;
}

double assign_all(std::span<const Vec> vectors, const std::vector<Vec>& centers,
                  std::vector<int>& assignment) {
    double total = 0.0;
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        assignment[i] = nearest(vectors[i], centers);
        total += cosine_distance(vectors[i], centers[assignment[i]]);
    }
    return total;
}

std::vector<Vec> seed_plus_plus(std::span<const Vec> vectors, int k, Rng& rng) {
    const std::size_t n = vectors.size();
    std::vector<Vec> centers;
    centers.push_back(vectors[rng.below(n)]);
    std::vector<double> closest(n);
    for (std::size_t i = 0; i < n; ++i) closest[i] = cosine_distance(vectors[i], centers[0]);

    while (int(centers.size()) < k) {
        double total = 0.0;
        for (double d : closest) total += d * d;
        if (total <= 0.0) break;  // every point coincides with a chosen center
        const double target = rng.uniform() * total;
        double acc = 0.0;
        std::size_t pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
            acc += closest[i] * closest[i];
            if (acc > target && closest[i] > 0.0) {
                pick = i;
                break;
            }
        }
        centers.push_back(vectors[pick]);
        for (std::size_t i = 0; i < n; ++i) {
            closest[i] = std::min(closest[i], cosine_distance(vectors[i], centers.back()));
        }
    }
    return centers;
}

// Recomputes centers as normalized member means. Empty clusters are moved to the
// point farthest from its nearest center when `reseed` is set.
void update_centers(std::span<const Vec> vectors, const std::vector<int>& assignment,
                    std::vector<Vec>& centers, bool reseed) {
    const std::size_t dim = vectors.front().size();
    std::vector<Vec> sums(centers.size(), Vec(dim, 0.0));
    std::vector<int> counts(centers.size(), 0);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        auto& s = sums[assignment[i]];
        for (std::size_t d = 0; d < dim; ++d) s[d] += vectors[i][d];
        ++counts[assignment[i]];
    }
    for (std::size_t j = 0; j < centers.size(); ++j) {
        // A zero-norm member sum keeps the previous center.
        if (counts[j] > 0 && norm(sums[j]) > 0.0) centers[j] = normalized(sums[j]);
    }
    if (!reseed) return;
    for (std::size_t j = 0; j < centers.size(); ++j) {
        if (counts[j] > 0) continue;
        std::size_t far = 0;
        double far_dist = -1.0;
        for (std::size_t i = 0; i < vectors.size(); ++i) {
            double d = std::numeric_limits<double>::infinity();
            for (std::size_t c = 0; c < centers.size(); ++c) {
                if (c != j) d = std::min(d, cosine_distance(vectors[i], centers[c]));
            }
            if (d > far_dist) {
                far_dist = d;
                far = i;
            }
        }
        centers[j] = vectors[far];
    }
}

}  // namespace

void CentroidBank::canonicalize() {
    auto by_key = [](const Centroid& a, const Centroid& b) {
        if (a.image_id != b.image_id) return a.image_id < b.image_id;
        return a.cluster_index < b.cluster_index;
    };
    for (auto& [cls, list] : foreground) std::sort(list.begin(), list.end(), by_key);
    std::sort(background.begin(), background.end(), by_key);
}

std::size_t CentroidBank::foreground_size() const {
    std::size_t n = 0;
    for (const auto& [cls, list] : foreground) n += list.size();
    return n;
}

std::vector<Vec> decompose_class_vectors(const FeatureMap& f, const LabelMap& y, int class_id) {
    require_same_shape(f, y);
    std::vector<Vec> out;
    for (int r = 0; r < y.height(); ++r) {
        for (int c = 0; c < y.width(); ++c) {
            if (y.at(r, c) == class_id) out.push_back(normalized(pixel_vector(f, r, c)));
        }
    }
    return out;
}

KMeansResult kmeans_spherical(std::span<const Vec> vectors, int k, uint64_t seed) {
    if (k < 1) throw Error("kmeans requires k >= 1");
    KMeansResult result;
    if (vectors.empty()) return result;

    Rng rng(seed);
    const int m = int(std::min<std::size_t>(std::size_t(k), vectors.size()));
    std::vector<Vec> centers = seed_plus_plus(vectors, m, rng);

    std::vector<int> assignment(vectors.size());
    result.objective_trace.push_back(assign_all(vectors, centers, assignment));
    std::vector<int> next(vectors.size());
    int it = 0;
    for (; it < kMaxLloydIterations; ++it) {
        update_centers(vectors, assignment, centers, /*reseed=*/true);
        const double objective = assign_all(vectors, centers, next);
        assert(objective <= result.objective_trace.back() + 1e-9);
        result.objective_trace.push_back(objective);
        if (next == assignment) break;
        assignment.swap(next);
    }
    result.iterations = it;
    // Makes each center the exact normalized mean of its final members.
    update_centers(vectors, assignment, centers, /*reseed=*/false);

    std::vector<int> counts(centers.size(), 0);
    for (int a : assignment) ++counts[a];
    std::vector<int> remap(centers.size(), -1);
    for (std::size_t j = 0; j < centers.size(); ++j) {
        if (counts[j] == 0) continue;
        remap[j] = int(result.centroids.size());
        result.centroids.push_back(centers[j]);
        result.member_counts.push_back(counts[j]);
    }
    result.assignment.resize(assignment.size());
    for (std::size_t i = 0; i < assignment.size(); ++i) result.assignment[i] = remap[assignment[i]];
    return result;
}

uint64_t derive_seed(uint64_t seed, const std::string& image_id, int class_id) {
    return seed ^ stable_hash(image_id, class_id);
}

CentroidBank build_centroid_bank(const DatasetManifest& manifest,
                                 std::span<const FeatureMap> features,
                                 std::span<const LabelMap> pseudo_labels, int k_fg, int k_bg,
                                 uint64_t seed) {
    if (k_fg < 1 || k_bg < 1) throw Error("k_fg and k_bg must be >= 1");
    if (features.size() != manifest.records.size() ||
        pseudo_labels.size() != manifest.records.size()) {
        throw Error("features/labels not aligned with manifest records");
    }
    CentroidBank bank;
    bank.dim = manifest.embedding_dim;
    bank.k_fg = k_fg;
    bank.k_bg = k_bg;

    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
        const ImageRecord& rec = manifest.records[i];
        const FeatureMap& f = features[i];
        const LabelMap& y = pseudo_labels[i];
        if (f.dim() != manifest.embedding_dim) {
            throw Error("feature dim mismatch for " + rec.image_id + ": got " +
                        std::to_string(f.dim()) + ", manifest says " +
                        std::to_string(manifest.embedding_dim));
        }
        require_same_shape(f, y);
        if (y.has_biased()) throw Error("pseudo label for " + rec.image_id + " contains -1");

        std::set<int> classes = y.foreground_classes();
        for (int c : classes) {
            if (!rec.truth_classes.contains(c)) {
                throw Error("pseudo label for " + rec.image_id + " contains class " +
                            std::to_string(c) + " outside its truth classes");
            }
        }
        classes.insert(0);
        for (int c : classes) {
            const auto vectors = decompose_class_vectors(f, y, c);
            if (vectors.empty()) continue;
            const int k = c == 0 ? k_bg : k_fg;
            const KMeansResult km = kmeans_spherical(vectors, k, derive_seed(seed, rec.image_id, c));
            for (std::size_t j = 0; j < km.centroids.size(); ++j) {
                Centroid cen{km.centroids[j], c, rec.image_id, int(j), km.member_counts[j]};
                if (c == 0) {
                    bank.background.push_back(std::move(cen));
                } else {
                    bank.foreground[c].push_back(std::move(cen));
                }
            }
        }
    }
    bank.canonicalize();
    return bank;
}

}  // namespace mars
