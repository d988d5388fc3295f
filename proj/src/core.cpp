#include "mars/core.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mars {

FeatureMap::FeatureMap(int dim, int height, int width)
    : FeatureMap(dim, height, width,
                 std::vector<float>(std::size_t(std::max(dim, 0)) * std::max(height, 0) *
                                    std::max(width, 0))) {}

FeatureMap::FeatureMap(int dim, int height, int width, std::vector<float> data)
    : dim_(dim), height_(height), width_(width), data_(std::move(data)) {
    if (dim < 1 || height < 1 || width < 1) {
        throw Error("feature map dims must be positive");
    }
    if (data_.size() != std::size_t(dim) * height * width) {
        throw Error("feature map data length does not match D*H*W");
    }
}

void FeatureMap::validate() const {
    for (float v : data_) {
        if (!std::isfinite(v)) throw Error("feature map contains non-finite value");
    }
    for (int y = 0; y < height_; ++y) {
        for (int x = 0; x < width_; ++x) {
            double sq = 0.0;
            for (int d = 0; d < dim_; ++d) sq += double(at(d, y, x)) * at(d, y, x);
            if (sq == 0.0) {
                throw Error("degenerate vector: zero-norm pixel at (" + std::to_string(y) + "," +
                            std::to_string(x) + ")");
            }
        }
    }
}

LabelMap::LabelMap(int height, int width, int num_classes, int16_t fill)
    : LabelMap(height, width, num_classes,
               std::vector<int16_t>(std::size_t(std::max(height, 0)) * std::max(width, 0), fill)) {}

LabelMap::LabelMap(int height, int width, int num_classes, std::vector<int16_t> values)
    : height_(height), width_(width), num_classes_(num_classes), values_(std::move(values)) {
    if (height < 1 || width < 1) throw Error("label map dims must be positive");
    if (num_classes < 1) throw Error("label map needs at least one foreground class");
    if (values_.size() != std::size_t(height) * width) {
        throw Error("label map data length does not match H*W");
    }
    for (int16_t v : values_) {
        if (v < kBiased || v > num_classes) {
            throw Error("label out of range: " + std::to_string(v));
        }
    }
}

bool LabelMap::has_biased() const {
    return std::find(values_.begin(), values_.end(), kBiased) != values_.end();
}

std::set<int> LabelMap::foreground_classes() const {
    std::set<int> out;
    for (int16_t v : values_) {
        if (v > 0) out.insert(v);
    }
    return out;
}

void DatasetManifest::validate() const {
    if (num_classes < 1) throw Error("manifest num_classes must be >= 1");
    if (embedding_dim < 1) throw Error("manifest embedding_dim must be >= 1");
    std::unordered_set<std::string> seen;
    for (const auto& r : records) {
        if (!seen.insert(r.image_id).second) throw Error("duplicate image_id: " + r.image_id);
        if (r.truth_classes.empty()) throw Error("record " + r.image_id + " has no truth classes");
        for (int c : r.truth_classes) {
            if (c < 1 || c > num_classes) {
                throw Error("record " + r.image_id + " has truth class out of range: " +
                            std::to_string(c));
            }
        }
    }
}

void require_same_shape(const FeatureMap& f, const LabelMap& y) {
    if (f.height() != y.height() || f.width() != y.width()) {
        throw Error("dimension mismatch between feature map and label map");
    }
}

void require_same_shape(const LabelMap& a, const LabelMap& b) {
    if (a.height() != b.height() || a.width() != b.width()) {
        throw Error("dimension mismatch between label maps");
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("vector length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

Vec normalized(std::span<const double> v) {
    const double n = norm(v);
    if (!(n > 0.0)) throw Error("degenerate vector");
    Vec out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = norm(a);
    const double nb = norm(b);
    if (!(na > 0.0) || !(nb > 0.0)) throw Error("degenerate vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
    return (1.0 - cosine_similarity(a, b)) / 2.0;
}

Vec pixel_vector(const FeatureMap& f, int y, int x) {
    if (y < 0 || y >= f.height() || x < 0 || x >= f.width()) {
        throw Error("pixel (" + std::to_string(y) + "," + std::to_string(x) + ") out of bounds");
    }
    Vec v(f.dim());
    for (int d = 0; d < f.dim(); ++d) v[d] = f.at(d, y, x);
    return v;
}

}  // namespace mars
