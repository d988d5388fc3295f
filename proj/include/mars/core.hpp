#pragma once
// Domain types shared by every stage of the debiasing pipeline, plus the
// cosine kernels the centroid scoring and label generation are built on.

#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mars {

using Vec = std::vector<double>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Per-pixel embedding tensor, stored [D][H][W] row-major in 32-bit floats.
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(int dim, int height, int width);
    FeatureMap(int dim, int height, int width, std::vector<float> data);

    int dim() const { return dim_; }
    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t pixels() const { return std::size_t(height_) * width_; }

    float at(int d, int y, int x) const { return data_[index(d, y, x)]; }
    float& at(int d, int y, int x) { return data_[index(d, y, x)]; }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    // Rejects non-finite entries and zero-norm pixel vectors.
    void validate() const;

    bool operator==(const FeatureMap&) const = default;

private:
    std::size_t index(int d, int y, int x) const {
        return (std::size_t(d) * height_ + y) * width_ + x;
    }

    int dim_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<float> data_;
};

// H x W map of class indices in [-1, C]. -1 marks biased / to-be-complemented pixels.
class LabelMap {
public:
    static constexpr int16_t kBiased = -1;

    LabelMap() = default;
    LabelMap(int height, int width, int num_classes, int16_t fill = 0);
    LabelMap(int height, int width, int num_classes, std::vector<int16_t> values);

    int height() const { return height_; }
    int width() const { return width_; }
    int num_classes() const { return num_classes_; }
    std::size_t pixels() const { return values_.size(); }

    int16_t at(int y, int x) const { return values_[std::size_t(y) * width_ + x]; }
    int16_t& at(int y, int x) { return values_[std::size_t(y) * width_ + x]; }
    int16_t operator[](std::size_t i) const { return values_[i]; }
    int16_t& operator[](std::size_t i) { return values_[i]; }

    std::span<const int16_t> values() const { return values_; }

    bool has_biased() const;
    // Classes > 0 that occur in the map.
    std::set<int> foreground_classes() const;

    bool operator==(const LabelMap&) const = default;

private:
    int height_ = 0;
    int width_ = 0;
    int num_classes_ = 0;
    std::vector<int16_t> values_;
};

struct ImageRecord {
    std::string image_id;
    std::string feature_path;
    std::string label_path;
    std::set<int> truth_classes;
    std::string gt_path;      // empty when absent
    std::string biased_path;  // synthetic biased-pixel oracle, empty when absent
};

struct DatasetManifest {
    std::vector<ImageRecord> records;
    int num_classes = 0;
    int embedding_dim = 0;

    // Unique ids, non-empty truth classes within [1, C].
    void validate() const;
};

void require_same_shape(const FeatureMap& f, const LabelMap& y);
void require_same_shape(const LabelMap& a, const LabelMap& b);

double norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
// Returns a unit-length copy; throws on a zero vector.
Vec normalized(std::span<const double> v);

// a.b / (|a||b|), clamped to [-1, 1].
double cosine_similarity(std::span<const double> a, std::span<const double> b);
// (1 - cosine_similarity(a, b)) / 2, in [0, 1].
double cosine_distance(std::span<const double> a, std::span<const double> b);

Vec pixel_vector(const FeatureMap& f, int y, int x);

}  // namespace mars
