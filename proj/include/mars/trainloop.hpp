#pragma once
// Student/teacher training over debiased labels: a per-pixel linear softmax head,
// teacher labels restricted to each image's truth classes, complemented labels,
// certainty masks, weighted cross-entropy and EMA teacher updates.

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "mars/core.hpp"
#include "mars/eval.hpp"

namespace mars {

// (C+1) x D weights plus (C+1) biases; channel 0 is background.
struct SegHead {
    int channels = 0;
    int dim = 0;
    std::vector<double> weights;  // row-major [channel][dim]
    std::vector<double> bias;

    static SegHead zeros(int channels, int dim);

    double w(int c, int d) const { return weights[std::size_t(c) * dim + d]; }
    double& w(int c, int d) { return weights[std::size_t(c) * dim + d]; }

    bool operator==(const SegHead&) const = default;
};

struct ProbMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;  // [channel][y][x]

    std::size_t pixels() const { return std::size_t(height) * width; }
    double at(int c, std::size_t pixel) const { return values[std::size_t(c) * pixels() + pixel]; }
    double& at(int c, std::size_t pixel) { return values[std::size_t(c) * pixels() + pixel]; }
};

struct CertaintyMask {
    int height = 0;
    int width = 0;
    std::vector<double> values;

    static CertaintyMask constant(int height, int width, double value);
};

enum class TrainMode {
    kExcludeBiased,  // -1 pixels get zero weight, no complementing
    kComplement,     // -1 pixels filled by the teacher, unit weight everywhere
    kComplementWce,  // complementing plus certainty-weighted loss
};

struct TrainConfig {
    int epochs = 30;
    double learning_rate = 0.05;
    double ema_momentum = 0.99;
    uint64_t seed = 0;
    // Threshold used when the debiased labels are produced in the same run.
    double refinement_threshold = 0.30;
    TrainMode mode = TrainMode::kComplementWce;

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double loss = 0.0;
    std::optional<EvalReport> eval;  // present when ground truth was supplied
};

struct TrainResult {
    SegHead student;
    SegHead teacher;
    std::vector<EpochMetrics> log;
};

inline constexpr double kLogClamp = 1e-12;

ProbMap forward(const SegHead& head, const FeatureMap& f);

// Argmax over {0} and the truth classes; ties go to the smaller class index.
LabelMap teacher_label(const ProbMap& p, const std::set<int>& truth_classes, int num_classes);

CertaintyMask certainty_mask(const LabelMap& ydb, const ProbMap& teacher_probs,
                             const std::set<int>& truth_classes);

LabelMap complement_label(const LabelMap& ydb, const LabelMap& yte);

double wce_loss(const ProbMap& p, const LabelMap& yco, const CertaintyMask& w);

// Gradient of wce_loss(forward(head, f), yco, w) with respect to weights and bias.
SegHead wce_gradient(const SegHead& head, const FeatureMap& f, const LabelMap& yco,
                     const CertaintyMask& w);

SegHead ema_update(const SegHead& teacher, const SegHead& student, double momentum);

// Teacher label of `head` for each image.
std::vector<LabelMap> predict(const SegHead& head, std::span<const FeatureMap> features,
                              const DatasetManifest& manifest);

// `features`, `debiased` and (when non-empty) `gt` are aligned with manifest.records.
TrainResult train(const DatasetManifest& manifest, std::span<const FeatureMap> features,
                  std::span<const LabelMap> debiased, const TrainConfig& config,
                  std::span<const LabelMap> gt = {});

}  // namespace mars
