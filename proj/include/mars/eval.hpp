#pragma once
// Confusion-matrix evaluation: per-class IoU, mIoU and foreground FP/FN rates.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mars/core.hpp"

namespace mars {

class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 0);

    int num_classes() const { return num_classes_; }
    int size() const { return num_classes_ + 1; }
    uint64_t at(int gt, int pred) const { return counts_[std::size_t(gt) * size() + pred]; }
    uint64_t& at(int gt, int pred) { return counts_[std::size_t(gt) * size() + pred]; }
    uint64_t total() const;

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    int num_classes_ = 0;
    std::vector<uint64_t> counts_;  // rows = ground truth, cols = prediction
};

struct EvalReport {
    std::map<int, double> per_class_iou;  // classes with TP+FP+FN > 0
    double miou = 0.0;
    double fp_rate = 0.0;
    double fn_rate = 0.0;
    std::map<int, double> per_class_fp;  // c > 0, FP_c / evaluated pixels
    uint64_t evaluated_pixels = 0;
};

// gt == -1 pixels are ignored; pred must not contain -1.
void accumulate(ConfusionMatrix& cm, const LabelMap& gt, const LabelMap& pred);

EvalReport report(const ConfusionMatrix& cm);

std::string report_json(const EvalReport& r);
std::string report_text(const EvalReport& r);
std::string per_class_fp_csv(const EvalReport& r);

}  // namespace mars
