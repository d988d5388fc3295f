#include "mars/eval.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace mars {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes), counts_(std::size_t(num_classes + 1) * (num_classes + 1), 0) {
    if (num_classes < 0) throw Error("confusion matrix needs num_classes >= 0");
}

uint64_t ConfusionMatrix::total() const {
    return std::accumulate(counts_.begin(), counts_.end(), uint64_t{0});
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) throw Error("confusion matrix class count mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMap& gt, const LabelMap& pred) {
    require_same_shape(gt, pred);
    for (std::size_t i = 0; i < gt.pixels(); ++i) {
        const int g = gt[i];
        const int p = pred[i];
        if (p < 0) throw Error("prediction contains -1");
        if (g < 0) continue;
        if (g > cm.num_classes() || p > cm.num_classes()) throw Error("label exceeds class count");
        ++cm.at(g, p);
    }
}

EvalReport report(const ConfusionMatrix& cm) {
    EvalReport r;
    const int n = cm.size();
    r.evaluated_pixels = cm.total();
    uint64_t fp_sum = 0;
    uint64_t fn_sum = 0;
    double iou_sum = 0.0;
    for (int c = 0; c < n; ++c) {
        const uint64_t tp = cm.at(c, c);
        uint64_t fp = 0;
        uint64_t fn = 0;
        for (int o = 0; o < n; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const uint64_t denom = tp + fp + fn;
        if (denom > 0) {
            r.per_class_iou[c] = double(tp) / double(denom);
            iou_sum += r.per_class_iou[c];
        }
        if (c > 0) {
            fp_sum += fp;
            fn_sum += fn;
            r.per_class_fp[c] = r.evaluated_pixels ? double(fp) / double(r.evaluated_pixels) : 0.0;
        }
    }
    if (!r.per_class_iou.empty()) r.miou = iou_sum / double(r.per_class_iou.size());
    if (r.evaluated_pixels > 0) {
        r.fp_rate = double(fp_sum) / double(r.evaluated_pixels);
        r.fn_rate = double(fn_sum) / double(r.evaluated_pixels);
    }
    return r;
}

std::string report_json(const EvalReport& r) {
    nlohmann::ordered_json j;
    j["miou"] = r.miou;
    j["fp_rate"] = r.fp_rate;
    j["fn_rate"] = r.fn_rate;
    j["evaluated_pixels"] = r.evaluated_pixels;
    auto& iou = j["per_class_iou"] = nlohmann::ordered_json::object();
    for (const auto& [c, v] : r.per_class_iou) iou[std::to_string(c)] = v;
    auto& fp = j["per_class_fp"] = nlohmann::ordered_json::object();
    for (const auto& [c, v] : r.per_class_fp) fp[std::to_string(c)] = v;
    return j.dump(2) + "\n";
}

std::string report_text(const EvalReport& r) {
    std::ostringstream os;
    char line[128];
    std::snprintf(line, sizeof line, "%-8s %10s %10s\n", "class", "iou", "fp");
    os << line;
    for (const auto& [c, iou] : r.per_class_iou) {
        auto fp = r.per_class_fp.find(c);
        if (fp != r.per_class_fp.end()) {
            std::snprintf(line, sizeof line, "%-8d %10.4f %10.4f\n", c, iou, fp->second);
        } else {
            std::snprintf(line, sizeof line, "%-8d %10.4f %10s\n", c, iou, "-");
        }
        os << line;
    }
    std::snprintf(line, sizeof line, "mIoU %.4f  FP %.4f  FN %.4f  (%llu px)\n", r.miou, r.fp_rate,
                  r.fn_rate, static_cast<unsigned long long>(r.evaluated_pixels));
    os << line;
    return os.str();
}

std::string per_class_fp_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "class_id,fp_rate\n";
    os.precision(17);
    for (const auto& [c, v] : r.per_class_fp) os << c << ',' << v << '\n';
    return os.str();
}

}  // namespace mars
