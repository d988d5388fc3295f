#include "mars/trainloop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mars/rng.hpp"

namespace mars {

namespace {

void require_shape(const ProbMap& p, const LabelMap& y) {
    if (p.height != y.height() || p.width != y.width()) {
        throw Error("dimension mismatch between probability map and label map");
    }
}

void require_shape(const LabelMap& y, const CertaintyMask& w) {
    if (y.height() != w.height || y.width() != w.width) {
        throw Error("dimension mismatch between label map and certainty mask");
    }
}

void require_no_biased(const LabelMap& y, const char* what) {
    if (y.has_biased()) throw Error(std::string(what) + " contains -1");
}

}  // namespace

SegHead SegHead::zeros(int channels, int dim) {
    if (channels < 2 || dim < 1) throw Error("segmentation head needs >= 2 channels and dim >= 1");
    return SegHead{channels, dim, std::vector<double>(std::size_t(channels) * dim, 0.0),
                   std::vector<double>(channels, 0.0)};
}

CertaintyMask CertaintyMask::constant(int height, int width, double value) {
    return CertaintyMask{height, width, std::vector<double>(std::size_t(height) * width, value)};
}

void TrainConfig::validate() const {
    if (epochs < 0) throw Error("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be > 0");
    if (!(ema_momentum >= 0.0 && ema_momentum < 1.0)) throw Error("ema_momentum must be in [0, 1)");
    if (!(refinement_threshold >= 0.0 && refinement_threshold <= 1.0)) {
        throw Error("refinement_threshold must be in [0, 1]");
    }
}

ProbMap forward(const SegHead& head, const FeatureMap& f) {
    if (head.dim != f.dim()) throw Error("head dim does not match feature dim");
    ProbMap p{head.channels, f.height(), f.width(),
              std::vector<double>(std::size_t(head.channels) * f.pixels())};
    const std::size_t n = f.pixels();
    const auto data = f.data();
    std::vector<double> logits(head.channels);
    for (std::size_t px = 0; px < n; ++px) {
        double top = -INFINITY;
        for (int c = 0; c < head.channels; ++c) {
            double z = head.bias[c];
            for (int d = 0; d < head.dim; ++d) z += head.w(c, d) * data[std::size_t(d) * n + px];
            logits[c] = z;
            top = std::max(top, z);
        }
        double sum = 0.0;
        for (int c = 0; c < head.channels; ++c) {
            logits[c] = std::exp(logits[c] - top);
            sum += logits[c];
        }
        for (int c = 0; c < head.channels; ++c) p.at(c, px) = logits[c] / sum;
    }
    return p;
}

LabelMap teacher_label(const ProbMap& p, const std::set<int>& truth_classes, int num_classes) {
    if (p.channels != num_classes + 1) throw Error("probability map channel count mismatch");
    std::vector<int> allowed{0};
    for (int c : truth_classes) {
        if (c >= 1 && c <= num_classes) allowed.push_back(c);
    }
    LabelMap out(p.height, p.width, num_classes);
    for (std::size_t px = 0; px < p.pixels(); ++px) {
        int best = 0;
        for (int c : allowed) {
            if (p.at(c, px) > p.at(best, px)) best = c;
        }
        out[px] = int16_t(best);
    }
    return out;
}

CertaintyMask certainty_mask(const LabelMap& ydb, const ProbMap& teacher_probs,
                             const std::set<int>& truth_classes) {
    require_shape(teacher_probs, ydb);
    for (int c : truth_classes) {
        if (c < 1 || c >= teacher_probs.channels) throw Error("truth class outside probability map");
    }
    CertaintyMask w = CertaintyMask::constant(ydb.height(), ydb.width(), 1.0);
    for (std::size_t px = 0; px < ydb.pixels(); ++px) {
        if (ydb[px] != LabelMap::kBiased) continue;
        double best = 0.0;
        for (int c : truth_classes) best = std::max(best, teacher_probs.at(c, px));
        w.values[px] = best;
    }
    return w;
}

LabelMap complement_label(const LabelMap& ydb, const LabelMap& yte) {
    require_same_shape(ydb, yte);
    require_no_biased(yte, "teacher label");
    LabelMap out = ydb;
    for (std::size_t px = 0; px < ydb.pixels(); ++px) {
        if (ydb[px] == LabelMap::kBiased) out[px] = yte[px];
    }
    return out;
}

double wce_loss(const ProbMap& p, const LabelMap& yco, const CertaintyMask& w) {
    require_shape(p, yco);
    require_shape(yco, w);
    require_no_biased(yco, "complemented label");
    double loss = 0.0;
    for (std::size_t px = 0; px < yco.pixels(); ++px) {
        if (w.values[px] == 0.0) continue;
        const double prob = std::max(p.at(yco[px], px), kLogClamp);
        loss -= w.values[px] * std::log(prob);
    }
    return loss;
}

SegHead wce_gradient(const SegHead& head, const FeatureMap& f, const LabelMap& yco,
                     const CertaintyMask& w) {
    require_same_shape(f, yco);
    require_shape(yco, w);
    require_no_biased(yco, "complemented label");
    const ProbMap p = forward(head, f);
    SegHead g = SegHead::zeros(head.channels, head.dim);
    const std::size_t n = f.pixels();
    const auto data = f.data();
    for (std::size_t px = 0; px < n; ++px) {
        const double wt = w.values[px];
        if (wt == 0.0) continue;
        for (int c = 0; c < head.channels; ++c) {
            const double delta = wt * (p.at(c, px) - (c == yco[px] ? 1.0 : 0.0));
            g.bias[c] += delta;
            for (int d = 0; d < head.dim; ++d) g.w(c, d) += delta * data[std::size_t(d) * n + px];
        }
    }
    return g;
}

SegHead ema_update(const SegHead& teacher, const SegHead& student, double momentum) {
    if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("ema momentum must be in [0, 1)");
    if (teacher.channels != student.channels || teacher.dim != student.dim) {
        throw Error("teacher/student shape mismatch");
    }
    SegHead out = teacher;
    for (std::size_t i = 0; i < out.weights.size(); ++i) {
        out.weights[i] = momentum * teacher.weights[i] + (1.0 - momentum) * student.weights[i];
    }
    for (std::size_t i = 0; i < out.bias.size(); ++i) {
        out.bias[i] = momentum * teacher.bias[i] + (1.0 - momentum) * student.bias[i];
    }
    return out;
}

std::vector<LabelMap> predict(const SegHead& head, std::span<const FeatureMap> features,
                              const DatasetManifest& manifest) {
    std::vector<LabelMap> out;
    out.reserve(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
        out.push_back(teacher_label(forward(head, features[i]), manifest.records[i].truth_classes,
                                    manifest.num_classes));
    }
    return out;
}

TrainResult train(const DatasetManifest& manifest, std::span<const FeatureMap> features,
                  std::span<const LabelMap> debiased, const TrainConfig& config,
                  std::span<const LabelMap> gt) {
    config.validate();
    const std::size_t n = manifest.records.size();
    if (features.size() != n || debiased.size() != n) {
        throw Error("features/debiased labels not aligned with manifest records");
    }
    if (!gt.empty() && gt.size() != n) throw Error("ground truth not aligned with manifest records");

    TrainResult result;
    result.student = SegHead::zeros(manifest.num_classes + 1, manifest.embedding_dim);
    result.teacher = result.student;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(config.seed);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t i : order) {
            const auto& rec = manifest.records[i];
            const FeatureMap& f = features[i];
            const LabelMap& ydb = debiased[i];
            require_same_shape(f, ydb);

            const ProbMap teacher_probs = forward(result.teacher, f);
            const LabelMap yte = teacher_label(teacher_probs, rec.truth_classes, manifest.num_classes);
            const LabelMap yco = complement_label(ydb, yte);
            CertaintyMask w;
            switch (config.mode) {
                case TrainMode::kComplementWce:
                    w = certainty_mask(ydb, teacher_probs, rec.truth_classes);
                    break;
                case TrainMode::kComplement:
                    w = CertaintyMask::constant(ydb.height(), ydb.width(), 1.0);
                    break;
                case TrainMode::kExcludeBiased:
                    w = CertaintyMask::constant(ydb.height(), ydb.width(), 1.0);
                    for (std::size_t px = 0; px < ydb.pixels(); ++px) {
                        if (ydb[px] == LabelMap::kBiased) w.values[px] = 0.0;
                    }
                    break;
            }

            const double loss = wce_loss(forward(result.student, f), yco, w);
            if (!std::isfinite(loss)) {
                throw Error("non-finite loss at epoch " + std::to_string(epoch) + ", image " +
                            rec.image_id);
            }
            epoch_loss += loss;

            const SegHead grad = wce_gradient(result.student, f, yco, w);
            for (std::size_t k = 0; k < grad.weights.size(); ++k) {
                result.student.weights[k] -= config.learning_rate * grad.weights[k];
            }
            for (std::size_t k = 0; k < grad.bias.size(); ++k) {
                result.student.bias[k] -= config.learning_rate * grad.bias[k];
            }
            result.teacher = ema_update(result.teacher, result.student, config.ema_momentum);
        }

        EpochMetrics m{epoch, epoch_loss, std::nullopt};
        if (!gt.empty()) {
            ConfusionMatrix cm(manifest.num_classes);
            const auto preds = predict(result.teacher, features, manifest);
            for (std::size_t i = 0; i < n; ++i) accumulate(cm, gt[i], preds[i]);
            m.eval = report(cm);
        }
        result.log.push_back(std::move(m));
    }
    return result;
}

}  // namespace mars
