#include "mars/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "mars/io.hpp"

namespace mars {

namespace {

double ratio(std::size_t num, std::size_t den) { return den ? double(num) / double(den) : 1.0; }

}  // namespace

double DebiasStats::biased_recall() const { return ratio(biased_removed, biased_pixels); }
double DebiasStats::target_retention() const { return ratio(target_kept, target_pixels); }
double DebiasStats::removed_fraction() const {
    return foreground_pixels ? double(foreground_removed) / double(foreground_pixels) : 0.0;
}

Corpus load_corpus(const std::string& manifest_path) {
    Corpus corpus;
    corpus.manifest = read_manifest(manifest_path);
    const auto& m = corpus.manifest;
    const bool all_gt = std::all_of(m.records.begin(), m.records.end(),
                                    [](const ImageRecord& r) { return !r.gt_path.empty(); });
    const bool all_biased = std::all_of(m.records.begin(), m.records.end(),
                                        [](const ImageRecord& r) { return !r.biased_path.empty(); });
    for (const auto& rec : m.records) {
        FeatureMap f = read_feature_map(rec.feature_path);
        if (f.dim() != m.embedding_dim) {
            throw Error("feature dim mismatch for " + rec.image_id);
        }
        f.validate();
        LabelMap y = read_label_map(rec.label_path, m.num_classes);
        require_same_shape(f, y);
        corpus.features.push_back(std::move(f));
        corpus.pseudo_labels.push_back(std::move(y));
        if (all_gt) corpus.gt.push_back(read_label_map(rec.gt_path, m.num_classes));
        if (all_biased) {
            const LabelMap b = read_label_map(rec.biased_path, m.num_classes);
            BinaryMask mask{b.height(), b.width(), std::vector<uint8_t>(b.pixels())};
            for (std::size_t i = 0; i < b.pixels(); ++i) mask.values[i] = b[i] != 0;
            corpus.biased_masks.push_back(std::move(mask));
        }
    }
    return corpus;
}

Corpus corpus_from_synth(const SynthCorpus& synth) {
    return Corpus{synth.manifest, synth.features, synth.pseudo_labels, synth.gt, synth.biased_masks};
}

std::vector<LabelMap> debias_corpus(const Corpus& corpus, const DebiasedCentroidSet& centroids,
                                    const Refinement& refinement, std::map<int, int>* skipped_counts) {
    std::vector<LabelMap> out;
    out.reserve(corpus.features.size());
    for (std::size_t i = 0; i < corpus.features.size(); ++i) {
        std::vector<int> skipped;
        out.push_back(debias_image(corpus.features[i], corpus.pseudo_labels[i], centroids,
                                   corpus.manifest.records[i].truth_classes, refinement, &skipped));
        if (skipped_counts) {
            for (int c : skipped) ++(*skipped_counts)[c];
        }
    }
    return out;
}

std::map<int, double> selection_accuracy(const Corpus& corpus, const CentroidBank& bank,
                                         const DebiasedCentroidSet& centroids) {
    std::map<int, double> out;
    if (!corpus.has_oracle() || !corpus.has_gt()) return out;
    for (const auto& [cls, refs] : centroids.selected) {
        if (refs.empty()) continue;
        const auto labels = centroid_is_target(bank, cls, corpus.manifest, corpus.features,
                                               corpus.pseudo_labels, corpus.gt, corpus.biased_masks);
        std::size_t target = 0;
        for (const auto& ref : refs) target += labels.at({ref.image_id, ref.cluster_index});
        out[cls] = double(target) / double(refs.size());
    }
    return out;
}

DebiasStats debias_stats(const Corpus& corpus, const std::vector<LabelMap>& debiased) {
    DebiasStats s;
    for (std::size_t i = 0; i < debiased.size(); ++i) {
        const auto& yb = corpus.pseudo_labels[i];
        const auto& ydb = debiased[i];
        for (std::size_t px = 0; px < yb.pixels(); ++px) {
            const bool removed = ydb[px] == LabelMap::kBiased;
            if (yb[px] > 0) {
                ++s.foreground_pixels;
                s.foreground_removed += removed;
            }
            if (corpus.has_oracle() && corpus.biased_masks[i].values[px] && yb[px] > 0) {
                ++s.biased_pixels;
                s.biased_removed += removed;
            }
            if (corpus.has_gt() && corpus.gt[i][px] > 0) {
                ++s.target_pixels;
                s.target_kept += ydb[px] == corpus.gt[i][px];
            }
        }
    }
    return s;
}

EvalReport evaluate(const Corpus& corpus, const std::vector<LabelMap>& predictions) {
    if (!corpus.has_gt()) throw Error("corpus has no ground truth");
    if (predictions.size() != corpus.gt.size()) throw Error("prediction count mismatch");
    ConfusionMatrix cm(corpus.manifest.num_classes);
    for (std::size_t i = 0; i < predictions.size(); ++i) accumulate(cm, corpus.gt[i], predictions[i]);
    return report(cm);
}

PipelineResult run_pipeline(const Corpus& corpus, const PipelineParams& params) {
    PipelineResult r;
    r.bank = build_centroid_bank(corpus.manifest, corpus.features, corpus.pseudo_labels, params.k_fg,
                                 params.k_bg, params.cluster_seed);
    r.centroids = select_debiased(r.bank, params.alpha);
    r.selection_accuracy = selection_accuracy(corpus, r.bank, r.centroids);

    const ThresholdRefinement refinement(params.train.refinement_threshold);
    std::map<int, int> skipped;
    r.debiased = debias_corpus(corpus, r.centroids, refinement, &skipped);
    for (const auto& [cls, n] : skipped) {
        std::cerr << "warning: class " << cls << " has no debiased centroid; skipped in " << n
                  << " image(s)\n";
    }
    if (corpus.has_gt() || corpus.has_oracle()) r.debias_stats = debias_stats(corpus, r.debiased);

    if (params.run_training) {
        r.training = train(corpus.manifest, corpus.features, r.debiased, params.train, corpus.gt);
        r.predictions = predict(r.training->teacher, corpus.features, corpus.manifest);
        if (corpus.has_gt()) r.eval = evaluate(corpus, r.predictions);
    }
    return r;
}

SweepParam parse_sweep_param(const std::string& name) {
    if (name == "alpha") return SweepParam::kAlpha;
    if (name == "kbg") return SweepParam::kKbg;
    if (name == "threshold") return SweepParam::kThreshold;
    throw Error("unknown sweep parameter: " + name);
}

std::vector<SweepRow> run_sweep(const Corpus& corpus, const PipelineParams& base, SweepParam param,
                                const std::vector<double>& values) {
    std::vector<SweepRow> rows;
    for (double v : values) {
        PipelineParams p = base;
        switch (param) {
            case SweepParam::kAlpha:
                p.alpha = v;
                break;
            case SweepParam::kKbg:
                if (v < 1 || v != std::floor(v)) throw Error("kbg values must be positive integers");
                p.k_bg = int(v);
                break;
            case SweepParam::kThreshold:
                p.train.refinement_threshold = v;
                break;
        }
        const PipelineResult r = run_pipeline(corpus, p);
        SweepRow row;
        row.value = v;
        if (!r.selection_accuracy.empty()) {
            double sum = 0.0, lo = 1.0;
            for (const auto& [c, acc] : r.selection_accuracy) {
                sum += acc;
                lo = std::min(lo, acc);
            }
            row.selection_accuracy = sum / double(r.selection_accuracy.size());
            row.min_selection_accuracy = lo;
        }
        row.eval = r.eval;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string sweep_csv(SweepParam param, const std::vector<SweepRow>& rows) {
    const char* name = param == SweepParam::kAlpha ? "alpha" : param == SweepParam::kKbg ? "kbg" : "threshold";
    std::ostringstream os;
    os.precision(10);
    os << name << ",selection_accuracy,min_selection_accuracy,miou,fp,fn\n";
    for (const auto& r : rows) {
        os << r.value << ',' << r.selection_accuracy << ',' << r.min_selection_accuracy << ',';
        if (r.eval) {
            os << r.eval->miou << ',' << r.eval->fp_rate << ',' << r.eval->fn_rate;
        } else {
            os << ",,";
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace mars
