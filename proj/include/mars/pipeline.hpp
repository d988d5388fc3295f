#pragma once
// In-memory chaining of the stages: cluster -> select -> debias -> train -> eval.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mars/bank.hpp"
#include "mars/debias.hpp"
#include "mars/eval.hpp"
#include "mars/select.hpp"
#include "mars/synth.hpp"
#include "mars/trainloop.hpp"

namespace mars {

// A manifest with every referenced tensor loaded. gt / biased_masks are empty
// when the manifest does not provide them.
struct Corpus {
    DatasetManifest manifest;
    std::vector<FeatureMap> features;
    std::vector<LabelMap> pseudo_labels;
    std::vector<LabelMap> gt;
    std::vector<BinaryMask> biased_masks;

    bool has_gt() const { return !gt.empty(); }
    bool has_oracle() const { return !biased_masks.empty(); }
};

Corpus load_corpus(const std::string& manifest_path);
Corpus corpus_from_synth(const SynthCorpus& synth);

struct PipelineParams {
    int k_fg = 2;
    int k_bg = 2;
    uint64_t cluster_seed = 0;
    double alpha = kDefaultAlpha;
    TrainConfig train;  // train.refinement_threshold drives the debias step
    bool run_training = true;
};

struct DebiasStats {
    std::size_t biased_pixels = 0;       // oracle biased pixels inside pseudo-label foreground
    std::size_t biased_removed = 0;      // ... that became -1
    std::size_t target_pixels = 0;       // ground-truth foreground pixels
    std::size_t target_kept = 0;         // ... whose debiased label equals the ground truth
    std::size_t foreground_pixels = 0;   // pseudo-label foreground
    std::size_t foreground_removed = 0;  // ... that became -1

    double biased_recall() const;
    double target_retention() const;
    double removed_fraction() const;
};

struct PipelineResult {
    CentroidBank bank;
    DebiasedCentroidSet centroids;
    std::vector<LabelMap> debiased;
    std::optional<TrainResult> training;
    std::vector<LabelMap> predictions;  // final teacher labels
    std::optional<EvalReport> eval;
    std::map<int, double> selection_accuracy;  // oracle corpora only
    std::optional<DebiasStats> debias_stats;   // oracle corpora only
};

std::vector<LabelMap> debias_corpus(const Corpus& corpus, const DebiasedCentroidSet& centroids,
                                    const Refinement& refinement,
                                    std::map<int, int>* skipped_counts = nullptr);

std::map<int, double> selection_accuracy(const Corpus& corpus, const CentroidBank& bank,
                                         const DebiasedCentroidSet& centroids);

DebiasStats debias_stats(const Corpus& corpus, const std::vector<LabelMap>& debiased);

EvalReport evaluate(const Corpus& corpus, const std::vector<LabelMap>& predictions);

PipelineResult run_pipeline(const Corpus& corpus, const PipelineParams& params);

enum class SweepParam { kAlpha, kKbg, kThreshold };

SweepParam parse_sweep_param(const std::string& name);

struct SweepRow {
    double value = 0.0;
    double selection_accuracy = -1.0;  // mean over classes with oracle labels; -1 when unknown
    double min_selection_accuracy = -1.0;
    std::optional<EvalReport> eval;
};

std::vector<SweepRow> run_sweep(const Corpus& corpus, const PipelineParams& base, SweepParam param,
                                const std::vector<double>& values);

std::string sweep_csv(SweepParam param, const std::vector<SweepRow>& rows);

}  // namespace mars
