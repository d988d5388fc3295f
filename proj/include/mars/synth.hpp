#pragma once
// Deterministic synthetic corpora with planted co-occurrence bias and exact
// ground truth. Each class has a target prototype; problematic classes also
// have a "biased texture" that the pseudo labels wrongly include and that also
// shows up in the background of unrelated images.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "mars/bank.hpp"
#include "mars/core.hpp"
#include "mars/debias.hpp"

namespace mars {

struct SynthConfig {
    int num_images = 60;
    int height = 32;
    int width = 32;
    int num_classes = 4;
    int embedding_dim = 16;
    std::set<int> problematic_classes{1, 2};
    double bias_cooccurrence = 0.8;
    double bias_in_background_rate = 0.3;
    double feature_noise_sigma = 0.05;
    uint64_t seed = 7;

    int max_classes_per_image = 2;
    int target_height = 10;
    int target_width = 12;
    int biased_height = 6;  // biased blob sits directly below the target, same width
    // Cosine between a biased texture and its class prototype (<= 0.2).
    double biased_class_similarity = 0.0;
    // Non-problematic instances may carry a small sub-region ("part") whose
    // embedding is only weakly aligned with the class prototype.
    double part_rate = 0.5;
    int part_height = 3;
    int part_width = 4;
    double part_class_similarity = 0.28;
    double part_background_similarity = 0.2;

    void validate() const;
};

struct SynthPrototypes {
    std::map<int, Vec> target;  // class -> unit prototype
    Vec background;
    std::map<int, Vec> biased;  // problematic class -> texture prototype
    std::map<int, Vec> part;    // non-problematic class -> part prototype
};

struct SynthCorpus {
    SynthConfig config;
    DatasetManifest manifest;
    std::vector<FeatureMap> features;
    std::vector<LabelMap> pseudo_labels;
    std::vector<LabelMap> gt;
    std::vector<BinaryMask> biased_masks;  // exact planted biased-blob pixels
    SynthPrototypes prototypes;
};

SynthCorpus generate(const SynthConfig& config);

// Writes features, pseudo labels, ground truth, biased masks and manifest.jsonl under `dir`.
void write_corpus(const SynthCorpus& corpus, const std::string& dir);

BinaryMask oracle_biased_pixels(const SynthCorpus& corpus, std::size_t image);

// For every foreground centroid in the bank: true when its member pixels overlap
// the ground-truth target region more (by IoU) than the planted biased blob.
// Members are recovered by nearest-centroid assignment within the centroid's
// image and class region, the same rule the clustering uses.
// `pseudo_labels`, `gt`, `biased_masks` are aligned with manifest.records.
std::map<std::pair<std::string, int>, bool> centroid_is_target(
    const CentroidBank& bank, int class_id, const DatasetManifest& manifest,
    const std::vector<FeatureMap>& features, const std::vector<LabelMap>& pseudo_labels,
    const std::vector<LabelMap>& gt, const std::vector<BinaryMask>& biased_masks);

SynthConfig synth_config_from_json(const std::string& json_text);
std::string synth_config_to_json(const SynthConfig& config);

}  // namespace mars
