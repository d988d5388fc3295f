#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "mars/io.hpp"
#include "mars/pipeline.hpp"
#include "mars/synth.hpp"

using namespace mars;
namespace fs = std::filesystem;

TEST_CASE("synth config validation") {
    SynthConfig c;
    c.problematic_classes = {5};
    CHECK_THROWS_AS(generate(c), Error);
    c = SynthConfig{};
    c.bias_in_background_rate = 0.0;
    CHECK_THROWS_AS(generate(c), Error);
    c = SynthConfig{};
    c.target_height = 30;
    CHECK_THROWS_WITH_AS(generate(c), doctest::Contains("infeasible layout"), Error);
    c = SynthConfig{};
    c.biased_class_similarity = 0.3;
    CHECK_THROWS_AS(generate(c), Error);
}

TEST_CASE("synth config json round trip") {
    SynthConfig c;
    c.num_images = 12;
    c.problematic_classes = {2};
    c.feature_noise_sigma = 0.125;
    c.seed = 99;
    const SynthConfig back = synth_config_from_json(synth_config_to_json(c));
    CHECK(back.num_images == 12);
    CHECK(back.problematic_classes == std::set<int>{2});
    CHECK(back.feature_noise_sigma == 0.125);
    CHECK(back.seed == 99);
    CHECK(synth_config_to_json(back) == synth_config_to_json(c));
    // Missing keys keep their defaults.
    CHECK(synth_config_from_json("{\"num_images\": 7}").num_classes == SynthConfig{}.num_classes);
}

TEST_CASE("synthetic corpus structure") {
    const SynthConfig cfg;
    const SynthCorpus s = generate(cfg);
    REQUIRE(s.manifest.records.size() == std::size_t(cfg.num_images));

    // Prototype separation.
    std::vector<Vec> protos{s.prototypes.background};
    for (const auto& [c, v] : s.prototypes.target) protos.push_back(v);
    for (const auto& [c, v] : s.prototypes.biased) protos.push_back(v);
    for (std::size_t i = 0; i < protos.size(); ++i) {
        CHECK(norm(protos[i]) == doctest::Approx(1.0));
        for (std::size_t j = i + 1; j < protos.size(); ++j) CHECK(cosine_similarity(protos[i], protos[j]) <= 0.2);
    }

    std::size_t blob_images = 0;
    std::size_t problematic_instances = 0;
    for (std::size_t i = 0; i < s.features.size(); ++i) {
        const auto& rec = s.manifest.records[i];
        const auto& gt = s.gt[i];
        const auto& yb = s.pseudo_labels[i];
        const BinaryMask mask = oracle_biased_pixels(s, i);
        CHECK_NOTHROW(s.features[i].validate());

        std::size_t mask_area = 0;
        for (std::size_t px = 0; px < gt.pixels(); ++px) {
            // Pseudo labels cover the ground truth plus exactly the biased blobs.
            if (mask.values[px]) {
                ++mask_area;
                CHECK(gt[px] == 0);
                CHECK(yb[px] > 0);
            } else {
                CHECK(yb[px] == gt[px]);
            }
        }
        int problematic_here = 0;
        for (int c : rec.truth_classes) problematic_here += cfg.problematic_classes.contains(c);
        problematic_instances += problematic_here;
        if (problematic_here == 0) CHECK(mask_area == 0);
        const std::size_t blob = std::size_t(cfg.biased_height) * cfg.target_width;
        CHECK(mask_area % blob == 0);
        CHECK(mask_area <= blob * problematic_here);
        blob_images += mask_area / blob;
        CHECK(gt.foreground_classes() == rec.truth_classes);
    }
    // Blob count is Binomial(instances, bias_cooccurrence); allow four standard deviations.
    const double n = double(problematic_instances);
    const double p = cfg.bias_cooccurrence;
    CHECK(std::abs(double(blob_images) - n * p) <= 4.0 * std::sqrt(n * p * (1 - p)));
}

TEST_CASE("synthetic corpus is deterministic") {
    SynthConfig cfg;
    cfg.num_images = 10;
    cfg.bias_in_background_rate = 1.0;
    const SynthCorpus a = generate(cfg);
    const SynthCorpus b = generate(cfg);
    for (std::size_t i = 0; i < a.features.size(); ++i) {
        CHECK(encode_feature_map(a.features[i]) == encode_feature_map(b.features[i]));
        CHECK(a.pseudo_labels[i] == b.pseudo_labels[i]);
        CHECK(a.gt[i] == b.gt[i]);
    }
    cfg.seed = 8;
    CHECK(encode_feature_map(generate(cfg).features[0]) != encode_feature_map(a.features[0]));
}

TEST_CASE("written corpus reads back identically") {
    SynthConfig cfg;
    cfg.num_images = 6;
    cfg.bias_in_background_rate = 1.0;
    const SynthCorpus s = generate(cfg);
    const fs::path dir = fs::temp_directory_path() / "mars_test_synth_corpus";
    fs::remove_all(dir);
    write_corpus(s, dir.string());
    const Corpus c = load_corpus((dir / "manifest.jsonl").string());
    CHECK(c.manifest.num_classes == cfg.num_classes);
    REQUIRE(c.features.size() == s.features.size());
    for (std::size_t i = 0; i < c.features.size(); ++i) {
        CHECK(c.features[i] == s.features[i]);
        CHECK(c.pseudo_labels[i] == s.pseudo_labels[i]);
        CHECK(c.gt[i] == s.gt[i]);
        CHECK(c.biased_masks[i] == s.biased_masks[i]);
    }
    fs::remove_all(dir);
}

TEST_CASE("noise-free clustering recovers the planted prototypes") {
    SynthConfig cfg;
    cfg.num_classes = 2;
    cfg.problematic_classes = {1};
    cfg.feature_noise_sigma = 0.0;
    cfg.part_rate = 0.0;
    cfg.num_images = 20;
    cfg.bias_in_background_rate = 1.0;
    const SynthCorpus s = generate(cfg);
    const auto bank = build_centroid_bank(s.manifest, s.features, s.pseudo_labels, 2, 2, 0);
    const Vec& target = s.prototypes.target.at(1);
    const Vec& biased = s.prototypes.biased.at(1);
    bool saw_biased = false;
    for (const auto& c : bank.foreground.at(1)) {
        const double dt = cosine_distance(c.vector, target);
        const double db = cosine_distance(c.vector, biased);
        CHECK(std::min(dt, db) < 1e-6);
        saw_biased = saw_biased || db < 1e-6;
    }
    CHECK(saw_biased);
    for (const auto& c : bank.foreground.at(2)) CHECK(cosine_distance(c.vector, s.prototypes.target.at(2)) < 1e-6);
}

TEST_CASE("centroid_is_target labels noise-free centroids by their prototype") {
    SynthConfig cfg;
    cfg.feature_noise_sigma = 0.0;
    const SynthCorpus s = generate(cfg);
    const auto bank = build_centroid_bank(s.manifest, s.features, s.pseudo_labels, 2, 2, 0);
    for (int c : cfg.problematic_classes) {
        const auto labels = centroid_is_target(bank, c, s.manifest, s.features, s.pseudo_labels, s.gt, s.biased_masks);
        REQUIRE(labels.size() == bank.foreground.at(c).size());
        for (const auto& centroid : bank.foreground.at(c)) {
            const bool near_target = cosine_distance(centroid.vector, s.prototypes.target.at(c)) < 1e-6;
            CHECK(labels.at({centroid.image_id, centroid.cluster_index}) == near_target);
        }
    }
}
