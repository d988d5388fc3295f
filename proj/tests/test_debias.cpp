#include "doctest.h"

#include <algorithm>

#include "mars/debias.hpp"
#include "mars/pipeline.hpp"
#include "mars/rng.hpp"
#include "test_util.hpp"

using namespace mars;

namespace {

DebiasedCentroidSet centroid_set(std::map<int, Vec> per_class) {
    DebiasedCentroidSet s;
    for (auto& [c, v] : per_class) {
        s.per_class[c] = normalized(v);
        s.selected_counts[c] = 1;
    }
    return s;
}

SimilarityMap sim(int h, int w, std::vector<double> values) { return SimilarityMap{h, w, std::move(values), {}}; }

}  // namespace

TEST_CASE("similarity_map examples") {
    // D=3, 1x3 image: pixel 0 = e0, pixel 1 = e1, pixel 2 = -e0
    const FeatureMap f(3, 1, 3, {1, 0, -1, 0, 1, 0, 0, 0, 0});
    const auto set = centroid_set({{1, {1, 0, 0}}, {2, {0, 1, 0}}, {3, {0, 0, 1}}});

    const auto m1 = similarity_map(f, set, {1});
    CHECK(m1.values[0] == doctest::Approx(1.0));
    CHECK(m1.values[1] == doctest::Approx(0.0));
    CHECK(m1.values[2] == doctest::Approx(0.0));  // negative similarity clipped

    const auto m3 = similarity_map(f, set, {3});
    for (double v : m3.values) CHECK(v == doctest::Approx(0.0));

    CHECK_THROWS_WITH_AS(similarity_map(f, set, {4}), "no usable centroids", Error);
    const auto partial = similarity_map(f, set, {1, 4});
    CHECK(partial.skipped_classes == std::vector<int>{4});
}

TEST_CASE("similarity_map over two classes is the element-wise max") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const FeatureMap f = testutil::random_features(rng, 5, 4, 4);
        const auto set = centroid_set({{1, testutil::random_unit(rng, 5)}, {2, testutil::random_unit(rng, 5)}});
        const auto a = similarity_map(f, set, {1});
        const auto b = similarity_map(f, set, {2});
        const auto both = similarity_map(f, set, {1, 2});
        for (std::size_t i = 0; i < both.values.size(); ++i) {
            CHECK(both.values[i] == std::max(a.values[i], b.values[i]));
            CHECK(both.values[i] >= 0.0);
            CHECK(both.values[i] <= 1.0);
        }
    }
}

TEST_CASE("binarize examples") {
    const auto m = sim(1, 3, {0.2, 0.5, 0.8});
    CHECK(binarize(m, 0.5).values == std::vector<uint8_t>{0, 1, 1});
    CHECK(binarize(sim(1, 3, {0.0, 0.3, 1.0}), 0.0).values == std::vector<uint8_t>{1, 1, 1});
    CHECK(binarize(sim(1, 3, {0.0, 0.999, 1.0}), 1.0).values == std::vector<uint8_t>{0, 0, 1});
    CHECK_THROWS_AS(binarize(m, 1.0 + 1e-9), Error);
    CHECK_THROWS_AS(binarize(m, -0.1), Error);
    CHECK_THROWS_AS(ThresholdRefinement(1.5), Error);
    CHECK(ThresholdRefinement().threshold() == kDefaultThreshold);
}

TEST_CASE("debias_label examples") {
    const LabelMap yb(1, 4, 3, {0, 3, 3, 0});
    const BinaryMask mask{1, 4, {0, 0, 1, 1}};
    const LabelMap ydb = debias_label(yb, mask);
    CHECK(ydb[0] == 0);   // background kept even where mask is 0
    CHECK(ydb[1] == -1);  // foreground outside the mask
    CHECK(ydb[2] == 3);   // foreground inside the mask
    CHECK(ydb[3] == 0);
    CHECK_THROWS_AS(debias_label(yb, BinaryMask{2, 2, {0, 0, 0, 0}}), Error);
}

TEST_CASE("debias partition and threshold monotonicity") {
    Rng rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        const FeatureMap f = testutil::random_features(rng, 4, 5, 5);
        const LabelMap yb = testutil::random_labels(rng, 5, 5, 2);
        const auto set = centroid_set({{1, testutil::random_unit(rng, 4)}, {2, testutil::random_unit(rng, 4)}});
        std::size_t previous = 0;
        for (double t : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
            const LabelMap ydb = debias_image(f, yb, set, {1, 2}, ThresholdRefinement(t));
            std::size_t removed = 0;
            for (std::size_t i = 0; i < ydb.pixels(); ++i) {
                CHECK((ydb[i] == -1 || ydb[i] == yb[i]));
                if (ydb[i] == -1) {
                    CHECK(yb[i] > 0);
                    ++removed;
                }
            }
            CHECK(removed >= previous);
            previous = removed;
        }
    }
}

TEST_CASE("synthetic corpus without planted bias is left nearly untouched") {
    SynthConfig cfg;
    cfg.bias_cooccurrence = 0.0;
    cfg.part_rate = 0.0;
    const Corpus corpus = corpus_from_synth(generate(cfg));
    PipelineParams params;
    params.run_training = false;
    const auto result = run_pipeline(corpus, params);
    REQUIRE(result.debias_stats);
    CHECK(result.debias_stats->removed_fraction() <= 0.01);
}

TEST_CASE("standard synthetic corpus: biased pixels removed, targets kept") {
    const Corpus corpus = corpus_from_synth(generate(SynthConfig{}));
    PipelineParams params;
    params.run_training = false;
    const auto result = run_pipeline(corpus, params);
    REQUIRE(result.debias_stats);
    CHECK(result.debias_stats->biased_recall() >= 0.95);
    CHECK(result.debias_stats->target_retention() >= 0.95);
}
