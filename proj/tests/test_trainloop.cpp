#include "doctest.h"

#include <cmath>

#include "mars/pipeline.hpp"
#include "mars/trainloop.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace mars;

namespace {

ProbMap single_pixel(std::vector<double> probs) {
    const int channels = int(probs.size());
    return ProbMap{channels, 1, 1, std::move(probs)};
}

double head_distance(const SegHead& a, const SegHead& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.weights.size(); ++i) s += std::pow(a.weights[i] - b.weights[i], 2);
    for (std::size_t i = 0; i < a.bias.size(); ++i) s += std::pow(a.bias[i] - b.bias[i], 2);
    return std::sqrt(s);
}

SegHead random_head(Rng& rng, int channels, int dim) {
    SegHead h = SegHead::zeros(channels, dim);
    for (double& x : h.weights) x = rng.normal();
    for (double& x : h.bias) x = rng.normal();
    return h;
}

}  // namespace

TEST_CASE("forward") {
    Rng rng(2);
    const FeatureMap f = testutil::random_features(rng, 3, 2, 3);
    SUBCASE("zero head is uniform") {
        const ProbMap p = forward(SegHead::zeros(4, 3), f);
        for (double v : p.values) CHECK(v == doctest::Approx(0.25));
    }
    SUBCASE("channel sums are one") {
        const ProbMap p = forward(random_head(rng, 5, 3), f);
        for (std::size_t px = 0; px < p.pixels(); ++px) {
            double s = 0.0;
            for (int c = 0; c < p.channels; ++c) {
                CHECK(p.at(c, px) >= 0.0);
                s += p.at(c, px);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
    SUBCASE("a constant logit shift changes nothing") {
        const SegHead h = random_head(rng, 4, 3);
        SegHead shifted = h;
        for (double& b : shifted.bias) b += 7.5;
        const ProbMap a = forward(h, f);
        const ProbMap b = forward(shifted, f);
        for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(std::abs(a.values[i] - b.values[i]) <= 1e-9);
    }
    SUBCASE("dim mismatch") { CHECK_THROWS_AS(forward(SegHead::zeros(3, 4), f), Error); }
}

TEST_CASE("teacher_label") {
    CHECK(teacher_label(single_pixel({0.2, 0.5, 0.3}), {2}, 2)[0] == 2);
    CHECK(teacher_label(single_pixel({0.25, 0.25, 0.25, 0.25}), {1, 2, 3}, 3)[0] == 0);
    CHECK(teacher_label(single_pixel({0.1, 0.3, 0.3, 0.3}), {2, 3}, 3)[0] == 2);
    CHECK(teacher_label(single_pixel({0.1, 0.2, 0.6, 0.1}), {1, 2, 3}, 3)[0] == 2);
    CHECK(teacher_label(single_pixel({0.4, 0.2, 0.3, 0.1}), {1, 2, 3}, 3)[0] == 0);
}

TEST_CASE("certainty_mask") {
    SUBCASE("non-sentinel pixel") {
        const LabelMap ydb(1, 1, 3, int16_t(2));
        CHECK(certainty_mask(ydb, single_pixel({0.5, 0.3, 0.15, 0.05}), {1, 3}).values[0] == 1.0);
    }
    SUBCASE("max over foreground truth classes only") {
        const LabelMap ydb(1, 1, 3, int16_t(-1));
        CHECK(certainty_mask(ydb, single_pixel({0.5, 0.3, 0.15, 0.05}), {1, 3}).values[0] ==
              doctest::Approx(0.3));
    }
    SUBCASE("uniform teacher") {
        const LabelMap ydb(1, 1, 4, int16_t(-1));
        CHECK(certainty_mask(ydb, single_pixel({0.2, 0.2, 0.2, 0.2, 0.2}), {2}).values[0] ==
              doctest::Approx(0.2));
    }
    SUBCASE("identically one on images without -1") {
        Rng rng(4);
        const LabelMap ydb = testutil::random_labels(rng, 4, 4, 3);
        const ProbMap p = forward(random_head(rng, 4, 2), testutil::random_features(rng, 2, 4, 4));
        for (double w : certainty_mask(ydb, p, {1, 2}).values) CHECK(w == 1.0);
    }
}

TEST_CASE("complement_label") {
    const LabelMap ydb(1, 3, 4, {-1, 2, 0});
    const LabelMap yte(1, 3, 4, {4, 4, 4});
    const LabelMap yco = complement_label(ydb, yte);
    CHECK(yco[0] == 4);
    CHECK(yco[1] == 2);
    CHECK(yco[2] == 0);
    CHECK(complement_label(yte, LabelMap(1, 3, 4, int16_t(1))) == yte);
    CHECK_THROWS_AS(complement_label(ydb, LabelMap(1, 2, 4, int16_t(1))), Error);
    CHECK_THROWS_AS(complement_label(ydb, ydb), Error);

    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        const LabelMap a = testutil::random_labels(rng, 3, 4, 3, -1);
        const LabelMap t = testutil::random_labels(rng, 3, 4, 3);
        const LabelMap c = complement_label(a, t);
        CHECK(!c.has_biased());
        for (std::size_t i = 0; i < a.pixels(); ++i) {
            if (a[i] != -1) CHECK(c[i] == a[i]);
        }
    }
}

TEST_CASE("wce_loss") {
    SUBCASE("perfect prediction") {
        const LabelMap y(1, 2, 2, {1, 0});
        const ProbMap p{3, 1, 2, {0, 1, 1, 0, 0, 0}};
        CHECK(wce_loss(p, y, CertaintyMask::constant(1, 2, 1.0)) == 0.0);
    }
    SUBCASE("zero weight") {
        Rng rng(3);
        const ProbMap p = forward(random_head(rng, 3, 2), testutil::random_features(rng, 2, 2, 2));
        CHECK(wce_loss(p, testutil::random_labels(rng, 2, 2, 2), CertaintyMask::constant(2, 2, 0.0)) == 0.0);
    }
    SUBCASE("single pixel, w = 0.5, p = e^-2") {
        const double q = std::exp(-2.0);
        const ProbMap p = single_pixel({1.0 - q, q});
        CHECK(wce_loss(p, LabelMap(1, 1, 1, int16_t(1)), CertaintyMask::constant(1, 1, 0.5)) ==
              doctest::Approx(1.0));
    }
    SUBCASE("log is clamped") {
        const ProbMap p = single_pixel({1.0, 0.0});
        CHECK(wce_loss(p, LabelMap(1, 1, 1, int16_t(1)), CertaintyMask::constant(1, 1, 1.0)) ==
              doctest::Approx(-std::log(kLogClamp)));
    }
    SUBCASE("labels with -1 are rejected") {
        CHECK_THROWS_AS(wce_loss(single_pixel({0.5, 0.5}), LabelMap(1, 1, 1, int16_t(-1)),
                                 CertaintyMask::constant(1, 1, 1.0)),
                        Error);
    }
}

TEST_CASE("wce_loss is linear in W over disjoint supports") {
    Rng rng(14);
    for (int trial = 0; trial < 50; ++trial) {
        const ProbMap p = forward(random_head(rng, 4, 3), testutil::random_features(rng, 3, 3, 5));
        const LabelMap y = testutil::random_labels(rng, 3, 5, 3);
        CertaintyMask w1 = CertaintyMask::constant(3, 5, 0.0);
        CertaintyMask w2 = w1;
        CertaintyMask sum = w1;
        for (std::size_t i = 0; i < w1.values.size(); ++i) {
            const double v = rng.uniform();
            (rng.bernoulli(0.5) ? w1 : w2).values[i] = v;
            sum.values[i] = v;
        }
        const double whole = wce_loss(p, y, sum);
        CHECK(whole == doctest::Approx(wce_loss(p, y, w1) + wce_loss(p, y, w2)).epsilon(1e-12));
    }
}

TEST_CASE("wce_gradient") {
    Rng rng(15);
    SUBCASE("zero weight gives zero gradient") {
        const FeatureMap f = testutil::random_features(rng, 3, 2, 2);
        const SegHead g = wce_gradient(random_head(rng, 3, 3), f, testutil::random_labels(rng, 2, 2, 2),
                                       CertaintyMask::constant(2, 2, 0.0));
        CHECK(g == SegHead::zeros(3, 3));
    }
    SUBCASE("perfect prediction gives (near) zero gradient") {
        // Huge bias on channel 1 makes p one-hot in floating point.
        SegHead h = SegHead::zeros(3, 2);
        h.bias[1] = 800.0;
        const FeatureMap f = testutil::random_features(rng, 2, 2, 2);
        const SegHead g = wce_gradient(h, f, LabelMap(2, 2, 2, int16_t(1)), CertaintyMask::constant(2, 2, 1.0));
        for (double x : g.weights) CHECK(x == 0.0);
        for (double x : g.bias) CHECK(x == 0.0);
    }
    SUBCASE("two classes, three pixels against central differences") {
        for (int trial = 0; trial < 10; ++trial) {
            oracle::GradientInstance inst;
            inst.head = random_head(rng, 2, 3);
            inst.features = testutil::random_features(rng, 3, 1, 3);
            inst.yco = testutil::random_labels(rng, 1, 3, 1);
            inst.w = CertaintyMask::constant(1, 3, 1.0);
            for (double& x : inst.w.values) x = rng.uniform();
            CHECK(oracle::gradient_max_relative_error(inst) < 1e-4);
        }
    }
    SUBCASE("random small instances against central differences") {
        for (int trial = 0; trial < 50; ++trial) {
            CHECK(oracle::gradient_max_relative_error(oracle::random_gradient_instance(rng)) < 1e-4);
        }
    }
}

TEST_CASE("ema_update") {
    Rng rng(16);
    const SegHead t = random_head(rng, 3, 4);
    const SegHead s = random_head(rng, 3, 4);
    CHECK(ema_update(t, s, 0.0) == s);
    CHECK(ema_update(s, s, 0.99) == s);
    SegHead zero = SegHead::zeros(2, 1);
    SegHead one = zero;
    for (double& x : one.weights) x = 1.0;
    for (double& x : one.bias) x = 1.0;
    const SegHead mixed = ema_update(zero, one, 0.99);
    for (double x : mixed.weights) CHECK(x == doctest::Approx(0.01));
    CHECK_THROWS_AS(ema_update(t, s, 1.0), Error);
    CHECK_THROWS_AS(ema_update(t, s, -0.1), Error);
    CHECK_THROWS_AS(ema_update(t, SegHead::zeros(3, 5), 0.5), Error);

    SUBCASE("repeated updates converge geometrically") {
        for (double m : {0.5, 0.9, 0.99}) {
            SegHead cur = t;
            const double d0 = head_distance(t, s);
            for (int n = 1; n <= 200; ++n) {
                cur = ema_update(cur, s, m);
                CHECK(head_distance(cur, s) <= std::pow(m, n) * d0 * (1.0 + 1e-9) + 1e-15);
            }
        }
    }
}

TEST_CASE("train with zero epochs returns the initial head") {
    const Corpus corpus = corpus_from_synth(generate(SynthConfig{.num_images = 8, .bias_in_background_rate = 1.0}));
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto r = train(corpus.manifest, corpus.features, corpus.pseudo_labels, cfg, corpus.gt);
    CHECK(r.log.empty());
    CHECK(r.student == SegHead::zeros(5, 16));
    CHECK(r.teacher == r.student);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.ema_momentum = 1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = TrainConfig{};
    cfg.epochs = -1;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("training on the standard corpus") {
    const Corpus corpus = corpus_from_synth(generate(SynthConfig{}));
    PipelineParams params;
    params.run_training = false;
    const auto prepared = run_pipeline(corpus, params);

    TrainConfig cfg;
    const auto wce = train(corpus.manifest, corpus.features, prepared.debiased, cfg, corpus.gt);
    REQUIRE(wce.log.size() == std::size_t(cfg.epochs));
    for (std::size_t e = 2; e < wce.log.size(); ++e) {
        CHECK(wce.log[e].loss <= 1.05 * wce.log[e - 1].loss);
    }

    SUBCASE("complementing lowers FN on non-problematic classes") {
        cfg.mode = TrainMode::kExcludeBiased;
        const auto excluded = train(corpus.manifest, corpus.features, prepared.debiased, cfg, corpus.gt);
        auto non_problematic_fn = [&](const SegHead& teacher) {
            const auto preds = predict(teacher, corpus.features, corpus.manifest);
            std::size_t fn = 0;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                for (std::size_t px = 0; px < preds[i].pixels(); ++px) {
                    const int g = corpus.gt[i][px];
                    if (g > 0 && !SynthConfig{}.problematic_classes.contains(g) && preds[i][px] != g) ++fn;
                }
            }
            return fn;
        };
        CHECK(non_problematic_fn(wce.teacher) < non_problematic_fn(excluded.teacher));
    }
}
