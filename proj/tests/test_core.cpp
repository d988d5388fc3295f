#include "doctest.h"

#include <cmath>

#include "mars/core.hpp"
#include "mars/rng.hpp"

using namespace mars;

TEST_CASE("cosine similarity examples") {
    CHECK(cosine_similarity(Vec{1, 0}, Vec{1, 0}) == doctest::Approx(1.0));
    CHECK(cosine_similarity(Vec{1, 0}, Vec{0, 1}) == doctest::Approx(0.0));
    CHECK(cosine_similarity(Vec{3, 4}, Vec{6, 8}) == doctest::Approx(1.0));
    CHECK_THROWS_WITH_AS(cosine_similarity(Vec{0, 0}, Vec{1, 0}), "degenerate vector", Error);
}

TEST_CASE("cosine distance examples") {
    CHECK(cosine_distance(Vec{1, 0}, Vec{1, 0}) == doctest::Approx(0.0));
    CHECK(cosine_distance(Vec{1, 0}, Vec{0, 1}) == doctest::Approx(0.5));
    CHECK(cosine_distance(Vec{1, 0}, Vec{-1, 0}) == doctest::Approx(1.0));
}

TEST_CASE("cosine distance properties on random vectors") {
    Rng rng(11);
    for (int trial = 0; trial < 500; ++trial) {
        const int dim = 1 + int(rng.below(12));
        Vec a(dim), b(dim), neg(dim);
        for (int d = 0; d < dim; ++d) {
            a[d] = rng.normal();
            b[d] = rng.normal();
            neg[d] = -a[d];
        }
        CHECK(std::abs(cosine_distance(a, a)) <= 1e-12);
        CHECK(std::abs(cosine_distance(a, neg) - 1.0) <= 1e-12);
        CHECK(cosine_distance(a, b) == cosine_distance(b, a));

        const double s = 0.01 + 100.0 * rng.uniform();
        const double t = 0.01 + 100.0 * rng.uniform();
        Vec sa = a, tb = b;
        for (double& x : sa) x *= s;
        for (double& x : tb) x *= t;
        CHECK(std::abs(cosine_distance(a, b) - cosine_distance(sa, tb)) <= 1e-9);

        const double sim = cosine_similarity(a, b);
        CHECK(sim >= -1.0);
        CHECK(sim <= 1.0);
    }
}

TEST_CASE("pixel_vector indexes [D][H][W]") {
    // D=2, H=1, W=2: channel 0 = [1, 2], channel 1 = [3, 4]
    const FeatureMap f(2, 1, 2, {1, 2, 3, 4});
    CHECK(pixel_vector(f, 0, 0) == Vec{1, 3});
    CHECK(pixel_vector(f, 0, 1) == Vec{2, 4});
    CHECK_THROWS_AS(pixel_vector(f, 1, 0), Error);
    CHECK_THROWS_AS(pixel_vector(f, 0, -1), Error);
}

TEST_CASE("feature map validation rejects zero and non-finite pixels") {
    FeatureMap f(2, 1, 2, {1, 0, 0, 0});
    CHECK_THROWS_WITH_AS(f.validate(), doctest::Contains("degenerate vector"), Error);
    f.at(0, 0, 1) = 1.0f;
    CHECK_NOTHROW(f.validate());
    f.at(1, 0, 0) = std::nanf("");
    CHECK_THROWS_AS(f.validate(), Error);
    CHECK_THROWS_AS(FeatureMap(2, 2, 2, std::vector<float>(7)), Error);
}

TEST_CASE("label map range and helpers") {
    CHECK_THROWS_WITH_AS(LabelMap(1, 2, 3, {0, 4}), doctest::Contains("label out of range"), Error);
    CHECK_THROWS_AS(LabelMap(1, 2, 3, {-2, 0}), Error);
    const LabelMap y(2, 2, 3, {0, 2, -1, 3});
    CHECK(y.has_biased());
    CHECK(y.foreground_classes() == std::set<int>{2, 3});
    CHECK(y.at(1, 1) == 3);
}

TEST_CASE("manifest validation") {
    DatasetManifest m;
    m.num_classes = 3;
    m.embedding_dim = 4;
    m.records.push_back({"a", "a.ft", "a.lb", {1}, "", ""});
    CHECK_NOTHROW(m.validate());
    m.records.push_back({"a", "b.ft", "b.lb", {2}, "", ""});
    CHECK_THROWS_WITH_AS(m.validate(), doctest::Contains("duplicate"), Error);
    m.records.back().image_id = "b";
    m.records.back().truth_classes = {0};
    CHECK_THROWS_AS(m.validate(), Error);
    m.records.back().truth_classes = {};
    CHECK_THROWS_AS(m.validate(), Error);
}
