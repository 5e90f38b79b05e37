#include <doctest.h>

#include <random>

#include "histoscore/image.hpp"

using namespace histoscore;

TEST_CASE("h_score basic values") {
    CHECK(h_score({100, 0, 0, 0}).value == doctest::Approx(100.0));
    CHECK(h_score({0, 0, 100, 0}).value == doctest::Approx(300.0));
    CHECK(h_score({10, 20, 30, 40}).value == doctest::Approx(140.0));
    CHECK(h_score({0, 0, 0, 100}).value == doctest::Approx(0.0));
}

TEST_CASE("h_score rejects invalid fractions") {
    CHECK_THROWS_AS(h_score({50, 0, 0, 0}), std::invalid_argument);       // sum != 100
    CHECK_THROWS_AS(h_score({120, 0, 0, -20}), std::invalid_argument);    // out of range
}

TEST_CASE("h_score is linear under convex mixes") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int it = 0; it < 200; ++it) {
        double a1 = unif(rng), b1 = unif(rng) * (1 - a1), c1 = unif(rng) * (1 - a1 - b1);
        double a2 = unif(rng), b2 = unif(rng) * (1 - a2), c2 = unif(rng) * (1 - a2 - b2);
        IntensityFractions f1{100 * a1, 100 * b1, 100 * c1, 100 * (1 - a1 - b1 - c1)};
        IntensityFractions f2{100 * a2, 100 * b2, 100 * c2, 100 * (1 - a2 - b2 - c2)};
        double t = unif(rng);
        IntensityFractions mix{t * f1.wsn + (1 - t) * f2.wsn, t * f1.msn + (1 - t) * f2.msn,
                               t * f1.ssn + (1 - t) * f2.ssn,
                               t * f1.unstained + (1 - t) * f2.unstained};
        double expect = t * h_score(f1).value + (1 - t) * h_score(f2).value;
        CHECK(h_score(mix).value == doctest::Approx(expect).epsilon(1e-10));
    }
}

TEST_CASE("image constructors reject mismatched buffers") {
    CHECK_THROWS_AS(RgbImage(2, 2, std::vector<uint8_t>(5)), std::invalid_argument);
    CHECK_THROWS_AS(MaskImage(0, 4), std::invalid_argument);
    CHECK_NOTHROW(RgbImage(2, 2, std::vector<uint8_t>(12)));
}
