#include <doctest.h>

#include <algorithm>
#include <random>

#include "histoscore/scoring.hpp"

using namespace histoscore;
using namespace histoscore::scoring;

namespace {

// Raw I_la representatives well inside each band for the default thresholds.
constexpr float kStrong = 40.0f / 510.0f;
constexpr float kModerate = 120.0f / 510.0f;
constexpr float kWeak = 200.0f / 510.0f;
constexpr float kUnstained = 320.0f / 510.0f;

IntensityImage image_of(const std::vector<float>& v) {
    return IntensityImage(static_cast<int>(v.size()), 1, v);
}

}  // namespace

TEST_CASE("band classification at and around the boundaries") {
    IntensityThresholds t;
    CHECK(classify_band(0.0, t) == Band::Strong);
    CHECK(classify_band(84.999, t) == Band::Strong);
    CHECK(classify_band(85.0, t) == Band::Moderate);
    CHECK(classify_band(169.999, t) == Band::Moderate);
    CHECK(classify_band(170.0, t) == Band::Weak);
    CHECK(classify_band(255.0, t) == Band::Weak);
    CHECK(classify_band(255.001, t) == Band::Unstained);
    CHECK(classify_band(510.0, t) == Band::Unstained);

    IntensityThresholds bad;
    bad.b1 = 200.0;
    bad.b2 = 100.0;
    CHECK_THROWS(bad.validate());
}

TEST_CASE("area scoring on forced fractions") {
    IntensityThresholds t;
    // 10 pixels: 5 strong, 3 moderate, 1 weak, 1 unstained -> H = 50*3+30*2+10 = 220
    auto img = image_of({kStrong, kStrong, kStrong, kStrong, kStrong, kModerate, kModerate,
                         kModerate, kWeak, kUnstained});
    MaskImage mask(10, 1, std::vector<uint8_t>(10, 1));
    auto [score, frac] = nap_score(img, mask, t);
    CHECK(score.value == doctest::Approx(220.0));
    CHECK(frac.ssn == doctest::Approx(50.0));
    CHECK(frac.msn == doctest::Approx(30.0));
    CHECK(frac.wsn == doctest::Approx(10.0));
    CHECK(frac.unstained == doctest::Approx(10.0));
    frac.validate();

    // all unstained -> 0, all strong -> 300
    auto [zero, zf] = nap_score(image_of(std::vector<float>(4, kUnstained)),
                                MaskImage(4, 1, std::vector<uint8_t>(4, 1)), t);
    CHECK(zero.value == doctest::Approx(0.0));
    CHECK(zf.unstained == doctest::Approx(100.0));
    auto [full, ff] = nap_score(image_of(std::vector<float>(4, kStrong)),
                                MaskImage(4, 1, std::vector<uint8_t>(4, 1)), t);
    CHECK(full.value == doctest::Approx(300.0));
    CHECK(ff.ssn == doctest::Approx(100.0));
}

TEST_CASE("area scoring respects the tissue mask") {
    IntensityThresholds t;
    auto img = image_of({kStrong, kUnstained, kUnstained, kUnstained});
    // only the strong pixel is tissue
    auto [score, frac] = nap_score(img, MaskImage(4, 1, {1, 0, 0, 0}), t);
    CHECK(score.value == doctest::Approx(300.0));
    CHECK_THROWS(nap_score(img, MaskImage(4, 1, {0, 0, 0, 0}), t));
}

TEST_CASE("nucleus scoring bands each instance by its mean") {
    IntensityThresholds t;
    // 4 nuclei of 2 pixels each: strong, strong, moderate, weak
    auto img = image_of({kStrong, kStrong, kStrong, kStrong, kModerate, kModerate, kWeak, kWeak});
    InstanceLabelMap labels(8, 1, {1, 1, 2, 2, 3, 3, 4, 4});
    auto [score, frac] = nnp_score(labels, img, t);
    // 50% strong, 25% moderate, 25% weak -> 150 + 50 + 25 = 225
    CHECK(score.value == doctest::Approx(225.0));
    CHECK(frac.ssn == doctest::Approx(50.0));
    CHECK(frac.msn == doctest::Approx(25.0));
    CHECK(frac.wsn == doctest::Approx(25.0));
    CHECK(frac.unstained == doctest::Approx(0.0));

    // single all-strong nucleus -> 300; single unstained -> 0
    auto [s300, f300] = nnp_score(InstanceLabelMap(2, 1, {1, 1}),
                                  image_of({kStrong, kStrong}), t);
    CHECK(s300.value == doctest::Approx(300.0));
    auto [s0, f0] = nnp_score(InstanceLabelMap(2, 1, {1, 1}),
                              image_of({kUnstained, kUnstained}), t);
    CHECK(s0.value == doctest::Approx(0.0));
    CHECK_THROWS(nnp_score(InstanceLabelMap(2, 1, {0, 0}), image_of({kStrong, kStrong}), t));
}

TEST_CASE("nucleus scoring is invariant to label permutation") {
    IntensityThresholds t;
    auto img = image_of({kStrong, kModerate, kWeak, kUnstained, kStrong, kModerate});
    InstanceLabelMap a(6, 1, {1, 2, 3, 4, 5, 6});
    InstanceLabelMap b(6, 1, {6, 5, 4, 3, 2, 1});
    auto ra = nnp_score(a, img, t);
    auto rb = nnp_score(b, img, t);
    CHECK(ra.first.value == doctest::Approx(rb.first.value));
    CHECK(ra.second.ssn == doctest::Approx(rb.second.ssn));
    CHECK(ra.second.msn == doctest::Approx(rb.second.msn));
}

TEST_CASE("scores are monotone in the strong boundary") {
    // raising b1 can only move nuclei from moderate to strong, never lower H
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    std::vector<float> v(40);
    for (auto& x : v) x = u(rng);
    auto img = image_of(v);
    MaskImage mask(40, 1, std::vector<uint8_t>(40, 1));
    double prev = -1.0;
    for (double b1 : {40.0, 85.0, 120.0, 169.0}) {
        IntensityThresholds t;
        t.b1 = b1;
        auto [score, frac] = nap_score(img, mask, t);
        CHECK(score.value >= prev);
        prev = score.value;
    }
}
