#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "histoscore/augment.hpp"

using namespace histoscore;
using namespace histoscore::aug;

namespace {

// Direct erf-based oracle for the mass of N(mean, sigma^2) over [a, b].
double gaussian_cell_mass(double mean, double sigma, double a, double b) {
    auto cdf = [&](double x) { return 0.5 * std::erfc(-(x - mean) / (sigma * std::sqrt(2.0))); };
    return cdf(b) - cdf(a);
}

}  // namespace

TEST_CASE("label pmf integrates the gaussian over unit cells") {
    DlaConfig cfg;
    auto pmf = discretized_label_pmf(125.0, cfg);
    REQUIRE(pmf.size() == 301);
    CHECK(std::accumulate(pmf.begin(), pmf.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));

    // far from the boundary the truncation is negligible: compare cells
    // against the closed-form gaussian mass
    for (int l : {123, 124, 125, 126, 127}) {
        double expect = gaussian_cell_mass(125.0, cfg.sigma, l - 0.5, l + 0.5);
        CHECK(pmf[l] == doctest::Approx(expect).epsilon(1e-6));
    }
    CHECK(pmf[125] > pmf[124]);
    CHECK(pmf[124] == doctest::Approx(pmf[126]).epsilon(1e-9));
    CHECK(pmf[0] == doctest::Approx(0.0));
}

TEST_CASE("label pmf truncates at the boundaries") {
    DlaConfig cfg;
    auto pmf = discretized_label_pmf(0.0, cfg);
    CHECK(std::accumulate(pmf.begin(), pmf.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pmf[0] > 0.5);  // the negative half folds into nothing; cell 0 keeps the mode
    for (size_t i = 1; i < pmf.size(); ++i) CHECK(pmf[i] <= pmf[i - 1] + 1e-15);

    auto top = discretized_label_pmf(300.0, cfg);
    CHECK(top[300] > 0.5);
    CHECK(std::accumulate(top.begin(), top.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("label sampling matches the pmf") {
    DlaConfig cfg;
    cfg.samples_per_image = 100000;
    std::mt19937_64 rng(17);
    auto labels = augment_labels(125, cfg, rng);
    REQUIRE(labels.size() == static_cast<size_t>(cfg.samples_per_image));

    std::vector<double> hist(301, 0.0);
    double mean = 0.0;
    size_t near = 0;
    for (int l : labels) {
        REQUIRE(l >= 0);
        REQUIRE(l <= 300);
        hist[l] += 1.0 / cfg.samples_per_image;
        mean += l;
        if (l >= 123 && l <= 127) ++near;
    }
    mean /= cfg.samples_per_image;
    CHECK(mean == doctest::Approx(125.0).epsilon(0.0003));
    CHECK(static_cast<double>(near) / cfg.samples_per_image >= 0.95);

    // total variation distance between the sample and the exact pmf
    auto pmf = discretized_label_pmf(125.0, cfg);
    double tv = 0.0;
    for (size_t i = 0; i < pmf.size(); ++i) tv += std::abs(hist[i] - pmf[i]);
    CHECK(tv / 2.0 < 0.02);
}

TEST_CASE("tiny sigma degenerates to the original label") {
    DlaConfig cfg;
    cfg.sigma = 1e-6;
    cfg.samples_per_image = 50;
    std::mt19937_64 rng(3);
    for (int l : augment_labels(200, cfg, rng)) CHECK(l == 200);
    auto pmf = discretized_label_pmf(200.0, cfg);
    CHECK(pmf[200] == doctest::Approx(1.0));
}

TEST_CASE("identity transform is lossless") {
    GeometricDraw id;
    IntensityImage img(5, 4);
    for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i) / 20.0f;
    CHECK(apply_transform(img, id).data == img.data);
    MaskImage mask(5, 4, {0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1});
    CHECK(apply_transform(mask, id).data == mask.data);
}

TEST_CASE("quarter turns permute pixels exactly") {
    IntensityImage img(4, 4);
    for (size_t i = 0; i < 16; ++i) img.data[i] = static_cast<float>(i + 1);
    GeometricDraw turn;
    turn.angle_rad = std::acos(-1.0) / 2.0;  // 90 degrees
    auto rot = apply_transform(img, turn);
    // rotating four times restores the original, bit for bit
    auto four = apply_transform(apply_transform(apply_transform(rot, turn), turn), turn);
    CHECK(four.data == img.data);
    // the rotation is a permutation: same multiset of values
    auto a = img.data;
    auto b = rot.data;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);

    GeometricDraw half;
    half.angle_rad = std::acos(-1.0);  // 180 degrees
    auto flip = apply_transform(img, half);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(*flip.at(x, y) == *img.at(3 - x, 3 - y));
}

TEST_CASE("pure shifts translate content and fill with zero") {
    IntensityImage img(6, 6);
    *img.at(2, 3) = 0.7f;
    GeometricDraw shift;
    shift.shift_x = 1;
    shift.shift_y = -2;
    auto out = apply_transform(img, shift);
    CHECK(*out.at(3, 1) == doctest::Approx(0.7));
    CHECK(*out.at(2, 3) == doctest::Approx(0.0));
    // content shifted off-canvas is dropped, vacated pixels are zero
    float total = 0;
    for (float v : out.data) total += v;
    CHECK(total == doctest::Approx(0.7));
}

TEST_CASE("image and mask share one geometric draw") {
    std::mt19937_64 rng(29);
    IntensityImage img(32, 32);
    MaskImage mask(32, 32);
    for (int y = 10; y < 20; ++y)
        for (int x = 8; x < 22; ++x) {
            *img.at(x, y) = 0.5f;
            *mask.at(x, y) = 1;
        }
    for (int trial = 0; trial < 20; ++trial) {
        auto draw = draw_transform(32, 32, 0.05, rng);
        CHECK(std::abs(draw.shift_x) <= 1);  // 5% of 32
        CHECK(std::abs(draw.shift_y) <= 1);
        CHECK(draw.angle_rad >= 0.0);
        CHECK(draw.angle_rad < 2 * std::acos(-1.0));
        auto timg = apply_transform(img, draw);
        auto tmask = apply_transform(mask, draw);
        // wherever the mask says foreground, interpolated intensity is
        // dominated by the block value; deep background stays empty
        for (int y = 2; y < 30; ++y)
            for (int x = 2; x < 30; ++x) {
                if (*tmask.at(x, y)) CHECK(*timg.at(x, y) > 0.0f);
            }
    }
}
