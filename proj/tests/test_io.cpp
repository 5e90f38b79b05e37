#include <doctest.h>

#include <cstdio>
#include <random>

#include "histoscore/png_io.hpp"

using namespace histoscore;
using namespace histoscore::io;

TEST_CASE("rgb png round trip") {
    RgbImage img(7, 5);
    std::mt19937_64 rng(1);
    for (auto& v : img.data) v = static_cast<uint8_t>(rng() % 256);
    write_rgb_png("tmp_io_rgb.png", img);
    auto back = read_rgb_png("tmp_io_rgb.png");
    CHECK(back.width == 7);
    CHECK(back.height == 5);
    CHECK(back.data == img.data);
    std::remove("tmp_io_rgb.png");
    CHECK_THROWS(read_rgb_png("tmp_io_rgb.png"));
}

TEST_CASE("mask png round trip and validation") {
    MaskImage mask(4, 4);
    for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = i % 3 == 0;
    write_mask_png("tmp_io_mask.png", mask);
    CHECK(read_mask_png("tmp_io_mask.png").data == mask.data);
    std::remove("tmp_io_mask.png");

    // a gray image with a mid-level value is not a valid mask
    RgbImage gray(4, 4, std::vector<uint8_t>(48, 128));
    write_rgb_png("tmp_io_gray.png", gray);
    CHECK_THROWS(read_mask_png("tmp_io_gray.png"));
    std::remove("tmp_io_gray.png");

    // any nonzero mask entry is written as foreground
    MaskImage lax(2, 2, {0, 1, 2, 1});
    write_mask_png("tmp_io_lax.png", lax);
    CHECK(read_mask_png("tmp_io_lax.png").data == std::vector<uint8_t>{0, 1, 1, 1});
    std::remove("tmp_io_lax.png");
}

TEST_CASE("intensity png quantizes to 16 bits") {
    IntensityImage img(3, 2, {0.0f, 1.0f, 0.5f, 0.25f, 0.125f, 0.75f});
    write_intensity_png("tmp_io_int.png", img);
    auto back = read_intensity_png("tmp_io_int.png");
    for (size_t i = 0; i < img.data.size(); ++i)
        CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1.0 / 65535));
    CHECK(back.data[0] == 0.0f);
    CHECK(back.data[1] == 1.0f);
    std::remove("tmp_io_int.png");
}

TEST_CASE("label png round trip") {
    InstanceLabelMap labels(3, 3, {0, 1, 2, 3, 40, 500, 6000, 65535, 7});
    write_labels_png("tmp_io_labels.png", labels);
    CHECK(read_labels_png("tmp_io_labels.png").data == labels.data);
    std::remove("tmp_io_labels.png");

    InstanceLabelMap big(1, 1, {70000});
    CHECK_THROWS(write_labels_png("tmp_io_big.png", big));
}
