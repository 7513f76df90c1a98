#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "vpt/image.hpp"

using namespace vpt;

TEST_CASE("resize identity and nearest-neighbor blocks") {
    Image img(64, 64, {0.2f, 0.3f, 0.4f});
    img.set_pixel(5, 7, {1.f, 0.f, 0.f});
    CHECK(image_equal(resize_image(img, 64), img));

    // 2x2 checkerboard -> 4x4 block checkerboard
    Image board(2, 2, {0.f, 0.f, 0.f});
    board.set_pixel(1, 0, {1.f, 1.f, 1.f});
    board.set_pixel(0, 1, {1.f, 1.f, 1.f});
    const Image up = resize_image(board, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const bool white = (x / 2) != (y / 2);
            CHECK(up.pixel(x, y)[0] == (white ? 1.f : 0.f));
        }

    // odd crop sizes upscale without error
    Image odd(13, 7, {0.5f, 0.5f, 0.5f});
    CHECK(resize_image(odd, 64).w == 64);

    CHECK_THROWS_AS(resize_image(Image{}, 64), degenerate_image_error);
}

TEST_CASE("crop is the exact sub-raster") {
    Image img(64, 64, {0.f, 0.f, 0.f});
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            img.set_pixel(x, y, {static_cast<float>(x) / 64.f, static_cast<float>(y) / 64.f, 0.f});

    CHECK(image_equal(crop_image(img, PixelBox{0, 0, 64, 64}), img));

    const Image sub = crop_image(img, PixelBox{16, 16, 48, 48});
    CHECK(sub.w == 32);
    CHECK(sub.h == 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            REQUIRE(sub.pixel(x, y) == img.pixel(x + 16, y + 16));
        }

    CHECK_THROWS_AS(crop_image(img, PixelBox{10, 10, 10, 20}), degenerate_region_error);
    CHECK_THROWS_AS(crop_image(img, PixelBox{60, 60, 70, 70}), out_of_range_error);
}
