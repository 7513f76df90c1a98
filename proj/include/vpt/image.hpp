#pragma once

#include <Eigen/Core>

#include <array>

#include "vpt/grid_codec.hpp"

namespace vpt {

using PlaneF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct degenerate_image_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// RGB raster, channel planes indexed [y, x], values in [0, 1].
struct Image {
    int w = 0;
    int h = 0;
    std::array<PlaneF, 3> ch;

    Image() = default;
    Image(int w_, int h_, std::array<float, 3> fill = {0.f, 0.f, 0.f});

    bool empty() const { return w <= 0 || h <= 0; }
    void set_pixel(int x, int y, std::array<float, 3> rgb);
    std::array<float, 3> pixel(int x, int y) const;
};

// Exact sub-raster [x_min, x_max) x [y_min, y_max).
Image crop_image(const Image& x, const PixelBox& b);

// Nearest-neighbor resize to target x target; identity when already there.
Image resize_image(const Image& x, int target);

double image_l1_distance(const Image& a, const Image& b);
bool image_equal(const Image& a, const Image& b);

}  // namespace vpt
