#pragma once

#include <stdexcept>

namespace vpt {

struct degenerate_region_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct out_of_range_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// k x k partition of a w x h pixel raster. Pixel coords: x right, y down,
// origin top-left. Boxes are half-open: [x_min, x_max) x [y_min, y_max).
struct GridSpec {
    int k = 8;
    int img_w = 0;
    int img_h = 0;

    GridSpec(int k_, int w, int h) : k(k_), img_w(w), img_h(h) {
        if (k < 2 || img_w < k || img_h < k)
            throw std::invalid_argument("GridSpec: need k >= 2 and image >= k pixels per side");
    }
};

struct PixelBox {
    int x_min = 0;
    int y_min = 0;
    int x_max = 0;
    int y_max = 0;

    bool empty() const { return x_min >= x_max || y_min >= y_max; }
    long long area() const {
        if (empty()) return 0;
        return static_cast<long long>(x_max - x_min) * (y_max - y_min);
    }
    bool operator==(const PixelBox&) const = default;
};

struct CellBox {
    int cx_min = 0;
    int cy_min = 0;
    int cx_max = 0;
    int cy_max = 0;

    bool operator==(const CellBox&) const = default;
};

// Cell containing pixel (px, py): floor(p * k / extent), clamped to [0, k-1].
std::pair<int, int> cell_of_pixel(const GridSpec& grid, int px, int py);

// Cells of the top-left pixel and of the bottom-right interior pixel
// (x_max - 1, y_max - 1) of a nonempty box.
CellBox bbox_to_cells(const GridSpec& grid, const PixelBox& b);

// Pixel rectangle covered by a cell box:
// top-left (cx_min * w / k, cy_min * h / k),
// bottom-right ((cx_max + 1) * w / k, (cy_max + 1) * h / k), floor division.
PixelBox cells_to_pixel_box(const GridSpec& grid, const CellBox& c);

bool cell_box_valid(const GridSpec& grid, const CellBox& c);

PixelBox intersect(const PixelBox& a, const PixelBox& b);

}  // namespace vpt
