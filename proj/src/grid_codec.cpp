#include "vpt/grid_codec.hpp"

#include <algorithm>

namespace vpt {

namespace {

// Largest c with floor(c * extent / k) <= p, i.e. the cell whose pixel span
// under the floor-division corner formula contains p. Equals floor(p*k/extent)
// whenever extent divides by k; on ragged grids it follows the corner formula
// so quantized boxes always cover their source box.
int cell_index(int p, int k, int extent) {
    const long long c = ((static_cast<long long>(p) + 1) * k + extent - 1) / extent - 1;
    return static_cast<int>(std::clamp<long long>(c, 0, k - 1));
}

}  // namespace

std::pair<int, int> cell_of_pixel(const GridSpec& grid, int px, int py) {
    if (px < 0 || px >= grid.img_w || py < 0 || py >= grid.img_h)
        throw out_of_range_error("cell_of_pixel: pixel outside image");
    return {cell_index(px, grid.k, grid.img_w), cell_index(py, grid.k, grid.img_h)};
}

CellBox bbox_to_cells(const GridSpec& grid, const PixelBox& b) {
    if (b.empty())
        throw degenerate_region_error("bbox_to_cells: empty pixel box");
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > grid.img_w || b.y_max > grid.img_h)
        throw out_of_range_error("bbox_to_cells: box outside image");
    const auto [cx0, cy0] = cell_of_pixel(grid, b.x_min, b.y_min);
    const auto [cx1, cy1] = cell_of_pixel(grid, b.x_max - 1, b.y_max - 1);
    return CellBox{cx0, cy0, cx1, cy1};
}

PixelBox cells_to_pixel_box(const GridSpec& grid, const CellBox& c) {
    if (!cell_box_valid(grid, c))
        throw out_of_range_error("cells_to_pixel_box: cell box invalid for grid");
    PixelBox out;
    out.x_min = static_cast<int>(static_cast<long long>(c.cx_min) * grid.img_w / grid.k);
    out.y_min = static_cast<int>(static_cast<long long>(c.cy_min) * grid.img_h / grid.k);
    out.x_max = static_cast<int>(static_cast<long long>(c.cx_max + 1) * grid.img_w / grid.k);
    out.y_max = static_cast<int>(static_cast<long long>(c.cy_max + 1) * grid.img_h / grid.k);
    return out;
}

bool cell_box_valid(const GridSpec& grid, const CellBox& c) {
    return 0 <= c.cx_min && c.cx_min <= c.cx_max && c.cx_max < grid.k &&
           0 <= c.cy_min && c.cy_min <= c.cy_max && c.cy_max < grid.k;
}

PixelBox intersect(const PixelBox& a, const PixelBox& b) {
    PixelBox r;
    r.x_min = std::max(a.x_min, b.x_min);
    r.y_min = std::max(a.y_min, b.y_min);
    r.x_max = std::min(a.x_max, b.x_max);
    r.y_max = std::min(a.y_max, b.y_max);
    if (r.empty()) return PixelBox{0, 0, 0, 0};
    return r;
}

}  // namespace vpt
